#pragma once

// Perturbation-based word importance: mask random word subsets, query a
// black-box sentence classifier, fit a kernel-weighted ridge model on the
// presence vectors.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zsl/data.hpp"
#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

using Presence = std::vector<std::uint8_t>;  // 1 = kept, 0 = masked

enum class MaskMode { mask, remove };

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "mask") return MaskMode::mask;
  if (s == "delete" || s == "remove") return MaskMode::remove;
  throw ConfigError("unknown LIME mask mode '" + s + "' (expected mask | delete)");
}

struct LimeConfig {
  std::size_t n_samples = 5000;
  double kernel_width = 0.25;
  double ridge = 1.0;
  MaskMode mask_mode = MaskMode::mask;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_samples == 0) throw ConfigError("lime n_samples must be >= 1");
    if (!(kernel_width > 0.0)) throw ConfigError("lime kernel_width must be > 0");
    if (!(ridge >= 0.0)) throw ConfigError("lime ridge must be >= 0");
  }
};

// The unperturbed vector first; every further sample masks a uniform
// k-subset with k uniform in {1, ..., N-1}. A one-word sentence alternates
// the unperturbed and fully-masked vectors.
inline std::vector<Presence> generate_samples(std::size_t n_words, std::size_t n_samples, Rng& rng) {
  if (n_words == 0) throw ContractError("LIME needs at least one word");
  if (n_samples == 0) throw ContractError("LIME needs at least one sample");
  std::vector<Presence> out;
  out.reserve(n_samples);
  out.emplace_back(n_words, 1);
  std::vector<std::size_t> idx(n_words);
  for (std::size_t s = 1; s < n_samples; ++s) {
    Presence z(n_words, 1);
    if (n_words == 1) {
      z[0] = s % 2 == 1 ? 0 : 1;
    } else {
      const std::size_t k = 1 + rng.below(n_words - 1);
      for (std::size_t i = 0; i < n_words; ++i) idx[i] = i;
      // Partial Fisher-Yates: the first k slots form the masked subset.
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.below(n_words - i);
        std::swap(idx[i], idx[j]);
        z[idx[i]] = 0;
      }
    }
    out.push_back(std::move(z));
  }
  return out;
}

// Cosine distance between z and the all-ones vector; all-masked gives 1.
inline double presence_distance(const Presence& z) {
  std::size_t kept = 0;
  for (auto v : z) kept += v;
  if (kept == 0) return 1.0;
  return 1.0 - std::sqrt(static_cast<double>(kept) / static_cast<double>(z.size()));
}

inline double kernel_weight(const Presence& z, double width) {
  const double d = presence_distance(z);
  return std::exp(-(d * d) / (width * width));
}

struct LocalModel {
  std::vector<double> weights;  // one per word, in presence units
  double intercept = 0.0;
  double ridge_used = 0.0;
};

// Weighted ridge regression of targets on presence vectors. Features are
// standardised with the weighted mean and deviation; constant columns get
// weight 0. A singular system retries with the ridge strength times 10 (at
// most 3 times) before failing.
inline LocalModel fit_local_model(std::span<const Presence> samples, std::span<const double> targets,
                                  std::span<const double> sample_weights, double ridge) {
  if (samples.empty() || samples.size() != targets.size() || samples.size() != sample_weights.size())
    throw ContractError("fit_local_model: samples, targets and weights must be non-empty and equal length");
  const std::size_t n = samples.size(), p = samples[0].size();
  double wsum = 0.0;
  for (double w : sample_weights) {
    if (!(w > 0.0)) throw ContractError("fit_local_model: kernel weights must be positive");
    wsum += w;
  }
  bool distinct = false;
  for (std::size_t s = 1; s < n && !distinct; ++s) distinct = samples[s] != samples[0];
  if (!distinct) throw ContractError("fit_local_model needs at least 2 distinct presence vectors");

  std::vector<double> mean(p, 0.0), sd(p, 0.0);
  double ymean = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    ymean += sample_weights[s] * targets[s] / wsum;
    for (std::size_t j = 0; j < p; ++j) mean[j] += sample_weights[s] * samples[s][j] / wsum;
  }
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < p; ++j) {
      const double d = samples[s][j] - mean[j];
      sd[j] += sample_weights[s] * d * d / wsum;
    }
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < p; ++j) {
    sd[j] = std::sqrt(sd[j]);
    if (sd[j] > 1e-12) active.push_back(j);
  }
  LocalModel m;
  m.weights.assign(p, 0.0);
  m.intercept = ymean;
  if (active.empty()) return m;

  const auto q = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd z(q);
  for (std::size_t s = 0; s < n; ++s) {
    for (Eigen::Index a = 0; a < q; ++a) {
      const std::size_t j = active[static_cast<std::size_t>(a)];
      z(a) = (samples[s][j] - mean[j]) / sd[j];
    }
    A.selfadjointView<Eigen::Lower>().rankUpdate(z, sample_weights[s]);
    b += sample_weights[s] * (targets[s] - ymean) * z;
  }
  A.triangularView<Eigen::StrictlyUpper>() = A.transpose();

  double lambda = ridge;
  for (int attempt = 0;; ++attempt) {
    Eigen::MatrixXd R = A;
    R.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(R);
    const double pivot_floor = 1e-12 * std::max(1.0, R.diagonal().cwiseAbs().maxCoeff());
    const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                          ldlt.vectorD().cwiseAbs().minCoeff() <= pivot_floor;
    if (!singular) {
      const Eigen::VectorXd beta = ldlt.solve(b);
      for (Eigen::Index a = 0; a < q; ++a) {
        const std::size_t j = active[static_cast<std::size_t>(a)];
        m.weights[j] = beta(a) / sd[j];
        m.intercept -= m.weights[j] * mean[j];
      }
      m.ridge_used = lambda;
      return m;
    }
    if (attempt == 3)
      throw ConditioningError("LIME normal equations singular after raising ridge to " + std::to_string(lambda));
    lambda = lambda == 0.0 ? 1e-8 : lambda * 10.0;
  }
}

// Token ids of the sentence with the words where z == 0 masked (or removed).
inline std::vector<TokenId> perturb_tokens(const LabeledSentence& s, const Presence& z, MaskMode mode) {
  std::vector<TokenId> out;
  out.reserve(s.token_ids.size());
  out.push_back(s.token_ids.front());
  for (std::size_t i = 0; i < s.alignment.token_to_word.size(); ++i) {
    const bool keep = z[s.alignment.token_to_word[i]] != 0;
    if (keep) out.push_back(s.token_ids[i + 1]);
    else if (mode == MaskMode::mask) out.push_back(special::kMask);
  }
  out.push_back(s.token_ids.back());
  return out;
}

using ProbabilityFn = std::function<double(std::span<const TokenId>)>;

struct LimeExplanation {
  std::vector<double> weights;  // word scores
  double intercept = 0.0;
  std::size_t classifier_calls = 0;  // distinct perturbations evaluated
};

// Explains one tokenised sentence. Words lost to truncation stay at 0.
inline LimeExplanation lime_explain(const LabeledSentence& s, const ProbabilityFn& classifier, const LimeConfig& cfg,
                                    Rng& rng) {
  cfg.validate();
  const std::size_t n_words = s.words.size();
  const std::size_t covered = s.alignment.token_to_word.empty() ? 0 : s.alignment.token_to_word.back() + 1;
  auto samples = generate_samples(n_words, cfg.n_samples, rng);
  std::map<Presence, double> memo;
  std::vector<double> probs, weights;
  probs.reserve(samples.size());
  for (auto& z : samples) {
    for (std::size_t w = covered; w < n_words; ++w) z[w] = 1;  // untokenised words cannot be perturbed
    auto it = memo.find(z);
    if (it == memo.end()) it = memo.emplace(z, classifier(perturb_tokens(s, z, cfg.mask_mode))).first;
    probs.push_back(it->second);
    weights.push_back(kernel_weight(z, cfg.kernel_width));
  }
  LimeExplanation e;
  e.classifier_calls = memo.size();
  if (memo.size() < 2) {
    // Nothing varies (e.g. one sample only): no evidence for any word.
    e.weights.assign(n_words, 0.0);
    e.intercept = probs.front();
    return e;
  }
  LocalModel m = fit_local_model(samples, probs, weights, cfg.ridge);
  e.weights = std::move(m.weights);
  e.intercept = m.intercept;
  return e;
}

}  // namespace zsl
