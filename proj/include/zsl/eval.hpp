#pragma once

// Sentence and token metrics, MAP, random baseline, seed aggregation and
// the paired t-test.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "zsl/data.hpp"
#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline PRF prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

// Positive iff probability > threshold.
inline PRF sentence_prf(std::span<const double> probabilities, std::span<const int> gold, double threshold = 0.5) {
  if (probabilities.empty()) throw ValidationError("sentence_prf: empty corpus");
  if (probabilities.size() != gold.size())
    throw AlignmentError("sentence_prf: " + std::to_string(probabilities.size()) + " predictions for " +
                         std::to_string(gold.size()) + " labels");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool pred = probabilities[i] > threshold;
    tp += pred && gold[i] == 1;
    fp += pred && gold[i] != 1;
    fn += !pred && gold[i] == 1;
  }
  return prf_from_counts(tp, fp, fn);
}

using ScoreMatrix = std::vector<std::vector<double>>;
using LabelMatrix = std::vector<std::vector<int>>;

inline void check_aligned(const ScoreMatrix& scores, const LabelMatrix& gold, const char* op) {
  if (scores.size() != gold.size())
    throw AlignmentError(std::string(op) + ": " + std::to_string(scores.size()) + " scored sentences for " +
                         std::to_string(gold.size()) + " gold sentences");
  for (std::size_t s = 0; s < scores.size(); ++s)
    if (scores[s].size() != gold[s].size())
      throw AlignmentError(std::string(op) + ": sentence " + std::to_string(s) + " has " +
                           std::to_string(scores[s].size()) + " scores for " + std::to_string(gold[s].size()) +
                           " gold labels");
}

// Micro-averaged over every word of the corpus; positive iff score > threshold.
inline PRF token_prf(const ScoreMatrix& scores, const LabelMatrix& gold, double threshold) {
  check_aligned(scores, gold, "token_prf");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t s = 0; s < scores.size(); ++s)
    for (std::size_t i = 0; i < scores[s].size(); ++i) {
      const bool pred = scores[s][i] > threshold;
      const bool pos = gold[s][i] == 1;
      tp += pred && pos;
      fp += pred && !pos;
      fn += !pred && pos;
    }
  return prf_from_counts(tp, fp, fn);
}

// Average precision of one ranking; ties go to the earlier position.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const int> gold) {
  if (scores.size() != gold.size()) throw AlignmentError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (gold[order[k]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

// Mean AP over sentences with at least one gold positive.
inline double token_map(const ScoreMatrix& scores, const LabelMatrix& gold) {
  check_aligned(scores, gold, "token_map");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < scores.size(); ++s)
    if (auto ap = average_precision(scores[s], gold[s])) {
      sum += *ap;
      ++n;
    }
  if (n == 0) throw ValidationError("token_map: no sentence has a positive token");
  return sum / static_cast<double>(n);
}

// AP of one ranking over all words of the corpus (ties by corpus order).
inline double token_map_global(const ScoreMatrix& scores, const LabelMatrix& gold) {
  check_aligned(scores, gold, "token_map_global");
  std::vector<double> flat_s;
  std::vector<int> flat_g;
  for (std::size_t s = 0; s < scores.size(); ++s) {
    flat_s.insert(flat_s.end(), scores[s].begin(), scores[s].end());
    flat_g.insert(flat_g.end(), gold[s].begin(), gold[s].end());
  }
  auto ap = average_precision(flat_s, flat_g);
  if (!ap) throw ValidationError("token_map_global: no positive token");
  return *ap;
}

inline LabelMatrix gold_token_labels(const Dataset& ds) {
  if (!ds.has_token_labels()) throw ValidationError("dataset has no gold token labels");
  LabelMatrix out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences) out.push_back(*s.token_labels);
  return out;
}

inline std::vector<int> gold_sentence_labels(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences) out.push_back(s.sentence_label);
  return out;
}

// i.i.d. U[0, 1) per word.
inline ScoreMatrix random_baseline(const Dataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  ScoreMatrix out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences) {
    std::vector<double> row(s.words.size());
    for (auto& v : row) v = rng.uniform();
    out.push_back(std::move(row));
  }
  return out;
}

inline constexpr double kRandomBaselineThreshold = 0.5;

struct MetricsReport {
  std::string method;
  std::optional<std::uint64_t> seed;
  double threshold = 0.5;
  std::optional<PRF> sentence;
  std::optional<PRF> token;
  std::optional<double> map;
  std::optional<double> map_global;
};

inline nlohmann::json to_json(const PRF& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = {{"method", r.method}};
  j["seed"] = r.seed ? nlohmann::json(*r.seed) : nlohmann::json(nullptr);
  j["threshold"] = std::isfinite(r.threshold) ? nlohmann::json(r.threshold) : nlohmann::json("inf");
  j["sentence"] = r.sentence ? to_json(*r.sentence) : nlohmann::json(nullptr);
  j["token"] = r.token ? to_json(*r.token) : nlohmann::json(nullptr);
  j["map"] = r.map ? nlohmann::json(*r.map) : nlohmann::json(nullptr);
  j["map_global"] = r.map_global ? nlohmann::json(*r.map_global) : nlohmann::json(nullptr);
  return j;
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw ValidationError("mean of an empty sequence");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Per-field arithmetic mean of several seeds' reports (counts are summed).
inline MetricsReport aggregate_seeds(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ValidationError("aggregate_seeds: no reports");
  MetricsReport out;
  out.method = reports[0].method;
  const double n = static_cast<double>(reports.size());
  auto avg_prf = [&](auto member) -> std::optional<PRF> {
    PRF acc;
    for (const auto& r : reports) {
      const auto& m = r.*member;
      if (!m) return std::nullopt;
      acc.precision += m->precision / n;
      acc.recall += m->recall / n;
      acc.f1 += m->f1 / n;
      acc.tp += m->tp;
      acc.fp += m->fp;
      acc.fn += m->fn;
    }
    return acc;
  };
  auto avg = [&](auto member) -> std::optional<double> {
    double acc = 0.0;
    for (const auto& r : reports) {
      if (!(r.*member)) return std::nullopt;
      acc += *(r.*member) / n;
    }
    return acc;
  };
  out.sentence = avg_prf(&MetricsReport::sentence);
  out.token = avg_prf(&MetricsReport::token);
  out.map = avg(&MetricsReport::map);
  out.map_global = avg(&MetricsReport::map_global);
  out.threshold = 0.0;
  for (const auto& r : reports) out.threshold += r.threshold / n;
  return out;
}

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  std::size_t df = 0;
  double mean_difference = 0.0;
  bool undefined_variance = false;  // all differences identical
};

// Two-tailed paired t-test on a[i] - b[i].
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw AlignmentError("paired_t_test: unequal seed sets");
  if (a.size() < 2) throw ValidationError("paired_t_test needs at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - m) * (x - m);
  TTestResult r;
  r.df = n - 1;
  r.mean_difference = m;
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    r.undefined_variance = true;
    r.t = m == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m);
    r.p_value = m == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = m / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(r.df));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

inline nlohmann::json to_json(const TTestResult& r) {
  nlohmann::json j = {{"df", r.df}, {"mean_difference", r.mean_difference}, {"p_value", r.p_value},
                      {"undefined_variance", r.undefined_variance}};
  j["t"] = std::isfinite(r.t) ? nlohmann::json(r.t) : nlohmann::json(r.t > 0 ? "inf" : "-inf");
  return j;
}

}  // namespace zsl
