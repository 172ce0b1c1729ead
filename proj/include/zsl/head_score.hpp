#pragma once

// Token importance from a single encoder attention head, dev-set head
// selection, and the shared dev-F1 threshold tuner.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "zsl/data.hpp"
#include "zsl/encoder.hpp"
#include "zsl/errors.hpp"
#include "zsl/eval.hpp"
#include "zsl/model.hpp"
#include "zsl/soft_attention.hpp"

namespace zsl {

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;
  friend bool operator==(const HeadId&, const HeadId&) = default;
};

struct HeadScoreOptions {
  bool include_cls_query = true;  // CLS row counts as a query; SEP and padding never do
  Aggregation aggregation = Aggregation::max;
};

// Mean over query rows of every column of an N x N attention map.
inline std::vector<double> attention_column_scores(const Tensor& attention, std::span<const TokenRole> roles,
                                                   const HeadScoreOptions& opt = {}) {
  const std::size_t n = attention.rows();
  if (attention.cols() != n || roles.size() != n)
    throw DimensionError("attention map " + attention.shape().str() + " for " + std::to_string(roles.size()) +
                         " tokens");
  std::vector<double> out(n, 0.0);
  std::size_t queries = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool query = roles[i] == TokenRole::real || (roles[i] == TokenRole::cls && opt.include_cls_query);
    if (!query) continue;
    ++queries;
    for (std::size_t j = 0; j < n; ++j) out[j] += attention(i, j);
  }
  if (queries == 0) throw ContractError("attention map has no query rows");
  for (double& v : out) v /= static_cast<double>(queries);
  return out;
}

// Word scores for one head; only real-token columns are scored.
inline std::vector<double> head_token_scores(const EncoderOutput& out, HeadId head, const Alignment& alignment,
                                             const HeadScoreOptions& opt = {}) {
  const Tensor& map = out.attention_map(head.layer, head.head);
  const auto cols = attention_column_scores(map, out.roles, opt);
  std::vector<double> token_scores;
  for (std::size_t j : real_positions(out.roles)) token_scores.push_back(cols[j]);
  return aggregate_to_words(token_scores, alignment, opt.aggregation);
}

// Eval-mode encoder pass that keeps every attention map.
inline EncoderOutput encoder_attention(Model& model, std::span<const TokenId> ids) {
  Tape tape(false);
  EncodeOptions opt;
  opt.record_attention = true;
  EncoderOutput out = encode(tape, model.params, ids, model.config.encoder, opt);
  out.tokens = Var();  // tape is about to go away
  return out;
}

struct HeadSelection {
  HeadId best;
  double best_map = 0.0;
  std::vector<double> map_per_head;  // layer-major
  bool read_token_labels = true;     // disclosure: dev gold token labels were used
};

// Picks the head with the highest dev MAP; ties go to the lower (layer,
// head). `attention_for(sentence)` returns an EncoderOutput with attention
// maps and roles for that sentence.
template <typename AttentionFn>
HeadSelection select_best_head(const Dataset& dev, std::size_t num_layers, std::size_t num_heads,
                               AttentionFn&& attention_for, const HeadScoreOptions& opt = {}) {
  if (!dev.has_token_labels()) throw ValidationError("head selection needs dev token labels");
  if (num_layers == 0 || num_heads == 0) throw ContractError("encoder has no attention heads");
  const LabelMatrix gold = gold_token_labels(dev);
  std::vector<ScoreMatrix> per_head(num_layers * num_heads);
  for (const auto& s : dev.sentences) {
    const EncoderOutput out = attention_for(s);
    for (std::size_t l = 0; l < num_layers; ++l)
      for (std::size_t h = 0; h < num_heads; ++h)
        per_head[l * num_heads + h].push_back(head_token_scores(out, {l, h}, s.alignment, opt));
  }
  HeadSelection sel;
  sel.best_map = -1.0;
  for (std::size_t k = 0; k < per_head.size(); ++k) {
    const double m = token_map(per_head[k], gold);
    sel.map_per_head.push_back(m);
    if (m > sel.best_map) {
      sel.best_map = m;
      sel.best = {k / num_heads, k % num_heads};
    }
  }
  return sel;
}

inline HeadSelection select_best_head(const Dataset& dev, Model& model, const HeadScoreOptions& opt = {}) {
  return select_best_head(
      dev, model.config.encoder.num_layers, model.config.encoder.num_heads,
      [&](const LabeledSentence& s) { return encoder_attention(model, s.token_ids); }, opt);
}

struct ThresholdResult {
  double threshold = std::numeric_limits<double>::infinity();
  double f1 = 0.0;
  bool no_positive_tokens = false;  // warning: nothing to tune against
  bool read_token_labels = true;    // disclosure
};

// Candidate thresholds: one just below the smallest score (everything
// positive) and the midpoints of consecutive sorted unique scores.
inline std::vector<double> threshold_grid(const ScoreMatrix& scores) {
  std::vector<double> u;
  for (const auto& row : scores) u.insert(u.end(), row.begin(), row.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> grid;
  if (u.empty()) return grid;
  grid.push_back(std::nextafter(u.front(), -std::numeric_limits<double>::infinity()));
  for (std::size_t i = 1; i < u.size(); ++i) grid.push_back(u[i - 1] + (u[i] - u[i - 1]) / 2.0);
  return grid;
}

// Threshold maximising dev token F1 (positive iff score > threshold);
// the smallest candidate wins ties.
inline ThresholdResult tune_threshold(const ScoreMatrix& scores, const LabelMatrix& gold) {
  check_aligned(scores, gold, "tune_threshold");
  std::vector<std::pair<double, int>> items;
  std::size_t positives = 0;
  for (std::size_t s = 0; s < scores.size(); ++s)
    for (std::size_t i = 0; i < scores[s].size(); ++i) {
      items.emplace_back(scores[s][i], gold[s][i]);
      positives += gold[s][i] == 1;
    }
  if (items.empty()) throw ValidationError("tune_threshold: no scored tokens");
  ThresholdResult r;
  if (positives == 0) {
    r.no_positive_tokens = true;
    return r;
  }
  // Ascending sweep: tokens at or below the threshold become negative.
  std::sort(items.begin(), items.end());
  const auto grid = threshold_grid(scores);
  std::size_t tp = positives, fp = items.size() - positives, k = 0;
  double best = -1.0;
  for (double t : grid) {
    while (k < items.size() && items[k].first <= t) {
      if (items[k].second == 1) --tp;
      else --fp;
      ++k;
    }
    const double f1 = prf_from_counts(tp, fp, positives - tp).f1;
    if (f1 > best) {
      best = f1;
      r.threshold = t;
      r.f1 = f1;
    }
  }
  return r;
}

// Reference defaults for threshold-tuned methods by dataset family.
struct ReferenceThresholds {
  double lime;
  double attention_heads;
};
inline constexpr ReferenceThresholds kConll2010Thresholds{0.200, 0.320};
inline constexpr ReferenceThresholds kFceThresholds{0.001, 0.080};
inline constexpr ReferenceThresholds kBea2019Thresholds{0.010, 0.080};

}  // namespace zsl
