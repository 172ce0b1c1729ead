#pragma once

// Soft attention sentence head whose unnormalised sigmoid scores double as
// token labels, with the optional sharpening exponent beta.
//
//   e~_i = w_e~ . tanh(W_e T_i + b_e) + b_e~      a~_i = sigmoid(e~_i)
//   a_i  = a~_i^beta / (sum_k a~_k^beta + eps)    c    = sum_i a_i T_i
//   y    = sigmoid(W_y tanh(W_d c + b_d) + b_y)
//
// Sums, minima and maxima run over real tokens only (no CLS/SEP/padding).

#include <span>
#include <string>
#include <vector>

#include "zsl/autodiff.hpp"
#include "zsl/data.hpp"
#include "zsl/encoder.hpp"
#include "zsl/errors.hpp"

namespace zsl {

struct HeadConfig {
  double beta = 2.0;
  double gamma = 0.1;
  double norm_epsilon = 1e-8;

  void validate() const {
    if (!(beta >= 1.0)) throw ConfigError("beta must be >= 1");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(norm_epsilon > 0.0)) throw ConfigError("norm_epsilon must be > 0");
  }
};

struct SoftAttnSizes {
  std::size_t layer_size = 100;   // width of e
  std::size_t hidden_size = 300;  // width of d
};

inline void init_soft_attention(ParameterSet& params, std::size_t model_dim, const SoftAttnSizes& sizes,
                                Rng& rng) {
  params.add("sa.w_e", glorot_init(Shape{model_dim, sizes.layer_size}, rng));
  params.add("sa.b_e", Tensor(Shape{1, sizes.layer_size}));
  params.add("sa.w_et", glorot_init(Shape{sizes.layer_size, 1}, rng));
  params.add("sa.b_et", Tensor(Shape{1, 1}));
  params.add("sa.w_d", glorot_init(Shape{model_dim, sizes.hidden_size}, rng));
  params.add("sa.b_d", Tensor(Shape{1, sizes.hidden_size}));
  params.add("sa.w_y", glorot_init(Shape{sizes.hidden_size, 1}, rng));
  params.add("sa.b_y", Tensor(Shape{1, 1}));
}

struct SoftAttnForward {
  Var e;        // n x layer_size
  Var e_tilde;  // n x 1
  Var a_tilde;  // n x 1, in [0, 1]
  Var a;        // n x 1, sums to 1
  Var c;        // 1 x model_dim
  Var d;        // 1 x hidden_size
  Var logit;    // 1 x 1
  double y = 0.0;
  std::vector<std::size_t> positions;  // sequence positions of the n real tokens

  std::vector<double> a_tilde_values() const {
    auto v = a_tilde.value().values();
    return {v.begin(), v.end()};
  }
  std::vector<double> a_values() const {
    auto v = a.value().values();
    return {v.begin(), v.end()};
  }
};

enum class Normalization {
  weighted,  // a~^beta / (sum a~^beta + eps)
  plain,     // a~ / sum a~, no exponent and no guard
};

inline Var normalize_attention(Var a_tilde, const HeadConfig& cfg, Normalization norm = Normalization::weighted) {
  if (norm == Normalization::plain) return div(a_tilde, sum(a_tilde));
  Var num = power(a_tilde, cfg.beta);
  return div(num, add_scalar(sum(num), cfg.norm_epsilon));
}

// Head over rows `positions` of `tokens`.
inline SoftAttnForward soft_attention_forward(Tape& tape, ParameterSet& params, Var tokens,
                                              std::span<const std::size_t> positions,
                                              const HeadConfig& cfg,
                                              Normalization norm = Normalization::weighted) {
  if (positions.empty()) throw ContractError("soft attention needs at least one real token");
  auto P = [&](const char* name) { return tape.parameter(params.at(name)); };
  SoftAttnForward f;
  f.positions.assign(positions.begin(), positions.end());
  Var t = gather_rows(tokens, positions);
  f.e = tanh(linear(t, P("sa.w_e"), P("sa.b_e")));
  f.e_tilde = linear(f.e, P("sa.w_et"), P("sa.b_et"));
  f.a_tilde = sigmoid(f.e_tilde);
  f.a = normalize_attention(f.a_tilde, cfg, norm);
  f.c = matmul(transpose(f.a), t);
  f.d = tanh(linear(f.c, P("sa.w_d"), P("sa.b_d")));
  f.logit = linear(f.d, P("sa.w_y"), P("sa.b_y"));
  f.y = sigmoid(f.logit.scalar());
  return f;
}

inline SoftAttnForward soft_attention_forward(Tape& tape, ParameterSet& params, const EncoderOutput& enc,
                                              const HeadConfig& cfg,
                                              Normalization norm = Normalization::weighted) {
  const auto positions = real_positions(enc.roles);
  return soft_attention_forward(tape, params, enc.tokens, positions, cfg, norm);
}

struct JointLoss {
  Var total;
  double value = 0.0;  // total.scalar(), usable after the tape is gone
  double l1 = 0.0;  // mean BCE of y against the sentence label
  double l2 = 0.0;  // mean (min a~)^2
  double l3 = 0.0;  // mean (max a~ - label)^2
};

// L = L1 + gamma (L2 + L3), each term averaged over the batch. Ties in
// min/max go to the first index.
inline JointLoss joint_loss(std::span<const SoftAttnForward> batch, std::span<const int> labels,
                            const HeadConfig& cfg) {
  if (batch.empty()) throw ContractError("joint_loss: empty batch");
  if (batch.size() != labels.size()) throw ContractError("joint_loss: batch and label counts differ");
  for (int y : labels)
    if (y != 0 && y != 1) throw ValidationError("joint_loss: non-binary label " + std::to_string(y));
  Var l1, l2, l3;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& f = batch[s];
    const double y = labels[s];
    const Tensor& at = f.a_tilde.value();
    std::size_t lo = 0, hi = 0;
    for (std::size_t i = 1; i < at.size(); ++i) {
      if (at[i] < at[lo]) lo = i;
      if (at[i] > at[hi]) hi = i;
    }
    Var bce = bce_with_logits(f.logit, y);
    Var mn = element(f.a_tilde, lo, 0);
    Var mx = add_scalar(element(f.a_tilde, hi, 0), -y);
    Var sq_min = mul(mn, mn);
    Var sq_max = mul(mx, mx);
    l1 = s == 0 ? bce : add(l1, bce);
    l2 = s == 0 ? sq_min : add(l2, sq_min);
    l3 = s == 0 ? sq_max : add(l3, sq_max);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  l1 = scale(l1, inv);
  l2 = scale(l2, inv);
  l3 = scale(l3, inv);
  JointLoss out;
  out.l1 = l1.scalar();
  out.l2 = l2.scalar();
  out.l3 = l3.scalar();
  out.total = add(l1, scale(add(l2, l3), cfg.gamma));
  out.value = out.total.scalar();
  return out;
}

enum class Aggregation { max, mean, first };

inline std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::max: return "max";
    case Aggregation::mean: return "mean";
    case Aggregation::first: return "first";
  }
  return "max";
}
inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "max") return Aggregation::max;
  if (s == "mean") return Aggregation::mean;
  if (s == "first") return Aggregation::first;
  throw ConfigError("unknown aggregation '" + s + "' (expected max | mean | first)");
}

// Collapses per-token scores (one per non-special token, in order) to word
// scores. Words cut off by truncation score 0.
inline std::vector<double> aggregate_to_words(std::span<const double> token_scores, const Alignment& alignment,
                                              Aggregation agg = Aggregation::max) {
  if (token_scores.size() != alignment.token_to_word.size())
    throw AlignmentError("got " + std::to_string(token_scores.size()) + " token scores for " +
                         std::to_string(alignment.token_to_word.size()) + " aligned tokens");
  std::vector<double> words(alignment.word_count, 0.0);
  std::vector<std::size_t> count(alignment.word_count, 0);
  for (std::size_t i = 0; i < token_scores.size(); ++i) {
    const std::size_t w = alignment.token_to_word[i];
    if (w >= alignment.word_count) throw AlignmentError("token aligned to word " + std::to_string(w));
    const double s = token_scores[i];
    switch (agg) {
      case Aggregation::max: words[w] = count[w] == 0 ? s : std::max(words[w], s); break;
      case Aggregation::mean: words[w] += s; break;
      case Aggregation::first: if (count[w] == 0) words[w] = s; break;
    }
    ++count[w];
  }
  bool seen_gap = false;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (count[w] == 0) {
      if (!alignment.truncated) throw AlignmentError("word " + std::to_string(w) + " has no aligned tokens");
      seen_gap = true;
    } else if (seen_gap) {
      throw AlignmentError("word " + std::to_string(w) + " follows a word with no tokens");
    }
    if (agg == Aggregation::mean && count[w] > 0) words[w] /= static_cast<double>(count[w]);
  }
  return words;
}

// Word scores r from a~.
inline std::vector<double> soft_attention_word_scores(const SoftAttnForward& f, const Alignment& alignment,
                                                      Aggregation agg = Aggregation::max) {
  const auto at = f.a_tilde_values();
  return aggregate_to_words(at, alignment, agg);
}

}  // namespace zsl
