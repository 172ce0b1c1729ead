#pragma once

// Small post-LN transformer encoder with per-head attention maps.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zsl/autodiff.hpp"
#include "zsl/data.hpp"
#include "zsl/errors.hpp"
#include "zsl/rng.hpp"
#include "zsl/tensor.hpp"

namespace zsl {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 128;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;
  double dropout_prob = 0.1;

  void validate() const {
    if (vocab_size <= special::kCount) throw ConfigError("vocab_size must exceed the reserved ids");
    if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
    if (num_layers == 0 || num_heads == 0 || model_dim == 0 || ffn_dim == 0)
      throw ConfigError("encoder sizes must be positive");
    if (model_dim % num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
    if (dropout_prob < 0.0 || dropout_prob >= 1.0) throw ConfigError("dropout_prob must be in [0, 1)");
  }
  std::size_t head_dim() const { return model_dim / num_heads; }
};

enum class Mode { train, eval };

enum class TokenRole : std::uint8_t { cls, real, sep, pad };

inline std::vector<TokenRole> token_roles(std::span<const TokenId> ids) {
  std::vector<TokenRole> roles(ids.size(), TokenRole::real);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == special::kPad) roles[i] = TokenRole::pad;
    else if (ids[i] == special::kSep) roles[i] = TokenRole::sep;
    else if (ids[i] == special::kCls && i == 0) roles[i] = TokenRole::cls;
  }
  return roles;
}

// Positions of real (non-special, non-padding) tokens.
inline std::vector<std::size_t> real_positions(std::span<const TokenRole> roles) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == TokenRole::real) pos.push_back(i);
  return pos;
}

struct EncoderOutput {
  Var tokens;                     // N x model_dim
  std::vector<Tensor> attention;  // layer-major, num_layers * num_heads maps of N x N
  std::vector<TokenRole> roles;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;

  const Tensor& attention_map(std::size_t layer, std::size_t head) const {
    if (layer >= num_layers || head >= num_heads)
      throw IndexError("head (" + std::to_string(layer) + ", " + std::to_string(head) +
                       ") outside " + std::to_string(num_layers) + " x " + std::to_string(num_heads));
    return attention.at(layer * num_heads + head);
  }
};

struct EncodeOptions {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required in train mode with dropout > 0
  bool record_attention = true;
};

namespace detail {
inline std::string layer_prefix(std::size_t l) { return "enc.layer" + std::to_string(l) + "."; }
}  // namespace detail

// Adds every encoder parameter to `params`: Glorot matrices, zero biases,
// unit layer-norm gains.
inline void init_encoder(ParameterSet& params, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  params.add("enc.tok_emb", glorot_init(Shape{cfg.vocab_size, d}, rng));
  params.add("enc.pos_emb", glorot_init(Shape{cfg.max_seq_len, d}, rng));
  params.add("enc.emb_ln.gain", Tensor(Shape{1, d}, 1.0));
  params.add("enc.emb_ln.bias", Tensor(Shape{1, d}));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = detail::layer_prefix(l);
    for (const char* m : {"wq", "wk", "wv", "wo"}) params.add(p + m, glorot_init(Shape{d, d}, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"}) params.add(p + b, Tensor(Shape{1, d}));
    params.add(p + "ln1.gain", Tensor(Shape{1, d}, 1.0));
    params.add(p + "ln1.bias", Tensor(Shape{1, d}));
    params.add(p + "w1", glorot_init(Shape{d, cfg.ffn_dim}, rng));
    params.add(p + "b1", Tensor(Shape{1, cfg.ffn_dim}));
    params.add(p + "w2", glorot_init(Shape{cfg.ffn_dim, d}, rng));
    params.add(p + "b2", Tensor(Shape{1, d}));
    params.add(p + "ln2.gain", Tensor(Shape{1, d}, 1.0));
    params.add(p + "ln2.bias", Tensor(Shape{1, d}));
  }
}

namespace detail {

inline Var affine_norm(Tape& tape, Var x, ParameterSet& params, const std::string& name) {
  return add(mul(layer_norm_rows(x), tape.parameter(params.at(name + ".gain"))),
             tape.parameter(params.at(name + ".bias")));
}

inline Var maybe_dropout(Var x, double p, const EncodeOptions& opt) {
  if (opt.mode != Mode::train || p <= 0.0) return x;
  if (opt.rng == nullptr) throw ContractError("train-mode encode needs an rng for dropout");
  return dropout(x, p, *opt.rng);
}

}  // namespace detail

// Runs the encoder over one sequence (CLS first). Padding ids are masked
// out as attention keys.
inline EncoderOutput encode(Tape& tape, ParameterSet& params, std::span<const TokenId> ids,
                            const EncoderConfig& cfg, const EncodeOptions& opt = {}) {
  const std::size_t n = ids.size();
  if (n == 0) throw ContractError("encode: empty sequence");
  if (n > cfg.max_seq_len)
    throw LengthError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  if (ids[0] != special::kCls) throw ContractError("encode: position 0 must hold the CLS token");
  std::vector<std::size_t> tok(n), pos(n);
  std::vector<std::uint8_t> key_mask(n, 1);
  bool any_pad = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= cfg.vocab_size)
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocab of " + std::to_string(cfg.vocab_size));
    tok[i] = ids[i];
    pos[i] = i;
    if (ids[i] == special::kPad) {
      key_mask[i] = 0;
      any_pad = true;
    }
  }
  const std::span<const std::uint8_t> mask = any_pad ? std::span<const std::uint8_t>(key_mask)
                                                     : std::span<const std::uint8_t>();

  EncoderOutput out;
  out.roles = token_roles(ids);
  out.num_layers = cfg.num_layers;
  out.num_heads = cfg.num_heads;

  Var x = add(gather_rows(tape.parameter(params.at("enc.tok_emb")), tok),
              gather_rows(tape.parameter(params.at("enc.pos_emb")), pos));
  x = detail::maybe_dropout(detail::affine_norm(tape, x, params, "enc.emb_ln"), cfg.dropout_prob, opt);

  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = detail::layer_prefix(l);
    auto P = [&](const std::string& name) { return tape.parameter(params.at(p + name)); };
    Var q = linear(x, P("wq"), P("bq"));
    Var k = linear(x, P("wk"), P("bk"));
    Var v = linear(x, P("wv"), P("bv"));
    std::vector<Var> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      Var qh = slice_cols(q, h * dh, dh);
      Var kh = slice_cols(k, h * dh, dh);
      Var vh = slice_cols(v, h * dh, dh);
      Var probs = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh), mask);
      if (opt.record_attention) out.attention.push_back(probs.value());
      probs = detail::maybe_dropout(probs, cfg.dropout_prob, opt);
      heads.push_back(matmul(probs, vh));
    }
    Var attn = linear(concat_cols(heads), P("wo"), P("bo"));
    x = detail::affine_norm(tape, add(x, attn), params, p + "ln1");
    Var ff = detail::maybe_dropout(gelu(linear(x, P("w1"), P("b1"))), cfg.dropout_prob, opt);
    x = detail::affine_norm(tape, add(x, linear(ff, P("w2"), P("b2"))), params, p + "ln2");
  }
  out.tokens = x;
  return out;
}

// CLS-head sentence classifier: sigmoid(T_0 w + b).
inline void init_cls_head(ParameterSet& params, std::size_t model_dim, Rng& rng) {
  params.add("cls.w", glorot_init(Shape{model_dim, 1}, rng));
  params.add("cls.b", Tensor(Shape{1, 1}));
}

inline Var cls_logit(Tape& tape, ParameterSet& params, const EncoderOutput& out) {
  const std::size_t first[] = {0};
  return linear(gather_rows(out.tokens, first), tape.parameter(params.at("cls.w")),
                tape.parameter(params.at("cls.b")));
}

inline double classify_cls(Tape& tape, ParameterSet& params, const EncoderOutput& out) {
  return sigmoid(cls_logit(tape, params, out).scalar());
}

}  // namespace zsl
