#pragma once

// Encoder plus sentence head, its configuration and vocabulary.

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsl/autodiff.hpp"
#include "zsl/data.hpp"
#include "zsl/encoder.hpp"
#include "zsl/soft_attention.hpp"

namespace zsl {

enum class ClassifierKind { soft_attention, cls };

inline std::string to_string(ClassifierKind k) { return k == ClassifierKind::cls ? "cls" : "soft_attention"; }
inline ClassifierKind classifier_from_string(const std::string& s) {
  if (s == "soft_attention") return ClassifierKind::soft_attention;
  if (s == "cls") return ClassifierKind::cls;
  throw ConfigError("unknown classifier '" + s + "' (expected soft_attention | cls)");
}

struct ModelConfig {
  EncoderConfig encoder;
  ClassifierKind classifier = ClassifierKind::soft_attention;
  SoftAttnSizes attention;
  HeadConfig head;
  SplitMode split_mode = SplitMode::word;
  std::size_t subword_length = 4;
  Aggregation aggregation = Aggregation::max;

  TokenizerConfig tokenizer() const { return {split_mode, subword_length, encoder.max_seq_len}; }
  void validate() const {
    encoder.validate();
    head.validate();
    if (attention.layer_size == 0 || attention.hidden_size == 0)
      throw ConfigError("soft attention sizes must be positive");
    if (subword_length == 0) throw ConfigError("subword_length must be positive");
  }
};

// Keys follow the hyperparameter table names.
inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"classifier", to_string(c.classifier)},
          {"vocab_size", c.encoder.vocab_size},
          {"max_seq_length", c.encoder.max_seq_len},
          {"num_layers", c.encoder.num_layers},
          {"num_heads", c.encoder.num_heads},
          {"model_dim", c.encoder.model_dim},
          {"ffn_dim", c.encoder.ffn_dim},
          {"hidden_layer_dropout", c.encoder.dropout_prob},
          {"soft_attention_layer_size", c.attention.layer_size},
          {"soft_attention_hidden_size", c.attention.hidden_size},
          {"beta", c.head.beta},
          {"gamma", c.head.gamma},
          {"norm_epsilon", c.head.norm_epsilon},
          {"split_mode", to_string(c.split_mode)},
          {"subword_length", c.subword_length},
          {"aggregation", to_string(c.aggregation)},
          {"initializer", "glorot"}};
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

// Missing keys keep the values already in `c`.
inline void apply_json(const nlohmann::json& j, ModelConfig& c) {
  detail::reject_unknown(j,
                         {"classifier", "vocab_size", "max_seq_length", "num_layers", "num_heads", "model_dim",
                          "ffn_dim", "hidden_layer_dropout", "soft_attention_layer_size",
                          "soft_attention_hidden_size", "beta", "gamma", "norm_epsilon", "split_mode",
                          "subword_length", "aggregation", "initializer"},
                         "model");
  std::string s;
  if (j.contains("classifier")) {
    detail::read_key(j, "classifier", s);
    c.classifier = classifier_from_string(s);
  }
  detail::read_key(j, "vocab_size", c.encoder.vocab_size);
  detail::read_key(j, "max_seq_length", c.encoder.max_seq_len);
  detail::read_key(j, "num_layers", c.encoder.num_layers);
  detail::read_key(j, "num_heads", c.encoder.num_heads);
  detail::read_key(j, "model_dim", c.encoder.model_dim);
  detail::read_key(j, "ffn_dim", c.encoder.ffn_dim);
  detail::read_key(j, "hidden_layer_dropout", c.encoder.dropout_prob);
  detail::read_key(j, "soft_attention_layer_size", c.attention.layer_size);
  detail::read_key(j, "soft_attention_hidden_size", c.attention.hidden_size);
  detail::read_key(j, "beta", c.head.beta);
  detail::read_key(j, "gamma", c.head.gamma);
  detail::read_key(j, "norm_epsilon", c.head.norm_epsilon);
  if (j.contains("split_mode")) {
    detail::read_key(j, "split_mode", s);
    c.split_mode = split_mode_from_string(s);
  }
  detail::read_key(j, "subword_length", c.subword_length);
  if (j.contains("aggregation")) {
    detail::read_key(j, "aggregation", s);
    c.aggregation = aggregation_from_string(s);
  }
  if (j.contains("initializer")) {
    detail::read_key(j, "initializer", s);
    if (s != "glorot") throw ConfigError("only the glorot initializer is available");
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  apply_json(j, c);
  return c;
}

struct Model {
  ModelConfig config;
  Vocab vocab;
  ParameterSet params;
};

inline Model init_model(ModelConfig config, Vocab vocab, std::uint64_t seed) {
  config.encoder.vocab_size = vocab.size();
  config.validate();
  Model m{config, std::move(vocab), {}};
  Rng rng(seed);
  init_encoder(m.params, config.encoder, rng);
  if (config.classifier == ClassifierKind::soft_attention)
    init_soft_attention(m.params, config.encoder.model_dim, config.attention, rng);
  else
    init_cls_head(m.params, config.encoder.model_dim, rng);
  return m;
}

// Forward graph for one tokenised sentence.
struct SentenceGraph {
  EncoderOutput encoder;
  SoftAttnForward head;  // soft_attention models only
  Var logit;
  double probability = 0.0;
};

inline SentenceGraph forward_sentence(Tape& tape, Model& model, std::span<const TokenId> ids,
                                      const EncodeOptions& opt, const HeadConfig& head,
                                      Normalization norm = Normalization::weighted) {
  SentenceGraph g;
  g.encoder = encode(tape, model.params, ids, model.config.encoder, opt);
  if (model.config.classifier == ClassifierKind::soft_attention) {
    g.head = soft_attention_forward(tape, model.params, g.encoder, head, norm);
    g.logit = g.head.logit;
    g.probability = g.head.y;
  } else {
    g.logit = cls_logit(tape, model.params, g.encoder);
    g.probability = sigmoid(g.logit.scalar());
  }
  return g;
}

// Training objective over a batch, all graphs on one tape. CLS models use
// the mean BCE only.
inline JointLoss batch_loss(Tape& tape, Model& model, std::span<const LabeledSentence* const> batch,
                            const EncodeOptions& opt) {
  std::vector<SoftAttnForward> heads;
  std::vector<int> labels;
  Var bce_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LabeledSentence& s = *batch[i];
    SentenceGraph g = forward_sentence(tape, model, s.token_ids, opt, model.config.head);
    labels.push_back(s.sentence_label);
    if (model.config.classifier == ClassifierKind::soft_attention) {
      heads.push_back(std::move(g.head));
    } else {
      Var b = bce_with_logits(g.logit, s.sentence_label);
      bce_sum = i == 0 ? b : add(bce_sum, b);
    }
  }
  if (model.config.classifier == ClassifierKind::soft_attention)
    return joint_loss(heads, labels, model.config.head);
  JointLoss out;
  out.total = scale(bce_sum, 1.0 / static_cast<double>(batch.size()));
  out.value = out.l1 = out.total.scalar();
  return out;
}

// Inference result for one sentence.
struct SentencePrediction {
  double probability = 0.0;
  std::vector<double> token_scores;  // a~ per real token (soft attention only)
  std::vector<double> word_scores;
};

inline SentencePrediction predict(Model& model, const LabeledSentence& s, const HeadConfig& head,
                                  Normalization norm = Normalization::weighted) {
  Tape tape(false);
  EncodeOptions opt;
  opt.record_attention = false;
  SentenceGraph g = forward_sentence(tape, model, s.token_ids, opt, head, norm);
  SentencePrediction p;
  p.probability = g.probability;
  if (model.config.classifier == ClassifierKind::soft_attention) {
    p.token_scores = g.head.a_tilde_values();
    p.word_scores = aggregate_to_words(p.token_scores, s.alignment, model.config.aggregation);
  }
  return p;
}

inline double predict_probability(Model& model, std::span<const TokenId> ids) {
  Tape tape(false);
  EncodeOptions opt;
  opt.record_attention = false;
  return forward_sentence(tape, model, ids, opt, model.config.head).probability;
}

}  // namespace zsl
