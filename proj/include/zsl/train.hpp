#pragma once

// AdamW training loop with warmup/decay, gradient clipping and best-dev
// checkpoint selection. Only sentence labels are ever read.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsl/data.hpp"
#include "zsl/errors.hpp"
#include "zsl/eval.hpp"
#include "zsl/model.hpp"

namespace zsl {

struct TrainConfig {
  std::string profile = "micro-scratch";
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 64;
  double learning_rate = 1e-3;
  double warmup_ratio = 0.1;
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch sizes must be >= 1");
    if (learning_rate < 0.0 || weight_decay < 0.0 || adam_epsilon < 0.0 || warmup_ratio < 0.0 ||
        warmup_ratio > 1.0)
      throw ConfigError("training rates must be non-negative (warmup_ratio in [0, 1])");
  }
};

// Named defaults: "finetune" keeps the fine-tuning learning rate,
// "micro-scratch" suits a randomly initialised micro encoder.
inline TrainConfig train_profile(const std::string& name) {
  TrainConfig c;
  c.profile = name;
  if (name == "finetune") c.learning_rate = 2e-5;
  else if (name == "micro-scratch") c.learning_rate = 1e-3;
  else throw ConfigError("unknown training profile '" + name + "' (expected finetune | micro-scratch)");
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"profile", c.profile},
          {"epochs", c.epochs},
          {"per_device_train_batch_size", c.batch_size},
          {"per_device_eval_batch_size", c.eval_batch_size},
          {"learning_rate", c.learning_rate},
          {"warmup_ratio", c.warmup_ratio},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"max_grad_norm", c.max_grad_norm},
          {"seed", c.seed}};
}

// A "profile" key resets to that profile's defaults before other keys apply.
inline void apply_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown(j,
                         {"profile", "epochs", "per_device_train_batch_size", "per_device_eval_batch_size",
                          "learning_rate", "warmup_ratio", "weight_decay", "adam_beta1", "adam_beta2",
                          "adam_epsilon", "max_grad_norm", "seed"},
                         "train");
  if (j.contains("profile")) {
    std::string p;
    detail::read_key(j, "profile", p);
    c = train_profile(p);
  }
  detail::read_key(j, "epochs", c.epochs);
  detail::read_key(j, "per_device_train_batch_size", c.batch_size);
  detail::read_key(j, "per_device_eval_batch_size", c.eval_batch_size);
  detail::read_key(j, "learning_rate", c.learning_rate);
  detail::read_key(j, "warmup_ratio", c.warmup_ratio);
  detail::read_key(j, "weight_decay", c.weight_decay);
  detail::read_key(j, "adam_beta1", c.adam_beta1);
  detail::read_key(j, "adam_beta2", c.adam_beta2);
  detail::read_key(j, "adam_epsilon", c.adam_epsilon);
  detail::read_key(j, "max_grad_norm", c.max_grad_norm);
  detail::read_key(j, "seed", c.seed);
}

// Linear warmup to the base rate, then linear decay towards 0.
inline double scheduled_lr(const TrainConfig& c, std::size_t step, std::size_t total_steps) {
  const auto warmup = static_cast<std::size_t>(std::ceil(c.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps <= warmup) return c.learning_rate;
  return c.learning_rate * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

// Biases and layer-norm parameters are excluded from weight decay.
inline bool uses_weight_decay(const std::string& name) {
  const std::string leaf = name.substr(name.rfind('.') + 1);
  if (leaf == "gain" || leaf == "bias") return false;
  return leaf.empty() || leaf[0] != 'b';
}

class AdamW {
 public:
  AdamW(const TrainConfig& c, const ParameterSet& params) : c_(c) {
    for (const auto& [name, p] : params) state_.emplace(name, Moments{Tensor(p.value.shape()), Tensor(p.value.shape())});
  }

  void step(ParameterSet& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.adam_beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c_.adam_beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      Moments& s = state_.at(name);
      const bool decay = uses_weight_decay(name) && c_.weight_decay > 0.0;
      auto w = p.value.values();
      auto g = p.grad.values();
      auto m = s.m.values();
      auto v = s.v.values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = c_.adam_beta1 * m[i] + (1.0 - c_.adam_beta1) * g[i];
        v[i] = c_.adam_beta2 * v[i] + (1.0 - c_.adam_beta2) * g[i] * g[i];
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c_.adam_epsilon);
        if (decay) w[i] -= lr * c_.weight_decay * w[i];
        w[i] -= lr * update;
      }
    }
  }

 private:
  struct Moments {
    Tensor m, v;
  };
  TrainConfig c_;
  std::map<std::string, Moments> state_;
  std::size_t t_ = 0;
};

inline double global_grad_norm(const ParameterSet& params) {
  double ss = 0.0;
  for (const auto& [_, p] : params)
    for (double g : p.grad.values()) ss += g * g;
  return std::sqrt(ss);
}

// Rescales gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
inline double clip_grad_norm(ParameterSet& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [_, p] : params)
      for (double& g : p.grad.values()) g *= k;
  }
  return norm;
}

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimiser steps completed
  double loss = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;  // batch means over the epoch
  double lr = 0.0;  // rate used by the last step of the epoch
  PRF dev_sentence;
  std::vector<double> batch_losses;  // not serialised
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"step", e.step},
          {"loss", e.loss},
          {"l1", e.l1},
          {"l2", e.l2},
          {"l3", e.l3},
          {"lr", e.lr},
          {"dev_sentence_f1", e.dev_sentence.f1},
          {"dev_sentence_precision", e.dev_sentence.precision},
          {"dev_sentence_recall", e.dev_sentence.recall}};
}

// Checkpoint selection: strictly better dev F1 replaces the kept epoch.
inline bool is_better_checkpoint(double dev_f1, double best_so_far) { return dev_f1 > best_so_far; }

// 1-based epoch the trainer keeps for a sequence of dev F1 values.
inline std::size_t select_best_epoch(std::span<const double> dev_f1) {
  if (dev_f1.empty()) throw ValidationError("select_best_epoch: no epochs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_f1.size(); ++i)
    if (is_better_checkpoint(dev_f1[i], dev_f1[best])) best = i;
  return best + 1;
}

struct TrainResult {
  Model best;
  std::size_t best_epoch = 0;
  double best_dev_f1 = -1.0;
  std::vector<EpochLog> log;
};

// Sentence probabilities for every sentence of a tokenised dataset.
inline std::vector<double> predict_probabilities(Model& model, const Dataset& ds,
                                                 Normalization norm = Normalization::weighted) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences) {
    Tape tape(false);
    EncodeOptions opt;
    opt.record_attention = false;
    out.push_back(forward_sentence(tape, model, s.token_ids, opt, model.config.head, norm).probability);
  }
  return out;
}

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains `model` in place (it ends at the final epoch) and returns a copy of
// the parameters from the epoch with the best dev sentence F1 (earliest on
// ties). Datasets must already be tokenised with the model's vocab.
inline TrainResult train_model(const Dataset& train_in, const Dataset& dev_in, Model& model, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_in.empty()) throw ValidationError("empty training set");
  if (dev_in.empty()) throw ValidationError("empty dev set");
  // Zero-shot guard: nothing below can reach a gold token label.
  const Dataset train = strip_token_labels(train_in);
  const Dataset dev = strip_token_labels(dev_in);
  const std::vector<int> dev_gold = gold_sentence_labels(dev);

  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.split();
  Rng dropout_rng = rng.split();
  AdamW opt(cfg, model.params);
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.best = model;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<const LabeledSentence*> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(train.size(), (b + 1) * cfg.batch_size); ++i)
        batch.push_back(&train.sentences[order[i]]);
      model.params.zero_grad();
      JointLoss loss;
      try {
        Tape tape;
        EncodeOptions eo;
        eo.mode = Mode::train;
        eo.rng = &dropout_rng;
        eo.record_attention = false;
        loss = batch_loss(tape, model, batch, eo);
        if (!std::isfinite(loss.value)) throw NumericError("loss is " + std::to_string(loss.value));
        tape.backward(loss.total);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step + 1) + " (epoch " +
                           std::to_string(epoch) + "): " + e.what());
      }
      const double grad_norm = clip_grad_norm(model.params, cfg.max_grad_norm);
      if (!std::isfinite(grad_norm))
        throw NumericError("training diverged at step " + std::to_string(step + 1) + ": non-finite gradient");
      const double lr = scheduled_lr(cfg, step, total_steps);
      opt.step(model.params, lr);
      ++step;
      log.batch_losses.push_back(loss.value);
      log.loss += loss.value / static_cast<double>(batches);
      log.l1 += loss.l1 / static_cast<double>(batches);
      log.l2 += loss.l2 / static_cast<double>(batches);
      log.l3 += loss.l3 / static_cast<double>(batches);
      log.lr = lr;
    }
    log.step = step;
    log.dev_sentence = sentence_prf(predict_probabilities(model, dev), dev_gold);
    if (is_better_checkpoint(log.dev_sentence.f1, result.best_dev_f1)) {
      result.best_dev_f1 = log.dev_sentence.f1;
      result.best_epoch = epoch;
      result.best.params = model.params;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

inline void write_log_jsonl(std::ostream& out, const std::vector<EpochLog>& log) {
  for (const auto& e : log) out << to_json(e).dump() << '\n';
}

}  // namespace zsl
