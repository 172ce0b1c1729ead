#pragma once

// End-to-end experiment plumbing: run configuration, data preparation,
// training runs, the five scoring methods, evaluation reports, heatmaps and
// beta sweeps. The command-line tool is a thin layer over this header.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsl/checkpoint.hpp"
#include "zsl/data.hpp"
#include "zsl/errors.hpp"
#include "zsl/eval.hpp"
#include "zsl/head_score.hpp"
#include "zsl/lime.hpp"
#include "zsl/model.hpp"
#include "zsl/scores.hpp"
#include "zsl/train.hpp"

namespace zsl {

// ---------------------------------------------------------------------------
// Configuration.

struct DataConfig {
  std::string train, dev, test;  // TSV paths
  double dev_fraction = 0.1;     // held out of train when no dev path is given
  std::optional<SyntheticConfig> synthetic;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  LimeConfig lime;
  HeadScoreOptions head;
};

inline nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"n_train", c.n_train},
          {"n_dev", c.n_dev},
          {"n_test", c.n_test},
          {"vocab_size", c.vocab_size},
          {"cue_lexicon_size", c.cue_lexicon_size},
          {"positive_rate", c.positive_rate},
          {"min_length", c.min_length},
          {"max_length", c.max_length},
          {"min_word_chars", c.min_word_chars},
          {"max_word_chars", c.max_word_chars},
          {"distributed_cues", c.distributed_cues},
          {"lone_half_rate", c.lone_half_rate},
          {"seed", c.seed}};
}

inline void apply_json(const nlohmann::json& j, SyntheticConfig& c) {
  detail::reject_unknown(j,
                         {"n_train", "n_dev", "n_test", "vocab_size", "cue_lexicon_size", "positive_rate",
                          "min_length", "max_length", "min_word_chars", "max_word_chars", "distributed_cues",
                          "lone_half_rate", "seed"},
                         "data.synthetic");
  detail::read_key(j, "n_train", c.n_train);
  detail::read_key(j, "n_dev", c.n_dev);
  detail::read_key(j, "n_test", c.n_test);
  detail::read_key(j, "vocab_size", c.vocab_size);
  detail::read_key(j, "cue_lexicon_size", c.cue_lexicon_size);
  detail::read_key(j, "positive_rate", c.positive_rate);
  detail::read_key(j, "min_length", c.min_length);
  detail::read_key(j, "max_length", c.max_length);
  detail::read_key(j, "min_word_chars", c.min_word_chars);
  detail::read_key(j, "max_word_chars", c.max_word_chars);
  detail::read_key(j, "distributed_cues", c.distributed_cues);
  detail::read_key(j, "lone_half_rate", c.lone_half_rate);
  detail::read_key(j, "seed", c.seed);
}

inline nlohmann::json to_json(const LimeConfig& c) {
  return {{"n_samples", c.n_samples},
          {"kernel_width", c.kernel_width},
          {"ridge", c.ridge},
          {"mask_mode", c.mask_mode == MaskMode::mask ? "mask" : "delete"},
          {"seed", c.seed}};
}

inline void apply_json(const nlohmann::json& j, LimeConfig& c) {
  detail::reject_unknown(j, {"n_samples", "kernel_width", "ridge", "mask_mode", "seed"}, "lime");
  detail::read_key(j, "n_samples", c.n_samples);
  detail::read_key(j, "kernel_width", c.kernel_width);
  detail::read_key(j, "ridge", c.ridge);
  if (j.contains("mask_mode")) {
    std::string s;
    detail::read_key(j, "mask_mode", s);
    c.mask_mode = mask_mode_from_string(s);
  }
  detail::read_key(j, "seed", c.seed);
}

inline nlohmann::json to_json(const DataConfig& c) {
  nlohmann::json j = {{"train", c.train}, {"dev", c.dev}, {"test", c.test}, {"dev_fraction", c.dev_fraction}};
  j["synthetic"] = c.synthetic ? to_json(*c.synthetic) : nlohmann::json(nullptr);
  return j;
}

inline void apply_json(const nlohmann::json& j, DataConfig& c) {
  detail::reject_unknown(j, {"train", "dev", "test", "dev_fraction", "synthetic"}, "data");
  detail::read_key(j, "train", c.train);
  detail::read_key(j, "dev", c.dev);
  detail::read_key(j, "test", c.test);
  detail::read_key(j, "dev_fraction", c.dev_fraction);
  if (j.contains("synthetic")) {
    if (j.at("synthetic").is_null()) {
      c.synthetic.reset();
    } else {
      if (!c.synthetic) c.synthetic.emplace();
      apply_json(j.at("synthetic"), *c.synthetic);
    }
  }
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"data", to_json(c.data)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"lime", to_json(c.lime)},
          {"head", {{"include_cls_query", c.head.include_cls_query}}}};
}

inline void apply_json(const nlohmann::json& j, RunConfig& c) {
  detail::reject_unknown(j, {"data", "model", "train", "lime", "head"}, "config");
  if (j.contains("data")) apply_json(j.at("data"), c.data);
  if (j.contains("model")) apply_json(j.at("model"), c.model);
  if (j.contains("train")) apply_json(j.at("train"), c.train);
  if (j.contains("lime")) apply_json(j.at("lime"), c.lime);
  if (j.contains("head")) {
    detail::reject_unknown(j.at("head"), {"include_cls_query"}, "head");
    detail::read_key(j.at("head"), "include_cls_query", c.head.include_cls_query);
  }
  c.head.aggregation = c.model.aggregation;
}

inline void validate(const RunConfig& c) {
  ModelConfig m = c.model;
  m.encoder.vocab_size = special::kCount + 1;  // set from the vocabulary later
  m.validate();
  c.train.validate();
  c.lime.validate();
  if (!(c.data.dev_fraction > 0.0 && c.data.dev_fraction < 1.0))
    throw ConfigError("data.dev_fraction must be in (0, 1)");
  if (!c.data.synthetic && c.data.train.empty())
    throw ConfigError("data needs a train path or a synthetic section");
}

// Reads a JSON config; relative data paths resolve against the file's
// directory.
inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  apply_json(j, base);
  const auto dir = std::filesystem::path(path).parent_path();
  for (std::string* p : {&base.data.train, &base.data.dev, &base.data.test})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (dir / *p).lexically_normal().string();
  return base;
}

// ---------------------------------------------------------------------------
// Data.

struct Splits {
  Dataset train, dev, test;
  bool dev_held_out = false;
  std::vector<std::string> warnings;
};

inline Dataset load_dataset(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  LoadResult r = load_tsv(path);
  if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
  return std::move(r.dataset);
}

inline Splits load_splits(const DataConfig& c, std::uint64_t seed) {
  Splits s;
  if (c.synthetic) {
    SyntheticCorpus corpus = generate_synthetic(*c.synthetic);
    s.train = std::move(corpus.train);
    s.dev = std::move(corpus.dev);
    s.test = std::move(corpus.test);
  } else {
    s.train = load_dataset(c.train, &s.warnings);
    if (!c.dev.empty()) s.dev = load_dataset(c.dev, &s.warnings);
    if (!c.test.empty()) s.test = load_dataset(c.test, &s.warnings);
  }
  if (s.dev.empty()) {
    auto [keep, held] = holdout_split(s.train, c.dev_fraction, seed);
    s.train = std::move(keep);
    s.dev = std::move(held);
    s.dev_held_out = true;
  }
  if (s.train.empty()) throw ValidationError("training set is empty");
  if (s.dev.empty()) throw ValidationError("dev set is empty");
  return s;
}

inline void tokenize_for(const Model& model, Dataset& ds) {
  tokenize_dataset(ds, model.vocab, model.config.tokenizer());
}

// Vocabulary from the training split only; every split is tokenised.
inline Model prepare_model(const RunConfig& c, Splits& s) {
  const TokenizerConfig tok = c.model.tokenizer();
  Model m = init_model(c.model, build_vocab({&s.train}, tok), c.train.seed);
  for (Dataset* ds : {&s.train, &s.dev, &s.test}) tokenize_for(m, *ds);
  return m;
}

// ---------------------------------------------------------------------------
// Training runs.

struct TrainRun {
  TrainResult result;
  Splits splits;
  nlohmann::json metadata;
};

inline TrainRun run_training(const RunConfig& c, std::ostream* progress = nullptr) {
  validate(c);
  TrainRun run;
  run.splits = load_splits(c.data, c.train.seed);
  Model model = prepare_model(c, run.splits);
  run.result = train_model(run.splits.train, run.splits.dev, model, c.train, [&](const EpochLog& e) {
    if (!progress) return;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu/%zu  loss %.4f  (L1 %.4f L2 %.4f L3 %.4f)  dev sent F1 %.4f\n", e.epoch,
                  c.train.epochs, e.loss, e.l1, e.l2, e.l3, e.dev_sentence.f1);
    *progress << line << std::flush;
  });
  run.metadata = {{"seed", c.train.seed},
                  {"best_epoch", run.result.best_epoch},
                  {"best_dev_sentence_f1", run.result.best_dev_f1},
                  {"train_sentences", run.splits.train.size()},
                  {"dev_sentences", run.splits.dev.size()},
                  {"dev_held_out", run.splits.dev_held_out}};
  return run;
}

// Writes model.ckpt, config.json and train_log.jsonl into `dir`.
inline void write_training_outputs(const std::string& dir, const RunConfig& c, const TrainRun& run) {
  std::filesystem::create_directories(dir);
  save_checkpoint((std::filesystem::path(dir) / "model.ckpt").string(), run.result.best, run.metadata);
  std::ofstream cfg(std::filesystem::path(dir) / "config.json");
  cfg << to_json(c).dump(2) << '\n';
  std::ofstream log(std::filesystem::path(dir) / "train_log.jsonl");
  write_log_jsonl(log, run.result.log);
  if (!cfg || !log) throw ParseError("cannot write training outputs to " + dir);
}

// ---------------------------------------------------------------------------
// Scoring.

enum class ScoreMethod { soft, weighted_soft, head, lime, random };

inline ScoreMethod score_method_from_string(const std::string& s) {
  if (s == "soft") return ScoreMethod::soft;
  if (s == "weighted-soft") return ScoreMethod::weighted_soft;
  if (s == "head") return ScoreMethod::head;
  if (s == "lime") return ScoreMethod::lime;
  if (s == "random") return ScoreMethod::random;
  throw ConfigError("unknown method '" + s + "' (expected soft | weighted-soft | head | lime | random)");
}

struct ScoreOptions {
  ScoreMethod method = ScoreMethod::weighted_soft;
  std::optional<double> beta;       // weighted-soft only; default from the checkpoint
  std::optional<double> epsilon;    // weighted-soft only; default from the checkpoint
  std::optional<double> threshold;  // skips tuning when set
  std::uint64_t seed = 1;           // random and LIME sampling
  LimeConfig lime;
  HeadScoreOptions head;
};

namespace detail {

inline std::string seed_of(const nlohmann::json& metadata, std::uint64_t fallback) {
  if (metadata.contains("seed") && metadata.at("seed").is_number_unsigned())
    return std::to_string(metadata.at("seed").get<std::uint64_t>());
  return std::to_string(fallback);
}

inline void require_dev_labels(const Dataset* dev, const char* method) {
  if (!dev || dev->empty()) throw ConfigError(std::string(method) + " needs a dev set with token labels");
  if (!dev->has_token_labels())
    throw ValidationError(std::string(method) + " needs gold token labels in the dev set");
}

inline ImportanceScores scored(const std::string& method, const Dataset& data, const ScoreMatrix& scores,
                               const std::vector<double>* probs) {
  ImportanceScores sc;
  sc.method = method;
  for (std::size_t i = 0; i < data.size(); ++i) {
    SentenceScores s{data.sentences[i].words, scores[i], std::nullopt};
    if (probs) s.sentence_probability = (*probs)[i];
    sc.sentences.push_back(std::move(s));
  }
  return sc;
}

inline ScoreMatrix lime_matrix(Model& model, const Dataset& ds, const LimeConfig& cfg, Rng& rng) {
  ProbabilityFn f = [&](std::span<const TokenId> ids) { return predict_probability(model, ids); };
  ScoreMatrix out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences) out.push_back(lime_explain(s, f, cfg, rng).weights);
  return out;
}

inline ScoreMatrix head_matrix(Model& model, const Dataset& ds, HeadId head, const HeadScoreOptions& opt) {
  ScoreMatrix out;
  out.reserve(ds.size());
  for (const auto& s : ds.sentences)
    out.push_back(head_token_scores(encoder_attention(model, s.token_ids), head, s.alignment, opt));
  return out;
}

}  // namespace detail

// Scores a dataset already tokenised with the model's vocabulary. `model`
// may be null for the random baseline; `dev` is needed by head and lime.
inline ImportanceScores score_dataset(Model* model, const Dataset& data, const Dataset* dev, const ScoreOptions& opt,
                                      const nlohmann::json& checkpoint_metadata = nlohmann::json::object()) {
  if (data.empty()) throw ValidationError("nothing to score: dataset is empty");
  if (opt.method == ScoreMethod::random) {
    ImportanceScores sc = detail::scored("random", data, random_baseline(data, opt.seed), nullptr);
    sc.threshold = opt.threshold.value_or(kRandomBaselineThreshold);
    sc.set("seed", std::to_string(opt.seed));
    return sc;
  }
  if (!model) throw ConfigError("a checkpoint is required for this method");
  const std::string seed = detail::seed_of(checkpoint_metadata, opt.seed);

  if (opt.method == ScoreMethod::soft || opt.method == ScoreMethod::weighted_soft) {
    if (model->config.classifier != ClassifierKind::soft_attention)
      throw ConfigError("soft-attention scoring needs a soft-attention checkpoint");
    HeadConfig h = model->config.head;
    Normalization norm = Normalization::weighted;
    if (opt.method == ScoreMethod::soft) {
      h.beta = 1.0;
      h.norm_epsilon = 0.0;
      norm = Normalization::plain;
    } else {
      if (opt.beta) h.beta = *opt.beta;
      if (opt.epsilon) h.norm_epsilon = *opt.epsilon;
    }
    // Inference tolerates epsilon = 0: sigmoid weights keep the sum positive.
    if (!(h.beta >= 1.0)) throw ConfigError("beta must be >= 1");
    if (!(h.norm_epsilon >= 0.0)) throw ConfigError("norm_epsilon must be >= 0");
    ScoreMatrix words;
    std::vector<double> probs;
    for (const auto& s : data.sentences) {
      SentencePrediction p = predict(*model, s, h, norm);
      words.push_back(std::move(p.word_scores));
      probs.push_back(p.probability);
    }
    ImportanceScores sc = detail::scored("soft-attention", data, words, &probs);
    sc.threshold = opt.threshold.value_or(0.5);
    sc.set("beta", format_double(h.beta));
    sc.set("norm_epsilon", format_double(h.norm_epsilon));
    sc.set("aggregation", to_string(model->config.aggregation));
    sc.set("seed", seed);
    return sc;
  }

  std::vector<double> probs;
  for (const auto& s : data.sentences) probs.push_back(predict_probability(*model, s.token_ids));

  if (opt.method == ScoreMethod::head) {
    detail::require_dev_labels(dev, "head scoring");
    HeadScoreOptions ho = opt.head;
    ho.aggregation = model->config.aggregation;
    const HeadSelection sel = select_best_head(*dev, *model, ho);
    ImportanceScores sc = detail::scored("attention-head", data, detail::head_matrix(*model, data, sel.best, ho), &probs);
    sc.set("layer", std::to_string(sel.best.layer));
    sc.set("head", std::to_string(sel.best.head));
    sc.set("dev_map", format_double(sel.best_map));
    sc.set("include_cls_query", ho.include_cls_query ? "true" : "false");
    if (opt.threshold) {
      sc.threshold = *opt.threshold;
      sc.set("threshold_source", "flag");
    } else {
      const ThresholdResult t = tune_threshold(detail::head_matrix(*model, *dev, sel.best, ho), gold_token_labels(*dev));
      sc.threshold = t.threshold;
      sc.set("threshold_source", "dev-token-f1");
      if (t.no_positive_tokens) sc.set("warning", "dev set has no positive tokens");
    }
    sc.set("read_token_labels", "true");
    sc.set("seed", seed);
    return sc;
  }

  // LIME.
  LimeConfig lc = opt.lime;
  lc.seed = opt.seed;
  Rng rng(lc.seed);
  Rng dev_rng = rng.split();
  ImportanceScores sc = detail::scored("lime", data, detail::lime_matrix(*model, data, lc, rng), &probs);
  sc.set("classifier", to_string(model->config.classifier));
  sc.set("n_samples", std::to_string(lc.n_samples));
  sc.set("kernel_width", format_double(lc.kernel_width));
  sc.set("ridge", format_double(lc.ridge));
  sc.set("mask_mode", lc.mask_mode == MaskMode::mask ? "mask" : "delete");
  sc.set("sample_seed", std::to_string(lc.seed));
  if (opt.threshold) {
    sc.threshold = *opt.threshold;
    sc.set("threshold_source", "flag");
    sc.set("read_token_labels", "false");
  } else {
    detail::require_dev_labels(dev, "lime threshold tuning (or pass --threshold)");
    const ThresholdResult t = tune_threshold(detail::lime_matrix(*model, *dev, lc, dev_rng), gold_token_labels(*dev));
    sc.threshold = t.threshold;
    sc.set("threshold_source", "dev-token-f1");
    if (t.no_positive_tokens) sc.set("warning", "dev set has no positive tokens");
    sc.set("read_token_labels", "true");
  }
  sc.set("seed", seed);
  return sc;
}

// ---------------------------------------------------------------------------
// Evaluation.

// Row label: the method tag plus beta when present.
inline std::string method_key(const ImportanceScores& sc) {
  auto beta = sc.get("beta");
  return beta ? sc.method + " beta=" + *beta : sc.method;
}

inline void check_words(const ImportanceScores& sc, const Dataset& gold, const std::string& source) {
  if (sc.sentences.size() != gold.size())
    throw AlignmentError(source + ": " + std::to_string(sc.sentences.size()) + " scored sentences for " +
                         std::to_string(gold.size()) + " gold sentences");
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (sc.sentences[i].words != gold.sentences[i].words)
      throw AlignmentError(source + ": sentence " + std::to_string(i) + " words differ from the gold file");
}

inline MetricsReport evaluate_scores(const ImportanceScores& sc, const Dataset& gold,
                                     const std::string& source = "<scores>") {
  check_words(sc, gold, source);
  MetricsReport r;
  r.method = method_key(sc);
  if (auto seed = sc.get("seed")) r.seed = std::stoull(*seed);
  r.threshold = sc.threshold;
  const bool have_probs = std::all_of(sc.sentences.begin(), sc.sentences.end(),
                                      [](const SentenceScores& s) { return s.sentence_probability.has_value(); });
  if (have_probs) {
    std::vector<double> p;
    for (const auto& s : sc.sentences) p.push_back(*s.sentence_probability);
    r.sentence = sentence_prf(p, gold_sentence_labels(gold));
  }
  if (gold.has_token_labels()) {
    const ScoreMatrix m = sc.score_matrix();
    const LabelMatrix g = gold_token_labels(gold);
    r.token = token_prf(m, g, sc.threshold);
    r.map = token_map(m, g);
    r.map_global = token_map_global(m, g);
  }
  return r;
}

enum class TTestMetric { map, token_f1, sentence_f1 };

inline TTestMetric ttest_metric_from_string(const std::string& s) {
  if (s == "map") return TTestMetric::map;
  if (s == "f1") return TTestMetric::token_f1;
  if (s == "sent_f1") return TTestMetric::sentence_f1;
  throw ConfigError("unknown t-test metric '" + s + "' (expected map | f1 | sent_f1)");
}

inline double metric_value(const MetricsReport& r, TTestMetric m) {
  switch (m) {
    case TTestMetric::map:
      if (r.map) return *r.map;
      break;
    case TTestMetric::token_f1:
      if (r.token) return r.token->f1;
      break;
    case TTestMetric::sentence_f1:
      if (r.sentence) return r.sentence->f1;
      break;
  }
  throw ValidationError("report for " + r.method + " lacks the t-test metric");
}

struct EvalSummary {
  std::vector<std::string> sources;
  std::vector<MetricsReport> reports;     // one per scores file
  std::vector<MetricsReport> aggregates;  // one per method, first-seen order
  std::vector<std::size_t> seeds_per_method;
  struct Comparison {
    std::string a, b, metric;
    TTestResult result;
  };
  std::optional<Comparison> ttest;
};

inline EvalSummary summarize(std::vector<std::string> sources, std::vector<MetricsReport> reports) {
  EvalSummary out;
  out.sources = std::move(sources);
  out.reports = std::move(reports);
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricsReport>> groups;
  for (const auto& r : out.reports) {
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(r);
  }
  for (const auto& m : order) {
    out.aggregates.push_back(aggregate_seeds(groups[m]));
    out.seeds_per_method.push_back(groups[m].size());
  }
  return out;
}

// Paired over seeds; both methods must cover the same seed set.
inline void add_ttest(EvalSummary& s, const std::string& a, const std::string& b, TTestMetric metric,
                      const std::string& metric_name) {
  auto collect = [&](const std::string& m) {
    std::map<std::uint64_t, double> by_seed;
    for (const auto& r : s.reports)
      if (r.method == m) {
        if (!r.seed) throw ValidationError("t-test needs a seed on every report of " + m);
        if (!by_seed.emplace(*r.seed, metric_value(r, metric)).second)
          throw ValidationError("duplicate seed " + std::to_string(*r.seed) + " for " + m);
      }
    if (by_seed.empty()) throw ConfigError("no reports for method '" + m + "'");
    return by_seed;
  };
  const auto sa = collect(a), sb = collect(b);
  std::vector<double> va, vb;
  for (const auto& [seed, v] : sa) {
    auto it = sb.find(seed);
    if (it == sb.end()) throw AlignmentError("seed " + std::to_string(seed) + " of " + a + " missing for " + b);
    va.push_back(v);
    vb.push_back(it->second);
  }
  if (sa.size() != sb.size()) throw AlignmentError("t-test: unequal seed sets for " + a + " and " + b);
  s.ttest = EvalSummary::Comparison{a, b, metric_name, paired_t_test(va, vb)};
}

inline nlohmann::json to_json(const EvalSummary& s) {
  nlohmann::json reports = nlohmann::json::array(), aggregates = nlohmann::json::array();
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    nlohmann::json j = to_json(s.reports[i]);
    j["source"] = s.sources[i];
    reports.push_back(std::move(j));
  }
  for (std::size_t i = 0; i < s.aggregates.size(); ++i) {
    nlohmann::json j = to_json(s.aggregates[i]);
    j["n_seeds"] = s.seeds_per_method[i];
    j.erase("seed");
    aggregates.push_back(std::move(j));
  }
  nlohmann::json out = {{"reports", reports}, {"aggregates", aggregates}};
  if (s.ttest) {
    nlohmann::json t = to_json(s.ttest->result);
    t["a"] = s.ttest->a;
    t["b"] = s.ttest->b;
    t["metric"] = s.ttest->metric;
    out["ttest"] = t;
  } else {
    out["ttest"] = nullptr;
  }
  return out;
}

// Percentages with two decimals; "-" where a metric is unavailable.
inline std::string metrics_table(std::span<const MetricsReport> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  auto cell = [](std::optional<double> v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
    return std::string(buf);
  };
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %8s\n", static_cast<int>(width), "Method", "Sent F1", "F1", "MAP");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %8s\n", static_cast<int>(width), r.method.c_str(),
                  cell(r.sentence ? std::optional(r.sentence->f1) : std::nullopt).c_str(),
                  cell(r.token ? std::optional(r.token->f1) : std::nullopt).c_str(), cell(r.map).c_str());
    out << line;
  }
  return out.str();
}

inline std::string summary_table(const EvalSummary& s) {
  std::string out = metrics_table(s.aggregates);
  if (s.ttest) {
    char line[256];
    std::snprintf(line, sizeof line, "paired t-test (%s): %s vs %s  t=%.4f  df=%zu  p=%.4g%s\n", s.ttest->metric.c_str(),
                  s.ttest->a.c_str(), s.ttest->b.c_str(), s.ttest->result.t, s.ttest->result.df,
                  s.ttest->result.p_value, s.ttest->result.undefined_variance ? "  (identical differences)" : "");
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heatmaps. Scores are clamped to the fixed scale [0, 1].

enum class HeatmapFormat { ansi, html, json };

inline constexpr std::size_t kShadeLevels = 10;

inline std::size_t shade_level(double score) {
  const double v = std::isnan(score) ? 0.0 : std::clamp(score, 0.0, 1.0);
  return std::min(kShadeLevels - 1, static_cast<std::size_t>(v * static_cast<double>(kShadeLevels)));
}

namespace detail {

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_heatmap(std::span<const ImportanceScores> methods, HeatmapFormat fmt) {
  if (methods.empty()) throw ConfigError("heatmap needs at least one scores file");
  const std::size_t n = methods[0].sentences.size();
  for (std::size_t m = 1; m < methods.size(); ++m) {
    if (methods[m].sentences.size() != n)
      throw AlignmentError("heatmap: scores files cover different numbers of sentences");
    for (std::size_t i = 0; i < n; ++i)
      if (methods[m].sentences[i].words != methods[0].sentences[i].words)
        throw AlignmentError("heatmap: sentence " + std::to_string(i) + " differs between scores files");
  }
  std::size_t width = 0;
  for (const auto& m : methods) width = std::max(width, method_key(m).size());

  std::ostringstream out;
  if (fmt == HeatmapFormat::json) {
    nlohmann::json sentences = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& m : methods) {
        std::vector<std::size_t> levels;
        for (double v : m.sentences[i].scores) levels.push_back(shade_level(v));
        rows.push_back({{"method", method_key(m)},
                        {"words", m.sentences[i].words},
                        {"scores", m.sentences[i].scores},
                        {"levels", levels}});
      }
      sentences.push_back({{"index", i}, {"rows", rows}});
    }
    out << nlohmann::json{{"scale", {0.0, 1.0}}, {"levels", kShadeLevels}, {"sentences", sentences}}.dump(2) << '\n';
    return out.str();
  }
  if (fmt == HeatmapFormat::html) {
    out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>word importance</title>\n"
        << "<style>body{font-family:sans-serif}td{padding:2px 6px}th{text-align:right;font-weight:normal;"
        << "color:#555;padding-right:12px}span{padding:1px 3px;margin:1px;border-radius:3px}</style>\n"
        << "</head><body>\n";
    for (std::size_t i = 0; i < n; ++i) {
      out << "<table>\n<caption>sentence " << i << "</caption>\n";
      for (const auto& m : methods) {
        out << "<tr><th>" << detail::html_escape(method_key(m)) << "</th><td>";
        const auto& s = m.sentences[i];
        for (std::size_t w = 0; w < s.words.size(); ++w) {
          char alpha[16];
          std::snprintf(alpha, sizeof alpha, "%.3f", std::isnan(s.scores[w]) ? 0.0 : std::clamp(s.scores[w], 0.0, 1.0));
          out << (w ? " " : "") << "<span style=\"background-color:rgba(200,30,30," << alpha << ")\" title=\""
              << format_double(s.scores[w]) << "\">" << detail::html_escape(s.words[w]) << "</span>";
        }
        out << "</td></tr>\n";
      }
      out << "</table>\n";
    }
    out << "</body></html>\n";
    return out.str();
  }
  // 256-colour background ramp from white to dark red.
  static constexpr int kRamp[kShadeLevels] = {231, 224, 217, 210, 203, 196, 160, 124, 88, 52};
  for (std::size_t i = 0; i < n; ++i) {
    out << "sentence " << i << '\n';
    for (const auto& m : methods) {
      const std::string label = method_key(m);
      out << "  " << label << std::string(width - label.size(), ' ') << "  ";
      const auto& s = m.sentences[i];
      for (std::size_t w = 0; w < s.words.size(); ++w) {
        const std::size_t lvl = shade_level(s.scores[w]);
        out << (w ? " " : "") << "\x1b[48;5;" << kRamp[lvl] << (lvl >= 6 ? ";97m" : ";30m") << s.words[w] << "\x1b[0m";
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Beta sweep.

struct SweepRow {
  double beta = 1.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> dev_map, dev_sentence_f1, test_map, test_sentence_f1;
};

inline MetricsReport soft_attention_report(Model& model, const Dataset& ds) {
  ScoreOptions opt;
  opt.method = ScoreMethod::weighted_soft;
  return evaluate_scores(score_dataset(&model, ds, nullptr, opt), ds);
}

// Trains once per (beta, seed) pair; seeds are shared across betas.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, std::span<const double> betas,
                                       std::span<const std::uint64_t> seeds, std::ostream* progress = nullptr) {
  if (betas.empty()) throw ConfigError("sweep needs at least one beta");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  std::vector<SweepRow> rows;
  for (double beta : betas) {
    SweepRow row;
    row.beta = beta;
    for (std::uint64_t seed : seeds) {
      RunConfig c = base;
      c.model.head.beta = beta;
      c.train.seed = seed;
      if (progress) *progress << "beta " << format_double(beta) << " seed " << seed << '\n';
      TrainRun run = run_training(c, progress);
      Model& m = run.result.best;
      const MetricsReport dev = soft_attention_report(m, run.splits.dev);
      row.seeds.push_back(seed);
      row.dev_map.push_back(dev.map.value_or(std::nan("")));
      row.dev_sentence_f1.push_back(dev.sentence->f1);
      if (!run.splits.test.empty()) {
        const MetricsReport test = soft_attention_report(m, run.splits.test);
        row.test_map.push_back(test.map.value_or(std::nan("")));
        row.test_sentence_f1.push_back(test.sentence->f1);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const SweepRow& r) {
  auto avg = [](const std::vector<double>& v) { return v.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean(v)); };
  return {{"beta", r.beta},
          {"seeds", r.seeds},
          {"dev_map", r.dev_map},
          {"dev_sentence_f1", r.dev_sentence_f1},
          {"test_map", r.test_map},
          {"test_sentence_f1", r.test_sentence_f1},
          {"mean_dev_map", avg(r.dev_map)},
          {"mean_dev_sentence_f1", avg(r.dev_sentence_f1)},
          {"mean_test_map", avg(r.test_map)},
          {"mean_test_sentence_f1", avg(r.test_sentence_f1)}};
}

inline std::string sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%6s  %5s  %11s  %8s  %12s  %9s\n", "beta", "seeds", "dev Sent F1", "dev MAP",
                "test Sent F1", "test MAP");
  out << line;
  auto cell = [](const std::vector<double>& v) {
    if (v.empty()) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * mean(v));
    return std::string(buf);
  };
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%6s  %5zu  %11s  %8s  %12s  %9s\n", format_double(r.beta).c_str(), r.seeds.size(),
                  cell(r.dev_sentence_f1).c_str(), cell(r.dev_map).c_str(), cell(r.test_sentence_f1).c_str(),
                  cell(r.test_map).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace zsl
