// Command-line front end: generate, stats, train, score, eval, heatmap, sweep.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zsl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace zsl;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kUsage = 2, kData = 3, kNumeric = 4, kVersion = 5 };

std::string default_out_dir() {
  const char* env = std::getenv("ZSL_OUT_DIR");
  return env && *env ? env : "out";
}

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw ParseError("cannot write " + path);
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta, gamma;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "training seed");
  app->add_option("--beta", c.beta, "attention sharpening exponent (>= 1)");
  app->add_option("--gamma", c.gamma, "weight of the auxiliary losses (>= 0)");
  app->add_option("--epochs", c.epochs, "training epochs");
}

// Flag > file > default.
RunConfig resolve(const Common& c) {
  RunConfig r = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) r.train.seed = *c.seed;
  if (c.beta) r.model.head.beta = *c.beta;
  if (c.gamma) r.model.head.gamma = *c.gamma;
  if (c.epochs) r.train.epochs = *c.epochs;
  return r;
}

int run(int argc, char** argv) {
  CLI::App app{"Zero-shot word importance from sentence-level labels"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "zsl 1.0.0");

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic cue-detection corpus as TSV");
  SyntheticConfig syn;
  std::string gen_config, gen_out;
  gen->add_option("--config", gen_config, "JSON run configuration; its data.synthetic section is used")
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory (default $ZSL_OUT_DIR or ./out)");
  auto* gen_seed = gen->add_option("--seed", syn.seed, "corpus seed");
  auto* gen_train = gen->add_option("--n-train", syn.n_train, "training sentences");
  auto* gen_dev = gen->add_option("--n-dev", syn.n_dev, "dev sentences");
  auto* gen_test = gen->add_option("--n-test", syn.n_test, "test sentences");
  auto* gen_vocab = gen->add_option("--vocab-size", syn.vocab_size, "word types");
  auto* gen_lex = gen->add_option("--lexicon-size", syn.cue_lexicon_size, "cue words");
  auto* gen_dist = gen->add_flag("--distributed", syn.distributed_cues, "positives need both halves of a cue pair");

  // stats
  auto* stats = app.add_subcommand("stats", "summarise TSV datasets");
  std::vector<std::string> stats_files;
  std::string stats_config;
  stats->add_option("files", stats_files, "TSV files")->required()->check(CLI::ExistingFile);
  stats->add_option("--config", stats_config, "JSON run configuration for the tokenizer")->check(CLI::ExistingFile);

  // train
  auto* train = app.add_subcommand("train", "train a sentence classifier on sentence labels only");
  Common train_opts;
  std::string train_out;
  bool quiet = false;
  add_common(train, train_opts);
  train->add_option("--out", train_out, "output directory (default $ZSL_OUT_DIR or ./out)");
  train->add_flag("--quiet", quiet, "no per-epoch progress on stderr");

  // score
  auto* score = app.add_subcommand("score", "write per-word importance scores");
  std::string ckpt, score_data, score_dev, score_out, method = "weighted-soft", score_config;
  ScoreOptions sopt;
  std::optional<double> s_beta, s_eps, s_thr;
  std::optional<std::size_t> lime_samples;
  score->add_option("--checkpoint", ckpt, "model checkpoint (not needed for random)")->check(CLI::ExistingFile);
  score->add_option("--data", score_data, "TSV to score")->required()->check(CLI::ExistingFile);
  score->add_option("--dev", score_dev, "labelled dev TSV for head selection and threshold tuning")
      ->check(CLI::ExistingFile);
  score->add_option("--method", method, "soft | weighted-soft | head | lime | random")
      ->check(CLI::IsMember({"soft", "weighted-soft", "head", "lime", "random"}));
  score->add_option("--beta", s_beta, "override the checkpoint's beta (weighted-soft)");
  score->add_option("--epsilon", s_eps, "override the normalisation epsilon (weighted-soft)");
  score->add_option("--threshold", s_thr, "word-level decision threshold; skips dev tuning");
  score->add_option("--seed", sopt.seed, "seed for random and LIME sampling");
  score->add_option("--lime-samples", lime_samples, "perturbation samples per sentence");
  score->add_option("--config", score_config, "JSON run configuration (lime and head sections)")
      ->check(CLI::ExistingFile);
  score->add_option("--out", score_out, "scores file (default stdout)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate scores files against gold labels");
  std::string gold, eval_out, eval_format = "table", ttest_metric = "map";
  std::vector<std::string> eval_files, ttest;
  eval->add_option("--gold", gold, "gold TSV")->required()->check(CLI::ExistingFile);
  eval->add_option("scores", eval_files, "scores files")->required()->check(CLI::ExistingFile);
  eval->add_option("--ttest", ttest, "paired t-test between two methods over seeds")->expected(2);
  eval->add_option("--metric", ttest_metric, "t-test metric")->check(CLI::IsMember({"map", "f1", "sent_f1"}));
  eval->add_option("--format", eval_format, "json | table")->check(CLI::IsMember({"json", "table"}));
  eval->add_option("--out", eval_out, "report file (default stdout)");

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "render scores as shaded words");
  std::vector<std::string> heat_files;
  std::string heat_format = "ansi", heat_out;
  heat->add_option("scores", heat_files, "scores files, stacked per sentence")->required()->check(CLI::ExistingFile);
  heat->add_option("--format", heat_format, "ansi | html | json")->check(CLI::IsMember({"ansi", "html", "json"}));
  heat->add_option("--out", heat_out, "output file (default stdout)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train across beta values and seeds");
  Common sweep_opts;
  std::vector<double> betas = {1.0, 2.0, 3.0, 4.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string sweep_format = "table", sweep_out;
  add_common(sweep, sweep_opts);
  sweep->add_option("--betas", betas, "beta grid")->delimiter(',');
  sweep->add_option("--seeds", seeds, "seeds")->delimiter(',');
  sweep->add_option("--format", sweep_format, "json | table")->check(CLI::IsMember({"json", "table"}));
  sweep->add_option("--out", sweep_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (gen->parsed()) {
    if (!gen_config.empty()) {
      const RunConfig rc = load_run_config(gen_config);
      if (!rc.data.synthetic) throw ConfigError(gen_config + ": no data.synthetic section");
      const SyntheticConfig file = *rc.data.synthetic;
      // Flags given on the command line win over the file.
      if (!*gen_seed) syn.seed = file.seed;
      if (!*gen_train) syn.n_train = file.n_train;
      if (!*gen_dev) syn.n_dev = file.n_dev;
      if (!*gen_test) syn.n_test = file.n_test;
      if (!*gen_vocab) syn.vocab_size = file.vocab_size;
      if (!*gen_lex) syn.cue_lexicon_size = file.cue_lexicon_size;
      if (!*gen_dist) syn.distributed_cues = file.distributed_cues;
      syn.positive_rate = file.positive_rate;
      syn.min_length = file.min_length;
      syn.max_length = file.max_length;
      syn.min_word_chars = file.min_word_chars;
      syn.max_word_chars = file.max_word_chars;
      syn.lone_half_rate = file.lone_half_rate;
    }
    const std::string dir = gen_out.empty() ? default_out_dir() : gen_out;
    fs::create_directories(dir);
    const SyntheticCorpus corpus = generate_synthetic(syn);
    save_tsv(dir + "/train.tsv", corpus.train);
    save_tsv(dir + "/dev.tsv", corpus.dev);
    save_tsv(dir + "/test.tsv", corpus.test);
    std::string cues;
    for (const auto& c : corpus.cues) cues += c + '\n';
    emit(dir + "/cues.txt", cues);
    std::cerr << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
              << " sentences to " << dir << '\n';
    return kOk;
  }

  if (stats->parsed()) {
    const RunConfig rc = stats_config.empty() ? RunConfig{} : load_run_config(stats_config);
    nlohmann::json out = nlohmann::json::object();
    for (const auto& f : stats_files) {
      LoadResult r = load_tsv(f);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      const Vocab v = build_vocab({&r.dataset}, rc.model.tokenizer());
      tokenize_dataset(r.dataset, v, rc.model.tokenizer());
      out[f] = dataset_stats(r.dataset);
    }
    std::cout << out.dump(2) << '\n';
    return kOk;
  }

  if (train->parsed()) {
    const RunConfig rc = resolve(train_opts);
    const std::string dir = train_out.empty() ? default_out_dir() : train_out;
    const TrainRun r = run_training(rc, quiet ? nullptr : &std::cerr);
    for (const auto& w : r.splits.warnings) std::cerr << "warning: " << w << '\n';
    write_training_outputs(dir, rc, r);
    std::cerr << "best epoch " << r.result.best_epoch << " (dev sentence F1 " << format_double(r.result.best_dev_f1)
              << "); wrote " << dir << "/model.ckpt\n";
    return kOk;
  }

  if (score->parsed()) {
    sopt.method = score_method_from_string(method);
    sopt.beta = s_beta;
    sopt.epsilon = s_eps;
    sopt.threshold = s_thr;
    if (!score_config.empty()) {
      const RunConfig rc = load_run_config(score_config);
      sopt.lime = rc.lime;
      sopt.head = rc.head;
    }
    if (lime_samples) sopt.lime.n_samples = *lime_samples;
    sopt.lime.validate();
    if ((s_beta || s_eps) && sopt.method != ScoreMethod::weighted_soft)
      throw ConfigError("--beta and --epsilon apply to weighted-soft only");
    Dataset data = load_dataset(score_data);
    std::optional<Dataset> dev;
    if (!score_dev.empty()) dev = load_dataset(score_dev);
    std::optional<Checkpoint> ck;
    if (sopt.method != ScoreMethod::random) {
      if (ckpt.empty()) throw ConfigError("--checkpoint is required for method " + method);
      ck = load_checkpoint(ckpt);
      tokenize_for(ck->model, data);
      if (dev) tokenize_for(ck->model, *dev);
    }
    const ImportanceScores sc = score_dataset(ck ? &ck->model : nullptr, data, dev ? &*dev : nullptr, sopt,
                                              ck ? ck->metadata : nlohmann::json::object());
    emit(score_out, scores_to_string(sc));
    return kOk;
  }

  if (eval->parsed()) {
    const Dataset gold_ds = load_dataset(gold);
    std::vector<MetricsReport> reports;
    for (const auto& f : eval_files) reports.push_back(evaluate_scores(load_scores(f), gold_ds, f));
    EvalSummary s = summarize(eval_files, std::move(reports));
    if (!ttest.empty()) add_ttest(s, ttest[0], ttest[1], ttest_metric_from_string(ttest_metric), ttest_metric);
    emit(eval_out, eval_format == "json" ? to_json(s).dump(2) + '\n' : summary_table(s));
    return kOk;
  }

  if (heat->parsed()) {
    std::vector<ImportanceScores> all;
    for (const auto& f : heat_files) all.push_back(load_scores(f));
    const HeatmapFormat fmt = heat_format == "html"   ? HeatmapFormat::html
                              : heat_format == "json" ? HeatmapFormat::json
                                                      : HeatmapFormat::ansi;
    emit(heat_out, render_heatmap(all, fmt));
    return kOk;
  }

  if (sweep->parsed()) {
    const RunConfig rc = resolve(sweep_opts);
    const auto rows = run_sweep(rc, betas, seeds, &std::cerr);
    if (sweep_format == "json") {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : rows) j.push_back(to_json(r));
      emit(sweep_out, j.dump(2) + '\n');
    } else {
      emit(sweep_out, sweep_table(rows));
    }
    return kOk;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const VersionError& e) {
    std::cerr << "version error: " << e.what() << '\n';
    return kVersion;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
}
