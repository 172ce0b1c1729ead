#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "zsl/pipeline.hpp"

using namespace zsl;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(std::uint64_t seed = 3, std::size_t epochs = 3) {
  RunConfig c;
  c.model = zsl::testing::tiny_config();
  c.model.split_mode = SplitMode::word;
  c.model.head.beta = 2.0;
  SyntheticConfig sc;
  sc.n_train = 120;
  sc.n_dev = 30;
  sc.n_test = 30;
  sc.vocab_size = 40;
  sc.cue_lexicon_size = 4;
  sc.min_length = 3;
  sc.max_length = 8;
  sc.seed = 11;
  c.data.synthetic = sc;
  c.train.epochs = epochs;
  c.train.batch_size = 8;
  c.train.seed = seed;
  return c;
}

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("zsl_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// Trained once and shared by the scoring tests.
TrainRun& trained() {
  static TrainRun run = run_training(small_run());
  return run;
}

ImportanceScores make_scores(const std::string& method, std::vector<std::string> words, std::vector<double> scores) {
  ImportanceScores sc;
  sc.method = method;
  sc.threshold = 0.5;
  sc.sentences.push_back({std::move(words), std::move(scores), std::nullopt});
  return sc;
}

}  // namespace

TEST(RunConfigJson, RoundTripAndUnknownKeys) {
  const RunConfig c = small_run(9);
  RunConfig back;
  apply_json(to_json(c), back);
  EXPECT_EQ(to_json(back), to_json(c));
  RunConfig r;
  EXPECT_THROW(apply_json(nlohmann::json{{"modle", nlohmann::json::object()}}, r), ConfigError);
  EXPECT_THROW(apply_json(nlohmann::json{{"lime", {{"n_sample", 3}}}}, r), ConfigError);
  EXPECT_THROW(apply_json(nlohmann::json{{"lime", {{"mask_mode", "blur"}}}}, r), ConfigError);
}

TEST(RunConfigJson, FileValuesOverrideDefaultsAndPathsResolve) {
  const std::string dir = temp_dir("cfg");
  fs::create_directories(dir + "/sub");
  {
    std::ofstream out(dir + "/sub/run.json");
    out << R"({"data": {"train": "train.tsv", "dev": "/abs/dev.tsv"}, "train": {"epochs": 4}, "model": {"beta": 3}})";
  }
  RunConfig base;
  base.train.batch_size = 5;
  const RunConfig c = load_run_config(dir + "/sub/run.json", base);
  EXPECT_EQ(c.train.epochs, 4u);
  EXPECT_EQ(c.train.batch_size, 5u);
  EXPECT_EQ(c.model.head.beta, 3.0);
  EXPECT_EQ(c.data.train, (fs::path(dir) / "sub/train.tsv").lexically_normal().string());
  EXPECT_EQ(c.data.dev, "/abs/dev.tsv");
  EXPECT_THROW(load_run_config(dir + "/missing.json"), ConfigError);
  {
    std::ofstream out(dir + "/bad.json");
    out << "{";
  }
  EXPECT_THROW(load_run_config(dir + "/bad.json"), ConfigError);
}

TEST(RunConfigJson, ValidationNeedsData) {
  RunConfig c;
  EXPECT_THROW(validate(c), ConfigError);
  c = small_run();
  EXPECT_NO_THROW(validate(c));
  c.data.dev_fraction = 1.0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Splits, MissingDevIsHeldOutOfTrain) {
  const std::string dir = temp_dir("splits");
  const SyntheticCorpus corpus = generate_synthetic(*small_run().data.synthetic);
  save_tsv(dir + "/train.tsv", corpus.train);
  DataConfig dc;
  dc.train = dir + "/train.tsv";
  dc.dev_fraction = 0.25;
  const Splits s = load_splits(dc, 4);
  EXPECT_TRUE(s.dev_held_out);
  EXPECT_EQ(s.train.size() + s.dev.size(), corpus.train.size());
  EXPECT_EQ(s.dev.size(), 30u);
  EXPECT_TRUE(s.test.empty());
  const Splits again = load_splits(dc, 4);
  for (std::size_t i = 0; i < s.dev.size(); ++i) EXPECT_EQ(s.dev.sentences[i].words, again.dev.sentences[i].words);
}

TEST(Training, WritesCheckpointConfigAndLog) {
  const RunConfig c = small_run(5, 2);
  const TrainRun run = run_training(c);
  EXPECT_EQ(run.result.log.size(), 2u);
  EXPECT_EQ(run.metadata.at("seed"), 5u);
  const std::string dir = temp_dir("train");
  write_training_outputs(dir, c, run);
  const Checkpoint ck = load_checkpoint(dir + "/model.ckpt");
  EXPECT_TRUE(ck.model.params == run.result.best.params);
  EXPECT_EQ(ck.metadata.at("best_epoch"), run.result.best_epoch);
  EXPECT_EQ(load_run_config(dir + "/config.json").train.seed, 5u);
  std::ifstream log(dir + "/train_log.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) ++n;
  EXPECT_EQ(n, 2u);
}

TEST(Scoring, PlainSoftEqualsWeightedAtBetaOneWithoutEpsilon) {
  Model& m = trained().result.best;
  const Dataset& test = trained().splits.test;
  ScoreOptions soft;
  soft.method = ScoreMethod::soft;
  ScoreOptions weighted;
  weighted.method = ScoreMethod::weighted_soft;
  weighted.beta = 1.0;
  weighted.epsilon = 0.0;
  EXPECT_EQ(scores_to_string(score_dataset(&m, test, nullptr, soft)),
            scores_to_string(score_dataset(&m, test, nullptr, weighted)));
  weighted.beta = 2.0;
  EXPECT_NE(scores_to_string(score_dataset(&m, test, nullptr, soft)),
            scores_to_string(score_dataset(&m, test, nullptr, weighted)));
}

TEST(Scoring, WeightedSoftUsesCheckpointBetaByDefault) {
  Model& m = trained().result.best;
  ScoreOptions opt;
  const ImportanceScores sc = score_dataset(&m, trained().splits.test, nullptr, opt, trained().metadata);
  EXPECT_EQ(sc.method, "soft-attention");
  EXPECT_EQ(sc.get("beta"), "2");
  EXPECT_EQ(sc.get("seed"), "3");
  EXPECT_EQ(method_key(sc), "soft-attention beta=2");
  for (const auto& s : sc.sentences) {
    ASSERT_TRUE(s.sentence_probability.has_value());
    for (double v : s.scores) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Scoring, RandomIsReproducibleAndNeedsNoModel) {
  const Dataset& test = trained().splits.test;
  ScoreOptions opt;
  opt.method = ScoreMethod::random;
  opt.seed = 7;
  const std::string a = scores_to_string(score_dataset(nullptr, test, nullptr, opt));
  EXPECT_EQ(a, scores_to_string(score_dataset(nullptr, test, nullptr, opt)));
  opt.seed = 8;
  EXPECT_NE(a, scores_to_string(score_dataset(nullptr, test, nullptr, opt)));
  opt.method = ScoreMethod::soft;
  EXPECT_THROW(score_dataset(nullptr, test, nullptr, opt), ConfigError);
}

TEST(Scoring, HeadBeatsRandomAndRecordsSelection) {
  Model& m = trained().result.best;
  const Dataset& dev = trained().splits.dev;
  const Dataset& test = trained().splits.test;
  ScoreOptions opt;
  opt.method = ScoreMethod::head;
  const ImportanceScores head = score_dataset(&m, test, &dev, opt);
  EXPECT_EQ(head.get("read_token_labels"), "true");
  EXPECT_EQ(head.get("threshold_source"), "dev-token-f1");
  EXPECT_TRUE(head.get("layer") && head.get("head") && head.get("dev_map"));
  opt.method = ScoreMethod::random;
  const ImportanceScores rnd = score_dataset(nullptr, test, nullptr, opt);
  EXPECT_GE(*evaluate_scores(head, test).map, *evaluate_scores(rnd, test).map);
  opt.method = ScoreMethod::head;
  EXPECT_THROW(score_dataset(&m, test, nullptr, opt), ConfigError);
  const Dataset bare = strip_token_labels(dev);
  EXPECT_THROW(score_dataset(&m, test, &bare, opt), ValidationError);
  opt.threshold = 0.25;
  EXPECT_EQ(score_dataset(&m, test, &dev, opt).threshold, 0.25);
}

TEST(Scoring, LimeNeedsThresholdOrLabelledDev) {
  Model& m = trained().result.best;
  Dataset few;
  few.sentences.assign(trained().splits.test.sentences.begin(), trained().splits.test.sentences.begin() + 3);
  Dataset dev;
  dev.sentences.assign(trained().splits.dev.sentences.begin(), trained().splits.dev.sentences.begin() + 3);
  ScoreOptions opt;
  opt.method = ScoreMethod::lime;
  opt.lime.n_samples = 64;
  EXPECT_THROW(score_dataset(&m, few, nullptr, opt), ConfigError);
  opt.threshold = 0.1;
  const ImportanceScores a = score_dataset(&m, few, nullptr, opt);
  EXPECT_EQ(a.get("read_token_labels"), "false");
  EXPECT_EQ(scores_to_string(a), scores_to_string(score_dataset(&m, few, nullptr, opt)));
  opt.threshold.reset();
  const ImportanceScores tuned = score_dataset(&m, few, &dev, opt);
  EXPECT_EQ(tuned.get("threshold_source"), "dev-token-f1");
  // Test-set weights do not depend on whether dev tuning ran.
  for (std::size_t i = 0; i < few.size(); ++i) EXPECT_EQ(tuned.sentences[i].scores, a.sentences[i].scores);
}

TEST(Evaluation, WordsMustMatchGold) {
  const Dataset& test = trained().splits.test;
  ScoreOptions opt;
  opt.method = ScoreMethod::random;
  ImportanceScores sc = score_dataset(nullptr, test, nullptr, opt);
  sc.sentences[4].words[0] += "x";
  try {
    evaluate_scores(sc, test, "r.tsv");
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("sentence 4"), std::string::npos) << e.what();
  }
  sc.sentences.pop_back();
  EXPECT_THROW(evaluate_scores(sc, test), AlignmentError);
}

TEST(Evaluation, RandomBaselineHasNoSentenceScores) {
  const Dataset& test = trained().splits.test;
  ScoreOptions opt;
  opt.method = ScoreMethod::random;
  const MetricsReport r = evaluate_scores(score_dataset(nullptr, test, nullptr, opt), test);
  EXPECT_FALSE(r.sentence.has_value());
  EXPECT_TRUE(r.token.has_value());
  EXPECT_EQ(r.seed, 1u);
}

TEST(Evaluation, AggregatesBySeedAndPairsTTest) {
  std::vector<MetricsReport> reports;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const char* method : {"soft-attention beta=2", "random"}) {
      MetricsReport r;
      r.method = method;
      r.seed = seed;
      r.map = method[0] == 'r' ? 0.3 + 0.02 * static_cast<double>(seed) : 0.8 + 0.01 * static_cast<double>(seed * seed);
      reports.push_back(r);
    }
  }
  EvalSummary s = summarize(std::vector<std::string>(reports.size(), "f"), reports);
  ASSERT_EQ(s.aggregates.size(), 2u);
  EXPECT_EQ(s.aggregates[0].method, "soft-attention beta=2");
  EXPECT_EQ(s.seeds_per_method[0], 3u);
  EXPECT_NEAR(*s.aggregates[1].map, 0.34, 1e-12);
  add_ttest(s, "soft-attention beta=2", "random", TTestMetric::map, "map");
  EXPECT_EQ(s.ttest->result.df, 2u);
  EXPECT_GT(s.ttest->result.t, 0.0);
  EXPECT_FALSE(s.ttest->result.undefined_variance);
  const nlohmann::json j = to_json(s);
  EXPECT_EQ(j.at("reports").size(), 6u);
  EXPECT_EQ(j.at("aggregates")[0].at("n_seeds"), 3u);
  EXPECT_EQ(j.at("ttest").at("metric"), "map");
  reports.pop_back();
  EvalSummary unequal = summarize(std::vector<std::string>(reports.size(), "f"), reports);
  EXPECT_THROW(add_ttest(unequal, "soft-attention beta=2", "random", TTestMetric::map, "map"), AlignmentError);
  EXPECT_THROW(add_ttest(unequal, "soft-attention beta=2", "lime", TTestMetric::map, "map"), ConfigError);
  EXPECT_THROW(add_ttest(unequal, "soft-attention beta=2", "random", TTestMetric::sentence_f1, "sent_f1"),
               ValidationError);
}

TEST(Evaluation, TableColumnsAndMissingCells) {
  MetricsReport a;
  a.method = "soft-attention beta=2";
  a.sentence = PRF{1.0, 1.0, 0.98765, 0, 0, 0};
  a.token = PRF{0.5, 0.5, 0.5, 0, 0, 0};
  a.map = 0.912345;
  MetricsReport b;
  b.method = "random";
  b.map = 0.25;
  const std::vector<MetricsReport> rows = {a, b};
  const std::string t = metrics_table(rows);
  std::istringstream in(t);
  std::string header, r1, r2;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  EXPECT_LT(header.find("Method"), header.find("Sent F1"));
  EXPECT_LT(header.find("Sent F1"), header.find(" F1 "));
  EXPECT_LT(header.find(" F1 "), header.find("MAP"));
  EXPECT_EQ(r1, "soft-attention beta=2     98.77     50.00     91.23");
  EXPECT_EQ(r2, "random                        -         -     25.00");
}

TEST(Heatmap, AnsiGolden) {
  const std::vector<ImportanceScores> m = {make_scores("x", {"a", "b"}, {0.0, 0.95}),
                                           make_scores("y", {"a", "b"}, {0.55, 1.7})};
  EXPECT_EQ(render_heatmap(m, HeatmapFormat::ansi),
            "sentence 0\n"
            "  x  \x1b[48;5;231;30ma\x1b[0m \x1b[48;5;52;97mb\x1b[0m\n"
            "  y  \x1b[48;5;196;30ma\x1b[0m \x1b[48;5;52;97mb\x1b[0m\n\n");
}

TEST(Heatmap, ShadingIsMonotoneOnFixedScale) {
  EXPECT_EQ(shade_level(-3.0), 0u);
  EXPECT_EQ(shade_level(0.0), 0u);
  EXPECT_EQ(shade_level(0.0999), 0u);
  EXPECT_EQ(shade_level(0.1), 1u);
  EXPECT_EQ(shade_level(1.0), 9u);
  EXPECT_EQ(shade_level(42.0), 9u);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(shade_level(i / 1000.0), shade_level((i + 1) / 1000.0));
}

TEST(Heatmap, HtmlEscapesAndJsonListsLevels) {
  const std::vector<ImportanceScores> m = {make_scores("x<", {"<b>", "&"}, {0.25, 2.0})};
  const std::string html = render_heatmap(m, HeatmapFormat::html);
  EXPECT_NE(html.find("&lt;b&gt;"), std::string::npos);
  EXPECT_NE(html.find("&amp;</span>"), std::string::npos);
  EXPECT_NE(html.find("x&lt;"), std::string::npos);
  EXPECT_NE(html.find("rgba(200,30,30,0.250)"), std::string::npos);
  EXPECT_NE(html.find("rgba(200,30,30,1.000)"), std::string::npos);
  const auto j = nlohmann::json::parse(render_heatmap(m, HeatmapFormat::json));
  EXPECT_EQ(j.at("sentences")[0].at("rows")[0].at("levels"), (std::vector<std::size_t>{2, 9}));
  const std::vector<ImportanceScores> mismatch = {make_scores("x", {"a"}, {0.1}), make_scores("y", {"b"}, {0.1})};
  EXPECT_THROW(render_heatmap(mismatch, HeatmapFormat::ansi), AlignmentError);
}

TEST(Sweep, OneRowPerBetaWithSharedSeeds) {
  const RunConfig c = small_run(1, 1);
  const std::vector<double> betas = {1.0, 2.0};
  const std::vector<std::uint64_t> seeds = {1, 2};
  const auto rows = run_sweep(c, betas, seeds);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.seeds, seeds);
    EXPECT_EQ(r.dev_map.size(), 2u);
    EXPECT_EQ(r.test_map.size(), 2u);
  }
  const auto again = run_sweep(c, betas, seeds);
  EXPECT_EQ(to_json(rows[1]), to_json(again[1]));
  const std::string t = sweep_table(rows);
  EXPECT_NE(t.find("dev MAP"), std::string::npos);
  EXPECT_THROW(run_sweep(c, std::vector<double>{}, seeds), ConfigError);
}
