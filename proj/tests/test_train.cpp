#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support/fixtures.hpp"
#include "zsl/checkpoint.hpp"
#include "zsl/train.hpp"

using namespace zsl;
using zsl::testing::tiny_setup;

namespace {

TrainConfig quick(std::size_t epochs, std::uint64_t seed = 3) {
  TrainConfig c = train_profile("micro-scratch");
  c.epochs = epochs;
  c.batch_size = 8;
  c.seed = seed;
  return c;
}

void poison(Dataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& s : ds.sentences)
    for (auto& l : *s.token_labels) l = rng.bernoulli(0.5) ? 1 : 0;
}

}  // namespace

TEST(Schedule, WarmupThenLinearDecay) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.warmup_ratio = 0.1;
  EXPECT_NEAR(scheduled_lr(c, 0, 100), 0.1, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 9, 100), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 10, 100), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 55, 100), 0.5, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 99, 100), 1.0 / 90.0, 1e-15);
  for (std::size_t s = 10; s + 1 < 100; ++s) EXPECT_GE(scheduled_lr(c, s, 100), scheduled_lr(c, s + 1, 100));
  c.warmup_ratio = 0.0;
  EXPECT_EQ(scheduled_lr(c, 0, 4), 1.0);
}

TEST(Config, ProfilesJsonAndValidation) {
  EXPECT_EQ(train_profile("finetune").learning_rate, 2e-5);
  EXPECT_EQ(train_profile("micro-scratch").learning_rate, 1e-3);
  EXPECT_THROW(train_profile("nope"), ConfigError);
  TrainConfig c = quick(7, 9);
  TrainConfig back;
  apply_json(to_json(c), back);
  EXPECT_EQ(to_json(back), to_json(c));
  TrainConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Optimizer, DecayExclusionsAndClipping) {
  EXPECT_TRUE(uses_weight_decay("enc.layer0.wq"));
  EXPECT_FALSE(uses_weight_decay("enc.layer0.bq"));
  EXPECT_FALSE(uses_weight_decay("enc.emb_ln.gain"));
  EXPECT_FALSE(uses_weight_decay("enc.layer1.ln2.bias"));
  EXPECT_FALSE(uses_weight_decay("sa.b_y"));
  EXPECT_TRUE(uses_weight_decay("sa.w_y"));
  ParameterSet ps;
  ps.add("a", Tensor(Shape{1, 2}));
  ps.at("a").grad(0, 0) = 3.0;
  ps.at("a").grad(0, 1) = 4.0;
  EXPECT_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(ps), 1.0, 1e-15);
  EXPECT_NEAR(ps.at("a").grad(0, 0), 0.6, 1e-15);
}

TEST(Optimizer, FirstAdamStepMovesBySignTimesRate) {
  TrainConfig c;
  c.weight_decay = 0.0;
  ParameterSet ps;
  ps.add("w", Tensor(Shape{1, 2}, 1.0));
  AdamW opt(c, ps);
  ps.at("w").grad(0, 0) = 0.5;
  ps.at("w").grad(0, 1) = -2.0;
  opt.step(ps, 0.01);
  EXPECT_NEAR(ps.at("w").value(0, 0), 0.99, 1e-6);
  EXPECT_NEAR(ps.at("w").value(0, 1), 1.01, 1e-6);
}

TEST(Selection, EarliestMaximumAndMonotone) {
  const std::vector<double> up = {0.1, 0.4, 0.7, 0.9};
  EXPECT_EQ(select_best_epoch(up), 4u);
  const std::vector<double> tie = {0.5, 0.8, 0.8, 0.2};
  EXPECT_EQ(select_best_epoch(tie), 2u);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto setup = tiny_setup(24, 4);
  const ParameterSet before = setup.model.params;
  TrainConfig c = quick(1);
  c.learning_rate = 0.0;
  auto r = train_model(setup.corpus.train, setup.corpus.dev, setup.model, c);
  EXPECT_TRUE(setup.model.params == before);
  EXPECT_TRUE(r.best.params == before);
}

TEST(Train, KeepsBestDevEpochAndLogsEverything) {
  auto setup = tiny_setup(40, 6);
  std::vector<EpochLog> seen;
  auto r = train_model(setup.corpus.train, setup.corpus.dev, setup.model, quick(4),
                       [&](const EpochLog& e) { seen.push_back(e); });
  ASSERT_EQ(r.log.size(), 4u);
  ASSERT_EQ(seen.size(), 4u);
  std::vector<double> f1;
  for (const auto& e : r.log) f1.push_back(e.dev_sentence.f1);
  EXPECT_EQ(r.best_epoch, select_best_epoch(f1));
  EXPECT_EQ(r.best_dev_f1, f1[r.best_epoch - 1]);
  EXPECT_EQ(r.log.back().step, 4u * 5u);
  // The kept parameters reproduce the kept epoch's dev score.
  auto probs = predict_probabilities(r.best, setup.corpus.dev);
  EXPECT_EQ(sentence_prf(probs, gold_sentence_labels(setup.corpus.dev)).f1, r.best_dev_f1);
  std::ostringstream out;
  write_log_jsonl(out, r.log);
  std::istringstream in(out.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("l1") && j.contains("l2") && j.contains("l3") && j.contains("dev_sentence_f1"));
    ++lines;
  }
  EXPECT_EQ(lines, 4u);
}

TEST(Train, PoisonedTokenLabelsLeaveCheckpointUnchanged) {
  auto clean = tiny_setup(32, 7);
  auto dirty = tiny_setup(32, 7);
  poison(dirty.corpus.train, 1);
  poison(dirty.corpus.dev, 2);
  ASSERT_NE(*clean.corpus.train.sentences[0].token_labels, std::vector<int>{});
  auto a = train_model(clean.corpus.train, clean.corpus.dev, clean.model, quick(2));
  auto b = train_model(dirty.corpus.train, dirty.corpus.dev, dirty.model, quick(2));
  EXPECT_TRUE(checkpoint_bytes(a.best) == checkpoint_bytes(b.best));
  EXPECT_TRUE(checkpoint_bytes(clean.model) == checkpoint_bytes(dirty.model));
  // Token labels removed entirely: same result again.
  auto bare = tiny_setup(32, 7);
  auto c = train_model(strip_token_labels(bare.corpus.train), strip_token_labels(bare.corpus.dev), bare.model, quick(2));
  EXPECT_TRUE(checkpoint_bytes(c.best) == checkpoint_bytes(a.best));
}

TEST(Train, FixedSeedIsReproducible) {
  auto s1 = tiny_setup(24, 8);
  auto s2 = tiny_setup(24, 8);
  auto a = train_model(s1.corpus.train, s1.corpus.dev, s1.model, quick(2));
  auto b = train_model(s2.corpus.train, s2.corpus.dev, s2.model, quick(2));
  EXPECT_TRUE(checkpoint_bytes(a.best) == checkpoint_bytes(b.best));
  std::ostringstream la, lb;
  write_log_jsonl(la, a.log);
  write_log_jsonl(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  auto s3 = tiny_setup(24, 8);
  auto c = train_model(s3.corpus.train, s3.corpus.dev, s3.model, quick(2, 4));
  EXPECT_TRUE(checkpoint_bytes(c.best) != checkpoint_bytes(a.best));
}

TEST(Train, LossFallsOverFirstEpoch) {
  auto setup = tiny_setup(160, 9);
  auto r = train_model(setup.corpus.train, setup.corpus.dev, setup.model, quick(1));
  const auto& b = r.log[0].batch_losses;
  ASSERT_EQ(b.size(), 20u);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    head += b[i];
    tail += b[b.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
}

TEST(Train, DivergenceReportsStep) {
  auto setup = tiny_setup(16, 10);
  setup.model.params.at("sa.w_y").value(0, 0) = std::nan("");
  try {
    train_model(setup.corpus.train, setup.corpus.dev, setup.model, quick(1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, EmptyInputsAreRejected) {
  auto setup = tiny_setup(8, 11);
  EXPECT_THROW(train_model(Dataset{}, setup.corpus.dev, setup.model, quick(1)), ValidationError);
  EXPECT_THROW(train_model(setup.corpus.train, Dataset{}, setup.model, quick(1)), ValidationError);
}
