#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/oracles.hpp"
#include "zsl/eval.hpp"

using namespace zsl;
using zsl::testing::brute_ap;

namespace {

struct Instance {
  ScoreMatrix scores;
  LabelMatrix gold;
};

Instance random_instance(Rng& rng, bool coarse) {
  Instance in;
  const std::size_t sentences = 1 + rng.below(4);
  bool any = false;
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> sc(n);
    std::vector<int> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = coarse ? static_cast<double>(rng.below(4)) / 4.0 : rng.uniform();
      g[i] = rng.bernoulli(0.3) ? 1 : 0;
      any = any || g[i] == 1;
    }
    in.scores.push_back(sc);
    in.gold.push_back(g);
  }
  if (!any) in.gold[0][0] = 1;
  return in;
}

}  // namespace

TEST(TokenPrf, HandCounts) {
  const ScoreMatrix preds = {{1, 0, 1, 1}};
  const LabelMatrix gold = {{1, 1, 0, 1}};
  auto m = token_prf(preds, gold, 0.5);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_NEAR(m.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
}

TEST(TokenPrf, PerfectAndDegenerate) {
  const LabelMatrix gold = {{1, 0}, {0, 1, 1}};
  const ScoreMatrix perfect = {{0.9, 0.1}, {0.2, 0.8, 0.7}};
  auto p = token_prf(perfect, gold, 0.5);
  EXPECT_EQ(p.precision, 1.0);
  EXPECT_EQ(p.recall, 1.0);
  EXPECT_EQ(p.f1, 1.0);
  auto none = token_prf(perfect, gold, 1.0);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_THROW(token_prf({{0.1}}, gold, 0.5), AlignmentError);
  EXPECT_THROW(token_prf({{0.1, 0.2}, {0.1}}, gold, 0.5), AlignmentError);
}

TEST(TokenPrf, MatchesRecountAtEveryThreshold) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng, trial % 2 == 0);
    for (double t : {-0.1, 0.0, 0.25, 0.3, 0.5, 0.75, 1.0}) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t s = 0; s < in.scores.size(); ++s)
        for (std::size_t i = 0; i < in.scores[s].size(); ++i) {
          const bool p = in.scores[s][i] > t, g = in.gold[s][i] == 1;
          if (p && g) ++tp;
          if (p && !g) ++fp;
          if (!p && g) ++fn;
        }
      auto m = token_prf(in.scores, in.gold, t);
      EXPECT_EQ(m.tp, tp);
      EXPECT_EQ(m.fp, fp);
      EXPECT_EQ(m.fn, fn);
      EXPECT_GE(m.f1, 0.0);
      EXPECT_LE(m.f1, 1.0);
    }
  }
}

TEST(F1, Symmetric) {
  for (double p : {0.0, 0.1, 0.5, 0.9, 1.0})
    for (double r : {0.0, 0.3, 0.7, 1.0}) EXPECT_EQ(f1_score(p, r), f1_score(r, p));
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(SentencePrf, HandCountsAndEmpty) {
  const std::vector<double> probs = {0.9, 0.8, 0.1};
  const std::vector<int> gold = {1, 0, 0};
  auto m = sentence_prf(probs, gold);
  EXPECT_NEAR(m.precision, 0.5, 1e-15);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
  const std::vector<int> right = {1, 1, 0};
  EXPECT_EQ(sentence_prf(probs, right).f1, 1.0);
  EXPECT_THROW(sentence_prf({}, {}), ValidationError);
  // Exactly 0.5 is not above the threshold.
  const std::vector<double> half = {0.5};
  const std::vector<int> one = {1};
  EXPECT_EQ(sentence_prf(half, one).tp, 0u);
}

TEST(AveragePrecision, HandCases) {
  const std::vector<double> s1 = {0.9, 0.1, 0.8};
  const std::vector<int> g1 = {1, 0, 1};
  EXPECT_DOUBLE_EQ(*average_precision(s1, g1), 1.0);
  const std::vector<double> s2 = {0.9, 0.8, 0.1};
  const std::vector<int> g2 = {0, 1, 1};
  EXPECT_NEAR(*average_precision(s2, g2), (0.5 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(*average_precision(s2, g2), 0.5833, 1e-4);
  const std::vector<int> all = {1, 1, 1};
  EXPECT_EQ(*average_precision(s2, all), 1.0);
  const std::vector<int> none = {0, 0, 0};
  EXPECT_FALSE(average_precision(s2, none).has_value());
}

TEST(AveragePrecision, TiesRankEarlierPositionFirst) {
  const std::vector<double> s = {0.5, 0.5};
  EXPECT_EQ(*average_precision(s, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(*average_precision(s, std::vector<int>{0, 1}), 0.5);
}

TEST(TokenMap, MatchesBruteForceOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    auto in = random_instance(rng, trial % 3 == 0);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < in.scores.size(); ++s)
      if (std::count(in.gold[s].begin(), in.gold[s].end(), 1) > 0) {
        sum += brute_ap(in.scores[s], in.gold[s]);
        ++n;
      }
    EXPECT_NEAR(token_map(in.scores, in.gold), sum / static_cast<double>(n), 1e-12);
  }
}

TEST(TokenMap, InvariantUnderStrictlyMonotoneTransforms) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto in = random_instance(rng, trial % 2 == 0);
    const double base = token_map(in.scores, in.gold);
    for (auto f : {+[](double x) { return std::exp(3.0 * x); }, +[](double x) { return x * x * x - 7.0; },
                   +[](double x) { return 1.0 / (1.0 + std::exp(-x)); }}) {
      ScoreMatrix t = in.scores;
      for (auto& row : t)
        for (auto& v : row) v = f(v);
      EXPECT_EQ(token_map(t, in.gold), base);
    }
  }
}

TEST(TokenMap, NoQualifyingSentenceIsError) {
  EXPECT_THROW(token_map({{0.2, 0.4}}, {{0, 0}}), ValidationError);
  EXPECT_THROW(token_map_global({{0.2}}, {{0}}), ValidationError);
}

TEST(TokenMap, GlobalRankingIsSeparateDefinition) {
  const ScoreMatrix s = {{0.9, 0.1}, {0.2, 0.3}};
  const LabelMatrix g = {{0, 1}, {0, 1}};
  // Per sentence: AP 1/2 and 1 -> 0.75. Global order 0.9,0.3,0.2,0.1 -> (1/2 + 2/4)/2.
  EXPECT_NEAR(token_map(s, g), 0.75, 1e-15);
  EXPECT_NEAR(token_map_global(s, g), 0.5, 1e-15);
}

TEST(RandomBaseline, DeterministicAndHalfRecall) {
  Dataset ds;
  for (int i = 0; i < 400; ++i) {
    LabeledSentence s;
    s.words.assign(10, "w");
    s.token_labels = std::vector<int>(10, 0);
    (*s.token_labels)[i % 10] = 1;
    s.sentence_label = 1;
    ds.sentences.push_back(s);
  }
  auto a = random_baseline(ds, 9), b = random_baseline(ds, 9), c = random_baseline(ds, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& row : a)
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  auto m = token_prf(a, gold_token_labels(ds), kRandomBaselineThreshold);
  const double n = 400.0, sigma = std::sqrt(0.25 / n);
  EXPECT_NEAR(m.recall, 0.5, 3.0 * sigma);
}

TEST(Aggregate, MeansOfSeeds) {
  MetricsReport a, b;
  a.method = b.method = "soft";
  a.map = 0.5;
  b.map = 0.7;
  a.sentence = prf_from_counts(1, 1, 0);
  b.sentence = prf_from_counts(1, 0, 0);
  const std::vector<MetricsReport> rs = {a, b};
  auto m = aggregate_seeds(rs);
  EXPECT_NEAR(*m.map, 0.6, 1e-15);
  EXPECT_NEAR(m.sentence->precision, 0.75, 1e-15);
  EXPECT_EQ(m.sentence->tp, 2u);
  EXPECT_FALSE(m.token.has_value());
  const std::vector<double> xs = {0.5, 0.7};
  EXPECT_NEAR(mean(xs), 0.6, 1e-15);
}

TEST(TTest, KnownStatistic) {
  const std::vector<double> a = {2, 4, 6, 8, 10}, b = {1, 2, 3, 4, 5};
  auto r = paired_t_test(a, b);
  EXPECT_EQ(r.df, 4u);
  EXPECT_NEAR(r.t, 3.0 / (std::sqrt(2.5) / std::sqrt(5.0)), 1e-12);
  EXPECT_NEAR(r.p_value, 0.013235599563682695, 1e-9);
  const std::vector<double> c = {0.61, 0.72, 0.55, 0.68, 0.70}, d = {0.58, 0.69, 0.57, 0.60, 0.66};
  auto r2 = paired_t_test(c, d);
  EXPECT_NEAR(r2.t, 2.00785857644211, 1e-9);
  EXPECT_NEAR(r2.p_value, 0.11507971437013183, 1e-9);
}

TEST(TTest, DegenerateAndMismatched) {
  const std::vector<double> a = {0.3, 0.4, 0.5};
  auto r = paired_t_test(a, a);
  EXPECT_TRUE(r.undefined_variance);
  EXPECT_EQ(r.p_value, 1.0);
  const std::vector<double> b = {0.3, 0.4};
  EXPECT_THROW(paired_t_test(a, b), AlignmentError);
  const std::span<const double> one(b.data(), 1);
  EXPECT_THROW(paired_t_test(one, one), ValidationError);
}
