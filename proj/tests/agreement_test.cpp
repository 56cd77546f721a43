#include <gtest/gtest.h>

#include <random>

#include "reljudge/agreement.hpp"

using namespace reljudge;

namespace {

LabelSet labels(const std::vector<std::tuple<int, std::string, double>>& rows, double max_grade = 2.0) {
  LabelSet s("test", max_grade);
  for (const auto& [t, d, g] : rows) s.insert({t, d}, g);
  return s;
}

// Direct definition: every same-topic pair with differing gold grades.
double auc_oracle(const LabelSet& gold, const LabelSet& pred) {
  double agree = 0, pairs = 0;
  for (const auto& [ka, ga] : gold.entries()) {
    for (const auto& [kb, gb] : gold.entries()) {
      if (ka.topic != kb.topic || !(ga > gb)) continue;
      auto pa = pred.find(ka), pb = pred.find(kb);
      if (!pa || !pb) continue;
      pairs += 1;
      agree += *pa > *pb ? 1.0 : (*pa == *pb ? 0.5 : 0.0);
    }
  }
  return agree / pairs;
}

}  // namespace

TEST(Kappa, ReferenceConfusionMatrix) {
  // 2951 labelled documents: gold rows, predicted columns.
  auto m = ConfusionMatrix2x2::of(866, 95, 405, 1585);
  EXPECT_EQ(m.total(), 2951u);
  EXPECT_NEAR(cohens_kappa(m), 0.644, 5e-4);
  EXPECT_NEAR(mae(m), 500.0 / 2951.0, 1e-12);
  EXPECT_NEAR(mae(m), 0.169, 5e-4);
}

TEST(Kappa, PerfectAndChance) {
  EXPECT_DOUBLE_EQ(cohens_kappa(ConfusionMatrix2x2::of(50, 0, 0, 50)), 1.0);
  EXPECT_DOUBLE_EQ(cohens_kappa(ConfusionMatrix2x2::of(25, 25, 25, 25)), 0.0);
  EXPECT_DOUBLE_EQ(cohens_kappa(ConfusionMatrix2x2::of(0, 50, 50, 0)), -1.0);
}

TEST(Kappa, DegenerateMarginalsWarn) {
  Diagnostics diag;
  EXPECT_DOUBLE_EQ(cohens_kappa(ConfusionMatrix2x2::of(10, 0, 0, 0), &diag), 0.0);
  EXPECT_EQ(diag.warnings.size(), 1u);
  EXPECT_THROW(cohens_kappa(ConfusionMatrix2x2{}), ValidationError);
}

TEST(Confusion, BinarisesAtThreshold) {
  auto gold = labels({{1, "a", 0}, {1, "b", 1}, {1, "c", 2}, {1, "d", 0}});
  auto pred = labels({{1, "a", 0.8}, {1, "b", 1.0}, {1, "c", 0.2}, {1, "e", 2}});
  AlignmentReport rep;
  auto m = confusion(gold, pred, 1.0, &rep);
  EXPECT_EQ(m, ConfusionMatrix2x2::of(1, 0, 1, 1));
  EXPECT_EQ(rep.shared, 3u);
  EXPECT_EQ(rep.missing_prediction, 1u);
  EXPECT_EQ(rep.unmatched_prediction, 1u);
  EXPECT_DOUBLE_EQ(rep.drop_rate(), 0.25);
  EXPECT_THROW(confusion(gold, labels({{2, "a", 1}})), ValidationError);
}

TEST(Mae, FractionalAndHard) {
  auto gold = labels({{1, "a", 2}, {1, "b", 0}, {1, "c", 1}});
  auto scores = labels({{1, "a", 1.2}, {1, "b", 0.4}, {1, "c", 0.8}});
  auto fractions = labels({{1, "a", 0.6}, {1, "b", 0.2}, {1, "c", 0.4}}, 1.0);
  EXPECT_NEAR(mae(gold, unit_predictions(scores, fractions, MaeMode::fractional)), (0.4 + 0.2 + 0.6) / 3, 1e-12);
  EXPECT_NEAR(mae(gold, unit_predictions(scores, fractions, MaeMode::hard)), 1.0 / 3, 1e-12);
  // Hard MAE equals the off-diagonal mass.
  auto hard = unit_predictions(scores, fractions, MaeMode::hard);
  EXPECT_DOUBLE_EQ(mae(gold, hard), mae(confusion(gold, scores)));
}

TEST(Auc, HandComputedExample) {
  // Topic 1: grades 2,1,0 with predictions 2,1,1 -> pairs (2>1 ok)(2>0 ok)(1>0 tie) = 2.5/3.
  auto gold = labels({{1, "a", 2}, {1, "b", 1}, {1, "c", 0}, {2, "x", 1}, {2, "y", 0}});
  auto pred = labels({{1, "a", 2}, {1, "b", 1}, {1, "c", 1}, {2, "x", 0}, {2, "y", 1}});
  // Topic 2 adds one discordant pair: 2.5 / 4.
  EXPECT_DOUBLE_EQ(pairwise_auc(gold, pred), 2.5 / 4.0);
}

TEST(Auc, PerfectReversedAndConstant) {
  auto gold = labels({{1, "a", 2}, {1, "b", 1}, {1, "c", 0}});
  EXPECT_DOUBLE_EQ(pairwise_auc(gold, gold), 1.0);
  EXPECT_DOUBLE_EQ(pairwise_auc(gold, labels({{1, "a", 0}, {1, "b", 1}, {1, "c", 2}})), 0.0);
  EXPECT_DOUBLE_EQ(pairwise_auc(gold, labels({{1, "a", 1}, {1, "b", 1}, {1, "c", 1}})), 0.5);
}

TEST(Auc, CrossTopicPairsIgnored) {
  auto gold = labels({{1, "a", 2}, {2, "b", 0}});
  EXPECT_THROW(pairwise_auc(gold, gold), ValidationError);
}

TEST(Auc, MatchesQuadraticOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    LabelSet gold("g"), pred("p");
    const int n = 2 + static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      const int topic = static_cast<int>(rng() % 3);
      const auto doc = "d" + std::to_string(i);
      gold.insert({topic, doc}, static_cast<double>(rng() % 3));
      if (rng() % 10) pred.insert({topic, doc}, static_cast<double>(rng() % 11) / 5.0);
    }
    double expected;
    try {
      expected = auc_oracle(gold, pred);
    } catch (...) {
      continue;
    }
    if (std::isnan(expected)) {
      EXPECT_THROW(pairwise_auc(gold, pred), ValidationError);
      continue;
    }
    EXPECT_NEAR(pairwise_auc(gold, pred), expected, 1e-12);
  }
}

TEST(PreferencePairs, ParseAndScore) {
  auto pairs = parse_preference_pairs(
      "# query\tpreferred\tother\ttags\n"
      "1\tgood\tbad\tgood>bad\n"
      "1\tgood\tmeh\tgood>ok\ten\n"
      "\n"
      "2\tp\tq\tgood>bad\n"
      "3\tmissing\tq\n");
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(pairs[1].tags, (std::vector<std::string>{"good>ok", "en"}));
  auto scores = labels({{1, "good", 2}, {1, "bad", 0}, {1, "meh", 2}, {2, "p", 0}, {2, "q", 1}, {3, "q", 1}});
  auto acc = preference_accuracy(pairs, scores);
  EXPECT_EQ(acc.scored, 3u);
  EXPECT_EQ(acc.skipped, 1u);
  EXPECT_DOUBLE_EQ(acc.accuracy, 1.5 / 3.0);
  EXPECT_DOUBLE_EQ(acc.by_tag["good>bad"].accuracy, 0.5);
  EXPECT_EQ(acc.by_tag["good>bad"].pairs, 2u);
  EXPECT_DOUBLE_EQ(acc.by_tag["good>ok"].accuracy, 0.5);
}

TEST(PreferencePairs, RejectsMalformedLines) {
  EXPECT_THROW(parse_preference_pairs("1\ta\n"), ParseError);
  EXPECT_THROW(parse_preference_pairs("x\ta\tb\n"), ParseError);
  EXPECT_THROW(parse_preference_pairs("1\ta\ta\n"), ParseError);
}
