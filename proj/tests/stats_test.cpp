#include <gtest/gtest.h>

#include <random>

#include "reljudge/stats.hpp"

using namespace reljudge;

namespace {

// Kappa per prompt template from a reference 32-template comparison.
const std::map<std::string, double> kReferenceKappa = {
    {"-----", .38}, {"R----", .32}, {"-D---", .35}, {"--N--", .37}, {"---A-", .60}, {"----M", .22},
    {"RD---", .30}, {"R-N--", .33}, {"R--A-", .56}, {"R---M", .20}, {"-DN--", .37}, {"-D-A-", .59},
    {"-D--M", .24}, {"--NA-", .62}, {"--N-M", .29}, {"---AM", .42}, {"RDN--", .34}, {"RD-A-", .53},
    {"RD--M", .23}, {"R-NA-", .59}, {"R-N-M", .28}, {"R--AM", .32}, {"-DNA-", .64}, {"-DN-M", .31},
    {"-D-AM", .42}, {"--NAM", .49}, {"RDNA-", .61}, {"RDN-M", .29}, {"RD-AM", .34}, {"R-NAM", .39},
    {"-DNAM", .50}, {"RDNAM", .51},
};

PairedLabels synthetic(const std::string& name, const std::vector<int>& gold, const std::vector<int>& pred) {
  PairedLabels p;
  p.name = name;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    p.topic.push_back(static_cast<int>(i % 7));
    p.grade.push_back(gold[i] * 2);
    p.gold.push_back(gold[i]);
    p.score.push_back(pred[i] * 2.0);
    p.unit.push_back(pred[i]);
  }
  return p;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

TEST(Quantile, Type7) {
  std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile(v, 0.025), 1.075);
  EXPECT_THROW(quantile({}, 0.5), ValidationError);
}

TEST(Bootstrap, DeterministicPerSeed) {
  std::vector<double> x{1, 5, 2, 8, 3, 9, 4};
  auto mean = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    double s = 0;
    for (auto i : idx) s += x[i];
    return s / static_cast<double>(idx.size());
  };
  BootstrapConfig cfg;
  cfg.seed = 42;
  auto a = bootstrap_ci(x.size(), mean, cfg);
  auto b = bootstrap_ci(x.size(), mean, cfg);
  EXPECT_EQ(a.replicates, b.replicates);
  EXPECT_EQ(a.replicates.size(), 20u);
  EXPECT_LE(a.lo, a.hi);
  cfg.seed = 43;
  EXPECT_NE(bootstrap_ci(x.size(), mean, cfg).replicates, a.replicates);
}

TEST(Bootstrap, IntervalContainsPointEstimate) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 1.0);
  int contains = 0;
  const int draws = 200;
  for (int d = 0; d < draws; ++d) {
    std::vector<double> x(100);
    for (auto& v : x) v = noise(rng);
    auto mean = [&](std::span<const std::size_t> idx) -> std::optional<double> {
      double s = 0;
      for (auto i : idx) s += x[i];
      return s / static_cast<double>(idx.size());
    };
    BootstrapConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(d);
    auto r = bootstrap_ci(x.size(), mean, cfg);
    contains += r.lo <= r.point && r.point <= r.hi;
  }
  EXPECT_GE(contains, static_cast<int>(0.95 * draws));
}

TEST(Bootstrap, CoversTrueMeanMostOfTheTime) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(3.0, 2.0);
  int covered = 0;
  const int draws = 200;
  for (int d = 0; d < draws; ++d) {
    std::vector<double> x(80);
    for (auto& v : x) v = noise(rng);
    auto mean = [&](std::span<const std::size_t> idx) -> std::optional<double> {
      double s = 0;
      for (auto i : idx) s += x[i];
      return s / static_cast<double>(idx.size());
    };
    BootstrapConfig cfg;
    cfg.seed = 1000 + static_cast<std::uint64_t>(d);
    auto r = bootstrap_ci(x.size(), mean, cfg);
    covered += r.lo <= 3.0 && 3.0 <= r.hi;
  }
  // Twenty resamples give a slightly narrow interval; coverage is still high.
  EXPECT_GE(covered, static_cast<int>(0.8 * draws));
}

TEST(Bootstrap, RedrawsUndefinedResamples) {
  // Undefined whenever index 0 is absent from the resample.
  auto stat = [](std::span<const std::size_t> idx) -> std::optional<double> {
    for (auto i : idx)
      if (i == 0) return 1.0;
    return std::nullopt;
  };
  BootstrapConfig cfg;
  cfg.seed = 1;
  auto r = bootstrap_ci(3, stat, cfg);
  EXPECT_EQ(r.replicates.size(), 20u);
  EXPECT_GT(r.redrawn, 0u);
  auto never = [](std::span<const std::size_t> idx) -> std::optional<double> {
    if (idx.size() == 2 && idx[0] == 0 && idx[1] == 1) return 0.0;
    return std::nullopt;
  };
  cfg.max_redraws = 0;
  EXPECT_THROW(bootstrap_ci(2, never, cfg), ValidationError);
}

TEST(PairedLabels, StatisticsMatchDirectComputation) {
  std::vector<int> gold{1, 1, 0, 0, 1, 0, 1, 0};
  std::vector<int> pred{1, 0, 0, 1, 1, 0, 1, 0};
  auto p = synthetic("x", gold, pred);
  const auto idx = all_indices(gold.size());
  ConfusionMatrix2x2 m = ConfusionMatrix2x2::of(3, 1, 1, 3);
  EXPECT_NEAR(*kappa_on(p, idx), cohens_kappa(m), 1e-15);
  EXPECT_NEAR(*mae_on(p, idx), 0.25, 1e-15);
  p.score[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_NEAR(*mae_on(p, idx), 2.0 / 7.0, 1e-15);
  EXPECT_TRUE(std::isnan(agreement_indicators(p)[0]));
}

TEST(PairTest, DetectsClearDifference) {
  // 90% vs 60% agreement on 200 documents.
  std::vector<double> a(200), b(200);
  for (int i = 0; i < 200; ++i) {
    a[i] = i % 10 != 0;
    b[i] = i % 5 < 3;
  }
  auto [t, p] = paired_t_one_sided(a, b);
  EXPECT_GT(t, 0.0);
  EXPECT_LT(p, 1e-6);
  auto [t2, p2] = paired_t_one_sided(b, a);
  EXPECT_GT(p2, 0.99);
  auto [t3, p3] = paired_t_one_sided(a, a);
  EXPECT_DOUBLE_EQ(p3, 0.5);
}

TEST(PairTest, KnownValue) {
  // Differences 1, 2, 3: mean 2, sd 1, t = 2 * sqrt(3), df 2.
  std::vector<double> a{1, 2, 3}, b{0, 0, 0};
  auto [t, p] = paired_t_one_sided(a, b);
  EXPECT_NEAR(t, 2 * std::sqrt(3.0), 1e-12);
  // Upper tail of t with 2 df: 0.5 * (1 - t / sqrt(2 + t^2)).
  EXPECT_NEAR(p, 0.5 * (1 - t / std::sqrt(2 + t * t)), 1e-12);
}

TEST(CompareBest, PicksWinnerAndTests) {
  std::vector<double> good(100), bad(100);
  for (int i = 0; i < 100; ++i) {
    good[i] = i % 10 != 0;
    bad[i] = i % 5 < 3;
  }
  auto r = compare_best({{"bad", 0.6, bad}, {"good", 0.9, good}});
  EXPECT_EQ(r.winner, "good");
  EXPECT_EQ(r.runner_up, "bad");
  EXPECT_TRUE(r.significant);
  EXPECT_EQ(r.n, 100u);
  // Lower is better (errors): the 10% error candidate still wins.
  std::vector<double> e_good(100), e_bad(100);
  for (int i = 0; i < 100; ++i) e_good[i] = 1 - good[i], e_bad[i] = 1 - bad[i];
  auto low = compare_best({{"bad", 0.4, e_bad}, {"good", 0.1, e_good}}, true);
  EXPECT_EQ(low.winner, "good");
  EXPECT_TRUE(low.significant);
  auto tie = compare_best({{"first", 0.5, good}, {"second", 0.5, good}});
  EXPECT_EQ(tie.winner, "first");
  EXPECT_FALSE(tie.significant);
}

TEST(FeatureEffects, ReferenceKappaColumn) {
  auto rep = feature_effects(kReferenceKappa);
  ASSERT_EQ(rep.effects.size(), 5u);
  EXPECT_NEAR(rep.of('R').delta, -0.0419, 1e-4);
  EXPECT_NEAR(rep.of('D').delta, 0.0119, 1e-4);
  EXPECT_NEAR(rep.of('N').delta, 0.0569, 1e-4);
  EXPECT_NEAR(rep.of('A').delta, 0.2069, 1e-4);
  EXPECT_NEAR(rep.of('M').delta, -0.1281, 1e-4);
  for (const auto& e : rep.effects) EXPECT_EQ(e.pairs, 16);
}

TEST(FeatureEffects, SingleFeatureSignalIsolated) {
  std::map<std::uint8_t, double> v;
  for (const auto& s : enumerate_specs()) v[s.flags] = 0.3 + (s.has(kNarrative) ? 0.1 : 0.0);
  auto rep = feature_effects(v);
  EXPECT_NEAR(rep.of('N').delta, 0.1, 1e-12);
  for (char f : std::string("RDAM")) EXPECT_NEAR(rep.of(f).delta, 0.0, 1e-12);
  v.erase(v.begin());
  EXPECT_THROW(feature_effects(v), ValidationError);
}

TEST(FeatureEffects, BootstrapIntervalsBracketEffects) {
  std::mt19937_64 rng(5);
  const std::size_t n = 400;
  std::vector<int> gold(n);
  for (auto& g : gold) g = static_cast<int>(rng() % 2);
  std::vector<PairedLabels> store;
  store.reserve(32);
  for (const auto& s : enumerate_specs()) {
    const double err = s.has(kAspects) ? 0.1 : 0.3;
    std::vector<int> pred(n);
    for (std::size_t i = 0; i < n; ++i) pred[i] = detail::uniform_unit(rng) < err ? 1 - gold[i] : gold[i];
    store.push_back(synthetic(s.label(), gold, pred));
  }
  std::map<std::uint8_t, const PairedLabels*> by_flags;
  for (std::size_t i = 0; i < 32; ++i) by_flags[enumerate_specs()[i].flags] = &store[i];
  BootstrapConfig cfg;
  cfg.seed = 7;
  auto rep = feature_effects_bootstrap(by_flags, cfg);
  const auto& a = rep.of('A');
  EXPECT_GT(a.delta, 0.3);
  ASSERT_TRUE(a.lo && a.hi);
  EXPECT_GT(*a.lo, 0.25);
  EXPECT_LE(*a.lo, *a.hi);
  const auto& m = rep.of('M');
  EXPECT_LT(*m.lo, 0.05);
  EXPECT_GT(*m.hi, -0.05);
}

TEST(SplitSelection, DominantPromptWins) {
  std::mt19937_64 rng(2);
  const std::size_t n = 200;
  std::vector<int> gold(n);
  for (auto& g : gold) g = static_cast<int>(rng() % 2);
  std::vector<PairedLabels> prompts;
  for (double err : {0.3, 0.05, 0.3, 0.3}) {
    std::vector<int> pred(n);
    for (std::size_t i = 0; i < n; ++i) pred[i] = detail::uniform_unit(rng) < err ? 1 - gold[i] : gold[i];
    prompts.push_back(synthetic("p" + std::to_string(prompts.size()), gold, pred));
  }
  auto rep = split_selection(prompts, 0, 200, 11);
  EXPECT_EQ(rep.modal, "p1");
  EXPECT_GE(rep.modal_count, 195u);
  EXPECT_GE(rep.beats_baseline, 195u);
  EXPECT_EQ(rep.beats_baseline + rep.ties_baseline + rep.loses_baseline, 200u);
  auto again = split_selection(prompts, 0, 200, 11);
  EXPECT_EQ(again.selected, rep.selected);
}

TEST(SplitSelection, SymmetricPromptsSelectedUniformly) {
  // Prompt j errs only inside block j, with the same number and kind of
  // errors as every other prompt, so no prompt is better in expectation.
  const std::size_t k = 5, block = 60, n = k * block;
  std::vector<int> gold(n);
  for (std::size_t i = 0; i < n; ++i) gold[i] = static_cast<int>((i / 2) % 2);
  std::vector<PairedLabels> prompts;
  for (std::size_t j = 0; j < k; ++j) {
    auto pred = gold;
    for (std::size_t e = 0; e < 15; ++e) {
      const auto i = j * block + 4 * e;
      pred[i] = 1 - pred[i];          // gold 0 -> false positive
      pred[i + 2] = 1 - pred[i + 2];  // gold 1 -> false negative every other time
      if (e % 2) pred[i + 2] = 1 - pred[i + 2];
    }
    prompts.push_back(synthetic("p" + std::to_string(j), gold, pred));
  }
  auto rep = split_selection(prompts, 0, 1000, 2024);
  std::vector<std::size_t> counts;
  for (const auto& p : prompts) counts.push_back(rep.selected.at(p.name));
  EXPECT_LT(rep.winner_ties, 100u);
  EXPECT_GT(chi_square_uniform_p(counts), 0.001) << "ties: " << rep.winner_ties;
}

TEST(SplitSelection, RejectsBadInput) {
  auto p = synthetic("a", {1, 0, 1, 0}, {1, 0, 1, 0});
  EXPECT_THROW(split_selection({p}, 0, 10, 1), ValidationError);
  EXPECT_THROW(split_selection({p, p}, 2, 10, 1), ValidationError);
}

TEST(ChiSquare, KnownValues) {
  std::vector<std::size_t> flat{100, 100, 100, 100};
  EXPECT_NEAR(chi_square_uniform_p(flat), 1.0, 1e-12);
  // x2 = (100 + 100) / 50 = 4 with one degree of freedom.
  std::vector<std::size_t> skew{60, 40};
  EXPECT_NEAR(chi_square_uniform_p(skew), 0.0455002638963584, 1e-9);
}

TEST(LengthBias, RecoversPlantedSlope) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::vector<double> err, len;
  for (int i = 0; i < 5000; ++i) {
    const double l = 1000.0 + static_cast<double>(rng() % 15000);
    len.push_back(l);
    err.push_back(-0.05 + 1e-5 * l + noise(rng));
  }
  auto fit = length_bias(err, len);
  EXPECT_NEAR(fit.slope, 1e-5, 1e-6);
  EXPECT_LT(fit.slope_lo, 1e-5);
  EXPECT_GT(fit.slope_hi, 1e-5);
  EXPECT_NEAR(fit.intercept, -0.05, 0.005);
  EXPECT_NEAR(fit.effect_at_median, fit.slope * fit.median_length, 1e-15);
}

TEST(LengthBias, RejectsDegenerateInput) {
  std::vector<double> e{1, 2, 3}, l{5, 5, 5};
  EXPECT_THROW(length_bias(e, l), ValidationError);
  std::vector<double> short_e{1, 2}, short_l{1, 2};
  EXPECT_THROW(length_bias(short_e, short_l), ValidationError);
}

TEST(Bootstrap, ConstantStatisticHasZeroWidth) {
  auto constant = [](std::span<const std::size_t>) -> std::optional<double> { return 0.25; };
  auto r = bootstrap_ci(50, constant, BootstrapConfig{});
  EXPECT_DOUBLE_EQ(r.point, 0.25);
  EXPECT_DOUBLE_EQ(r.lo, 0.25);
  EXPECT_DOUBLE_EQ(r.hi, 0.25);
}

TEST(Bootstrap, IntervalNarrowsWithSampleSize) {
  auto width = [](std::size_t n) {
    std::mt19937_64 rng(n);
    std::vector<double> x(n);
    for (auto& v : x) v = detail::uniform_unit(rng);
    auto mean = [&](std::span<const std::size_t> idx) -> std::optional<double> {
      double s = 0;
      for (auto i : idx) s += x[i];
      return s / static_cast<double>(idx.size());
    };
    BootstrapConfig cfg;
    cfg.n_resamples = 200;
    auto r = bootstrap_ci(n, mean, cfg);
    return r.hi - r.lo;
  };
  EXPECT_LT(width(10000), width(100) / 4);
}

TEST(FeatureEffects, InvariantToConstantShift) {
  std::map<std::string, double> shifted;
  for (const auto& [k, v] : kReferenceKappa) shifted[k] = v + 0.2;
  auto a = feature_effects(kReferenceKappa), b = feature_effects(shifted);
  for (char f : std::string("RDNAM")) EXPECT_NEAR(a.of(f).delta, b.of(f).delta, 1e-12);
}
