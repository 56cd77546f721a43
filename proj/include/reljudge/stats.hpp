#pragma once

// Resampling intervals, prompt comparison, feature effects, the
// split-selection regret protocol and the prompt-length regression.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "reljudge/agreement.hpp"
#include "reljudge/common.hpp"
#include "reljudge/prompt.hpp"

namespace reljudge {

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapConfig {
  int n_resamples = 20;
  double level = 0.95;
  std::uint64_t seed = 0;
  /// Undefined resamples are redrawn up to this many times per resample.
  int max_redraws = 100;

  void validate() const {
    if (n_resamples < 2) throw ValidationError("bootstrap needs at least 2 resamples");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("bootstrap level must lie in (0, 1)");
  }
};

struct BootstrapResult {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double replicate_mean = 0.0;
  std::vector<double> replicates;
  std::size_t redrawn = 0;  ///< resamples on which the statistic was undefined
};

/// Linear-interpolation quantile (R type 7) of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> data, double q) {
  std::sort(data.begin(), data.end());
  return quantile_sorted(data, q);
}

/// Statistic evaluated on a multiset of sample indices; nullopt when it is
/// undefined on that resample.
using ResampleStatistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Percentile bootstrap over `n` sampling units (documents).
inline BootstrapResult bootstrap_ci(std::size_t n, const ResampleStatistic& statistic, const BootstrapConfig& cfg) {
  cfg.validate();
  if (n == 0) throw ValidationError("bootstrap_ci: empty sample");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto point = statistic(idx);
  if (!point) throw ValidationError("bootstrap_ci: statistic undefined on the full sample");
  BootstrapResult out;
  out.point = *point;
  std::mt19937_64 rng(cfg.seed);
  for (int r = 0; r < cfg.n_resamples; ++r) {
    for (int attempt = 0;; ++attempt) {
      for (auto& i : idx) i = detail::uniform_index(rng, n);
      if (auto v = statistic(idx)) {
        out.replicates.push_back(*v);
        break;
      }
      ++out.redrawn;
      if (attempt >= cfg.max_redraws)
        throw ValidationError("bootstrap_ci: statistic undefined on " + std::to_string(attempt + 1) +
                              " consecutive resamples");
    }
  }
  auto sorted = out.replicates;
  std::sort(sorted.begin(), sorted.end());
  const double alpha = 1.0 - cfg.level;
  out.lo = quantile_sorted(sorted, alpha / 2.0);
  out.hi = quantile_sorted(sorted, 1.0 - alpha / 2.0);
  out.replicate_mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  return out;
}

// ---------------------------------------------------------------------------
// Paired gold/model labels over a fixed document list

/// Gold and model labels for one prompt, index-aligned to a shared document
/// list. Missing (dropped) predictions are NaN.
struct PairedLabels {
  std::string name;
  std::vector<int> topic;
  std::vector<int> grade;            ///< gold grade
  std::vector<int> gold;             ///< binarised gold
  std::vector<double> score;         ///< mean score on [0, 2], NaN if dropped
  std::vector<double> unit;          ///< prediction on [0, 1] for MAE, NaN if dropped
  double threshold = 1.0;

  std::size_t size() const { return gold.size(); }
  bool has(std::size_t i) const { return !std::isnan(score[i]); }
  int pred_bin(std::size_t i) const { return binarize(score[i], threshold); }
};

/// Build aligned labels over `docs` from gold grades and model labels.
inline PairedLabels pair_labels(std::string name, const std::vector<LabelKey>& docs, const LabelSet& gold,
                                const LabelSet& scores, const LabelSet& unit, double threshold = 1.0) {
  PairedLabels p;
  p.name = std::move(name);
  p.threshold = threshold;
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& k : docs) {
    auto g = gold.find(k);
    if (!g) throw ValidationError("no gold label for " + to_string(k));
    p.topic.push_back(k.topic);
    p.grade.push_back(static_cast<int>(*g));
    p.gold.push_back(binarize(*g, threshold));
    auto s = scores.find(k);
    auto u = unit.find(k);
    p.score.push_back(s ? *s : nan);
    p.unit.push_back(s && u ? *u : (s ? binarize(*s, threshold) : nan));
  }
  return p;
}

inline std::optional<double> kappa_on(const PairedLabels& p, std::span<const std::size_t> idx) {
  ConfusionMatrix2x2 m;
  for (auto i : idx)
    if (p.has(i)) ++m.n[p.gold[i]][p.pred_bin(i)];
  if (m.total() == 0) return std::nullopt;
  const double t = static_cast<double>(m.total());
  const double g1 = static_cast<double>(m.n[1][0] + m.n[1][1]) / t;
  const double p1 = static_cast<double>(m.n[0][1] + m.n[1][1]) / t;
  const double pe = g1 * p1 + (1 - g1) * (1 - p1);
  if (pe >= 1.0) return std::nullopt;
  return (static_cast<double>(m.agreements()) / t - pe) / (1.0 - pe);
}

inline std::optional<double> mae_on(const PairedLabels& p, std::span<const std::size_t> idx) {
  double s = 0.0;
  std::size_t n = 0;
  for (auto i : idx)
    if (p.has(i)) {
      s += std::abs(p.gold[i] - p.unit[i]);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

/// Within-topic pairwise AUC over the resampled documents, using graded
/// gold. Duplicated documents contribute once per copy.
inline std::optional<double> auc_on(const PairedLabels& p, std::span<const std::size_t> idx) {
  std::map<int, std::map<int, std::vector<double>>> by_topic;
  for (auto i : idx)
    if (p.has(i)) by_topic[p.topic[i]][p.grade[i]].push_back(p.score[i]);
  double agree = 0.0, pairs = 0.0;
  for (auto& [t, grades] : by_topic) {
    for (auto& [g, v] : grades) std::sort(v.begin(), v.end());
    for (auto lo = grades.begin(); lo != grades.end(); ++lo)
      for (auto hi = std::next(lo); hi != grades.end(); ++hi) {
        agree += detail::count_ordered(hi->second, lo->second);
        pairs += static_cast<double>(hi->second.size() * lo->second.size());
      }
  }
  if (pairs == 0.0) return std::nullopt;
  return agree / pairs;
}

/// 1 where the binarised prediction matches gold, NaN where dropped.
inline std::vector<double> agreement_indicators(const PairedLabels& p) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    out[i] = p.has(i) ? (p.pred_bin(i) == p.gold[i] ? 1.0 : 0.0) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

// ---------------------------------------------------------------------------
// Comparing prompts

struct Candidate {
  std::string name;
  double point = 0.0;               ///< column statistic
  std::vector<double> per_document; ///< index-aligned across candidates; NaN = missing
};

struct CompareResult {
  std::string winner;
  std::string runner_up;
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  bool tested = false;
  bool significant = false;
};

/// One-sided paired t test of d = a - b > 0 over documents present in both.
inline std::pair<double, double> paired_t_one_sided(std::span<const double> a, std::span<const double> b,
                                                    std::size_t* n_out = nullptr) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
    if (!std::isnan(a[i]) && !std::isnan(b[i])) d.push_back(a[i] - b[i]);
  if (n_out) *n_out = d.size();
  if (d.size() < 2) return {0.0, 1.0};
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) {
    if (mean > 0) return {std::numeric_limits<double>::infinity(), 0.0};
    if (mean < 0) return {-std::numeric_limits<double>::infinity(), 1.0};
    return {0.0, 0.5};
  }
  const double t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  return {t, boost::math::cdf(boost::math::complement(dist, t))};
}

/// Pick the best candidate by point estimate (earlier candidates win ties)
/// and test it against the runner-up on the per-document values.
inline CompareResult compare_best(const std::vector<Candidate>& candidates, bool lower_is_better = false,
                                  double alpha = 0.05) {
  if (candidates.empty()) throw ValidationError("compare_best: no candidates");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lower_is_better ? candidates[a].point < candidates[b].point : candidates[a].point > candidates[b].point;
  });
  CompareResult out;
  const auto& best = candidates[order[0]];
  out.winner = best.name;
  if (candidates.size() == 1) return out;
  const auto& next = candidates[order[1]];
  out.runner_up = next.name;
  out.tested = true;
  auto [t, p] = lower_is_better ? paired_t_one_sided(next.per_document, best.per_document, &out.n)
                                : paired_t_one_sided(best.per_document, next.per_document, &out.n);
  out.t_statistic = t;
  out.p_value = p;
  out.significant = p < alpha;
  return out;
}

// ---------------------------------------------------------------------------
// Feature effects

struct FeatureEffect {
  char feature = '?';
  double delta = 0.0;
  std::optional<double> lo, hi;
  int pairs = 0;
};

struct FeatureEffectReport {
  std::vector<FeatureEffect> effects;  ///< R, D, N, A, M order
  const FeatureEffect& of(char f) const {
    for (const auto& e : effects)
      if (e.feature == f) return e;
    throw ValidationError(std::string("no effect for feature ") + f);
  }
};

/// Mean change in the statistic from switching each feature on, over the
/// 16 pairs of templates that agree on every other feature.
inline FeatureEffectReport feature_effects(const std::map<std::uint8_t, double>& value_by_flags) {
  for (const auto& spec : enumerate_specs())
    if (!value_by_flags.count(spec.flags)) throw ValidationError("feature_effects: missing prompt " + spec.label());
  FeatureEffectReport rep;
  for (std::size_t f = 0; f < kAllFeatures.size(); ++f) {
    const auto bit = kAllFeatures[f];
    FeatureEffect e;
    e.feature = kFeatureLetters[f];
    double sum = 0.0;
    for (std::uint8_t flags = 0; flags < 32; ++flags) {
      if (flags & bit) continue;
      sum += value_by_flags.at(flags | bit) - value_by_flags.at(flags);
      ++e.pairs;
    }
    e.delta = sum / e.pairs;
    rep.effects.push_back(e);
  }
  return rep;
}

inline FeatureEffectReport feature_effects(const std::map<std::string, double>& value_by_label) {
  std::map<std::uint8_t, double> m;
  for (const auto& [label, v] : value_by_label) m[PromptSpec::parse(label).flags] = v;
  return feature_effects(m);
}

/// Feature effects on kappa with bootstrap intervals: each resample of
/// documents recomputes kappa for all 32 prompts and then the effects.
inline FeatureEffectReport feature_effects_bootstrap(const std::map<std::uint8_t, const PairedLabels*>& by_flags,
                                                     const BootstrapConfig& cfg) {
  std::map<std::uint8_t, double> point;
  std::size_t n = 0;
  for (const auto& [flags, p] : by_flags) {
    n = p->size();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    point[flags] = kappa_on(*p, all).value_or(0.0);
  }
  auto rep = feature_effects(point);
  for (const auto& [flags, p] : by_flags)
    if (p->size() != n) throw ValidationError("feature_effects_bootstrap: prompts cover different documents");
  // One pass over resamples; every feature sees the same resampled documents.
  cfg.validate();
  std::vector<std::vector<double>> reps(kAllFeatures.size());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(n);
  for (int r = 0; r < cfg.n_resamples; ++r) {
    for (int attempt = 0;; ++attempt) {
      for (auto& i : idx) i = detail::uniform_index(rng, n);
      std::map<std::uint8_t, double> k;
      bool defined = true;
      for (const auto& [flags, p] : by_flags) {
        auto v = kappa_on(*p, idx);
        if (!v) {
          defined = false;
          break;
        }
        k[flags] = *v;
      }
      if (defined) {
        const auto e = feature_effects(k);
        for (std::size_t f = 0; f < kAllFeatures.size(); ++f) reps[f].push_back(e.effects[f].delta);
        break;
      }
      if (attempt >= cfg.max_redraws) throw ValidationError("feature_effects_bootstrap: kappa undefined on resamples");
    }
  }
  const double alpha = 1.0 - cfg.level;
  for (std::size_t f = 0; f < kAllFeatures.size(); ++f) {
    std::sort(reps[f].begin(), reps[f].end());
    rep.effects[f].lo = quantile_sorted(reps[f], alpha / 2.0);
    rep.effects[f].hi = quantile_sorted(reps[f], 1.0 - alpha / 2.0);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Split selection

struct SplitSelectionReport {
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::string baseline;
  std::size_t beats_baseline = 0;   ///< best-on-first strictly beats baseline on second
  std::size_t ties_baseline = 0;    ///< equal kappa on second split (not a loss)
  std::size_t loses_baseline = 0;
  std::size_t best_on_both = 0;     ///< best-on-first is also best on second
  std::size_t winner_ties = 0;      ///< first-split ties resolved by candidate order
  std::map<std::string, std::size_t> selected;  ///< times each prompt was best on first split
  std::string modal;
  std::size_t modal_count = 0;
};

/// Repeatedly split the documents in half at random, pick the prompt with
/// the highest kappa on the first half, and check it against the baseline
/// on the second half. Iteration i shuffles with seed derive_seed(seed, i).
inline SplitSelectionReport split_selection(const std::vector<PairedLabels>& prompts, std::size_t baseline,
                                            std::size_t n_iter, std::uint64_t seed) {
  if (prompts.size() < 2) throw ValidationError("split_selection needs at least 2 prompts");
  if (baseline >= prompts.size()) throw ValidationError("split_selection: baseline index out of range");
  const auto n = prompts[0].size();
  for (const auto& p : prompts)
    if (p.size() != n) throw ValidationError("split_selection: prompts cover different documents");
  const auto half = n / 2;
  if (half < 2) throw ValidationError("split_selection: fewer than 2 documents per split");

  SplitSelectionReport rep;
  rep.iterations = n_iter;
  rep.seed = seed;
  rep.baseline = prompts[baseline].name;
  for (const auto& p : prompts) rep.selected[p.name] = 0;
  constexpr double kUndefined = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(n);
  for (std::size_t it = 0; it < n_iter; ++it) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(detail::derive_seed(seed, it));
    for (std::size_t i = 0; i + 1 < n; ++i) std::swap(idx[i], idx[i + detail::uniform_index(rng, n - i)]);
    std::span<const std::size_t> first(idx.data(), half);
    std::span<const std::size_t> second(idx.data() + half, n - half);

    std::size_t best = 0;
    double best_k = kUndefined;
    bool tie = false;
    std::vector<double> second_k(prompts.size());
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      const double k = kappa_on(prompts[p], first).value_or(kUndefined);
      if (k > best_k) {
        best_k = k;
        best = p;
        tie = false;
      } else if (k == best_k) {
        tie = true;
      }
      second_k[p] = kappa_on(prompts[p], second).value_or(kUndefined);
    }
    if (tie) ++rep.winner_ties;
    ++rep.selected[prompts[best].name];
    if (second_k[best] > second_k[baseline]) ++rep.beats_baseline;
    else if (second_k[best] == second_k[baseline]) ++rep.ties_baseline;
    else ++rep.loses_baseline;
    if (*std::max_element(second_k.begin(), second_k.end()) == second_k[best]) ++rep.best_on_both;
  }
  for (const auto& p : prompts) {
    const auto c = rep.selected[p.name];
    if (c > rep.modal_count) {
      rep.modal_count = c;
      rep.modal = p.name;
    }
  }
  return rep;
}

/// Pearson chi-square goodness-of-fit p-value against equal expected counts.
inline double chi_square_uniform_p(std::span<const std::size_t> counts) {
  if (counts.size() < 2) throw ValidationError("chi-square needs at least 2 categories");
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double expected = total / static_cast<double>(counts.size());
  double x2 = 0.0;
  for (auto c : counts) x2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, x2));
}

// ---------------------------------------------------------------------------
// Length bias

struct LengthBias {
  std::size_t n = 0;
  double slope = 0.0;  ///< change in signed error per character
  double intercept = 0.0;
  double slope_se = 0.0;
  double slope_lo = 0.0;
  double slope_hi = 0.0;
  double median_length = 0.0;
  double effect_at_median = 0.0;  ///< slope * median length
};

/// Ordinary least squares of signed error (model - gold) on prompt length.
inline LengthBias length_bias(std::span<const double> signed_errors, std::span<const double> lengths,
                              double level = 0.95) {
  if (signed_errors.size() != lengths.size()) throw ValidationError("length_bias: inputs differ in length");
  const auto n = signed_errors.size();
  if (n < 3) throw ValidationError("length_bias: need at least 3 points");
  const double nn = static_cast<double>(n);
  const double mx = std::accumulate(lengths.begin(), lengths.end(), 0.0) / nn;
  const double my = std::accumulate(signed_errors.begin(), signed_errors.end(), 0.0) / nn;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lengths[i] - mx) * (lengths[i] - mx);
    sxy += (lengths[i] - mx) * (signed_errors[i] - my);
  }
  if (sxx == 0.0) throw ValidationError("length_bias: prompt lengths have zero variance");
  LengthBias out;
  out.n = n;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = signed_errors[i] - (out.intercept + out.slope * lengths[i]);
    sse += r * r;
  }
  out.slope_se = std::sqrt(sse / (nn - 2.0) / sxx);
  boost::math::students_t dist(nn - 2.0);
  const double q = boost::math::quantile(boost::math::complement(dist, (1.0 - level) / 2.0));
  out.slope_lo = out.slope - q * out.slope_se;
  out.slope_hi = out.slope + q * out.slope_se;
  out.median_length = quantile(std::vector<double>(lengths.begin(), lengths.end()), 0.5);
  out.effect_at_median = out.slope * out.median_length;
  return out;
}

}  // namespace reljudge
