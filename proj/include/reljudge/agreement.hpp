#pragma once

// Document-level agreement between two label sources.

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "reljudge/common.hpp"
#include "reljudge/judge.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

/// n[gold][pred] over binarised labels.
struct ConfusionMatrix2x2 {
  std::array<std::array<std::uint64_t, 2>, 2> n{};

  std::uint64_t total() const { return n[0][0] + n[0][1] + n[1][0] + n[1][1]; }
  std::uint64_t agreements() const { return n[0][0] + n[1][1]; }
  std::uint64_t disagreements() const { return n[0][1] + n[1][0]; }
  bool operator==(const ConfusionMatrix2x2&) const = default;

  static ConfusionMatrix2x2 of(std::uint64_t g0p0, std::uint64_t g0p1, std::uint64_t g1p0,
                               std::uint64_t g1p1) {
    ConfusionMatrix2x2 m;
    m.n = {{{g0p0, g0p1}, {g1p0, g1p1}}};
    return m;
  }
};

/// How the two label sets lined up.
struct AlignmentReport {
  std::size_t shared = 0;
  std::size_t missing_prediction = 0;  ///< gold keys with no (parseable) prediction
  std::size_t unmatched_prediction = 0;
  double drop_rate() const {
    const auto n = shared + missing_prediction;
    return n == 0 ? 0.0 : static_cast<double>(missing_prediction) / static_cast<double>(n);
  }
};

struct AlignedPair {
  const LabelKey* key;
  double gold;
  double pred;
};

/// Pairs over keys present in both sets, in key order.
inline std::vector<AlignedPair> align(const LabelSet& gold, const LabelSet& pred,
                                      AlignmentReport* report = nullptr) {
  std::vector<AlignedPair> out;
  AlignmentReport rep;
  auto g = gold.entries().begin();
  auto p = pred.entries().begin();
  const auto ge = gold.entries().end();
  const auto pe = pred.entries().end();
  while (g != ge || p != pe) {
    if (p == pe || (g != ge && g->first < p->first)) {
      ++rep.missing_prediction;
      ++g;
    } else if (g == ge || p->first < g->first) {
      ++rep.unmatched_prediction;
      ++p;
    } else {
      out.push_back({&g->first, g->second, p->second});
      ++g;
      ++p;
    }
  }
  rep.shared = out.size();
  if (report) *report = rep;
  return out;
}

inline ConfusionMatrix2x2 confusion(const LabelSet& gold, const LabelSet& pred, double threshold = 1.0,
                                    AlignmentReport* report = nullptr) {
  const auto pairs = align(gold, pred, report);
  if (pairs.empty()) throw ValidationError("confusion: gold and predicted labels share no keys");
  ConfusionMatrix2x2 m;
  for (const auto& a : pairs) ++m.n[binarize(a.gold, threshold)][binarize(a.pred, threshold)];
  return m;
}

/// Chance-corrected agreement. Degenerate marginals (p_e = 1) give 0.
inline double cohens_kappa(const ConfusionMatrix2x2& m, Diagnostics* diag = nullptr) {
  const double total = static_cast<double>(m.total());
  if (total <= 0) throw ValidationError("cohens_kappa: empty confusion matrix");
  const double po = static_cast<double>(m.agreements()) / total;
  const double g1 = static_cast<double>(m.n[1][0] + m.n[1][1]) / total;
  const double p1 = static_cast<double>(m.n[0][1] + m.n[1][1]) / total;
  const double pe = g1 * p1 + (1.0 - g1) * (1.0 - p1);
  if (pe >= 1.0) {
    warn(diag, "cohens_kappa: chance agreement is 1; kappa defined as 0");
    return 0.0;
  }
  return (po - pe) / (1.0 - pe);
}

/// Off-diagonal mass; equals MAE on hard binary labels.
inline double mae(const ConfusionMatrix2x2& m) {
  if (m.total() == 0) throw ValidationError("mae: empty confusion matrix");
  return static_cast<double>(m.disagreements()) / static_cast<double>(m.total());
}

/// Mean |gold - pred| with gold binarised and pred already on [0, 1].
inline double mae(const LabelSet& gold, const LabelSet& pred_unit, double threshold = 1.0,
                  AlignmentReport* report = nullptr) {
  const auto pairs = align(gold, pred_unit, report);
  if (pairs.empty()) throw ValidationError("mae: gold and predicted labels share no keys");
  double sum = 0.0;
  for (const auto& a : pairs) {
    if (a.pred < 0.0 || a.pred > 1.0)
      throw ValidationError("mae: prediction for " + to_string(*a.key) + " outside [0, 1]");
    sum += std::abs(binarize(a.gold, threshold) - a.pred);
  }
  return sum / static_cast<double>(pairs.size());
}

enum class MaeMode {
  fractional,  ///< share of simulated judges saying relevant
  hard,        ///< binarised mean score
};

/// Map model labels onto [0, 1] for MAE. `scores` are mean grades on [0, 2];
/// `fractions` the per-document share of judges saying relevant.
inline LabelSet unit_predictions(const LabelSet& scores, const LabelSet& fractions, MaeMode mode,
                                 double threshold = 1.0) {
  LabelSet out(scores.source(), 1.0);
  if (mode == MaeMode::hard) {
    for (const auto& [k, v] : scores.entries()) out.insert(k, binarize(v, threshold));
  } else {
    for (const auto& [k, v] : fractions.entries()) out.insert(k, v);
  }
  return out;
}

namespace detail {

/// Sum over (hi, lo) pairs of [hi > lo] + 0.5 [hi == lo], given lo sorted.
inline double count_ordered(const std::vector<double>& hi, const std::vector<double>& lo_sorted) {
  double s = 0.0;
  for (double h : hi) {
    const auto below = std::lower_bound(lo_sorted.begin(), lo_sorted.end(), h) - lo_sorted.begin();
    const auto not_above = std::upper_bound(lo_sorted.begin(), lo_sorted.end(), h) - lo_sorted.begin();
    s += static_cast<double>(below) + 0.5 * static_cast<double>(not_above - below);
  }
  return s;
}

}  // namespace detail

/// Probability that the prediction orders a same-topic, gold-discordant
/// document pair the same way as gold; prediction ties count one half.
inline double pairwise_auc(const LabelSet& gold, const LabelSet& pred, AlignmentReport* report = nullptr) {
  // topic -> gold grade -> predictions
  std::map<int, std::map<double, std::vector<double>>> by_topic;
  for (const auto& a : align(gold, pred, report)) by_topic[a.key->topic][a.gold].push_back(a.pred);
  double agree = 0.0;
  double pairs = 0.0;
  for (auto& [topic, grades] : by_topic) {
    for (auto& [g, preds] : grades) std::sort(preds.begin(), preds.end());
    for (auto lo = grades.begin(); lo != grades.end(); ++lo) {
      for (auto hi = std::next(lo); hi != grades.end(); ++hi) {
        agree += detail::count_ordered(hi->second, lo->second);
        pairs += static_cast<double>(hi->second.size()) * static_cast<double>(lo->second.size());
      }
    }
  }
  if (pairs == 0.0) throw ValidationError("pairwise_auc: no same-topic pairs with differing gold grades");
  return agree / pairs;
}

// ---------------------------------------------------------------------------
// Preference pairs

struct PreferencePair {
  int topic = 0;
  std::string preferred;
  std::string other;
  std::vector<std::string> tags;  ///< e.g. "good>bad", language, recency
};

/// One pair per line: `query<TAB>preferred<TAB>other[<TAB>tag...]`. Blank
/// lines and lines starting with '#' are skipped.
inline std::vector<PreferencePair> parse_preference_pairs(std::string_view text) {
  std::vector<PreferencePair> out;
  std::size_t line_no = 0;
  for (auto line : detail::split_char(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (detail::trim(line).empty() || detail::trim(line).front() == '#') continue;
    auto f = detail::split_char(line, '\t');
    const auto where = "preference pairs line " + std::to_string(line_no) + ": ";
    if (f.size() < 3) throw ParseError(where + "expected query, preferred and other columns");
    auto topic = detail::parse_number<int>(detail::trim(f[0]));
    if (!topic) throw ParseError(where + "query id is not an integer");
    PreferencePair p{*topic, std::string(detail::trim(f[1])), std::string(detail::trim(f[2])), {}};
    if (p.preferred.empty() || p.other.empty()) throw ParseError(where + "empty document id");
    if (p.preferred == p.other) throw ParseError(where + "preferred and other document are the same");
    for (std::size_t i = 3; i < f.size(); ++i)
      if (!detail::trim(f[i]).empty()) p.tags.emplace_back(detail::trim(f[i]));
    out.push_back(std::move(p));
  }
  return out;
}

struct PreferenceAccuracy {
  double accuracy = 0.0;
  std::size_t scored = 0;
  std::size_t skipped = 0;  ///< pairs with an unscored document
  struct Stratum {
    double accuracy = 0.0;
    std::size_t pairs = 0;
  };
  std::map<std::string, Stratum> by_tag;
};

/// Fraction of pairs where the preferred document scores higher; ties
/// count one half. Pairs with a missing score are skipped and counted.
inline PreferenceAccuracy preference_accuracy(const std::vector<PreferencePair>& pairs, const LabelSet& scores) {
  PreferenceAccuracy out;
  double total = 0.0;
  std::map<std::string, double> tag_sum;
  for (const auto& p : pairs) {
    auto a = scores.find(p.topic, p.preferred);
    auto b = scores.find(p.topic, p.other);
    if (!a || !b) {
      ++out.skipped;
      continue;
    }
    const double v = *a > *b ? 1.0 : (*a == *b ? 0.5 : 0.0);
    total += v;
    ++out.scored;
    for (const auto& t : p.tags) {
      tag_sum[t] += v;
      ++out.by_tag[t].pairs;
    }
  }
  if (out.scored == 0) throw ValidationError("preference_accuracy: no pair has both documents scored");
  out.accuracy = total / static_cast<double>(out.scored);
  for (auto& [t, s] : out.by_tag) s.accuracy = tag_sum[t] / static_cast<double>(s.pairs);
  return out;
}

}  // namespace reljudge
