#pragma once

// Agreement between orderings of a fixed set of items (queries, runs,
// groups) induced by two label sources.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "reljudge/common.hpp"
#include "reljudge/effectiveness.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

struct Ordering {
  enum class Direction { ascending, descending };
  std::vector<std::string> items;
  Direction direction = Direction::descending;
  std::size_t tied_pairs = 0;  ///< adjacent equal scores broken by identifier
};

/// Order items by score; ties are broken by identifier.
inline Ordering ordering_from_scores(const std::map<std::string, double>& scores, Ordering::Direction dir) {
  std::vector<std::pair<std::string, double>> v(scores.begin(), scores.end());
  std::stable_sort(v.begin(), v.end(), [dir](const auto& a, const auto& b) {
    if (a.second != b.second)
      return dir == Ordering::Direction::ascending ? a.second < b.second : a.second > b.second;
    return a.first < b.first;
  });
  Ordering o;
  o.direction = dir;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0 && v[i].second == v[i - 1].second) ++o.tied_pairs;
    o.items.push_back(std::move(v[i].first));
  }
  return o;
}

inline Ordering ordering_from_scores(const std::map<int, double>& scores, Ordering::Direction dir) {
  // Numeric ids sort numerically when tied, so map them through padded keys.
  std::map<std::string, double> s;
  std::unordered_map<std::string, std::string> back;
  for (const auto& [id, v] : scores) {
    auto key = std::to_string(id);
    key.insert(0, 12 - std::min<std::size_t>(12, key.size()), '0');
    back[key] = std::to_string(id);
    s[key] = v;
  }
  auto o = ordering_from_scores(s, dir);
  for (auto& item : o.items) item = back[item];
  return o;
}

namespace detail {

inline void check_conjoint(const std::vector<std::string>& s, const std::vector<std::string>& t) {
  if (s.size() != t.size()) throw ValidationError("orderings have different lengths");
  if (s.empty()) throw ValidationError("orderings are empty");
  std::set<std::string_view> a(s.begin(), s.end());
  if (a.size() != s.size()) throw ValidationError("ordering has duplicate items");
  std::set<std::string_view> b(t.begin(), t.end());
  if (b.size() != t.size()) throw ValidationError("ordering has duplicate items");
  if (a != b) throw ValidationError("orderings are over different item sets");
}

/// Raw conjoint RBO from overlap counts X_1..X_N (X_d = |s[1..d] ∩ t[1..d]|).
inline double rbo_from_overlaps(const std::vector<std::size_t>& overlap, double phi) {
  const auto n = overlap.size();
  double sum = 0.0;
  double w = 1.0;
  for (std::size_t d = 1; d <= n; ++d) {
    sum += w * static_cast<double>(overlap[d - 1]) / static_cast<double>(d);
    w *= phi;
  }
  // Beyond depth N both lists are exhausted and agreement stays at 1.
  return (1.0 - phi) * sum + w;
}

inline void check_phi(double phi) {
  if (!(phi > 0.0 && phi < 1.0)) throw ValidationError("RBO persistence must lie in (0, 1)");
}

}  // namespace detail

/// Rank-biased overlap of two permutations of the same items, with the
/// agreement beyond the last rank fixed at 1.
inline double rbo_conjoint(const std::vector<std::string>& s, const std::vector<std::string>& t, double phi) {
  detail::check_phi(phi);
  detail::check_conjoint(s, t);
  const auto n = s.size();
  std::vector<std::size_t> overlap(n);
  std::unordered_map<std::string_view, int> seen;  // +1 seen in s, +2 seen in t
  std::size_t x = 0;
  for (std::size_t d = 0; d < n; ++d) {
    if (s[d] == t[d]) {
      ++x;
    } else {
      if ((seen[s[d]] |= 1) == 3) ++x;
      if ((seen[t[d]] |= 2) == 3) ++x;
    }
    overlap[d] = x;
  }
  return detail::rbo_from_overlaps(overlap, phi);
}

inline double rbo_conjoint(const Ordering& s, const Ordering& t, double phi) {
  return rbo_conjoint(s.items, t.items, phi);
}

/// Raw RBO between an ordering of N items and its reversal; the overlap at
/// depth d is max(0, 2d - N).
inline double rbo_min(std::size_t n, double phi) {
  detail::check_phi(phi);
  if (n == 0) throw ValidationError("rbo_min: N must be >= 1");
  std::vector<std::size_t> overlap(n);
  for (std::size_t d = 1; d <= n; ++d) overlap[d - 1] = 2 * d > n ? 2 * d - n : 0;
  return detail::rbo_from_overlaps(overlap, phi);
}

/// Exhaustive minimum of raw RBO over all orderings against a fixed one
/// (every pair of permutations is a relabelling of such a pair). N <= 9.
inline double rbo_min_brute_force(std::size_t n, double phi) {
  if (n == 0 || n > 9) throw ValidationError("rbo_min_brute_force: N must be in 1..9");
  std::vector<std::string> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(std::string(1, static_cast<char>('a' + i)));
  auto t = s;
  double best = 2.0;
  do {
    best = std::min(best, rbo_conjoint(s, t, phi));
  } while (std::next_permutation(t.begin(), t.end()));
  return best;
}

/// Min-normalised RBO: 0 for a reversed ordering, 1 for an identical one.
inline double rbo_normalized(const std::vector<std::string>& s, const std::vector<std::string>& t, double phi) {
  const double raw = rbo_conjoint(s, t, phi);
  if (s.size() == 1) return 1.0;
  const double lo = rbo_min(s.size(), phi);
  return std::clamp((raw - lo) / (1.0 - lo), 0.0, 1.0);
}

inline double rbo_normalized(const Ordering& s, const Ordering& t, double phi) {
  return rbo_normalized(s.items, t.items, phi);
}

/// Kendall's tau-b over paired values. When either side has no untied
/// pair the statistic is undefined: two fully tied vectors give 1, one
/// fully tied vector gives 0 (with a warning).
inline double kendall_tau_b(std::span<const double> x, std::span<const double> y, Diagnostics* diag = nullptr) {
  if (x.size() != y.size()) throw ValidationError("kendall_tau: vectors differ in length");
  if (x.size() < 2) throw ValidationError("kendall_tau: need at least 2 items");
  long double concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  const auto n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++tie_x;
      else if (dy == 0) ++tie_y;
      else if ((dx > 0) == (dy > 0)) ++concordant;
      else ++discordant;
    }
  }
  const long double nx = concordant + discordant + tie_y;  // pairs untied in x
  const long double ny = concordant + discordant + tie_x;  // pairs untied in y
  if (nx == 0 && ny == 0) return 1.0;
  if (nx == 0 || ny == 0) {
    warn(diag, "kendall_tau: one score vector is constant; tau defined as 0");
    return 0.0;
  }
  return static_cast<double>((concordant - discordant) / std::sqrt(nx * ny));
}

/// Tau-b between two query score vectors over the same topics.
inline double kendall_tau(const QueryScoreVector& x, const QueryScoreVector& y, Diagnostics* diag = nullptr) {
  if (x.scores.size() != y.scores.size()) throw ValidationError("kendall_tau: score vectors cover different topics");
  std::vector<double> a, b;
  for (const auto& [topic, v] : x.scores) {
    auto it = y.scores.find(topic);
    if (it == y.scores.end()) throw ValidationError("kendall_tau: topic " + std::to_string(topic) + " missing");
    a.push_back(v);
    b.push_back(it->second);
  }
  return kendall_tau_b(a, b, diag);
}

inline double kendall_tau(const std::map<std::string, double>& x, const std::map<std::string, double>& y,
                          Diagnostics* diag = nullptr) {
  if (x.size() != y.size()) throw ValidationError("kendall_tau: score maps cover different items");
  std::vector<double> a, b;
  for (const auto& [id, v] : x) {
    auto it = y.find(id);
    if (it == y.end()) throw ValidationError("kendall_tau: item " + id + " missing");
    a.push_back(v);
    b.push_back(it->second);
  }
  return kendall_tau_b(a, b, diag);
}

struct GroupBest {
  Ordering ordering;
  std::map<std::string, double> scores;    ///< group -> best run score
  std::map<std::string, std::string> run;  ///< group -> best run tag
  std::vector<std::string> tie_notes;
};

/// Keep each group's best-scoring run and order groups by that score,
/// best first. Equal scores fall back to group name.
inline GroupBest group_best(const std::vector<Run>& runs, const std::map<std::string, double>& system_scores) {
  GroupBest out;
  for (const auto& r : runs) {
    if (r.group.empty()) throw ValidationError("run " + r.tag + " has no group");
    auto s = system_scores.find(r.tag);
    if (s == system_scores.end()) throw ValidationError("no system score for run " + r.tag);
    auto it = out.scores.find(r.group);
    if (it == out.scores.end() || s->second > it->second ||
        (s->second == it->second && r.tag < out.run[r.group])) {
      out.scores[r.group] = s->second;
      out.run[r.group] = r.tag;
    }
  }
  out.ordering = ordering_from_scores(out.scores, Ordering::Direction::descending);
  for (std::size_t i = 1; i < out.ordering.items.size(); ++i) {
    const auto& a = out.ordering.items[i - 1];
    const auto& b = out.ordering.items[i];
    if (out.scores[a] == out.scores[b]) out.tie_notes.push_back(a + " = " + b + " (ordered by name)");
  }
  return out;
}

struct ConsistencyReport {
  std::string metric;
  std::string level;  ///< query | run | group
  double phi = 0.0;
  std::size_t universe = 0;
  double rbo_raw = 0.0;
  double rbo_min = 0.0;
  double rbo_normalized = 0.0;
  double kendall_tau = 0.0;
  std::size_t ties_gold = 0;
  std::size_t ties_model = 0;
  std::string tie_note = "ties broken by identifier";
};

/// Compare the orderings two score maps induce over the same items.
inline ConsistencyReport compare_orderings(const std::string& metric, const std::string& level,
                                           const std::map<std::string, double>& gold,
                                           const std::map<std::string, double>& model, Ordering::Direction dir,
                                           double phi, Diagnostics* diag = nullptr) {
  ConsistencyReport rep;
  rep.metric = metric;
  rep.level = level;
  rep.phi = phi;
  const auto a = ordering_from_scores(gold, dir);
  const auto b = ordering_from_scores(model, dir);
  rep.universe = a.items.size();
  rep.rbo_raw = rbo_conjoint(a, b, phi);
  rep.rbo_min = rbo_min(rep.universe, phi);
  rep.rbo_normalized = rbo_normalized(a, b, phi);
  rep.kendall_tau = rep.universe >= 2 ? kendall_tau(gold, model, diag) : 1.0;
  rep.ties_gold = a.tied_pairs;
  rep.ties_model = b.tied_pairs;
  return rep;
}

}  // namespace reljudge
