#pragma once

// Per-query retrieval metrics over binarised labels. Unjudged documents are
// non-relevant.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "reljudge/common.hpp"
#include "reljudge/judge.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

struct MetricSpec {
  enum class Kind { precision, rbp, ap };
  Kind kind = Kind::precision;
  int depth = 10;
  double phi = 0.6;

  static MetricSpec precision(int depth = 10) { return checked({Kind::precision, depth, 0.6}); }
  static MetricSpec rbp(int depth = 100, double phi = 0.6) { return checked({Kind::rbp, depth, phi}); }
  static MetricSpec ap(int depth = 100) { return checked({Kind::ap, depth, 0.6}); }

  /// "P@10", "RBP@100", "MAP@100"; RBP accepts an optional ",phi=0.6" suffix.
  static MetricSpec parse(std::string_view text, double default_phi = 0.6) {
    auto at = text.find('@');
    if (at == std::string_view::npos) throw ValidationError("metric '" + std::string(text) + "' needs @depth");
    const auto name = text.substr(0, at);
    auto rest = text.substr(at + 1);
    double phi = default_phi;
    if (auto comma = rest.find(','); comma != std::string_view::npos) {
      auto opt = detail::trim(rest.substr(comma + 1));
      rest = rest.substr(0, comma);
      if (!opt.starts_with("phi=")) throw ValidationError("metric '" + std::string(text) + "': unknown option");
      auto v = detail::parse_number<double>(opt.substr(4));
      if (!v) throw ValidationError("metric '" + std::string(text) + "': bad phi");
      phi = *v;
    }
    auto depth = detail::parse_number<int>(rest);
    if (!depth) throw ValidationError("metric '" + std::string(text) + "': bad depth");
    if (name == "P") return precision(*depth);
    if (name == "RBP") return rbp(*depth, phi);
    if (name == "MAP" || name == "AP") return ap(*depth);
    throw ValidationError("unknown metric '" + std::string(name) + "'");
  }

  std::string name() const {
    switch (kind) {
      case Kind::precision: return "P@" + std::to_string(depth);
      case Kind::rbp: return "RBP@" + std::to_string(depth) + ",phi=" + detail::format_double(phi);
      case Kind::ap: return "MAP@" + std::to_string(depth);
    }
    return "?";
  }

  static MetricSpec checked(MetricSpec m) {
    if (m.depth < 1) throw ValidationError("metric depth must be >= 1");
    if (m.kind == Kind::rbp && !(m.phi > 0.0 && m.phi < 1.0))
      throw ValidationError("RBP persistence must lie in (0, 1)");
    return m;
  }
};

/// Binarised label, 0 when unjudged.
inline int relevance_of(const LabelSet& labels, int topic, std::string_view doc, double threshold = 1.0) {
  auto g = labels.find(topic, doc);
  return g ? binarize(*g, threshold) : 0;
}

/// Relevance vector for the first `depth` postings.
inline std::vector<int> relevance_vector(std::span<const Posting> ranking, const LabelSet& labels, int topic,
                                         int depth, double threshold = 1.0) {
  std::vector<int> rel;
  const auto n = std::min<std::size_t>(ranking.size(), static_cast<std::size_t>(std::max(depth, 0)));
  rel.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rel.push_back(relevance_of(labels, topic, ranking[i].doc, threshold));
  return rel;
}

/// Relevant in top k over k; short rankings count as padded with non-relevant.
inline double precision_at_k(std::span<const int> rel, int k) {
  if (k < 1) throw ValidationError("precision_at_k: k must be >= 1");
  int hits = 0;
  for (std::size_t i = 0; i < rel.size() && i < static_cast<std::size_t>(k); ++i) hits += rel[i];
  return static_cast<double>(hits) / k;
}

/// (1 - phi) * sum_{i<=depth} r_i phi^(i-1). No residual is added.
inline double rbp(std::span<const int> rel, int depth, double phi) {
  if (!(phi > 0.0 && phi < 1.0)) throw ValidationError("rbp: phi must lie in (0, 1)");
  double sum = 0.0;
  double w = 1.0;
  for (std::size_t i = 0; i < rel.size() && i < static_cast<std::size_t>(depth); ++i) {
    if (rel[i]) sum += w;
    w *= phi;
  }
  return (1.0 - phi) * sum;
}

/// Precision at each relevant rank within depth, summed, over the total
/// number of relevant documents for the topic. Zero when there are none.
inline double average_precision(std::span<const int> rel, int depth, std::size_t total_relevant) {
  if (total_relevant == 0) return 0.0;
  double sum = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < rel.size() && i < static_cast<std::size_t>(depth); ++i) {
    if (rel[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total_relevant);
}

struct QueryScoreVector {
  MetricSpec metric;
  std::string run;
  std::string labels;  ///< label source tag
  std::map<int, double> scores;

  double mean() const {
    if (scores.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [t, v] : scores) s += v;
    return s / static_cast<double>(scores.size());
  }
};

/// Score one topic of a run.
inline double score_topic(std::span<const Posting> ranking, const LabelSet& labels, int topic,
                          const MetricSpec& metric, std::size_t total_relevant, double threshold = 1.0) {
  const auto rel = relevance_vector(ranking, labels, topic, metric.depth, threshold);
  switch (metric.kind) {
    case MetricSpec::Kind::precision: return precision_at_k(rel, metric.depth);
    case MetricSpec::Kind::rbp: return rbp(rel, metric.depth, metric.phi);
    case MetricSpec::Kind::ap: return average_precision(rel, metric.depth, total_relevant);
  }
  return 0.0;
}

/// Per-topic scores for `topics` (or the run's own topics when empty).
/// A requested topic the run lacks is an error in strict mode and otherwise
/// skipped with a warning.
inline QueryScoreVector score_run(const Run& run, const LabelSet& labels, const MetricSpec& metric,
                                  const std::vector<int>& topics = {}, bool strict = false,
                                  double threshold = 1.0, Diagnostics* diag = nullptr) {
  if (run.ranking.empty()) throw ValidationError("score_run: run " + run.tag + " is empty");
  QueryScoreVector out{metric, run.tag, labels.source(), {}};
  const auto relevant = labels.relevant_counts(threshold);
  auto score_one = [&](int topic, std::span<const Posting> ranking) {
    auto r = relevant.find(topic);
    out.scores[topic] = score_topic(ranking, labels, topic, metric, r == relevant.end() ? 0 : r->second, threshold);
  };
  if (topics.empty()) {
    for (const auto& [topic, ranking] : run.ranking) score_one(topic, ranking);
    return out;
  }
  for (int topic : topics) {
    auto it = run.ranking.find(topic);
    if (it == run.ranking.end()) {
      if (strict) throw ValidationError("run " + run.tag + " has no ranking for topic " + std::to_string(topic));
      warn(diag, "run " + run.tag + " has no ranking for topic " + std::to_string(topic) + "; skipped");
      continue;
    }
    score_one(topic, it->second);
  }
  return out;
}

/// CSV rows `metric,run,topic,score`.
inline std::string format_query_scores(const std::vector<QueryScoreVector>& vectors, bool header = true) {
  std::string out = header ? "metric,run,topic,score\n" : "";
  for (const auto& v : vectors)
    for (const auto& [topic, s] : v.scores)
      out += "\"" + v.metric.name() + "\"," + v.run + "," + std::to_string(topic) + "," + detail::format_double(s) + "\n";
  return out;
}

}  // namespace reljudge
