#pragma once

// Synthetic TREC-style collection for smoke tests and dry runs: topics,
// graded qrels, a document archive, grouped runs of varying quality, a
// paraphrase bank and a manifest that ties them together.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reljudge/common.hpp"
#include "reljudge/trec.hpp"

namespace reljudge::fixture {

struct Config {
  int topics = 50;
  int first_topic = 401;
  /// Judged documents per topic for grades 0, 1 and 2.
  std::array<int, 3> per_grade{40, 25, 25};
  int groups = 6;
  int runs_per_group = 2;
  int depth = 100;
  int paraphrases = 42;
  std::uint64_t seed = 7;
};

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "river",   "energy",  "policy",   "market",  "health", "climate", "archive", "school",  "orbit",
      "harbor",  "vaccine", "election", "coral",   "railway", "tariff", "glacier", "museum",  "drought",
      "satellite", "bridge", "forest",  "pension", "opera",  "volcano", "patent",  "wheat",   "airport",
      "copper",  "census",  "lantern",  "treaty",  "canyon", "fossil",  "reactor", "ferry",   "orchard"};
  return words;
}

inline std::string doc_id(int topic, int grade, int i) {
  return "FX" + std::to_string(topic) + "-g" + std::to_string(grade) + "-" + std::to_string(i);
}

inline std::string topic_title(int topic) {
  const auto& v = vocabulary();
  const auto t = static_cast<std::size_t>(topic);
  return v[t % v.size()] + " " + v[(t * 7 + 3) % v.size()];
}

/// Unique text per document; relevant documents mention the topic words.
inline std::string doc_text(int topic, int grade, int i, std::mt19937_64& rng) {
  const auto& v = vocabulary();
  std::string s = "Page " + doc_id(topic, grade, i) + ". ";
  const auto sentences = 2 + static_cast<int>(detail::uniform_index(rng, 8));
  for (int k = 0; k < sentences; ++k) {
    if (grade > 0 && k % (3 - grade) == 0) s += "This page discusses " + topic_title(topic) + " in detail. ";
    for (int w = 0; w < 8; ++w) s += v[detail::uniform_index(rng, v.size())] + (w == 7 ? ". " : " ");
  }
  return s;
}

struct Paths {
  std::filesystem::path root, topics, qrels, runs, docs, groups, paraphrases, manifest;
};

/// Write the collection under `root` and return the file locations. The
/// manifest uses the mock judge and writes to root/out.
inline Paths write(const std::filesystem::path& root, const Config& cfg = {},
                   const nlohmann::json& manifest_overrides = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  Paths p;
  p.root = root;
  p.topics = root / "topics.txt";
  p.qrels = root / "qrels.txt";
  p.runs = root / "runs";
  p.docs = root / "docs.dat";
  p.groups = root / "groups.json";
  p.paraphrases = root / "paraphrases.json";
  p.manifest = root / "manifest.json";
  fs::create_directories(p.runs);
  std::mt19937_64 rng(cfg.seed);

  std::string topics, qrels;
  std::map<std::string, std::string> docs;
  std::map<int, std::vector<std::pair<std::string, int>>> judged;
  for (int t = cfg.first_topic; t < cfg.first_topic + cfg.topics; ++t) {
    topics += "<top>\n<num> Number: " + std::to_string(t) + "\n<title> " + topic_title(t) + "\n<desc> Description:\n" +
              "Find pages about " + topic_title(t) + ".\n<narr> Narrative:\nPages that describe " + topic_title(t) +
              " are relevant; passing mentions are partly relevant.\n</top>\n\n";
    for (int g = 0; g < 3; ++g)
      for (int i = 0; i < cfg.per_grade[static_cast<std::size_t>(g)]; ++i) {
        const auto id = doc_id(t, g, i);
        qrels += std::to_string(t) + " 0 " + id + " " + std::to_string(g) + "\n";
        docs[id] = doc_text(t, g, i, rng);
        judged[t].emplace_back(id, g);
      }
  }
  detail::write_file_atomic(p.topics, topics);
  detail::write_file_atomic(p.qrels, qrels);
  DocumentStore::write_archive(p.docs, docs);

  // Runs: score = quality * grade + noise; some unjudged documents mixed in.
  nlohmann::json groups = nlohmann::json::object();
  for (int g = 0; g < cfg.groups; ++g)
    for (int r = 0; r < cfg.runs_per_group; ++r) {
      const auto tag = "grp" + std::to_string(g) + "run" + std::to_string(r);
      groups[tag] = "group" + std::to_string(g);
      const double quality = 0.3 + 0.25 * g + 0.1 * r;
      std::string body;
      for (const auto& [t, docs_t] : judged) {
        std::vector<std::pair<double, std::string>> scored;
        for (const auto& [id, grade] : docs_t) scored.emplace_back(quality * grade + 2.0 * detail::uniform_unit(rng), id);
        for (int u = 0; u < 15; ++u)
          scored.emplace_back(1.5 * detail::uniform_unit(rng), "FX" + std::to_string(t) + "-u" + std::to_string(u));
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
          return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (int k = 0; k < cfg.depth && k < static_cast<int>(scored.size()); ++k)
          body += std::to_string(t) + " Q0 " + scored[static_cast<std::size_t>(k)].second + " " + std::to_string(k + 1) +
                  " " + detail::format_fixed(scored[static_cast<std::size_t>(k)].first, 6) + " " + tag + "\n";
      }
      detail::write_file_atomic(p.runs / (tag + ".run"), body);
    }
  detail::write_file_atomic(p.groups, groups.dump(2) + "\n");

  nlohmann::json bank = nlohmann::json::array();
  static const std::vector<std::string> openers = {"Rate", "Judge", "Score", "Assess", "Grade", "Evaluate"};
  static const std::vector<std::string> tones = {"carefully", "as an expert", "as a search rater", "objectively",
                                                 "strictly", "fairly", "thoughtfully"};
  for (int i = 0; i < cfg.paraphrases; ++i) {
    const auto& o = openers[static_cast<std::size_t>(i) % openers.size()];
    const auto& tone = tones[static_cast<std::size_t>(i / static_cast<int>(openers.size())) % tones.size()];
    const auto id = std::string(i + 1 < 10 ? "p0" : "p") + std::to_string(i + 1);
    bank.push_back({{"id", id},
                    {"instruction_text", o + " the web page " + tone +
                                             " on a scale of 0 to 2: 2 = highly relevant, 1 = relevant, 0 = not relevant."},
                    {"steps_text", "Work through these steps:\n\nThink about what the searcher wants.\n\n"
                                   "{aspects}{final}\n\n{multiple}Answer with a JSON array of scores only."}});
  }
  detail::write_file_atomic(p.paraphrases, bank.dump(2) + "\n");

  nlohmann::json manifest = {
      {"seed", cfg.seed},
      {"corpus", {{"topics", "topics.txt"}, {"qrels", "qrels.txt"}, {"runs", "runs"}, {"docs", "docs.dat"},
                  {"docs_kind", "archive"}, {"groups", "groups.json"}}},
      {"sample", {{"n_per_grade", 100}}},
      {"prompts", {{"specs", {"all", "paraphrases"}}, {"paraphrases", "paraphrases.json"}}},
      {"judge", {{"use_mock", true}, {"cache", "cache"}, {"concurrency", 2}, {"mock", {{"flip_rate", 0.2}}}}},
      {"analysis", {{"split", {{"iterations", 200}}}}},
      {"output", "out"}};
  manifest.merge_patch(manifest_overrides);
  detail::write_file_atomic(p.manifest, manifest.dump(2) + "\n");
  return p;
}

}  // namespace reljudge::fixture
