#pragma once

// Experiment manifest: one JSON file holding every path and tunable of a
// labelling study. Relative paths resolve against the manifest's directory.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reljudge/agreement.hpp"
#include "reljudge/common.hpp"
#include "reljudge/effectiveness.hpp"
#include "reljudge/judge.hpp"
#include "reljudge/prompt.hpp"
#include "reljudge/stats.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

struct Manifest {
  std::filesystem::path path;
  std::filesystem::path base_dir;
  std::string sha256;  ///< of the manifest bytes

  // corpus
  std::filesystem::path topics;
  std::filesystem::path qrels;
  std::filesystem::path runs_dir;
  std::map<std::string, std::string> groups;  ///< run tag -> group
  std::string docs_kind = "archive";          ///< archive | directory
  std::filesystem::path docs;
  std::size_t doc_budget = DocumentStore::kDefaultBudget;

  // sample
  std::size_t n_per_grade = 1000;
  std::uint64_t seed = 0;
  std::uint64_t sample_seed = 0;

  // prompts
  std::vector<std::string> specs;  ///< as written: labels, ids, "all", "paraphrases"
  std::optional<std::filesystem::path> paraphrases;
  std::string paraphrase_base = "-DNA-";
  std::string baseline = "-----";
  int judge_count = kDefaultJudgeCount;

  // judge
  std::string endpoint;
  std::string token_env = "RELJUDGE_API_TOKEN";
  DecodingParams params;
  int concurrency = 4;
  std::optional<std::filesystem::path> cache_dir;
  RetryPolicy retry;
  int timeout_seconds = 120;
  bool use_mock = false;
  MockConfig mock;

  // analysis
  double threshold = 1.0;
  MaeMode mae_mode = MaeMode::fractional;
  BootstrapConfig bootstrap;
  std::vector<MetricSpec> metrics = {MetricSpec::precision(10), MetricSpec::rbp(100, 0.6), MetricSpec::ap(100)};
  double phi_query = 0.9;
  double phi_system = 0.7;
  std::size_t split_iterations = 1000;
  std::uint64_t split_seed = 0;
  std::string consistency_prompt = "-DNA-";
  std::string consistency_gold = "sample";  ///< sample | full

  std::filesystem::path out;

  /// Replace every seed with `s` (command-line override).
  void override_seed(std::uint64_t s) {
    seed = sample_seed = split_seed = mock.seed = bootstrap.seed = s;
  }

  nlohmann::json seeds_json() const {
    return {{"seed", seed},
            {"sample", sample_seed},
            {"bootstrap", bootstrap.seed},
            {"split", split_seed},
            {"mock", mock.seed}};
  }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest field '") + key + "': " + e.what());
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw ValidationError(std::string("manifest section '") + key + "' must be an object");
  return j[key];
}

}  // namespace detail

/// Parse and validate a manifest; all referenced input paths must exist.
inline Manifest parse_manifest(std::string_view text, const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("manifest " + path.string() + " is not a JSON object");
  Manifest m;
  m.path = path;
  m.base_dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  m.sha256 = sha256_hex(text);
  const auto& base = m.base_dir;

  if (!j.contains("seed") || !j["seed"].is_number_integer())
    throw ValidationError("manifest must set an explicit integer 'seed'");
  m.seed = j["seed"].get<std::uint64_t>();

  const auto& corpus = detail::section(j, "corpus");
  for (const char* key : {"topics", "qrels", "runs", "docs"})
    if (!corpus.contains(key)) throw ValidationError(std::string("manifest corpus is missing '") + key + "'");
  m.topics = detail::resolve(base, corpus["topics"].get<std::string>());
  m.qrels = detail::resolve(base, corpus["qrels"].get<std::string>());
  m.runs_dir = detail::resolve(base, corpus["runs"].get<std::string>());
  m.docs = detail::resolve(base, corpus["docs"].get<std::string>());
  m.docs_kind = detail::get_or<std::string>(corpus, "docs_kind", "archive");
  m.doc_budget = detail::get_or<std::size_t>(corpus, "doc_budget", m.doc_budget);
  if (corpus.contains("groups")) {
    const auto& g = corpus["groups"];
    if (g.is_string()) {
      auto gj = nlohmann::json::parse(detail::read_file(detail::resolve(base, g.get<std::string>())), nullptr, false);
      if (gj.is_discarded() || !gj.is_object()) throw ParseError("group mapping file is not a JSON object");
      m.groups = gj.get<std::map<std::string, std::string>>();
    } else {
      m.groups = detail::get_or<std::map<std::string, std::string>>(corpus, "groups", {});
    }
  }

  const auto& sample = detail::section(j, "sample");
  m.n_per_grade = detail::get_or<std::size_t>(sample, "n_per_grade", m.n_per_grade);
  m.sample_seed = detail::get_or<std::uint64_t>(sample, "seed", m.seed);

  const auto& prompts = detail::section(j, "prompts");
  m.specs = detail::get_or<std::vector<std::string>>(prompts, "specs", {"all"});
  if (prompts.contains("paraphrases") && !prompts["paraphrases"].is_null())
    m.paraphrases = detail::resolve(base, prompts["paraphrases"].get<std::string>());
  m.paraphrase_base = detail::get_or<std::string>(prompts, "paraphrase_base", m.paraphrase_base);
  m.baseline = detail::get_or<std::string>(prompts, "baseline", m.baseline);
  m.judge_count = detail::get_or<int>(prompts, "judge_count", m.judge_count);

  const auto& judge = detail::section(j, "judge");
  m.endpoint = detail::get_or<std::string>(judge, "endpoint", "");
  m.token_env = detail::get_or<std::string>(judge, "token_env", m.token_env);
  if (judge.contains("params")) {
    nlohmann::json merged = m.params;
    merged.update(judge["params"]);
    m.params = merged.get<DecodingParams>();
  }
  m.concurrency = detail::get_or<int>(judge, "concurrency", m.concurrency);
  if (judge.contains("cache") && !judge["cache"].is_null())
    m.cache_dir = detail::resolve(base, judge["cache"].get<std::string>());
  const auto& retry = detail::section(judge, "retry");
  m.retry.max_attempts = detail::get_or<int>(retry, "max_attempts", m.retry.max_attempts);
  m.retry.base_delay = std::chrono::milliseconds(detail::get_or<long long>(retry, "base_delay_ms", 500));
  m.retry.multiplier = detail::get_or<double>(retry, "multiplier", m.retry.multiplier);
  m.timeout_seconds = detail::get_or<int>(judge, "timeout_seconds", m.timeout_seconds);
  const auto& mock = detail::section(judge, "mock");
  m.use_mock = detail::get_or<bool>(judge, "use_mock", false);
  m.mock.flip_rate = detail::get_or<double>(mock, "flip_rate", 0.0);
  m.mock.seed = detail::get_or<std::uint64_t>(mock, "seed", m.seed);
  const auto mode = detail::get_or<std::string>(mock, "mode", "binary");
  if (mode == "binary") m.mock.mode = FlipMode::binary;
  else if (mode == "grade") m.mock.mode = FlipMode::grade;
  else throw ValidationError("manifest judge.mock.mode must be 'binary' or 'grade'");

  const auto& analysis = detail::section(j, "analysis");
  m.threshold = detail::get_or<double>(analysis, "threshold", m.threshold);
  const auto mae = detail::get_or<std::string>(analysis, "mae", "fractional");
  if (mae == "fractional") m.mae_mode = MaeMode::fractional;
  else if (mae == "hard") m.mae_mode = MaeMode::hard;
  else throw ValidationError("manifest analysis.mae must be 'fractional' or 'hard'");
  const auto& boot = detail::section(analysis, "bootstrap");
  m.bootstrap.n_resamples = detail::get_or<int>(boot, "n_resamples", m.bootstrap.n_resamples);
  m.bootstrap.level = detail::get_or<double>(boot, "level", m.bootstrap.level);
  m.bootstrap.seed = detail::get_or<std::uint64_t>(boot, "seed", m.seed);
  if (analysis.contains("metrics")) {
    m.metrics.clear();
    for (const auto& s : analysis["metrics"].get<std::vector<std::string>>()) m.metrics.push_back(MetricSpec::parse(s));
  }
  m.phi_query = detail::get_or<double>(analysis, "phi_query", m.phi_query);
  m.phi_system = detail::get_or<double>(analysis, "phi_system", m.phi_system);
  const auto& split = detail::section(analysis, "split");
  m.split_iterations = detail::get_or<std::size_t>(split, "iterations", m.split_iterations);
  m.split_seed = detail::get_or<std::uint64_t>(split, "seed", m.seed);
  m.consistency_prompt = detail::get_or<std::string>(analysis, "consistency_prompt", m.consistency_prompt);
  m.consistency_gold = detail::get_or<std::string>(analysis, "consistency_gold", m.consistency_gold);

  m.out = detail::resolve(base, detail::get_or<std::string>(j, "output", "out"));

  // Validation.
  for (const auto& [name, p] : {std::pair{"topics", m.topics}, std::pair{"qrels", m.qrels}})
    if (!std::filesystem::is_regular_file(p)) throw ValidationError(std::string("manifest ") + name + " file " + p.string() + " does not exist");
  if (!std::filesystem::is_directory(m.runs_dir)) throw ValidationError("manifest runs directory " + m.runs_dir.string() + " does not exist");
  if (m.docs_kind != "archive" && m.docs_kind != "directory")
    throw ValidationError("manifest corpus.docs_kind must be 'archive' or 'directory'");
  if (!std::filesystem::exists(m.docs)) throw ValidationError("manifest docs " + m.docs.string() + " does not exist");
  if (m.paraphrases && !std::filesystem::is_regular_file(*m.paraphrases))
    throw ValidationError("manifest paraphrase bank " + m.paraphrases->string() + " does not exist");
  if (m.concurrency < 1) throw ValidationError("manifest judge.concurrency must be >= 1");
  if (m.doc_budget < 1) throw ValidationError("manifest corpus.doc_budget must be >= 1");
  if (!(m.threshold > 0.0 && m.threshold <= 2.0)) throw ValidationError("manifest analysis.threshold must lie in (0, 2]");
  if (!(m.mock.flip_rate >= 0.0 && m.mock.flip_rate <= 1.0)) throw ValidationError("manifest judge.mock.flip_rate must lie in [0, 1]");
  if (m.consistency_gold != "sample" && m.consistency_gold != "full")
    throw ValidationError("manifest analysis.consistency_gold must be 'sample' or 'full'");
  m.bootstrap.validate();
  PromptSpec::parse(m.baseline);
  PromptSpec::parse(m.paraphrase_base);
  PromptSpec::parse(m.consistency_prompt);
  if (m.specs.empty()) throw ValidationError("manifest prompts.specs is empty");
  for (double phi : {m.phi_query, m.phi_system})
    if (!(phi > 0.0 && phi < 1.0)) throw ValidationError("manifest RBO persistence must lie in (0, 1)");
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ValidationError("manifest " + path.string() + " not found");
  return parse_manifest(detail::read_file(path), path);
}

}  // namespace reljudge
