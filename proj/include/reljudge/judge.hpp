#pragma once

// Scoring-endpoint client: decoding parameters, content-addressed response
// cache, retrying transport, lenient JSON score parsing and aggregation.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "reljudge/common.hpp"
#include "reljudge/prompt.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

struct DecodingParams {
  std::string model = "gpt-4";
  double temperature = 0.0;
  double top_p = 1.0;
  double frequency_penalty = 0.5;
  double presence_penalty = 0.0;
  std::vector<std::string> stop;  ///< empty: no stop sequences

  bool operator==(const DecodingParams&) const = default;
};

inline void to_json(nlohmann::json& j, const DecodingParams& p) {
  j = nlohmann::json{{"model", p.model},
                     {"temperature", p.temperature},
                     {"top_p", p.top_p},
                     {"frequency_penalty", p.frequency_penalty},
                     {"presence_penalty", p.presence_penalty}};
  if (!p.stop.empty()) j["stop"] = p.stop;
}

inline void from_json(const nlohmann::json& j, DecodingParams& p) {
  p = DecodingParams{};
  p.model = j.value("model", p.model);
  p.temperature = j.value("temperature", p.temperature);
  p.top_p = j.value("top_p", p.top_p);
  p.frequency_penalty = j.value("frequency_penalty", p.frequency_penalty);
  p.presence_penalty = j.value("presence_penalty", p.presence_penalty);
  if (j.contains("stop") && !j["stop"].is_null()) p.stop = j["stop"].get<std::vector<std::string>>();
}

struct JudgeRequest {
  std::string prompt;
  PromptProvenance provenance;
  DecodingParams params;

  /// Chat-completion style request body.
  nlohmann::json body() const {
    nlohmann::json j = params;
    j["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    return j;
  }

  /// Cache key: SHA-256 over model, decoding parameters and prompt bytes.
  std::string cache_key() const {
    nlohmann::json j = params;
    j["prompt"] = prompt;
    return sha256_hex(j.dump());
  }
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Transport to a scoring endpoint. Implementations must be safe to call
/// from several threads at once.
class Endpoint {
public:
  virtual ~Endpoint() = default;
  /// Throws on transport failure; HTTP errors are returned as a status.
  virtual HttpResponse post(const JudgeRequest& request) = 0;
};

class JudgeError : public Error {
public:
  JudgeError(std::string kind, const std::string& what, std::optional<int> status,
             std::vector<std::string> attempts)
      : Error(std::move(kind), what), status_(status), attempts_(std::move(attempts)) {}
  std::optional<int> status() const { return status_; }
  const std::vector<std::string>& attempts() const { return attempts_; }

private:
  std::optional<int> status_;
  std::vector<std::string> attempts_;
};

/// Pull the generated text out of a chat-completion response body. Bodies
/// that are not completion JSON are returned unchanged.
inline std::string extract_content(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty())
    return body;
  const auto& c = j["choices"][0];
  if (c.contains("message") && c["message"].is_object() && c["message"].contains("content") &&
      c["message"]["content"].is_string())
    return c["message"]["content"].get<std::string>();
  if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
  return body;
}

inline std::string completion_body(std::string_view content, std::string_view model) {
  nlohmann::json j{{"object", "chat.completion"},
                   {"model", model},
                   {"choices", nlohmann::json::array({{{"index", 0},
                                                       {"message", {{"role", "assistant"}, {"content", content}}},
                                                       {"finish_reason", "stop"}}})}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Cache

struct CachedResponse {
  std::string key;
  std::string body;
  std::string content;
};

/// Directory of `<sha256>.json` files, one per request. Each file holds the
/// request metadata and the verbatim response body. Writes go through a
/// temporary file and rename, so readers never see partial entries.
class ResponseCache {
public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  std::optional<CachedResponse> get(const std::string& key) const {
    const auto p = path_for(key);
    if (!std::filesystem::is_regular_file(p)) return std::nullopt;
    auto j = nlohmann::json::parse(detail::read_file(p), nullptr, false);
    if (j.is_discarded() || !j.contains("response") || !j["response"].is_string()) return std::nullopt;
    CachedResponse r;
    r.key = key;
    r.body = j["response"].get<std::string>();
    r.content = extract_content(r.body);
    return r;
  }

  void put(const JudgeRequest& req, const std::string& key, const std::string& body) const {
    nlohmann::json j{{"key", key},
                     {"params", req.params},
                     {"prompt_sha256", sha256_hex(req.prompt)},
                     {"spec", req.provenance.spec.id()},
                     {"topic", req.provenance.topic},
                     {"doc", req.provenance.doc},
                     {"response", body}};
    auto tmp = path_for(key);
    tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("io_error", "cannot write cache entry " + tmp.string());
      out << j.dump(1) << '\n';
    }
    std::filesystem::rename(tmp, path_for(key));
  }

private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Client

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
};

struct JudgeResult {
  std::string key;
  std::string body;     ///< verbatim endpoint response
  std::string content;  ///< generated text
  bool from_cache = false;
  int attempts = 0;
};

class JudgeClient {
public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  JudgeClient(Endpoint& endpoint, const ResponseCache* cache, RetryPolicy retry = {},
              Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
      : endpoint_(endpoint), cache_(cache), retry_(retry), sleep_(std::move(sleeper)) {}

  /// Cache hits never touch the endpoint. Retries 429/5xx statuses and
  /// transport exceptions with exponential backoff; other statuses fail
  /// immediately.
  JudgeResult judge(const PromptText& prompt, const DecodingParams& params) {
    JudgeRequest req{prompt.text, prompt.provenance, params};
    JudgeResult out;
    out.key = req.cache_key();
    if (cache_) {
      if (auto hit = cache_->get(out.key)) {
        out.body = std::move(hit->body);
        out.content = std::move(hit->content);
        out.from_cache = true;
        return out;
      }
    }
    std::vector<std::string> log;
    std::optional<int> last_status;
    auto delay = retry_.base_delay;
    const int attempts = std::max(1, retry_.max_attempts);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      out.attempts = attempt;
      calls_.fetch_add(1, std::memory_order_relaxed);
      try {
        auto resp = endpoint_.post(req);
        if (resp.status >= 200 && resp.status < 300) {
          out.body = std::move(resp.body);
          out.content = extract_content(out.body);
          if (cache_) cache_->put(req, out.key, out.body);
          return out;
        }
        last_status = resp.status;
        log.push_back("attempt " + std::to_string(attempt) + ": HTTP " + std::to_string(resp.status));
        const bool retryable = resp.status == 429 || resp.status >= 500;
        if (!retryable)
          throw JudgeError("http_error", "endpoint returned HTTP " + std::to_string(resp.status),
                           last_status, log);
      } catch (const JudgeError&) {
        throw;
      } catch (const std::exception& e) {
        last_status.reset();
        log.push_back("attempt " + std::to_string(attempt) + ": " + e.what());
      }
      if (attempt < attempts) {
        sleep_(delay);
        delay = std::chrono::milliseconds(static_cast<long long>(delay.count() * retry_.multiplier));
      }
    }
    if (last_status)
      throw JudgeError("http_error",
                       "endpoint returned HTTP " + std::to_string(*last_status) + " after " +
                           std::to_string(attempts) + " attempts",
                       last_status, log);
    throw JudgeError("transport_error", "endpoint unreachable after " + std::to_string(attempts) + " attempts",
                     std::nullopt, log);
  }

  /// Endpoint calls made by this client (cache hits excluded).
  std::size_t network_calls() const { return calls_.load(); }

private:
  Endpoint& endpoint_;
  const ResponseCache* cache_;
  RetryPolicy retry_;
  Sleeper sleep_;
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Response parsing

struct JudgeRecord {
  std::optional<int> topicality;       ///< "M"
  std::optional<int> trustworthiness;  ///< "T"
  int overall = 0;                     ///< "O"
  bool operator==(const JudgeRecord&) const = default;
};

struct ParsedResponse {
  std::vector<JudgeRecord> records;
  bool parseable = false;
  std::string reason;  ///< why it was unparseable
  std::vector<std::string> warnings;
};

namespace detail {

/// Length of the balanced JSON array starting at s[0] == '[', or npos.
inline std::size_t balanced_array_length(std::string_view s) {
  if (s.empty() || s[0] != '[') return std::string_view::npos;
  int depth = 0;
  bool in_string = false;
  bool escape = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escape) escape = false;
      else if (c == '\\') escape = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '[' || c == '{') ++depth;
    else if (c == ']' || c == '}') {
      if (--depth == 0) return c == ']' ? i + 1 : std::string_view::npos;
      if (depth < 0) return std::string_view::npos;
    }
  }
  return std::string_view::npos;
}

inline std::optional<int> grade_value(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 1e6) return static_cast<int>(d);
  }
  if (v.is_string()) return parse_number<int>(trim(v.get_ref<const std::string&>()));
  return std::nullopt;
}

}  // namespace detail

/// Parse a model response into judge records. The prompt ends with the
/// primer "[{", so the response usually continues mid-array; the primer is
/// re-attached when missing and trailing prose after the first balanced
/// array is ignored. Never throws: failure is reported as !parseable.
inline ParsedResponse parse_response(std::string_view raw, bool expect_aspects, int expect_count) {
  ParsedResponse out;
  const auto s = detail::trim(raw);
  std::vector<std::string> candidates;
  if (!s.empty() && s.front() == '[') candidates.emplace_back(s);
  else if (!s.empty() && s.front() == '{') candidates.push_back("[" + std::string(s));
  else candidates.push_back("[{" + std::string(s));
  if (auto at = s.find('['); at != std::string_view::npos && at != 0) candidates.emplace_back(s.substr(at));

  std::optional<nlohmann::json> doc;
  for (const auto& c : candidates) {
    const auto len = detail::balanced_array_length(c);
    if (len == std::string_view::npos) continue;
    auto j = nlohmann::json::parse(std::string_view(c).substr(0, len), nullptr, false);
    if (j.is_discarded()) continue;
    if (len < c.size() && !detail::trim(std::string_view(c).substr(len)).empty())
      out.warnings.push_back("ignored trailing text after score array");
    doc = std::move(j);
    break;
  }
  if (!doc) {
    out.reason = "no JSON array found";
    return out;
  }
  if (!doc->is_array() || doc->empty()) {
    out.reason = "empty score array";
    return out;
  }
  for (std::size_t i = 0; i < doc->size(); ++i) {
    const auto& item = (*doc)[i];
    const auto where = "record " + std::to_string(i);
    if (!item.is_object()) {
      out.reason = where + " is not an object";
      return out;
    }
    if (!item.contains("O")) {
      out.reason = where + " has no O score";
      return out;
    }
    auto o = detail::grade_value(item["O"]);
    if (!o || *o < 0 || *o > 2) {
      out.reason = where + " has O outside 0..2";
      return out;
    }
    JudgeRecord rec;
    rec.overall = *o;
    for (auto [key, slot] : {std::pair{"M", &rec.topicality}, std::pair{"T", &rec.trustworthiness}}) {
      if (!item.contains(key)) {
        if (expect_aspects) out.warnings.push_back(where + " lacks " + key);
        continue;
      }
      auto v = detail::grade_value(item[key]);
      if (!v || *v < 0 || *v > 2) {
        out.warnings.push_back(where + " has invalid " + key + "; ignored");
        continue;
      }
      if (!expect_aspects) {
        out.warnings.push_back(where + " has unexpected " + key + "; ignored");
        continue;
      }
      *slot = *v;
    }
    out.records.push_back(rec);
  }
  if (expect_count > 0 && static_cast<int>(out.records.size()) != expect_count)
    out.warnings.push_back("expected " + std::to_string(expect_count) + " records, got " +
                           std::to_string(out.records.size()));
  out.parseable = true;
  return out;
}

/// Mean overall score. Aspect scores are diagnostics only.
inline double aggregate(const std::vector<JudgeRecord>& records) {
  if (records.empty()) throw ValidationError("aggregate: no judge records");
  double sum = 0.0;
  for (const auto& r : records) sum += r.overall;
  return sum / static_cast<double>(records.size());
}

/// Fraction of records that call the document relevant (O >= threshold).
inline double relevant_fraction(const std::vector<JudgeRecord>& records, double threshold = 1.0) {
  if (records.empty()) throw ValidationError("relevant_fraction: no judge records");
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.overall >= threshold) ++n;
  return static_cast<double>(n) / static_cast<double>(records.size());
}

inline int binarize(double score, double threshold = 1.0) { return score >= threshold ? 1 : 0; }

/// Outcome of labelling one (topic, document) pair with one prompt.
struct LabelOutcome {
  std::optional<double> score;  ///< empty when unparseable
  std::optional<double> relevant_fraction;
  std::string raw;
  std::vector<JudgeRecord> records;
  std::string reason;

  bool parseable() const { return score.has_value(); }
};

inline LabelOutcome score_response(std::string raw, const PromptSpec& spec, double threshold = 1.0) {
  LabelOutcome out;
  auto parsed = parse_response(raw, spec.has(kAspects), spec.judge_count);
  out.raw = std::move(raw);
  if (!parsed.parseable) {
    out.reason = parsed.reason;
    return out;
  }
  out.records = std::move(parsed.records);
  out.score = aggregate(out.records);
  out.relevant_fraction = relevant_fraction(out.records, threshold);
  return out;
}

struct DropStats {
  std::size_t total = 0;
  std::size_t dropped = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(dropped) / static_cast<double>(total); }
  void add(bool parseable) {
    ++total;
    if (!parseable) ++dropped;
  }
};

// ---------------------------------------------------------------------------
// Mock endpoint

/// How the mock corrupts gold grades.
enum class FlipMode {
  /// Flip the binarised class: relevant becomes 0, non-relevant becomes a
  /// uniformly chosen relevant grade. flip_rate 0.5 makes output independent
  /// of gold; 1.0 inverts it.
  binary,
  /// Replace the grade with a uniformly chosen different grade on 0..max.
  grade,
};

struct MockConfig {
  double flip_rate = 0.0;
  std::uint64_t seed = 0;
  FlipMode mode = FlipMode::binary;
  int max_grade = 2;
  /// Emit the response as a continuation of the "[{" primer.
  bool continue_primer = true;
};

/// Deterministic stand-in for a scoring model: answers with the gold grade
/// for the requested pair, corrupted with probability flip_rate. Each
/// judgement draws from its own derived seed, so answers do not depend on
/// request order or concurrency.
class MockEndpoint : public Endpoint {
public:
  MockEndpoint(LabelSet gold, MockConfig cfg) : gold_(std::move(gold)), cfg_(cfg) {}

  HttpResponse post(const JudgeRequest& req) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return {200, completion_body(content_for(req.provenance), req.params.model)};
  }

  std::string content_for(const PromptProvenance& p) const {
    auto g = gold_.find(p.topic, p.doc);
    if (!g) return "I am unable to assess this page.";
    const bool aspects = p.spec.has(kAspects);
    std::string s = "[";
    for (int i = 0; i < p.spec.judge_count; ++i) {
      const int grade = judged_grade(static_cast<int>(*g), p, i);
      if (i) s += ", ";
      s += aspects ? R"({"M": )" + std::to_string(grade) + R"(, "T": )" + std::to_string(grade) +
                         R"(, "O": )" + std::to_string(grade) + "}"
                   : R"({"O": )" + std::to_string(grade) + "}";
    }
    s += "]";
    if (cfg_.continue_primer) s.erase(0, 2);  // the prompt already ends with "[{"
    return s;
  }

  std::size_t calls() const { return calls_.load(); }
  const MockConfig& config() const { return cfg_; }

private:
  int judged_grade(int gold, const PromptProvenance& p, int judge) const {
    std::uint64_t stream = detail::fnv1a(p.doc, detail::fnv1a(std::to_string(p.topic)));
    stream = detail::fnv1a(p.spec.id(), stream);
    stream = detail::mix64(stream + static_cast<std::uint64_t>(judge));
    std::mt19937_64 rng(detail::derive_seed(cfg_.seed, stream));
    if (detail::uniform_unit(rng) >= cfg_.flip_rate) return gold;
    if (cfg_.mode == FlipMode::binary) {
      if (gold >= 1) return 0;
      return 1 + static_cast<int>(detail::uniform_index(rng, static_cast<std::uint64_t>(cfg_.max_grade)));
    }
    int other = static_cast<int>(detail::uniform_index(rng, static_cast<std::uint64_t>(cfg_.max_grade)));
    return other >= gold ? other + 1 : other;
  }

  LabelSet gold_;
  MockConfig cfg_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace reljudge
