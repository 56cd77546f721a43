#pragma once

// Experiment commands: label a stratified sample under a set of prompts,
// then derive agreement, feature-effect, paraphrase-spread, consistency and
// split-selection reports from the stored labels. Every file written is a
// pure function of the manifest, the response cache and the seeds.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "reljudge/agreement.hpp"
#include "reljudge/consistency.hpp"
#include "reljudge/effectiveness.hpp"
#include "reljudge/http_endpoint.hpp"
#include "reljudge/judge.hpp"
#include "reljudge/manifest.hpp"
#include "reljudge/prompt.hpp"
#include "reljudge/stats.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

/// Fixed-width plain-text table; the first row is the header.
inline std::string text_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return {};
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::string out;
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) s += "  ";
      s += r[i];
      if (i + 1 < r.size()) s.append(width[i] - r[i].size(), ' ');
    }
    out += s + "\n";
  };
  line(rows[0]);
  std::size_t total = 0;
  for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
  out += std::string(total, '-') + "\n";
  for (std::size_t i = 1; i < rows.size(); ++i) line(rows[i]);
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline std::string csv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += csv_field(r[i]);
    }
    out += '\n';
  }
  return out;
}

inline std::string num(double v) { return format_double(v); }
inline std::string fixed(double v, int digits = 3) { return std::isnan(v) ? "n/a" : format_fixed(v, digits); }

/// JSON number, or null for NaN.
inline nlohmann::json jnum(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
inline double from_jnum(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  auto j = nlohmann::json::parse(read_file(p), nullptr, false);
  if (j.is_discarded()) throw ParseError(p.string() + " is not valid JSON");
  return j;
}

/// File-system-safe rendering of a prompt id.
inline std::string spec_file_stem(const std::string& id) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '@' || c == '.') ? c : '_';
  return s;
}

}  // namespace detail

inline nlohmann::json mock_settings_json(const MockConfig& c) {
  return {{"flip_rate", c.flip_rate},
          {"seed", c.seed},
          {"mode", c.mode == FlipMode::binary ? "binary" : "grade"},
          {"max_grade", c.max_grade}};
}

/// Fields every report carries so each number traces back to its inputs.
inline nlohmann::json provenance(const Manifest& m) {
  nlohmann::json params = m.params;
  return {{"code_version", kVersion},
          {"manifest_sha256", m.sha256},
          {"model", m.use_mock ? "mock" : m.params.model},
          {"params", params},
          {"mock", m.use_mock ? mock_settings_json(m.mock) : nlohmann::json(nullptr)},
          {"seeds", m.seeds_json()},
          {"threshold", m.threshold},
          {"bootstrap", {{"n_resamples", m.bootstrap.n_resamples}, {"level", m.bootstrap.level}}}};
}

// ---------------------------------------------------------------------------
// Prompt set

/// Expand the manifest's prompt list: labels ("-DNA-"), ids ("-DNA-@p3"),
/// "all" (the 32 templates) and "paraphrases" (paraphrase_base under every
/// bank variant). Order: canonical template order, then paraphrase id.
inline std::vector<PromptSpec> expand_specs(const Manifest& m, const std::vector<ParaphraseVariant>& bank) {
  std::set<std::string> bank_ids;
  for (const auto& v : bank) bank_ids.insert(v.id);
  std::map<std::string, PromptSpec> by_id;
  auto add = [&](PromptSpec s) {
    if (s.has(kMultiple)) s.judge_count = m.judge_count;
    s.validate();
    if (!bank_ids.count(s.paraphrase_id))
      throw ValidationError("prompt " + s.id() + " names paraphrase '" + s.paraphrase_id + "' not in the bank");
    by_id.emplace(s.id(), s);
  };
  for (const auto& entry : m.specs) {
    if (entry == "all") {
      for (auto s : enumerate_specs()) add(s);
    } else if (entry == "paraphrases") {
      const auto base = PromptSpec::parse(m.paraphrase_base);
      for (const auto& v : bank) add(PromptSpec::from_flags(base.flags, v.id));
    } else {
      add(PromptSpec::parse(entry));
    }
  }
  std::vector<PromptSpec> out;
  for (auto& [id, s] : by_id) out.push_back(s);
  std::stable_sort(out.begin(), out.end(), [](const PromptSpec& a, const PromptSpec& b) {
    const auto ia = canonical_index(a), ib = canonical_index(b);
    if (ia != ib) return ia < ib;
    if ((a.paraphrase_id == "original") != (b.paraphrase_id == "original")) return a.paraphrase_id == "original";
    return a.paraphrase_id < b.paraphrase_id;
  });
  return out;
}

inline std::vector<ParaphraseVariant> load_bank(const Manifest& m) {
  return m.paraphrases ? load_paraphrase_bank(*m.paraphrases) : std::vector<ParaphraseVariant>{original_paraphrase()};
}

// ---------------------------------------------------------------------------
// Stored labels

/// One prompt's labels over the sample.
struct PromptLabels {
  PromptSpec spec;
  std::string file;    ///< relative to the output directory
  std::string sha256;  ///< of the file bytes
  LabelSet scores;     ///< mean O score on [0, 2]; dropped items absent
  LabelSet fractions;  ///< share of judges saying relevant
  std::map<LabelKey, double> prompt_chars;
  std::size_t items = 0;
  std::size_t unparseable = 0;
  std::size_t errors = 0;

  double drop_rate() const { return items == 0 ? 0.0 : static_cast<double>(unparseable) / static_cast<double>(items); }
};

inline constexpr std::string_view kLabelHeader = "topic\tdoc\tscore\trelevant_fraction\tprompt_chars\tstatus\treason";

inline PromptLabels parse_label_file(const PromptSpec& spec, const std::string& file, std::string_view text) {
  PromptLabels out;
  out.spec = spec;
  out.file = file;
  out.sha256 = sha256_hex(text);
  out.scores = LabelSet(spec.id(), 2.0);
  out.fractions = LabelSet(spec.id(), 1.0);
  std::size_t line_no = 0;
  for (auto line : detail::split_char(text, '\n')) {
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    auto f = detail::split_char(line, '\t');
    if (f.size() != 7) throw ParseError(file + " line " + std::to_string(line_no) + ": expected 7 columns");
    auto topic = detail::parse_number<int>(f[0]);
    if (!topic) throw ParseError(file + " line " + std::to_string(line_no) + ": bad topic");
    LabelKey key{*topic, std::string(f[1])};
    ++out.items;
    if (f[5] == "ok") {
      auto s = detail::parse_number<double>(f[2]);
      auto fr = detail::parse_number<double>(f[3]);
      if (!s || !fr) throw ParseError(file + " line " + std::to_string(line_no) + ": bad score");
      out.scores.insert(key, *s);
      out.fractions.insert(key, *fr);
    } else if (f[5] == "unparseable") {
      ++out.unparseable;
    } else {
      ++out.errors;
    }
    if (auto c = detail::parse_number<double>(f[4])) out.prompt_chars[key] = *c;
  }
  return out;
}

inline fs::path labels_dir(const Manifest& m) { return m.out / "labels"; }
inline fs::path sample_path(const Manifest& m) { return m.out / "sample.qrels"; }

/// Labels for every prompt recorded in label_summary.json, in summary order.
inline std::vector<PromptLabels> load_all_labels(const Manifest& m) {
  const auto summary_path = m.out / "label_summary.json";
  if (!fs::is_regular_file(summary_path))
    throw ValidationError("no labels in " + m.out.string() + "; run the 'label' command first");
  const auto summary = detail::read_json(summary_path);
  std::vector<PromptLabels> out;
  for (const auto& p : summary.at("prompts")) {
    auto spec = PromptSpec::parse(p.at("spec").get<std::string>());
    if (spec.has(kMultiple)) spec.judge_count = p.at("judge_count").get<int>();
    const auto file = p.at("file").get<std::string>();
    out.push_back(parse_label_file(spec, file, detail::read_file(m.out / file)));
  }
  return out;
}

inline LabelSet load_sample(const Manifest& m) {
  if (!fs::is_regular_file(sample_path(m)))
    throw ValidationError("no sample in " + m.out.string() + "; run the 'label' command first");
  auto s = parse_qrels(detail::read_file(sample_path(m)));
  s.set_source("gold-sample");
  return s;
}

inline std::vector<LabelKey> sample_keys(const LabelSet& sample) {
  std::vector<LabelKey> keys;
  for (const auto& [k, v] : sample.entries()) keys.push_back(k);
  return keys;
}

inline PairedLabels paired(const Manifest& m, const PromptLabels& pl, const std::vector<LabelKey>& docs,
                           const LabelSet& gold) {
  const auto unit = unit_predictions(pl.scores, pl.fractions, m.mae_mode, m.threshold);
  return pair_labels(pl.spec.id(), docs, gold, pl.scores, unit, m.threshold);
}

// ---------------------------------------------------------------------------
// label

struct LabelStats {
  std::size_t items = 0;
  std::size_t network_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t unparseable = 0;
  std::size_t errors = 0;
};

/// Judge every sampled (topic, document) pair under every prompt. Results go
/// through the response cache, so an interrupted run resumes where it left
/// off. Items that fail are recorded with their error and the command
/// reports failure after writing everything else.
inline LabelStats cmd_label(const Manifest& m, Endpoint* endpoint_override = nullptr) {
  Diagnostics diag;
  const auto topics_list = parse_topics(detail::read_file(m.topics));
  std::map<int, Topic> topics;
  for (const auto& t : topics_list) topics.emplace(t.id, t);
  auto gold = parse_qrels(detail::read_file(m.qrels));
  gold.set_source("gold");
  const auto sample = stratified_sample(gold, m.n_per_grade, m.sample_seed);
  const auto bank = load_bank(m);
  std::map<std::string, const ParaphraseVariant*> variants;
  for (const auto& v : bank) variants[v.id] = &v;
  const auto specs = expand_specs(m, bank);

  // Documents are read once, up front.
  const auto store = m.docs_kind == "archive" ? DocumentStore::archive(m.docs, m.doc_budget)
                                              : DocumentStore::directory(m.docs, m.doc_budget);
  const auto keys = sample_keys(sample);
  std::map<std::string, std::optional<DocumentText>> docs;
  for (const auto& k : keys) {
    if (docs.count(k.doc)) continue;
    if (store.contains(k.doc)) docs[k.doc] = store.get(k.doc);
    else docs[k.doc] = std::nullopt;
  }

  std::unique_ptr<Endpoint> owned;
  Endpoint* endpoint = endpoint_override;
  if (!endpoint) {
    if (m.use_mock) {
      owned = std::make_unique<MockEndpoint>(gold, m.mock);
    } else {
      if (m.endpoint.empty()) throw ValidationError("manifest sets no judge.endpoint; use --mock for a dry run");
      const char* token = std::getenv(m.token_env.c_str());
      owned = std::make_unique<HttpEndpoint>(m.endpoint, token ? token : "", std::chrono::seconds(m.timeout_seconds));
    }
    endpoint = owned.get();
  }
  // Mock answers depend on the mock settings, which the cache key does not
  // cover; keep them apart so changing the flip rate never replays stale
  // responses.
  std::optional<ResponseCache> cache;
  if (m.cache_dir) {
    auto dir = *m.cache_dir;
    if (m.use_mock && !endpoint_override)
      dir /= "mock-" + sha256_hex(mock_settings_json(m.mock).dump()).substr(0, 16);
    cache.emplace(dir);
  }
  JudgeClient client(*endpoint, cache ? &*cache : nullptr, m.retry);

  struct Item {
    std::string status;  // ok | unparseable | error
    double score = 0.0;
    double fraction = 0.0;
    std::size_t chars = 0;
    std::string reason;
  };
  const std::size_t n_docs = keys.size();
  const std::size_t total = specs.size() * n_docs;
  std::vector<Item> results(total);
  std::atomic<std::size_t> next{0}, hits{0};

  auto work = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= total) return;
      const auto& spec = specs[i / n_docs];
      const auto& key = keys[i % n_docs];
      auto& r = results[i];
      try {
        auto t = topics.find(key.topic);
        if (t == topics.end()) throw ValidationError("topic " + std::to_string(key.topic) + " is not in the topic file");
        const auto& d = docs.at(key.doc);
        if (!d) throw Error("missing_document", "document " + key.doc + " not found");
        const auto prompt = render_prompt(spec, t->second, *d, *variants.at(spec.paraphrase_id));
        r.chars = prompt.text.size();
        const auto res = client.judge(prompt, m.params);
        if (res.from_cache) hits.fetch_add(1);
        const auto out = score_response(res.content, spec, m.threshold);
        if (out.parseable()) {
          r.status = "ok";
          r.score = *out.score;
          r.fraction = *out.relevant_fraction;
        } else {
          r.status = "unparseable";
          r.reason = out.reason;
        }
      } catch (const Error& e) {
        r.status = "error";
        r.reason = e.kind() + ": " + e.what();
      } catch (const std::exception& e) {
        r.status = "error";
        r.reason = std::string("internal_error: ") + e.what();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, m.concurrency));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(n_threads, total); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  // Persist.
  fs::create_directories(labels_dir(m));
  detail::write_file_atomic(sample_path(m), format_qrels(sample));
  LabelStats stats;
  stats.items = total;
  stats.network_calls = client.network_calls();
  stats.cache_hits = hits.load();
  nlohmann::json prompts = nlohmann::json::array();
  std::string error_log;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    std::string body(kLabelHeader);
    body += '\n';
    std::size_t ok = 0, unparseable = 0, errors = 0;
    for (std::size_t d = 0; d < n_docs; ++d) {
      const auto& r = results[s * n_docs + d];
      const auto& k = keys[d];
      auto reason = r.reason;
      std::replace(reason.begin(), reason.end(), '\t', ' ');
      std::replace(reason.begin(), reason.end(), '\n', ' ');
      body += std::to_string(k.topic) + '\t' + k.doc + '\t' + (r.status == "ok" ? detail::num(r.score) : "") + '\t' +
              (r.status == "ok" ? detail::num(r.fraction) : "") + '\t' + std::to_string(r.chars) + '\t' + r.status +
              '\t' + reason + '\n';
      if (r.status == "ok") ++ok;
      else if (r.status == "unparseable") ++unparseable;
      else {
        ++errors;
        error_log += nlohmann::json{{"spec", specs[s].id()}, {"topic", k.topic}, {"doc", k.doc}, {"error", r.reason}}.dump() + "\n";
      }
    }
    stats.unparseable += unparseable;
    stats.errors += errors;
    const auto file = "labels/" + detail::spec_file_stem(specs[s].id()) + ".tsv";
    detail::write_file_atomic(m.out / file, body);
    prompts.push_back({{"spec", specs[s].id()},
                       {"judge_count", specs[s].judge_count},
                       {"file", file},
                       {"sha256", sha256_hex(body)},
                       {"items", n_docs},
                       {"ok", ok},
                       {"unparseable", unparseable},
                       {"errors", errors},
                       {"drop_rate", n_docs ? static_cast<double>(unparseable) / static_cast<double>(n_docs) : 0.0}});
  }
  const auto errors_path = m.out / "label_errors.jsonl";
  if (!error_log.empty()) detail::write_file_atomic(errors_path, error_log);
  else fs::remove(errors_path);
  nlohmann::json summary{{"provenance", provenance(m)},
                         {"sample", {{"file", "sample.qrels"},
                                     {"sha256", sha256_hex(format_qrels(sample))},
                                     {"n_per_grade", m.n_per_grade},
                                     {"pairs", n_docs}}},
                         {"prompts", prompts},
                         {"warnings", diag.warnings}};
  detail::write_json(m.out / "label_summary.json", summary);
  if (stats.errors > 0)
    throw Error("label_incomplete", std::to_string(stats.errors) + " of " + std::to_string(total) +
                                        " judgements failed; see " + errors_path.string());
  return stats;
}

// ---------------------------------------------------------------------------
// agree

struct Interval {
  double point = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  std::size_t redrawn = 0;

  nlohmann::json json() const {
    return {{"point", detail::jnum(point)}, {"lo", detail::jnum(lo)}, {"hi", detail::jnum(hi)}, {"redrawn", redrawn}};
  }
  static Interval from(const nlohmann::json& j) {
    return {detail::from_jnum(j.at("point")), detail::from_jnum(j.at("lo")), detail::from_jnum(j.at("hi")),
            j.at("redrawn").get<std::size_t>()};
  }
};

inline Interval interval(const PairedLabels& p,
                         std::optional<double> (*stat)(const PairedLabels&, std::span<const std::size_t>),
                         const BootstrapConfig& cfg) {
  try {
    auto r = bootstrap_ci(p.size(), [&](std::span<const std::size_t> idx) { return stat(p, idx); }, cfg);
    return {r.point, r.lo, r.hi, r.redrawn};
  } catch (const ValidationError&) {
    return {};  // undefined on this prompt's labels (e.g. everything dropped)
  }
}

/// Per-prompt MAE, kappa and AUC with bootstrap intervals; the best value
/// in each column is tested against the runner-up.
inline nlohmann::json cmd_agree(const Manifest& m) {
  const auto gold = load_sample(m);
  const auto docs = sample_keys(gold);
  const auto labels = load_all_labels(m);
  const auto sample_hash = sha256_hex(detail::read_file(sample_path(m)));

  nlohmann::json rows = nlohmann::json::array();
  std::vector<Candidate> mae_c, kappa_c, auc_c;
  std::vector<std::vector<std::string>> csv{{"spec", "n", "dropped", "drop_rate", "mae", "mae_lo", "mae_hi", "kappa",
                                             "kappa_lo", "kappa_hi", "auc", "auc_lo", "auc_hi", "seed", "labels_sha256"}};
  std::vector<std::vector<std::string>> lb_csv{{"spec", "n", "slope", "slope_lo", "slope_hi", "median_length",
                                                "effect_at_median", "labels_sha256"}};
  std::vector<double> pooled_err, pooled_len;
  nlohmann::json length_rows = nlohmann::json::array();
  for (const auto& pl : labels) {
    if (pl.spec.paraphrase_id != "original") continue;
    const auto p = paired(m, pl, docs, gold);
    const auto mae_i = interval(p, mae_on, m.bootstrap);
    const auto kappa_i = interval(p, kappa_on, m.bootstrap);
    const auto auc_i = interval(p, auc_on, m.bootstrap);
    const auto id = pl.spec.id();
    rows.push_back({{"spec", id},
                    {"n", pl.scores.size()},
                    {"dropped", pl.unparseable},
                    {"errors", pl.errors},
                    {"drop_rate", pl.drop_rate()},
                    {"mae", mae_i.json()},
                    {"kappa", kappa_i.json()},
                    {"auc", auc_i.json()},
                    {"seed", m.bootstrap.seed},
                    {"labels_sha256", pl.sha256}});
    csv.push_back({id, std::to_string(pl.scores.size()), std::to_string(pl.unparseable), detail::num(pl.drop_rate()),
                   detail::num(mae_i.point), detail::num(mae_i.lo), detail::num(mae_i.hi), detail::num(kappa_i.point),
                   detail::num(kappa_i.lo), detail::num(kappa_i.hi), detail::num(auc_i.point), detail::num(auc_i.lo),
                   detail::num(auc_i.hi), std::to_string(m.bootstrap.seed), pl.sha256});

    const auto indicators = agreement_indicators(p);
    std::vector<double> abs_err(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      abs_err[i] = p.has(i) ? std::abs(p.gold[i] - p.unit[i]) : std::numeric_limits<double>::quiet_NaN();
    if (!std::isnan(mae_i.point)) mae_c.push_back({id, mae_i.point, abs_err});
    if (!std::isnan(kappa_i.point)) kappa_c.push_back({id, kappa_i.point, indicators});
    if (!std::isnan(auc_i.point)) auc_c.push_back({id, auc_i.point, indicators});

    // Signed error against prompt length.
    std::vector<double> err, len;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p.has(i)) continue;
      auto c = pl.prompt_chars.find(docs[i]);
      if (c == pl.prompt_chars.end()) continue;
      err.push_back(p.pred_bin(i) - p.gold[i]);
      len.push_back(c->second);
    }
    pooled_err.insert(pooled_err.end(), err.begin(), err.end());
    pooled_len.insert(pooled_len.end(), len.begin(), len.end());
    try {
      const auto lb = length_bias(err, len);
      length_rows.push_back({{"spec", id}, {"n", lb.n}, {"slope", lb.slope}, {"slope_lo", lb.slope_lo},
                             {"slope_hi", lb.slope_hi}, {"median_length", lb.median_length},
                             {"effect_at_median", lb.effect_at_median}, {"labels_sha256", pl.sha256}});
      lb_csv.push_back({id, std::to_string(lb.n), detail::num(lb.slope), detail::num(lb.slope_lo),
                        detail::num(lb.slope_hi), detail::num(lb.median_length), detail::num(lb.effect_at_median),
                        pl.sha256});
    } catch (const ValidationError&) {
      // A single prompt renders to near-constant lengths; only the pooled fit applies.
    }
  }
  if (rows.empty()) throw ValidationError("agree: no labelled prompts with the original wording");

  nlohmann::json pooled = nullptr;
  try {
    const auto lb = length_bias(pooled_err, pooled_len);
    pooled = {{"n", lb.n}, {"slope", lb.slope}, {"slope_lo", lb.slope_lo}, {"slope_hi", lb.slope_hi},
              {"median_length", lb.median_length}, {"effect_at_median", lb.effect_at_median}};
    lb_csv.push_back({"pooled", std::to_string(lb.n), detail::num(lb.slope), detail::num(lb.slope_lo),
                      detail::num(lb.slope_hi), detail::num(lb.median_length), detail::num(lb.effect_at_median), ""});
  } catch (const ValidationError&) {
  }

  auto best = [](const std::vector<Candidate>& c, bool lower) -> nlohmann::json {
    if (c.empty()) return nullptr;
    const auto r = compare_best(c, lower);
    return {{"winner", r.winner},
            {"runner_up", r.runner_up},
            {"tested", r.tested},
            {"t", detail::jnum(r.t_statistic)},
            {"p_value", r.p_value},
            {"n", r.n},
            {"significant", r.significant}};
  };
  nlohmann::json out{{"provenance", provenance(m)},
                     {"sample_sha256", sample_hash},
                     {"mae_mode", m.mae_mode == MaeMode::fractional ? "fractional" : "hard"},
                     {"rows", rows},
                     {"best", {{"mae", best(mae_c, true)}, {"kappa", best(kappa_c, false)}, {"auc", best(auc_c, false)}}},
                     {"length_bias", {{"per_prompt", length_rows}, {"pooled", pooled}}}};
  detail::write_json(m.out / "agreement.json", out);
  detail::write_file_atomic(m.out / "agreement.csv", detail::csv(csv));
  detail::write_file_atomic(m.out / "length_bias.csv", detail::csv(lb_csv));
  return out;
}

// ---------------------------------------------------------------------------
// feature-effects

inline nlohmann::json cmd_feature_effects(const Manifest& m) {
  const auto gold = load_sample(m);
  const auto docs = sample_keys(gold);
  const auto labels = load_all_labels(m);
  std::vector<PairedLabels> store;
  store.reserve(32);
  std::map<std::uint8_t, std::string> hash;
  for (const auto& pl : labels) {
    if (pl.spec.paraphrase_id != "original") continue;
    store.push_back(paired(m, pl, docs, gold));
    hash[pl.spec.flags] = pl.sha256;
  }
  std::map<std::uint8_t, const PairedLabels*> by_flags;
  for (const auto& p : store) by_flags[PromptSpec::parse(p.name).flags] = &p;
  for (const auto& spec : enumerate_specs())
    if (!by_flags.count(spec.flags)) throw ValidationError("feature-effects: prompt " + spec.label() + " is not labelled");
  const auto rep = feature_effects_bootstrap(by_flags, m.bootstrap);

  nlohmann::json effects = nlohmann::json::array();
  std::vector<std::vector<std::string>> csv{{"feature", "delta_kappa", "lo", "hi", "pairs", "seed", "n_resamples"}};
  for (const auto& e : rep.effects) {
    effects.push_back({{"feature", std::string(1, e.feature)}, {"delta", e.delta}, {"lo", detail::jnum(e.lo.value_or(NAN))},
                       {"hi", detail::jnum(e.hi.value_or(NAN))}, {"pairs", e.pairs}});
    csv.push_back({std::string(1, e.feature), detail::num(e.delta), detail::num(e.lo.value_or(NAN)),
                   detail::num(e.hi.value_or(NAN)), std::to_string(e.pairs), std::to_string(m.bootstrap.seed),
                   std::to_string(m.bootstrap.n_resamples)});
  }
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& spec : enumerate_specs()) {
    std::vector<std::size_t> all(docs.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    inputs.push_back({{"spec", spec.label()},
                      {"kappa", detail::jnum(kappa_on(*by_flags.at(spec.flags), all).value_or(NAN))},
                      {"labels_sha256", hash.at(spec.flags)}});
  }
  nlohmann::json out{{"provenance", provenance(m)}, {"effects", effects}, {"kappa_by_spec", inputs}};
  detail::write_json(m.out / "feature_effects.json", out);
  detail::write_file_atomic(m.out / "feature_effects.csv", detail::csv(csv));
  return out;
}

// ---------------------------------------------------------------------------
// paraphrase-spread

/// Kappa per wording of the paraphrase base template. Rows are sorted by
/// the bootstrap mean; the band pools every variant's bootstrap replicates.
/// When the bank's variants are labelled, the original wording is left out.
inline nlohmann::json cmd_paraphrase_spread(const Manifest& m) {
  const auto gold = load_sample(m);
  const auto docs = sample_keys(gold);
  const auto labels = load_all_labels(m);
  const auto base = PromptSpec::parse(m.paraphrase_base);
  std::vector<const PromptLabels*> chosen;
  for (const auto& pl : labels)
    if (pl.spec.flags == base.flags && pl.spec.paraphrase_id != "original") chosen.push_back(&pl);
  if (chosen.empty())
    for (const auto& pl : labels)
      if (pl.spec.flags == base.flags) chosen.push_back(&pl);
  if (chosen.empty()) throw ValidationError("paraphrase-spread: prompt " + base.label() + " is not labelled");

  struct Row {
    std::string variant;
    double kappa, mean, lo, hi;
    std::string hash;
  };
  std::vector<Row> rows;
  std::vector<double> pooled;
  for (const auto* pl : chosen) {
    const auto p = paired(m, *pl, docs, gold);
    try {
      const auto r = bootstrap_ci(p.size(), [&](std::span<const std::size_t> idx) { return kappa_on(p, idx); }, m.bootstrap);
      rows.push_back({pl->spec.paraphrase_id, r.point, r.replicate_mean, r.lo, r.hi, pl->sha256});
      pooled.insert(pooled.end(), r.replicates.begin(), r.replicates.end());
    } catch (const ValidationError&) {
      rows.push_back({pl->spec.paraphrase_id, NAN, NAN, NAN, NAN, pl->sha256});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (std::isnan(a.mean) != std::isnan(b.mean)) return std::isnan(b.mean);
    if (a.mean != b.mean) return a.mean < b.mean;
    return a.variant < b.variant;
  });
  const double alpha = 1.0 - m.bootstrap.level;
  const double band_lo = pooled.empty() ? NAN : quantile(pooled, alpha / 2.0);
  const double band_hi = pooled.empty() ? NAN : quantile(pooled, 1.0 - alpha / 2.0);

  nlohmann::json jrows = nlohmann::json::array();
  std::vector<std::vector<std::string>> csv{{"variant", "spec", "kappa", "mean_kappa", "lo", "hi", "seed", "labels_sha256"}};
  for (const auto& r : rows) {
    const auto id = base.label() + (r.variant == "original" ? "" : "@" + r.variant);
    jrows.push_back({{"variant", r.variant}, {"spec", id}, {"kappa", detail::jnum(r.kappa)},
                     {"mean_kappa", detail::jnum(r.mean)}, {"lo", detail::jnum(r.lo)}, {"hi", detail::jnum(r.hi)},
                     {"labels_sha256", r.hash}});
    csv.push_back({r.variant, id, detail::num(r.kappa), detail::num(r.mean), detail::num(r.lo), detail::num(r.hi),
                   std::to_string(m.bootstrap.seed), r.hash});
  }
  nlohmann::json out{{"provenance", provenance(m)},
                     {"base", base.label()},
                     {"rows", jrows},
                     {"band", {{"lo", detail::jnum(band_lo)}, {"hi", detail::jnum(band_hi)}, {"level", m.bootstrap.level}}}};
  detail::write_json(m.out / "paraphrase_spread.json", out);
  detail::write_file_atomic(m.out / "paraphrase_spread.csv", detail::csv(csv));
  return out;
}

// ---------------------------------------------------------------------------
// consistency

/// Scores of every run under one label set: per-topic and per-run means.
struct SystemScores {
  std::map<std::string, QueryScoreVector> per_run;
  std::map<int, double> per_query;         ///< mean over runs
  std::map<std::string, double> per_run_mean;
};

inline SystemScores system_scores(const std::vector<Run>& runs, const LabelSet& labels, const MetricSpec& metric,
                                  const std::vector<int>& topics, double threshold, Diagnostics* diag) {
  SystemScores s;
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : runs) {
    auto v = score_run(r, labels, metric, topics, false, threshold, diag);
    for (const auto& [t, x] : v.scores) {
      acc[t].first += x;
      ++acc[t].second;
    }
    s.per_run_mean[r.tag] = v.mean();
    s.per_run.emplace(r.tag, std::move(v));
  }
  for (const auto& [t, a] : acc) s.per_query[t] = a.first / static_cast<double>(a.second);
  return s;
}

inline std::map<std::string, double> keyed(const std::map<int, double>& m) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : m) {
    auto key = std::to_string(k);
    key.insert(0, 12 - std::min<std::size_t>(12, key.size()), '0');
    out[key] = v;
  }
  return out;
}

/// Compare query, run and group orderings induced by gold labels and by one
/// prompt's labels, for every configured metric.
inline nlohmann::json cmd_consistency(const Manifest& m) {
  Diagnostics diag;
  const auto labels = load_all_labels(m);
  const PromptLabels* model = nullptr;
  for (const auto& pl : labels)
    if (pl.spec.id() == PromptSpec::parse(m.consistency_prompt).id()) model = &pl;
  if (!model) throw ValidationError("consistency: prompt " + m.consistency_prompt + " is not labelled");
  LabelSet gold = m.consistency_gold == "full" ? parse_qrels(detail::read_file(m.qrels)) : load_sample(m);
  const auto runs = load_runs(m.runs_dir, m.groups, &diag);
  if (runs.empty()) throw ValidationError("consistency: no runs in " + m.runs_dir.string());
  const auto topic_set = gold.topics();
  const std::vector<int> topics(topic_set.begin(), topic_set.end());

  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::vector<std::string>> csv{{"metric", "level", "phi", "universe", "rbo_raw", "rbo_min", "rbo_normalized",
                                             "kendall_tau", "ties_gold", "ties_model", "prompt", "labels_sha256"}};
  for (const auto& metric : m.metrics) {
    const auto g = system_scores(runs, gold, metric, topics, m.threshold, &diag);
    const auto p = system_scores(runs, model->scores, metric, topics, m.threshold, &diag);
    std::vector<ConsistencyReport> reps;
    // Queries: hardest first.
    auto q = compare_orderings(metric.name(), "query", keyed(g.per_query), keyed(p.per_query),
                               Ordering::Direction::ascending, m.phi_query, &diag);
    reps.push_back(q);
    reps.push_back(compare_orderings(metric.name(), "run", g.per_run_mean, p.per_run_mean,
                                     Ordering::Direction::descending, m.phi_system, &diag));
    const auto gb = group_best(runs, g.per_run_mean);
    const auto pb = group_best(runs, p.per_run_mean);
    reps.push_back(compare_orderings(metric.name(), "group", gb.scores, pb.scores, Ordering::Direction::descending,
                                     m.phi_system, &diag));
    for (const auto& r : reps) {
      rows.push_back({{"metric", r.metric}, {"level", r.level}, {"phi", r.phi}, {"universe", r.universe},
                      {"rbo_raw", r.rbo_raw}, {"rbo_min", r.rbo_min}, {"rbo_normalized", r.rbo_normalized},
                      {"kendall_tau", r.kendall_tau}, {"ties_gold", r.ties_gold}, {"ties_model", r.ties_model},
                      {"tie_note", r.tie_note}});
      csv.push_back({r.metric, r.level, detail::num(r.phi), std::to_string(r.universe), detail::num(r.rbo_raw),
                     detail::num(r.rbo_min), detail::num(r.rbo_normalized), detail::num(r.kendall_tau),
                     std::to_string(r.ties_gold), std::to_string(r.ties_model), model->spec.id(), model->sha256});
    }
  }
  nlohmann::json out{{"provenance", provenance(m)},
                     {"prompt", model->spec.id()},
                     {"labels_sha256", model->sha256},
                     {"gold", m.consistency_gold},
                     {"runs", runs.size()},
                     {"rows", rows},
                     {"warnings", diag.warnings}};
  detail::write_json(m.out / "consistency.json", out);
  detail::write_file_atomic(m.out / "consistency.csv", detail::csv(csv));
  return out;
}

// ---------------------------------------------------------------------------
// split-select

inline nlohmann::json cmd_split_select(const Manifest& m) {
  const auto gold = load_sample(m);
  const auto docs = sample_keys(gold);
  const auto labels = load_all_labels(m);
  std::vector<PairedLabels> prompts;
  std::size_t baseline = prompts.size();
  const auto baseline_id = PromptSpec::parse(m.baseline).id();
  for (const auto& pl : labels) {
    if (pl.spec.paraphrase_id != "original") continue;
    if (pl.spec.id() == baseline_id) baseline = prompts.size();
    prompts.push_back(paired(m, pl, docs, gold));
  }
  if (baseline == prompts.size() || prompts.empty())
    throw ValidationError("split-select: baseline prompt " + m.baseline + " is not labelled");
  const auto rep = split_selection(prompts, baseline, m.split_iterations, m.split_seed);
  std::vector<std::size_t> counts;
  nlohmann::json selected = nlohmann::json::array();
  std::vector<std::vector<std::string>> csv{{"spec", "selected", "iterations", "seed"}};
  for (const auto& p : prompts) {
    const auto c = rep.selected.at(p.name);
    counts.push_back(c);
    selected.push_back({{"spec", p.name}, {"selected", c}});
    csv.push_back({p.name, std::to_string(c), std::to_string(rep.iterations), std::to_string(rep.seed)});
  }
  nlohmann::json out{{"provenance", provenance(m)},
                     {"iterations", rep.iterations},
                     {"seed", rep.seed},
                     {"baseline", rep.baseline},
                     {"beats_baseline", rep.beats_baseline},
                     {"ties_baseline", rep.ties_baseline},
                     {"loses_baseline", rep.loses_baseline},
                     {"best_on_both", rep.best_on_both},
                     {"winner_ties", rep.winner_ties},
                     {"modal", rep.modal},
                     {"modal_count", rep.modal_count},
                     {"uniformity_p", detail::jnum(counts.size() >= 2 ? chi_square_uniform_p(counts) : NAN)},
                     {"selected", selected}};
  detail::write_json(m.out / "split_selection.json", out);
  detail::write_file_atomic(m.out / "split_selection.csv", detail::csv(csv));
  return out;
}

// ---------------------------------------------------------------------------
// report

inline const std::vector<std::string>& report_inputs() {
  static const std::vector<std::string> files = {"label_summary.json", "agreement.json", "feature_effects.json",
                                                 "paraphrase_spread.json", "consistency.json", "split_selection.json"};
  return files;
}

/// Render every earlier output as fixed-width tables plus one JSON bundle.
inline std::string cmd_report(const fs::path& out_dir) {
  std::vector<std::string> missing;
  for (const auto& f : report_inputs())
    if (!fs::is_regular_file(out_dir / f)) missing.push_back(f);
  if (!missing.empty()) {
    std::string list;
    for (const auto& f : missing) list += (list.empty() ? "" : ", ") + f;
    throw ValidationError("report: missing inputs in " + out_dir.string() + ": " + list);
  }
  nlohmann::json bundle;
  for (const auto& f : report_inputs()) bundle[f.substr(0, f.size() - 5)] = detail::read_json(out_dir / f);
  using detail::fixed;
  std::string txt;

  const auto& agree = bundle["agreement"];
  auto star = [&](const char* col, const std::string& spec) {
    const auto& b = agree["best"][col];
    if (b.is_null() || b["winner"] != spec) return std::string();
    return std::string(b["significant"].get<bool>() ? "**" : "*");
  };
  auto ci = [](const nlohmann::json& j) {
    const auto i = Interval::from(j);
    if (std::isnan(i.point)) return std::string("n/a");
    return fixed(i.point) + " [" + fixed(i.lo) + ", " + fixed(i.hi) + "]";
  };
  txt += "Agreement with gold labels (" + agree["mae_mode"].get<std::string>() + " MAE)\n";
  std::vector<std::vector<std::string>> t1{{"prompt", "MAE", "kappa", "AUC", "dropped"}};
  for (const auto& r : agree["rows"]) {
    const auto spec = r["spec"].get<std::string>();
    t1.push_back({spec, ci(r["mae"]) + star("mae", spec), ci(r["kappa"]) + star("kappa", spec),
                  ci(r["auc"]) + star("auc", spec), fixed(r["drop_rate"].get<double>() * 100.0, 1) + "%"});
  }
  txt += detail::text_table(t1);
  txt += "* best in column; ** best and significantly better than the next best (one-sided paired t test, p < 0.05)\n\n";

  txt += "Feature effects on kappa\n";
  std::vector<std::vector<std::string>> t2{{"feature", "delta kappa", "95% interval"}};
  for (const auto& e : bundle["feature_effects"]["effects"])
    t2.push_back({e["feature"].get<std::string>(), (e["delta"].get<double>() >= 0 ? "+" : "") + fixed(e["delta"].get<double>(), 4),
                  "[" + fixed(detail::from_jnum(e["lo"]), 4) + ", " + fixed(detail::from_jnum(e["hi"]), 4) + "]"});
  txt += detail::text_table(t2) + "\n";

  const auto& spread = bundle["paraphrase_spread"];
  txt += "Paraphrase spread for " + spread["base"].get<std::string>() + "\n";
  std::vector<std::vector<std::string>> t3{{"variant", "mean kappa", "lo", "hi"}};
  for (const auto& r : spread["rows"])
    t3.push_back({r["variant"].get<std::string>(), fixed(detail::from_jnum(r["mean_kappa"])),
                  fixed(detail::from_jnum(r["lo"])), fixed(detail::from_jnum(r["hi"]))});
  txt += detail::text_table(t3);
  txt += "pooled band: " + fixed(detail::from_jnum(spread["band"]["lo"])) + " -- " +
         fixed(detail::from_jnum(spread["band"]["hi"])) + "\n\n";

  const auto& cons = bundle["consistency"];
  txt += "Consistency of orderings, gold vs " + cons["prompt"].get<std::string>() + " labels\n";
  std::vector<std::vector<std::string>> t4{{"metric", "level", "phi", "N", "RBO", "tau"}};
  for (const auto& r : cons["rows"])
    t4.push_back({r["metric"].get<std::string>(), r["level"].get<std::string>(), detail::num(r["phi"].get<double>()),
                  std::to_string(r["universe"].get<std::size_t>()), fixed(r["rbo_normalized"].get<double>(), 2),
                  fixed(r["kendall_tau"].get<double>(), 2)});
  txt += detail::text_table(t4) + "\n";

  const auto& split = bundle["split_selection"];
  txt += "Split selection (" + std::to_string(split["iterations"].get<std::size_t>()) + " iterations, seed " +
         std::to_string(split["seed"].get<std::uint64_t>()) + ")\n";
  txt += "best on first split beat " + split["baseline"].get<std::string>() + " on second: " +
         std::to_string(split["beats_baseline"].get<std::size_t>()) + "/" +
         std::to_string(split["iterations"].get<std::size_t>()) + " (ties " +
         std::to_string(split["ties_baseline"].get<std::size_t>()) + ")\n";
  txt += "most often selected: " + split["modal"].get<std::string>() + " (" +
         std::to_string(split["modal_count"].get<std::size_t>()) + " times)\n\n";

  const auto& summary = bundle["label_summary"];
  txt += "Drop rates\n";
  std::vector<std::vector<std::string>> t5{{"prompt", "items", "unparseable", "errors", "labels sha256"}};
  for (const auto& p : summary["prompts"])
    t5.push_back({p["spec"].get<std::string>(), std::to_string(p["items"].get<std::size_t>()),
                  std::to_string(p["unparseable"].get<std::size_t>()), std::to_string(p["errors"].get<std::size_t>()),
                  p["sha256"].get<std::string>().substr(0, 12)});
  txt += detail::text_table(t5) + "\n";

  const auto& prov = summary["provenance"];
  txt += "Provenance\n";
  txt += "  code version: " + prov["code_version"].get<std::string>() + "\n";
  txt += "  manifest sha256: " + prov["manifest_sha256"].get<std::string>() + "\n";
  txt += "  model: " + prov["model"].get<std::string>() + "\n";
  txt += "  params: " + prov["params"].dump() + "\n";
  txt += "  seeds: " + prov["seeds"].dump() + "\n";
  txt += "  sample sha256: " + summary["sample"]["sha256"].get<std::string>() + "\n";

  detail::write_file_atomic(out_dir / "report.txt", txt);
  detail::write_json(out_dir / "report.json", bundle);
  return txt;
}

}  // namespace reljudge
