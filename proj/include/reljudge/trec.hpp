#pragma once

// TREC collection handling: topics, qrels, runs and document text.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reljudge/common.hpp"

namespace reljudge {

// ---------------------------------------------------------------------------
// Topics

struct Topic {
  int id = 0;
  std::string title;
  std::optional<std::string> description;
  std::optional<std::string> narrative;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io_error", "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("io_error", "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string strip_prefix_ci(std::string s, std::string_view prefix) {
  if (s.size() < prefix.size()) return s;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i])))
      return s;
  return std::string(trim(std::string_view(s).substr(prefix.size())));
}

}  // namespace detail

/// Parse TREC topic markup (<top>, <num>, <title>, <desc>, <narr>). Field
/// labels such as "Number:" are stripped and whitespace is collapsed.
inline std::vector<Topic> parse_topics(std::string_view text) {
  static constexpr std::array<std::string_view, 4> kTags = {"<num>", "<title>", "<desc>",
                                                            "<narr>"};
  std::vector<Topic> topics;
  std::set<int> seen;
  std::size_t pos = 0;
  std::size_t block = 0;

  auto fail = [&](std::size_t offset, const std::string& msg) {
    throw ParseError("topics: block " + std::to_string(block) + " at byte " +
                     std::to_string(offset) + ": " + msg);
  };

  for (;;) {
    const auto open = text.find("<top>", pos);
    if (open == std::string_view::npos) {
      if (!detail::trim(text.substr(pos)).empty()) fail(pos, "content outside <top> block");
      break;
    }
    if (!detail::trim(text.substr(pos, open - pos)).empty())
      fail(pos, "content outside <top> block");
    const auto body_start = open + 5;
    const auto close = text.find("</top>", body_start);
    const auto next_open = text.find("<top>", body_start);
    if (close == std::string_view::npos || (next_open != std::string_view::npos && next_open < close))
      fail(open, "missing </top>");
    const auto body = text.substr(body_start, close - body_start);

    // Locate every field tag, then each field runs to the next tag.
    std::vector<std::pair<std::size_t, std::size_t>> marks;  // (offset in body, tag index)
    for (std::size_t t = 0; t < kTags.size(); ++t) {
      auto at = body.find(kTags[t]);
      if (at != std::string_view::npos) {
        if (body.find(kTags[t], at + 1) != std::string_view::npos)
          fail(body_start + at, "repeated " + std::string(kTags[t]));
        marks.emplace_back(at, t);
      }
    }
    std::sort(marks.begin(), marks.end());
    std::array<std::optional<std::string>, 4> fields;
    for (std::size_t m = 0; m < marks.size(); ++m) {
      const auto [at, t] = marks[m];
      const auto from = at + kTags[t].size();
      const auto to = m + 1 < marks.size() ? marks[m + 1].first : body.size();
      std::string raw(body.substr(from, to - from));
      // Some collections close their fields; drop those tags.
      for (std::string_view closer : {"</num>", "</title>", "</desc>", "</narr>"}) {
        for (auto c = raw.find(closer); c != std::string::npos; c = raw.find(closer))
          raw.erase(c, closer.size());
      }
      fields[t] = detail::normalize_ws(raw);
    }

    Topic topic;
    if (!fields[0]) fail(open, "missing <num>");
    auto num = detail::strip_prefix_ci(*fields[0], "Number:");
    auto id = detail::parse_number<int>(num);
    if (!id || *id <= 0) fail(open, "topic number is not a positive integer: '" + num + "'");
    topic.id = *id;
    if (!fields[1] || fields[1]->empty()) fail(open, "missing or empty <title>");
    topic.title = detail::strip_prefix_ci(*fields[1], "Topic:");
    if (topic.title.empty()) fail(open, "empty <title>");
    if (fields[2]) topic.description = detail::strip_prefix_ci(*fields[2], "Description:");
    if (fields[3]) topic.narrative = detail::strip_prefix_ci(*fields[3], "Narrative:");
    if (!seen.insert(topic.id).second)
      fail(open, "duplicate topic id " + std::to_string(topic.id));
    topics.push_back(std::move(topic));

    pos = close + 6;
    ++block;
  }
  return topics;
}

// ---------------------------------------------------------------------------
// Label sets

/// Map (topic, document) -> grade. Gold sets hold integer grades 0..2 from
/// qrels; model sets hold mean scores in [0, 2].
class LabelSet {
public:
  struct KeyLess {
    using is_transparent = void;
    using View = std::pair<int, std::string_view>;
    static View view(const LabelKey& k) { return {k.topic, k.doc}; }
    static View view(const View& v) { return v; }
    template <typename A, typename B>
    bool operator()(const A& a, const B& b) const {
      return view(a) < view(b);
    }
  };
  using Map = std::map<LabelKey, double, KeyLess>;

  LabelSet() = default;
  explicit LabelSet(std::string source, double max_grade = 2.0)
      : source_(std::move(source)), max_grade_(max_grade) {}

  const std::string& source() const { return source_; }
  void set_source(std::string s) { source_ = std::move(s); }
  double max_grade() const { return max_grade_; }

  /// Throws on duplicate keys or grades outside [0, max_grade].
  void insert(LabelKey key, double grade) {
    if (!(grade >= 0.0 && grade <= max_grade_))
      throw ValidationError("grade " + detail::format_double(grade) + " for " + to_string(key) +
                            " outside [0, " + detail::format_double(max_grade_) + "]");
    auto [it, inserted] = entries_.emplace(std::move(key), grade);
    if (!inserted) throw ValidationError("duplicate label for " + to_string(it->first));
  }

  std::optional<double> find(int topic, std::string_view doc) const {
    auto it = entries_.find(KeyLess::View{topic, doc});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<double> find(const LabelKey& k) const { return find(k.topic, k.doc); }
  bool contains(const LabelKey& k) const { return find(k).has_value(); }

  const Map& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::set<int> topics() const {
    std::set<int> out;
    for (const auto& [k, v] : entries_) out.insert(k.topic);
    return out;
  }

  /// Number of entries with grade >= threshold, per topic.
  std::map<int, std::size_t> relevant_counts(double threshold = 1.0) const {
    std::map<int, std::size_t> out;
    for (const auto& [k, v] : entries_) {
      auto& n = out[k.topic];
      if (v >= threshold) ++n;
    }
    return out;
  }

  /// Entry count per integer grade (model scores are floored).
  std::map<int, std::size_t> grade_histogram() const {
    std::map<int, std::size_t> out;
    for (const auto& [k, v] : entries_) ++out[static_cast<int>(std::floor(v))];
    return out;
  }

private:
  std::string source_ = "gold";
  double max_grade_ = 2.0;
  Map entries_;
};

/// Parse `topic 0 docid grade` lines. Grades must be integers in {0,1,2}.
inline LabelSet parse_qrels(std::string_view text) {
  LabelSet out("gold");
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    auto where = [&] { return "qrels line " + std::to_string(line_no) + ": "; };
    if (fields.size() != 4)
      throw ParseError(where() + "expected 4 fields, got " + std::to_string(fields.size()));
    auto topic = detail::parse_number<int>(fields[0]);
    if (!topic) throw ParseError(where() + "topic '" + std::string(fields[0]) + "' is not an integer");
    auto grade = detail::parse_number<int>(fields[3]);
    if (!grade)
      throw ParseError(where() + "grade '" + std::string(fields[3]) + "' is not an integer");
    if (*grade < 0 || *grade > 2)
      throw ParseError(where() + "grade " + std::to_string(*grade) + " outside {0,1,2}");
    LabelKey key{*topic, std::string(fields[2])};
    if (out.contains(key)) throw ParseError(where() + "duplicate judgement for " + to_string(key));
    out.insert(std::move(key), *grade);
  }
  return out;
}

inline std::string format_qrels(const LabelSet& labels) {
  std::string out;
  for (const auto& [k, v] : labels.entries()) {
    out += std::to_string(k.topic);
    out += " 0 ";
    out += k.doc;
    out += ' ';
    out += std::to_string(static_cast<int>(v));
    out += '\n';
  }
  return out;
}

/// Draw exactly `n_per_grade` entries from each grade 0, 1, 2, uniformly
/// without replacement. Deterministic for a given seed.
inline LabelSet stratified_sample(const LabelSet& gold, std::size_t n_per_grade,
                                  std::uint64_t seed) {
  LabelSet out(gold.source(), gold.max_grade());
  if (n_per_grade == 0) return out;
  std::mt19937_64 rng(seed);
  for (int grade = 0; grade <= 2; ++grade) {
    std::vector<const LabelSet::Map::value_type*> stratum;
    for (const auto& e : gold.entries())
      if (e.second == grade) stratum.push_back(&e);
    if (stratum.size() < n_per_grade)
      throw ValidationError("grade " + std::to_string(grade) + " stratum has " +
                            std::to_string(stratum.size()) + " entries, need " +
                            std::to_string(n_per_grade));
    // Partial Fisher-Yates: the first n_per_grade slots become the sample.
    for (std::size_t i = 0; i < n_per_grade; ++i) {
      auto j = i + detail::uniform_index(rng, stratum.size() - i);
      std::swap(stratum[i], stratum[j]);
    }
    for (std::size_t i = 0; i < n_per_grade; ++i) out.insert(stratum[i]->first, stratum[i]->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct Posting {
  std::string doc;
  int rank = 0;
  double score = 0.0;
};

struct Run {
  std::string tag;
  std::string group;
  std::map<int, std::vector<Posting>> ranking;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [t, p] : ranking) n += p.size();
    return n;
  }
};

/// Parse a TREC run (`topic Q0 docid rank score tag`). Postings are ordered
/// by the rank column and renumbered 1..n per topic; out-of-order input is
/// accepted with a warning.
inline Run parse_run(std::string_view text, Diagnostics* diag = nullptr) {
  Run run;
  std::map<int, std::vector<std::pair<Posting, std::size_t>>> raw;  // posting, input line
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    auto where = [&] { return "run line " + std::to_string(line_no) + ": "; };
    if (f.size() != 6) throw ParseError(where() + "expected 6 fields, got " + std::to_string(f.size()));
    auto topic = detail::parse_number<int>(f[0]);
    auto rank = detail::parse_number<int>(f[3]);
    auto score = detail::parse_number<double>(f[4]);
    if (!topic) throw ParseError(where() + "topic is not an integer");
    if (!rank) throw ParseError(where() + "rank is not an integer");
    if (!score) throw ParseError(where() + "score is not numeric");
    if (run.tag.empty()) {
      run.tag = std::string(f[5]);
    } else if (run.tag != f[5]) {
      throw ParseError(where() + "run tag '" + std::string(f[5]) + "' differs from '" + run.tag + "'");
    }
    raw[*topic].push_back({Posting{std::string(f[2]), *rank, *score}, line_no});
  }

  for (auto& [topic, postings] : raw) {
    std::set<std::string_view> docs;
    for (const auto& [p, ln] : postings)
      if (!docs.insert(p.doc).second)
        throw ParseError("run line " + std::to_string(ln) + ": duplicate document " + p.doc +
                         " for topic " + std::to_string(topic));
    const bool sorted = std::is_sorted(postings.begin(), postings.end(), [](auto& a, auto& b) {
      return a.first.rank < b.first.rank;
    });
    if (!sorted)
      warn(diag, "run " + run.tag + " topic " + std::to_string(topic) +
                     ": ranks out of order; re-sorted");
    std::stable_sort(postings.begin(), postings.end(), [](auto& a, auto& b) {
      if (a.first.rank != b.first.rank) return a.first.rank < b.first.rank;
      return a.first.score > b.first.score;
    });
    bool renumbered = false;
    auto& out = run.ranking[topic];
    out.reserve(postings.size());
    for (std::size_t i = 0; i < postings.size(); ++i) {
      Posting p = std::move(postings[i].first);
      if (p.rank != static_cast<int>(i + 1)) renumbered = true;
      p.rank = static_cast<int>(i + 1);
      out.push_back(std::move(p));
    }
    if (renumbered && sorted)
      warn(diag, "run " + run.tag + " topic " + std::to_string(topic) + ": ranks renumbered from 1");
  }
  return run;
}

inline std::string format_run(const Run& run) {
  std::string out;
  for (const auto& [topic, postings] : run.ranking) {
    for (const auto& p : postings) {
      out += std::to_string(topic);
      out += " Q0 ";
      out += p.doc;
      out += ' ';
      out += std::to_string(p.rank);
      out += ' ';
      out += detail::format_double(p.score);
      out += ' ';
      out += run.tag;
      out += '\n';
    }
  }
  return out;
}

/// Load every regular file in `dir` as a run, sorted by file name. Groups
/// come from `groups` (run tag -> group); unmapped runs form their own group.
inline std::vector<Run> load_runs(const std::filesystem::path& dir,
                                  const std::map<std::string, std::string>& groups,
                                  Diagnostics* diag = nullptr) {
  if (!std::filesystem::is_directory(dir)) throw Error("io_error", "runs directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Run> runs;
  std::set<std::string> tags;
  for (const auto& f : files) {
    Run r = parse_run(detail::read_file(f), diag);
    if (r.tag.empty()) {
      warn(diag, "run file " + f.filename().string() + " is empty; skipped");
      continue;
    }
    if (!tags.insert(r.tag).second) throw ValidationError("duplicate run tag " + r.tag);
    auto g = groups.find(r.tag);
    if (g != groups.end()) {
      r.group = g->second;
    } else {
      warn(diag, "run " + r.tag + " has no group mapping; using its tag");
      r.group = r.tag;
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Coverage

struct CoverageReport {
  std::set<int> qrel_topics_without_topic;
  std::set<int> run_topics_without_topic;
  std::set<int> topics_without_relevant;  ///< always score zero under gold labels
  std::set<int> topics_without_qrels;

  bool clean() const {
    return qrel_topics_without_topic.empty() && run_topics_without_topic.empty();
  }
};

inline CoverageReport coverage(const std::vector<Topic>& topics, const LabelSet& gold,
                               const std::vector<Run>& runs) {
  CoverageReport rep;
  std::set<int> ids;
  for (const auto& t : topics) ids.insert(t.id);
  const auto rel = gold.relevant_counts();
  for (const auto& [topic, n] : rel) {
    if (!ids.count(topic)) rep.qrel_topics_without_topic.insert(topic);
    if (n == 0) rep.topics_without_relevant.insert(topic);
  }
  for (int id : ids)
    if (!rel.count(id)) {
      rep.topics_without_qrels.insert(id);
      rep.topics_without_relevant.insert(id);
    }
  for (const auto& r : runs)
    for (const auto& [topic, p] : r.ranking)
      if (!ids.count(topic)) rep.run_topics_without_topic.insert(topic);
  return rep;
}

// ---------------------------------------------------------------------------
// Documents

struct DocumentText {
  std::string id;
  std::string text;
  bool truncated = false;
  bool empty = false;
  std::size_t original_length = 0;
};

/// Cut `text` to at most `budget` bytes at a whitespace boundary. If the
/// first `budget` bytes contain no whitespace the cut is hard.
inline DocumentText truncate_text(std::string text, std::size_t budget) {
  DocumentText out;
  out.original_length = text.size();
  out.empty = text.empty();
  if (text.size() > budget) {
    std::size_t cut = budget;
    while (cut > 0 && !detail::is_space(text[cut])) --cut;
    if (cut == 0) {
      cut = budget;
      // Never split a UTF-8 sequence on a hard cut.
      while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    } else {
      while (cut > 0 && detail::is_space(text[cut - 1])) --cut;
    }
    text.resize(cut);
    out.truncated = true;
  }
  out.text = std::move(text);
  return out;
}

/// Read-only document lookup. Backed by memory, a directory of `<docid>.txt`
/// files, or an archive `<name>.dat` with a sidecar `<name>.idx` whose lines
/// are `docid<TAB>byte-offset<TAB>byte-length`.
class DocumentStore {
public:
  static constexpr std::size_t kDefaultBudget = 16000;

  static DocumentStore in_memory(std::unordered_map<std::string, std::string> docs,
                                 std::size_t budget = kDefaultBudget) {
    DocumentStore s;
    s.budget_ = budget;
    s.memory_ = std::make_shared<const std::unordered_map<std::string, std::string>>(std::move(docs));
    return s;
  }

  static DocumentStore directory(std::filesystem::path dir, std::size_t budget = kDefaultBudget) {
    if (!std::filesystem::is_directory(dir)) throw Error("io_error", "document directory " + dir.string() + " not found");
    DocumentStore s;
    s.budget_ = budget;
    s.dir_ = std::move(dir);
    return s;
  }

  /// `archive` is the `.dat` file; its index is the same path with `.idx`.
  static DocumentStore archive(std::filesystem::path archive, std::size_t budget = kDefaultBudget) {
    DocumentStore s;
    s.budget_ = budget;
    auto idx_path = archive;
    idx_path.replace_extension(".idx");
    const auto idx = detail::read_file(idx_path);
    auto index = std::make_shared<std::unordered_map<std::string, std::pair<std::uint64_t, std::uint64_t>>>();
    const auto archive_size = std::filesystem::file_size(archive);
    std::size_t line_no = 0;
    for (auto line : detail::split_char(idx, '\n')) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      auto f = detail::split_char(line, '\t');
      auto off = f.size() == 3 ? detail::parse_number<std::uint64_t>(f[1]) : std::nullopt;
      auto len = f.size() == 3 ? detail::parse_number<std::uint64_t>(detail::trim(f[2])) : std::nullopt;
      if (!off || !len)
        throw ParseError("document index line " + std::to_string(line_no) + ": expected docid\\toffset\\tlength");
      if (*off + *len > archive_size)
        throw ParseError("document index line " + std::to_string(line_no) + ": span past end of archive");
      if (!index->emplace(std::string(f[0]), std::make_pair(*off, *len)).second)
        throw ParseError("document index line " + std::to_string(line_no) + ": duplicate docid");
    }
    s.archive_ = std::move(archive);
    s.index_ = std::move(index);
    return s;
  }

  /// Write `docs` as an archive plus sidecar index, in docid order.
  static void write_archive(const std::filesystem::path& archive,
                            const std::map<std::string, std::string>& docs) {
    std::string data, idx;
    for (const auto& [id, text] : docs) {
      idx += id + "\t" + std::to_string(data.size()) + "\t" + std::to_string(text.size()) + "\n";
      data += text;
    }
    detail::write_file_atomic(archive, data);
    auto idx_path = archive;
    idx_path.replace_extension(".idx");
    detail::write_file_atomic(idx_path, idx);
  }

  std::size_t budget() const { return budget_; }
  void set_budget(std::size_t b) { budget_ = b; }

  bool contains(std::string_view docid) const {
    if (memory_) return memory_->count(std::string(docid)) > 0;
    if (index_) return index_->count(std::string(docid)) > 0;
    return valid_docid(docid) && std::filesystem::is_regular_file(dir_ / (std::string(docid) + ".txt"));
  }

  /// Full text cut to the configured budget. Missing documents throw.
  DocumentText get(std::string_view docid) const {
    auto out = truncate_text(raw(docid), budget_);
    out.id = std::string(docid);
    return out;
  }

private:
  static bool valid_docid(std::string_view id) {
    return !id.empty() && id.find('/') == std::string_view::npos && id != "." && id != "..";
  }

  std::string raw(std::string_view docid) const {
    auto missing = [&] { return Error("missing_document", "document " + std::string(docid) + " not in store"); };
    if (memory_) {
      auto it = memory_->find(std::string(docid));
      if (it == memory_->end()) throw missing();
      return it->second;
    }
    if (index_) {
      auto it = index_->find(std::string(docid));
      if (it == index_->end()) throw missing();
      std::ifstream in(archive_, std::ios::binary);
      if (!in) throw Error("io_error", "cannot open " + archive_.string());
      std::string buf(it->second.second, '\0');
      in.seekg(static_cast<std::streamoff>(it->second.first));
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      if (!in) throw Error("io_error", "short read from " + archive_.string());
      return buf;
    }
    if (!valid_docid(docid)) throw missing();
    auto path = dir_ / (std::string(docid) + ".txt");
    if (!std::filesystem::is_regular_file(path)) throw missing();
    return detail::read_file(path);
  }

  std::size_t budget_ = kDefaultBudget;
  std::shared_ptr<const std::unordered_map<std::string, std::string>> memory_;
  std::filesystem::path dir_;
  std::filesystem::path archive_;
  std::shared_ptr<const std::unordered_map<std::string, std::pair<std::uint64_t, std::uint64_t>>> index_;
};

/// Free-function form of DocumentStore::get.
inline DocumentText get_document(const DocumentStore& store, std::string_view docid) {
  return store.get(docid);
}

}  // namespace reljudge
