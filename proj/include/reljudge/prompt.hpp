#pragma once

// Relevance-grading prompt template with five optional features:
//   R  role statement          D  topic description     N  topic narrative
//   A  aspect sub-scores (M = topicality, T = trustworthiness)
//   M  multiple simulated judges
// plus paraphrase variants that replace the two instruction spans.

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reljudge/common.hpp"
#include "reljudge/trec.hpp"

namespace reljudge {

enum Feature : std::uint8_t {
  kRole = 1 << 0,
  kDescription = 1 << 1,
  kNarrative = 1 << 2,
  kAspects = 1 << 3,
  kMultiple = 1 << 4,
};

inline constexpr std::array<Feature, 5> kAllFeatures = {kRole, kDescription, kNarrative, kAspects,
                                                        kMultiple};
inline constexpr std::string_view kFeatureLetters = "RDNAM";
inline constexpr int kDefaultJudgeCount = 5;

inline char feature_letter(Feature f) {
  for (std::size_t i = 0; i < kAllFeatures.size(); ++i)
    if (kAllFeatures[i] == f) return kFeatureLetters[i];
  return '?';
}

struct PromptSpec {
  std::uint8_t flags = 0;
  std::string paraphrase_id = "original";
  int judge_count = 1;

  bool has(Feature f) const { return (flags & f) != 0; }

  /// Five-character label such as "-DNA-".
  std::string label() const {
    std::string s(5, '-');
    for (std::size_t i = 0; i < kAllFeatures.size(); ++i)
      if (has(kAllFeatures[i])) s[i] = kFeatureLetters[i];
    return s;
  }

  /// Label plus paraphrase suffix when not the original wording.
  std::string id() const {
    return paraphrase_id == "original" ? label() : label() + "@" + paraphrase_id;
  }

  /// Build from a flag set; judge count follows the M flag unless overridden.
  static PromptSpec from_flags(std::uint8_t flags, std::string paraphrase = "original",
                               int judges_when_multiple = kDefaultJudgeCount) {
    PromptSpec s;
    s.flags = flags & 0x1f;
    s.paraphrase_id = std::move(paraphrase);
    s.judge_count = s.has(kMultiple) ? judges_when_multiple : 1;
    s.validate();
    return s;
  }

  /// Parse "-DNA-" style labels, optionally suffixed by "@paraphrase".
  static PromptSpec parse(std::string_view text) {
    std::string paraphrase = "original";
    if (auto at = text.find('@'); at != std::string_view::npos) {
      paraphrase = std::string(text.substr(at + 1));
      text = text.substr(0, at);
    }
    if (text.size() != 5) throw ValidationError("prompt spec '" + std::string(text) + "' must have 5 characters");
    std::uint8_t flags = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      if (text[i] == kFeatureLetters[i]) {
        flags |= kAllFeatures[i];
      } else if (text[i] != '-') {
        throw ValidationError("prompt spec '" + std::string(text) + "': position " + std::to_string(i + 1) +
                              " must be '" + kFeatureLetters[i] + "' or '-'");
      }
    }
    return from_flags(flags, paraphrase);
  }

  void validate() const {
    if (judge_count < 1) throw ValidationError("judge_count must be >= 1");
    if (judge_count > 1 && !has(kMultiple))
      throw ValidationError("judge_count > 1 requires the multiple-judges feature");
  }

  bool operator==(const PromptSpec&) const = default;
};

/// All 32 feature combinations in table order: grouped by feature count, and
/// within a group in lexicographic order of the R, D, N, A, M positions.
inline std::vector<PromptSpec> enumerate_specs() {
  std::vector<PromptSpec> out;
  for (int k = 0; k <= 5; ++k) {
    // Combinations of k positions out of 5, lexicographic by position.
    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = i;
    for (;;) {
      std::uint8_t flags = 0;
      for (int i : idx) flags |= kAllFeatures[i];
      out.push_back(PromptSpec::from_flags(flags));
      int i = k - 1;
      while (i >= 0 && idx[i] == 5 - k + i) --i;
      if (i < 0) break;
      ++idx[i];
      for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return out;
}

/// Position of a spec's flag set in enumerate_specs() order.
inline std::size_t canonical_index(const PromptSpec& spec) {
  static const auto order = enumerate_specs();
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i].flags == spec.flags) return i;
  return order.size();
}

// ---------------------------------------------------------------------------
// Paraphrases

/// Replacement wording for the grading-instruction span and the
/// step-instruction span. The step span may use the markers {aspects},
/// {final} and {multiple}; they expand according to the A and M flags.
struct ParaphraseVariant {
  std::string id;
  std::string instruction_text;
  std::string steps_text;
};

namespace templ {

inline constexpr std::string_view kRole =
    "You are a search quality rater evaluating the relevance of web pages. ";

inline constexpr std::string_view kInstructions =
    "Given a query and a web page, you must provide a score on an integer scale of 0 to 2 with the "
    "following meanings:\n"
    "\n"
    "2 = highly relevant, very helpful for this query\n"
    "1 = relevant, may be partly helpful but might contain other irrelevant content\n"
    "0 = not relevant, should never be shown for this query\n"
    "\n"
    "Assume that you are writing a report on the subject of the topic. If you would use any of the "
    "information contained in the web page in such a report, mark it 1. If the web page is "
    "primarily about the topic, or contains vital information about the topic, mark it 2. "
    "Otherwise, mark it 0.";

inline constexpr std::string_view kSteps =
    "Split this problem into steps:\n"
    "\n"
    "Consider the underlying intent of the search.\n"
    "\n"
    "{aspects}{final}\n"
    "\n"
    "{multiple}Produce a JSON array of scores without providing any reasoning.";

inline constexpr std::string_view kAspectLines =
    "Measure how well the content matches a likely intent of the query (M).\n"
    "\n"
    "Measure how trustworthy the web page is (T).\n"
    "\n";

inline constexpr std::string_view kFinalWithAspects =
    "Consider the aspects above and the relative importance of each, and decide on a final score (O).";
inline constexpr std::string_view kFinalPlain = "Decide on a final score (O).";

inline constexpr std::string_view kLookingFor = "They were looking for:";
inline constexpr std::string_view kBeginPage = "---BEGIN WEB PAGE CONTENT---";
inline constexpr std::string_view kEndPage = "---END WEB PAGE CONTENT---";
inline constexpr std::string_view kPrimer = "[{";

inline std::string number_word(int n) {
  static constexpr std::array<std::string_view, 11> words = {
      "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  if (n >= 0 && n <= 10) return std::string(words[n]);
  return std::to_string(n);
}

inline std::string multiple_sentence(int judges) {
  return "We asked " + number_word(judges) +
         " search engine raters to evaluate the relevance of the web page for the query. Each rater "
         "used their own independent judgement.\n\n";
}

inline std::string example_snippet(bool aspects, bool multiple) {
  const std::string_view first = aspects ? R"({"M": 2, "T": 1, "O": 1})" : R"({"O": 1})";
  const std::string_view second = aspects ? R"({"M": 1, "T": 1, "O": 1})" : R"({"O": 2})";
  std::string s = "[";
  s += first;
  if (multiple) {
    s += ", ";
    s += second;
    s += ", ...";
  }
  s += "]";
  return s;
}

}  // namespace templ

inline ParaphraseVariant original_paraphrase() {
  return {"original", std::string(templ::kInstructions), std::string(templ::kSteps)};
}

/// Load a paraphrase bank: a JSON array (or JSON Lines) of objects with
/// string fields `id`, `instruction_text` and `steps_text`. The original
/// wording is always first in the result.
inline std::vector<ParaphraseVariant> parse_paraphrase_bank(std::string_view text) {
  std::vector<ParaphraseVariant> out{original_paraphrase()};
  std::set<std::string> ids{"original"};
  std::vector<nlohmann::json> items;
  const auto trimmed = detail::trim(text);
  if (trimmed.empty()) return out;
  try {
    if (trimmed.front() == '[') {
      auto doc = nlohmann::json::parse(trimmed);
      for (auto& item : doc) items.push_back(std::move(item));
    } else {
      for (auto line : detail::split_char(trimmed, '\n'))
        if (!detail::trim(line).empty()) items.push_back(nlohmann::json::parse(line));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("paraphrase bank: ") + e.what());
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    auto field = [&](const char* name) {
      if (!item.is_object() || !item.contains(name) || !item[name].is_string() ||
          detail::trim(item[name].get_ref<const std::string&>()).empty())
        throw ParseError("paraphrase bank entry " + std::to_string(i) + ": missing or empty '" +
                         name + "'");
      return item[name].get<std::string>();
    };
    ParaphraseVariant v{field("id"), field("instruction_text"), field("steps_text")};
    if (!ids.insert(v.id).second) throw ParseError("paraphrase bank: duplicate id '" + v.id + "'");
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<ParaphraseVariant> load_paraphrase_bank(const std::filesystem::path& path) {
  return parse_paraphrase_bank(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Rendering

struct PromptProvenance {
  PromptSpec spec;
  int topic = 0;
  std::string doc;
  std::string paraphrase_id = "original";
  bool truncated = false;
  bool empty_document = false;
};

struct PromptText {
  std::string text;
  PromptProvenance provenance;
};

/// One piece of a rendered prompt. `owner` is the set of feature flags
/// that control whether (or how) the piece appears; 0 means always present.
struct PromptSegment {
  std::string text;
  std::uint8_t owner = 0;
};

namespace detail {

/// Split a step-span template at its markers into owned segments.
inline void append_steps(std::vector<PromptSegment>& out, std::string_view steps,
                         const PromptSpec& spec) {
  static constexpr std::array<std::string_view, 3> markers = {"{aspects}", "{final}", "{multiple}"};
  std::size_t pos = 0;
  while (pos < steps.size()) {
    std::size_t best = std::string_view::npos;
    std::size_t which = 0;
    for (std::size_t m = 0; m < markers.size(); ++m) {
      auto at = steps.find(markers[m], pos);
      if (at < best) {
        best = at;
        which = m;
      }
    }
    if (best == std::string_view::npos) {
      out.push_back({std::string(steps.substr(pos)), 0});
      break;
    }
    if (best > pos) out.push_back({std::string(steps.substr(pos, best - pos)), 0});
    switch (which) {
      case 0:
        out.push_back({spec.has(kAspects) ? std::string(templ::kAspectLines) : std::string(), kAspects});
        break;
      case 1:
        out.push_back({std::string(spec.has(kAspects) ? templ::kFinalWithAspects : templ::kFinalPlain),
                       kAspects});
        break;
      default:
        out.push_back({spec.has(kMultiple) ? templ::multiple_sentence(spec.judge_count) : std::string(),
                       kMultiple});
        break;
    }
    pos = best + markers[which].size();
  }
}

}  // namespace detail

/// Render the prompt as owned segments. Concatenating the texts gives the
/// prompt; render_prompt() does exactly that.
inline std::vector<PromptSegment> render_segments(const PromptSpec& spec, const Topic& topic,
                                                  std::string_view doc_text,
                                                  const ParaphraseVariant& variant = original_paraphrase()) {
  spec.validate();
  if (spec.has(kDescription) && (!topic.description || topic.description->empty()))
    throw ValidationError("topic " + std::to_string(topic.id) + " has no description");
  if (spec.has(kNarrative) && (!topic.narrative || topic.narrative->empty()))
    throw ValidationError("topic " + std::to_string(topic.id) + " has no narrative");

  std::vector<PromptSegment> seg;
  seg.push_back({spec.has(kRole) ? std::string(templ::kRole) : std::string(), kRole});
  seg.push_back({variant.instruction_text + "\n\nQuery\nA person has typed [" + topic.title +
                     "] into a search engine.\n",
                 0});
  const bool context = spec.has(kDescription) || spec.has(kNarrative);
  seg.push_back({context ? std::string(templ::kLookingFor) : std::string(), kDescription | kNarrative});
  seg.push_back({spec.has(kDescription) ? " " + *topic.description : std::string(), kDescription});
  seg.push_back({spec.has(kNarrative) ? " " + *topic.narrative : std::string(), kNarrative});
  seg.push_back({context ? std::string("\n") : std::string(), kDescription | kNarrative});
  std::string result = "\nResult\nConsider the following web page.\n\n";
  result += templ::kBeginPage;
  result += '\n';
  result += doc_text;
  if (!doc_text.empty()) result += '\n';
  result += templ::kEndPage;
  result += "\n\nInstructions\n";
  seg.push_back({std::move(result), 0});
  detail::append_steps(seg, variant.steps_text, spec);
  seg.push_back({" Example: ", 0});
  seg.push_back({templ::example_snippet(spec.has(kAspects), spec.has(kMultiple)), kAspects | kMultiple});
  seg.push_back({"\n\nResults\n" + std::string(templ::kPrimer), 0});
  return seg;
}

/// Fill the template for one (topic, document) pair.
inline PromptText render_prompt(const PromptSpec& spec, const Topic& topic, const DocumentText& doc,
                                const ParaphraseVariant& variant = original_paraphrase(),
                                Diagnostics* diag = nullptr) {
  if (variant.id != spec.paraphrase_id)
    throw ValidationError("paraphrase '" + variant.id + "' does not match spec '" + spec.id() + "'");
  PromptText out;
  for (const auto& s : render_segments(spec, topic, doc.text, variant)) out.text += s.text;
  out.provenance.spec = spec;
  out.provenance.topic = topic.id;
  out.provenance.doc = doc.id;
  out.provenance.paraphrase_id = variant.id;
  out.provenance.truncated = doc.truncated;
  out.provenance.empty_document = doc.text.empty();
  if (doc.text.empty()) warn(diag, "topic " + std::to_string(topic.id) + ": empty document text");
  return out;
}

inline PromptText render_prompt(const PromptSpec& spec, const Topic& topic, std::string_view doc_text,
                                const ParaphraseVariant& variant = original_paraphrase(),
                                Diagnostics* diag = nullptr) {
  DocumentText doc;
  doc.text = std::string(doc_text);
  doc.original_length = doc_text.size();
  doc.empty = doc_text.empty();
  return render_prompt(spec, topic, doc, variant, diag);
}

}  // namespace reljudge
