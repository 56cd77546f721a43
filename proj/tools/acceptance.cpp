// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// check fails. Usage: acceptance [scratch-dir]

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "reljudge/fixture.hpp"
#include "reljudge/pipeline.hpp"

using namespace reljudge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

/// Collects failed expectations for one criterion.
class Check {
public:
  void expect(bool cond, const std::string& what) {
    if (!cond) failures_.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream os;
    os << what << ": got " << got << ", want " << want << " +/- " << tol;
    expect(std::abs(got - want) <= tol, os.str());
  }
  Outcome outcome(std::string summary) const {
    if (failures_.empty()) return {true, std::move(summary)};
    std::string d;
    for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + f;
    return {false, d};
  }

private:
  std::vector<std::string> failures_;
};

const std::map<std::string, double> kReferenceKappa = {
    {"-----", .38}, {"R----", .32}, {"-D---", .35}, {"--N--", .37}, {"---A-", .60}, {"----M", .22},
    {"RD---", .30}, {"R-N--", .33}, {"R--A-", .56}, {"R---M", .20}, {"-DN--", .37}, {"-D-A-", .59},
    {"-D--M", .24}, {"--NA-", .62}, {"--N-M", .29}, {"---AM", .42}, {"RDN--", .34}, {"RD-A-", .53},
    {"RD--M", .23}, {"R-NA-", .59}, {"R-N-M", .28}, {"R--AM", .32}, {"-DNA-", .64}, {"-DN-M", .31},
    {"-D-AM", .42}, {"--NAM", .49}, {"RDNA-", .61}, {"RDN-M", .29}, {"RD-AM", .34}, {"R-NAM", .39},
    {"-DNAM", .50}, {"RDNAM", .51},
};

Outcome kappa_cross_check() {
  Check c;
  const double k = cohens_kappa(ConfusionMatrix2x2::of(866, 95, 405, 1585));
  c.near(k, 0.644, 0.001, "kappa");
  return c.outcome("kappa = " + detail::format_fixed(k, 4));
}

Outcome mae_cross_check() {
  Check c;
  const double e = mae(ConfusionMatrix2x2::of(866, 95, 405, 1585));
  c.near(e, 500.0 / 2951.0, 1e-12, "MAE vs 500/2951");
  c.near(e, 0.169, 0.001, "MAE");
  return c.outcome("hard MAE = " + detail::format_fixed(e, 4));
}

Outcome feature_effect_reproduction() {
  Check c;
  const auto rep = feature_effects(kReferenceKappa);
  const std::map<char, double> want = {{'A', 0.208}, {'M', -0.127}, {'R', -0.042}, {'N', 0.057}, {'D', 0.013}};
  std::string summary;
  for (const auto& [f, w] : want) {
    const auto& e = rep.of(f);
    c.near(e.delta, w, 0.01, std::string(1, f));
    c.expect(e.pairs == 16, std::string(1, f) + " uses 16 pairs");
    summary += std::string(summary.empty() ? "" : " ") + f + "=" + (e.delta >= 0 ? "+" : "") + detail::format_fixed(e.delta, 4);
  }
  return c.outcome(summary);
}

// RBO as the explicit sum of per-depth agreement terms plus the phi^N tail.
double rbo_term_sum(const std::vector<std::string>& s, const std::vector<std::string>& t, double phi) {
  double sum = 0.0;
  for (std::size_t d = 1; d <= s.size(); ++d) {
    std::set<std::string> a(s.begin(), s.begin() + static_cast<long>(d));
    std::size_t x = 0;
    for (std::size_t i = 0; i < d; ++i) x += a.count(t[i]);
    sum += (1.0 - phi) * std::pow(phi, static_cast<double>(d - 1)) * static_cast<double>(x) / static_cast<double>(d);
  }
  return sum + std::pow(phi, static_cast<double>(s.size()));
}

Outcome rbo_properties() {
  Check c;
  std::size_t compared = 0;
  for (std::size_t n = 1; n <= 7; ++n) {
    std::vector<std::string> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(std::string(1, static_cast<char>('a' + i)));
    auto rev = s;
    std::reverse(rev.begin(), rev.end());
    for (double phi : {0.7, 0.9}) {
      const auto tag = " (N=" + std::to_string(n) + ", phi=" + detail::format_double(phi) + ")";
      c.near(rbo_normalized(s, s, phi), 1.0, 1e-12, "identity" + tag);
      if (n > 1) c.near(rbo_normalized(s, rev, phi), 0.0, 1e-12, "reversal" + tag);
      double brute_min = 2.0;
      auto t = s;
      do {
        const double raw = rbo_conjoint(s, t, phi);
        const double oracle = rbo_term_sum(s, t, phi);
        if (std::abs(raw - oracle) > 1e-12) c.expect(false, "term-sum mismatch" + tag);
        brute_min = std::min(brute_min, oracle);
        ++compared;
      } while (std::next_permutation(t.begin(), t.end()));
      c.near(rbo_conjoint(s, rev, phi), brute_min, 1e-12, "reversal is the minimum" + tag);
    }
  }
  return c.outcome(std::to_string(compared) + " permutations checked against the term-sum oracle");
}

double ap_brute_force(const std::vector<int>& rel, int total_relevant) {
  if (total_relevant == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    double hits = 0.0;
    for (std::size_t j = 0; j <= k; ++j) hits += rel[j];
    sum += hits / static_cast<double>(k + 1);
  }
  return sum / total_relevant;
}

Outcome metric_oracles() {
  Check c;
  c.near(precision_at_k(std::vector<int>{1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1}, 10), 0.3, 1e-12, "P@10");
  c.near(rbp(std::vector<int>{1}, 100, 0.6), 0.4, 1e-12, "RBP rank 1");
  c.near(rbp(std::vector<int>{1, 0, 1}, 100, 0.6), 0.544, 1e-12, "RBP ranks 1,3");
  c.near(average_precision(std::vector<int>{1, 0, 1}, 100, 2), 0.833, 0.0005, "AP ranks 1,3 of R=2");

  // The same fixtures through run scoring, which resolves documents to labels.
  LabelSet gold("gold");
  reljudge::Run run;
  run.tag = "r";
  for (int i = 0; i < 3; ++i) run.ranking[1].push_back({"d" + std::to_string(i), i + 1, 3.0 - i});
  gold.insert({1, "d0"}, 2);
  gold.insert({1, "d1"}, 0);
  gold.insert({1, "d2"}, 1);
  c.near(score_run(run, gold, MetricSpec::parse("MAP@100"), {1}).scores.at(1), 5.0 / 6.0, 1e-12, "score_run AP");
  c.near(score_run(run, gold, MetricSpec::parse("RBP@100,phi=0.6"), {1}).scores.at(1), 0.544, 1e-12, "score_run RBP");

  std::mt19937_64 rng(20240611);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + detail::uniform_index(rng, 6);
    std::vector<int> rel(n);
    int in_list = 0;
    for (auto& r : rel) in_list += r = static_cast<int>(detail::uniform_index(rng, 2));
    const int total = in_list + static_cast<int>(detail::uniform_index(rng, 3));
    const double got = average_precision(rel, 100, total);
    if (std::abs(got - ap_brute_force(rel, total)) > 1e-12) {
      c.expect(false, "AP oracle mismatch in case " + std::to_string(trial));
      break;
    }
  }
  return c.outcome("hand fixtures and 1000 random rankings agree");
}

Manifest mock_manifest(const fixture::Paths& p, double flip, const std::string& out) {
  auto m = load_manifest(p.manifest);
  m.mock.flip_rate = flip;
  m.out = p.root / out;
  return m;
}

Outcome end_to_end_mock(const fs::path& scratch) {
  Check c;
  const auto p = fixture::write(scratch / "e2e", {},
                                {{"sample", {{"n_per_grade", 1000}}},
                                 {"prompts", {{"specs", {"-DNA-", "-----"}}, {"paraphrases", nullptr}}},
                                 {"judge", {{"concurrency", 1}}}});
  std::string summary;
  {
    const auto m = mock_manifest(p, 0.0, "flip0");
    const auto stats = cmd_label(m);
    c.expect(stats.items == 6000, "3000 pairs x 2 prompts labelled (got " + std::to_string(stats.items) + ")");
    const auto agree = cmd_agree(m);
    for (const auto& row : agree["rows"]) {
      const auto spec = row["spec"].get<std::string>();
      c.expect(row["n"] == 3000, spec + " covers 3000 pairs");
      c.near(row["mae"]["point"].get<double>(), 0.0, 1e-12, spec + " MAE");
      c.near(row["kappa"]["point"].get<double>(), 1.0, 1e-12, spec + " kappa");
      c.near(row["auc"]["point"].get<double>(), 1.0, 1e-12, spec + " AUC");
    }
    const auto cons = cmd_consistency(m);
    c.expect(cons["rows"].size() == 9, "nine consistency rows");
    for (const auto& row : cons["rows"]) {
      const auto tag = row["metric"].get<std::string>() + "/" + row["level"].get<std::string>();
      c.near(row["rbo_normalized"].get<double>(), 1.0, 1e-12, tag + " RBO");
      c.near(row["kendall_tau"].get<double>(), 1.0, 1e-12, tag + " tau");
    }
    summary = "flip 0: MAE 0, kappa 1, AUC 1, consistency 1";
  }
  {
    const auto m = mock_manifest(p, 0.5, "flip50");
    cmd_label(m);
    const auto agree = cmd_agree(m);
    for (const auto& row : agree["rows"]) {
      const auto k = row["kappa"]["point"].get<double>();
      c.near(k, 0.0, 0.05, row["spec"].get<std::string>() + " kappa at flip 0.5");
      summary += "; flip 0.5 " + row["spec"].get<std::string>() + " kappa " + detail::format_fixed(k, 3);
    }
  }
  return c.outcome(summary);
}

PairedLabels synthetic(const std::string& name, const std::vector<int>& gold, const std::vector<int>& pred) {
  PairedLabels p;
  p.name = name;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    p.topic.push_back(static_cast<int>(i % 7));
    p.grade.push_back(gold[i] * 2);
    p.gold.push_back(gold[i]);
    p.score.push_back(pred[i] * 2.0);
    p.unit.push_back(pred[i]);
  }
  return p;
}

Outcome split_selection_property() {
  Check c;
  // One prompt far better than the rest.
  std::mt19937_64 rng(17);
  const std::size_t n = 400;
  std::vector<int> gold(n);
  for (auto& g : gold) g = static_cast<int>(detail::uniform_index(rng, 2));
  std::vector<PairedLabels> dom;
  for (double err : {0.3, 0.3, 0.01, 0.3, 0.3}) {
    std::vector<int> pred(n);
    for (std::size_t i = 0; i < n; ++i) pred[i] = detail::uniform_unit(rng) < err ? 1 - gold[i] : gold[i];
    dom.push_back(synthetic("p" + std::to_string(dom.size()), gold, pred));
  }
  const auto d = split_selection(dom, 0, 1000, 99);
  c.expect(d.selected.at("p2") == 1000, "dominant prompt selected " + std::to_string(d.selected.at("p2")) + "/1000");
  c.expect(d.beats_baseline == 1000, "dominant prompt beat baseline " + std::to_string(d.beats_baseline) + "/1000");

  // Exchangeable prompts: each errs only within its own block, identically.
  const std::size_t k = 5, block = 60, m = k * block;
  std::vector<int> g2(m);
  for (std::size_t i = 0; i < m; ++i) g2[i] = static_cast<int>((i / 2) % 2);
  std::vector<PairedLabels> sym;
  for (std::size_t j = 0; j < k; ++j) {
    auto pred = g2;
    for (std::size_t e = 0; e < 15; ++e) {
      const auto i = j * block + 4 * e;
      pred[i] = 1 - pred[i];
      if (e % 2 == 0) pred[i + 2] = 1 - pred[i + 2];
    }
    sym.push_back(synthetic("q" + std::to_string(j), g2, pred));
  }
  const auto s = split_selection(sym, 0, 1000, 2024);
  std::vector<std::size_t> counts;
  for (const auto& q : sym) counts.push_back(s.selected.at(q.name));
  const double pval = chi_square_uniform_p(counts);
  c.expect(pval > 0.01, "uniformity p = " + detail::format_double(pval));
  return c.outcome("dominant 1000/1000; exchangeable chi-square p = " + detail::format_fixed(pval, 3));
}

Outcome shape_and_provenance(const fs::path& scratch, fs::path* out_dir) {
  Check c;
  const auto p = fixture::write(scratch / "full", {}, {{"sample", {{"n_per_grade", 60}}}});
  const auto m = load_manifest(p.manifest);
  cmd_label(m);
  cmd_agree(m);
  cmd_feature_effects(m);
  cmd_paraphrase_spread(m);
  cmd_consistency(m);
  cmd_split_select(m);
  cmd_report(m.out);
  *out_dir = m.out;
  const auto report = detail::read_json(m.out / "report.json");
  c.expect(report["agreement"]["rows"].size() == 32, "32 agreement rows");
  for (const auto& row : report["agreement"]["rows"])
    for (const char* key : {"mae", "kappa", "auc"})
      for (const char* f : {"point", "lo", "hi"}) c.expect(row[key][f].is_number(), std::string(key) + "." + f + " present");
  c.expect(report["feature_effects"]["effects"].size() == 5, "five feature effects");
  c.expect(report["paraphrase_spread"]["rows"].size() == 42, "one spread row per paraphrase");
  c.expect(report["consistency"]["rows"].size() == 9, "nine consistency rows");
  c.expect(report["split_selection"]["iterations"] == m.split_iterations, "split iterations recorded");
  for (const auto& [name, section] : report.items()) {
    const auto& prov = section["provenance"];
    for (const char* key : {"code_version", "manifest_sha256", "model", "params", "seeds"})
      c.expect(prov.contains(key) && !prov[key].is_null(), name + " provenance." + key);
  }
  for (const auto& pr : report["label_summary"]["prompts"])
    c.expect(pr["sha256"].get<std::string>().size() == 64, "label hash for " + pr["spec"].get<std::string>());
  return c.outcome("absolute model values are out of scope; report shape and provenance complete");
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = detail::read_file(e.path());
  return files;
}

Outcome determinism(const fs::path& out_dir) {
  Check c;
  if (out_dir.empty()) return {false, "no pipeline output to repeat"};
  const auto m = load_manifest(out_dir.parent_path() / "manifest.json");
  const auto before = snapshot(out_dir);
  const auto stats = cmd_label(m);
  c.expect(stats.network_calls == 0, "warm cache made " + std::to_string(stats.network_calls) + " calls");
  cmd_agree(m);
  cmd_feature_effects(m);
  cmd_paraphrase_spread(m);
  cmd_consistency(m);
  cmd_split_select(m);
  cmd_report(m.out);
  const auto after = snapshot(out_dir);
  c.expect(before.size() == after.size(), "same set of files");
  for (const auto& [name, bytes] : before) {
    auto it = after.find(name);
    c.expect(it != after.end() && it->second == bytes, name + " identical");
  }
  return c.outcome(std::to_string(before.size()) + " output files byte-identical on rerun");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path scratch = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "reljudge_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  fs::path full_out;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"kappa cross-check", kappa_cross_check},
      {"MAE cross-check", mae_cross_check},
      {"feature-effect reproduction", feature_effect_reproduction},
      {"RBO properties", rbo_properties},
      {"metric oracles", metric_oracles},
      {"end-to-end mock pipeline", [&] { return end_to_end_mock(scratch); }},
      {"split-selection property", split_selection_property},
      {"model-dependent values: shape and provenance", [&] { return shape_and_provenance(scratch, &full_out); }},
      {"determinism", [&] { return determinism(full_out); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.ok) ++failed;
    std::cout << (o.ok ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
