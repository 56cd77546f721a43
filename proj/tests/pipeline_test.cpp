#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>

#include "reljudge/fixture.hpp"
#include "reljudge/pipeline.hpp"

using namespace reljudge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("reljudge_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fixture::Config small() {
  fixture::Config cfg;
  cfg.topics = 6;
  cfg.per_grade = {8, 6, 6};
  cfg.groups = 3;
  cfg.paraphrases = 4;
  return cfg;
}

/// Mock judge that answers 500 for chosen documents until healed.
class FlakyEndpoint : public Endpoint {
public:
  FlakyEndpoint(LabelSet gold, std::set<std::string> broken) : mock_(std::move(gold), {}), broken_(std::move(broken)) {}
  HttpResponse post(const JudgeRequest& req) override {
    ++calls;
    if (!healed && broken_.count(req.provenance.doc)) return {500, "unavailable"};
    return mock_.post(req);
  }
  std::atomic<int> calls{0};
  bool healed = false;

private:
  MockEndpoint mock_;
  std::set<std::string> broken_;
};

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = detail::read_file(e.path());
  return out;
}

}  // namespace

TEST(ExpandSpecs, AllAndParaphrasesInCanonicalOrder) {
  const auto dir = scratch("expand");
  const auto p = fixture::write(dir, small());
  auto m = load_manifest(p.manifest);
  const auto bank = load_bank(m);
  ASSERT_EQ(bank.size(), 5u);  // original + 4
  const auto specs = expand_specs(m, bank);
  ASSERT_EQ(specs.size(), 32u + 4u);
  EXPECT_EQ(specs.front().id(), "-----");
  EXPECT_EQ(specs.back().id(), "RDNAM");
  std::vector<std::string> dna;
  for (const auto& s : specs)
    if (s.label() == "-DNA-") dna.push_back(s.id());
  EXPECT_EQ(dna, (std::vector<std::string>{"-DNA-", "-DNA-@p01", "-DNA-@p02", "-DNA-@p03", "-DNA-@p04"}));

  m.specs = {"-DNA-@p99"};
  EXPECT_THROW(expand_specs(m, bank), ValidationError);
}

TEST(Manifest, RequiresSeedAndExistingInputs) {
  const auto dir = scratch("manifest");
  const auto p = fixture::write(dir, small());
  auto j = nlohmann::json::parse(detail::read_file(p.manifest));
  auto no_seed = j;
  no_seed.erase("seed");
  EXPECT_THROW(parse_manifest(no_seed.dump(), p.manifest), ValidationError);
  auto bad_path = j;
  bad_path["corpus"]["qrels"] = "missing.txt";
  EXPECT_THROW(parse_manifest(bad_path.dump(), p.manifest), ValidationError);
  auto bad_mae = j;
  bad_mae["analysis"] = {{"mae", "soft"}};
  EXPECT_THROW(parse_manifest(bad_mae.dump(), p.manifest), ValidationError);

  auto m = parse_manifest(j.dump(), p.manifest);
  m.override_seed(99);
  EXPECT_EQ(m.sample_seed, 99u);
  EXPECT_EQ(m.bootstrap.seed, 99u);
  EXPECT_EQ(m.split_seed, 99u);
  EXPECT_EQ(m.mock.seed, 99u);
}

TEST(Label, FailedItemsAreRecordedAndResumeFromCache) {
  const auto dir = scratch("resume");
  const auto p = fixture::write(dir, small(), {{"sample", {{"n_per_grade", 10}}}, {"prompts", {{"specs", {"-----", "--N--"}}}}});
  auto m = load_manifest(p.manifest);
  m.retry.max_attempts = 1;
  auto gold = parse_qrels(detail::read_file(m.qrels));
  const auto sample = stratified_sample(gold, m.n_per_grade, m.sample_seed);
  std::set<std::string> broken;
  for (const auto& [k, v] : sample.entries())
    if (broken.size() < 3) broken.insert(k.doc);
  FlakyEndpoint endpoint(gold, broken);

  try {
    cmd_label(m, &endpoint);
    FAIL() << "expected label_incomplete";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "label_incomplete");
  }
  EXPECT_EQ(endpoint.calls.load(), 60);
  const auto errors = detail::read_file(m.out / "label_errors.jsonl");
  EXPECT_EQ(std::count(errors.begin(), errors.end(), '\n'), 6);  // 3 documents x 2 prompts
  auto summary = detail::read_json(m.out / "label_summary.json");
  EXPECT_EQ(summary["prompts"][0]["errors"], 3);

  // Resume: only the failed items reach the endpoint again.
  endpoint.healed = true;
  endpoint.calls = 0;
  const auto stats = cmd_label(m, &endpoint);
  EXPECT_EQ(endpoint.calls.load(), 6);
  EXPECT_EQ(stats.cache_hits, 54u);
  EXPECT_EQ(stats.errors, 0u);
  EXPECT_FALSE(fs::exists(m.out / "label_errors.jsonl"));
}

TEST(Label, OutputIndependentOfConcurrency) {
  const auto dir = scratch("threads");
  const auto p = fixture::write(dir, small(), {{"sample", {{"n_per_grade", 15}}}, {"prompts", {{"specs", {"all"}}}}});
  auto m = load_manifest(p.manifest);
  m.cache_dir.reset();
  m.concurrency = 1;
  m.out = dir / "one";
  cmd_label(m);
  m.concurrency = 4;
  m.out = dir / "four";
  cmd_label(m);
  EXPECT_EQ(snapshot(dir / "one"), snapshot(dir / "four"));
}

TEST(Agree, ReplaysReferenceConfusionMatrixInHardMode) {
  // 2951 labelled pairs laid out to match a reference -DNA- confusion
  // matrix: gold rows (non-relevant, relevant), predicted columns.
  const auto dir = scratch("table");
  const auto p = fixture::write(dir, small());
  auto m = load_manifest(p.manifest);
  m.mae_mode = MaeMode::hard;
  fs::create_directories(m.out / "labels");
  std::string qrels, tsv(kLabelHeader);
  tsv += '\n';
  int i = 0;
  auto emit = [&](int n, int gold, double score) {
    for (int k = 0; k < n; ++k, ++i) {
      const auto topic = std::to_string(1 + i % 50), doc = "d" + std::to_string(i);
      qrels += topic + " 0 " + doc + " " + std::to_string(gold) + "\n";
      tsv += topic + "\t" + doc + "\t" + detail::format_double(score) + "\t" + (score >= 1 ? "1" : "0") + "\t100\tok\t\n";
    }
  };
  emit(866, 0, 0);
  emit(95, 0, 2);
  emit(405, 2, 0);
  emit(1585, 2, 2);
  detail::write_file_atomic(m.out / "sample.qrels", qrels);
  detail::write_file_atomic(m.out / "labels/-DNA-.tsv", tsv);
  detail::write_json(m.out / "label_summary.json",
                     {{"prompts", {{{"spec", "-DNA-"}, {"judge_count", 1}, {"file", "labels/-DNA-.tsv"}}}}});
  const auto out = cmd_agree(m);
  ASSERT_EQ(out["rows"].size(), 1u);
  EXPECT_NEAR(out["rows"][0]["kappa"]["point"].get<double>(), 0.644, 5e-4);
  EXPECT_NEAR(out["rows"][0]["mae"]["point"].get<double>(), 500.0 / 2951.0, 1e-12);
  EXPECT_EQ(out["rows"][0]["n"], 2951);
}

TEST(Report, ListsMissingInputs) {
  const auto dir = scratch("report");
  try {
    cmd_report(dir);
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("agreement.json"), std::string::npos);
    EXPECT_NE(what.find("split_selection.json"), std::string::npos);
  }
}

TEST(Pipeline, FullRunIsDeterministic) {
  const auto dir = scratch("full");
  const auto p = fixture::write(dir, small(), {{"sample", {{"n_per_grade", 20}}}});
  const auto m = load_manifest(p.manifest);
  auto run_all = [&] {
    cmd_label(m);
    cmd_agree(m);
    cmd_feature_effects(m);
    cmd_paraphrase_spread(m);
    cmd_consistency(m);
    cmd_split_select(m);
    return cmd_report(m.out);
  };
  const auto text = run_all();
  EXPECT_NE(text.find("Feature effects on kappa"), std::string::npos);
  const auto first = snapshot(m.out);
  run_all();
  EXPECT_EQ(snapshot(m.out), first);

  const auto spread = detail::read_json(m.out / "paraphrase_spread.json");
  EXPECT_EQ(spread["rows"].size(), 4u);  // variants only; the original wording is left out
  for (std::size_t i = 1; i < spread["rows"].size(); ++i)
    EXPECT_LE(spread["rows"][i - 1]["mean_kappa"].get<double>(), spread["rows"][i]["mean_kappa"].get<double>());
}

TEST(DetailTable, AlignsColumns) {
  const auto t = detail::text_table({{"a", "bb"}, {"ccc", "d"}});
  EXPECT_EQ(t, "a    bb\n-------\nccc  d\n");
  EXPECT_EQ(detail::csv({{"x,y", "z\"q"}}), "\"x,y\",\"z\"\"q\"\n");
}
