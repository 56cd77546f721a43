// reljudge: label a TREC sample with an LLM judge under templated prompts and
// report how well those labels agree with the human ones.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "reljudge/pipeline.hpp"

namespace {

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evaluate LLM relevance labels against TREC judgements"};
  app.set_version_flag("--version", std::string(reljudge::kVersion));
  app.require_subcommand(1);

  std::string manifest_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> flip_rate;
  bool mock = false;
  app.add_option("-m,--manifest", manifest_path, "Experiment manifest (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override every seed in the manifest");
  app.add_option("-o,--out", out, "Override the output directory");

  auto* label = app.add_subcommand("label", "Judge the stratified sample under every configured prompt");
  label->add_flag("--mock", mock, "Use the deterministic mock judge instead of the HTTP endpoint");
  label->add_option("--flip-rate", flip_rate, "Mock judge: probability of flipping the gold class")
      ->check(CLI::Range(0.0, 1.0));
  app.add_subcommand("agree", "MAE, kappa and AUC per prompt with bootstrap intervals");
  app.add_subcommand("feature-effects", "Average kappa change from adding each prompt feature");
  app.add_subcommand("paraphrase-spread", "Kappa across paraphrased wordings of one prompt");
  app.add_subcommand("consistency", "RBO and Kendall tau between gold- and model-induced orderings");
  app.add_subcommand("split-select", "How often the prompt chosen on one split wins on the other");
  app.add_subcommand("report", "Combine every output into report.txt and report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto m = reljudge::load_manifest(manifest_path);
    if (seed) m.override_seed(*seed);
    if (out) m.out = *out;
    if (mock) m.use_mock = true;
    if (flip_rate) m.mock.flip_rate = *flip_rate;
    std::filesystem::create_directories(m.out);

    const auto* sub = app.get_subcommands().front();
    const auto name = sub->get_name();
    if (name == "label") {
      const auto s = reljudge::cmd_label(m);
      std::cout << "labelled " << s.items << " items: " << s.cache_hits << " from cache, " << s.network_calls
                << " network calls, " << s.unparseable << " unparseable\n";
    } else if (name == "agree") {
      reljudge::cmd_agree(m);
      std::cout << "wrote " << (m.out / "agreement.csv").string() << "\n";
    } else if (name == "feature-effects") {
      reljudge::cmd_feature_effects(m);
      std::cout << "wrote " << (m.out / "feature_effects.csv").string() << "\n";
    } else if (name == "paraphrase-spread") {
      reljudge::cmd_paraphrase_spread(m);
      std::cout << "wrote " << (m.out / "paraphrase_spread.csv").string() << "\n";
    } else if (name == "consistency") {
      reljudge::cmd_consistency(m);
      std::cout << "wrote " << (m.out / "consistency.csv").string() << "\n";
    } else if (name == "split-select") {
      reljudge::cmd_split_select(m);
      std::cout << "wrote " << (m.out / "split_selection.csv").string() << "\n";
    } else if (name == "report") {
      std::cout << reljudge::cmd_report(m.out);
    }
  } catch (const reljudge::Error& e) {
    return fail(e.kind(), e.what(), e.kind() == "label_incomplete" ? 3 : 2);
  } catch (const std::exception& e) {
    return fail("internal_error", e.what(), 1);
  }
  return 0;
}
