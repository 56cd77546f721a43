// Write a synthetic collection plus a mock-judge manifest for dry runs.

#include <iostream>

#include <CLI11.hpp>

#include "reljudge/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic TREC-style collection"};
  std::string dir;
  reljudge::fixture::Config cfg;
  int n_per_grade = 100;
  app.add_option("dir", dir, "Output directory")->required();
  app.add_option("--topics", cfg.topics, "Number of topics")->check(CLI::PositiveNumber);
  app.add_option("--seed", cfg.seed, "Generator and manifest seed");
  app.add_option("--n-per-grade", n_per_grade, "Sample size per grade in the manifest")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  try {
    const auto p = reljudge::fixture::write(dir, cfg, {{"sample", {{"n_per_grade", n_per_grade}}}});
    std::cout << "wrote " << p.manifest.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
