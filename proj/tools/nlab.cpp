#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "nlab/experiment.hpp"
#include "nlab/parallel.hpp"

namespace {

void print_table(const nlab::Summary& s) {
  std::size_t width = 0;
  for (const auto& [k, v] : s.entries()) width = std::max(width, k.size());
  for (const auto& [k, v] : s.entries()) std::cout << fmt::format("  {:<{}}  {}\n", k, width, v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlab: variational, Nelson and stochastic Noether verification pipelines"};
  app.require_subcommand(1);

  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: machine parallelism)")->check(CLI::PositiveNumber);

  std::string config;
  std::string output;
  auto* run = app.add_subcommand("run", "Execute an experiment config");
  run->add_option("config", config, "Path to the JSON experiment config")->required();
  run->add_option("--output", output, "Output directory (overrides the config)");
  run->add_option("--threads", threads, "Worker threads (default: machine parallelism)")->check(CLI::PositiveNumber);

  auto* catalog = app.add_subcommand("catalog", "List catalog keys and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return nlab::kExitInvalid;
  }

  if (catalog->parsed()) {
    std::cout << nlab::catalog_listing();
    return nlab::kExitPass;
  }

  if (threads > 0) nlab::parallel::set_threads(threads);

  nlab::RunOverrides ov;
  if (!output.empty()) ov.output = output;
  if (const char* env = std::getenv("NLAB_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const std::string text(env);
      if (text.front() == '-') throw std::invalid_argument("negative");
      ov.seed = std::stoull(text, &used, 10);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      std::cerr << fmt::format("error: NLAB_SEED='{}' is not a non-negative integer\n", env);
      return nlab::kExitInvalid;
    }
  }

  const nlab::RunResult res = nlab::run_experiment_file(config, ov);
  if (!res.error.empty()) std::cerr << "error: " << res.error << '\n';
  print_table(res.summary);
  if (!res.output.empty()) std::cout << fmt::format("artifacts: {}\n", res.output.string());
  return res.exit_code;
}
