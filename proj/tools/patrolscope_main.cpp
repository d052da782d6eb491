#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patrolscope/csv.hpp"
#include "patrolscope/errors.hpp"
#include "patrolscope/pipeline.hpp"

namespace {

std::optional<unsigned> workers_from_env() {
  const char* raw = std::getenv("PATROLSCOPE_WORKERS");
  if (!raw || !*raw) return std::nullopt;
  const auto n = patrolscope::csvutil::parse_int(raw);
  if (!n || *n < 1) {
    throw patrolscope::InputError(std::string("PATROLSCOPE_WORKERS must be a positive integer, got '") +
                                  raw + "'");
  }
  return static_cast<unsigned>(*n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patrolscope: police-presence measurement from device trajectories"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "JSON run configuration")->required();
  app.add_option("--set", overrides,
                 "Override a config value, e.g. --set thresholds.shift_min_h=6")
      ->take_all();

  app.add_subcommand("validate", "Load and check all configured inputs; write rejects.csv");
  app.add_subcommand("synth", "Generate the synthetic corpus described by the config");
  app.add_subcommand("qualify", "Identify device-months that qualify as officers");
  app.add_subcommand("homes", "Infer per-half home cells for qualified devices");
  app.add_subcommand("shifts", "Extract patrol shifts for qualified devices");
  app.add_subcommand("presence", "Aggregate patrol dwell time into block-group hours");
  app.add_subcommand("regress", "Fit disparity regressions and decompositions");
  app.add_subcommand("validate-city", "Compare detected officers against external benchmarks");
  app.add_subcommand("all", "Run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto cfg =
        patrolscope::pipeline::load_config(config_path, overrides, workers_from_env());
    const std::string sub = app.get_subcommands().front()->get_name();
    return patrolscope::pipeline::run(sub, cfg);
  } catch (const patrolscope::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
