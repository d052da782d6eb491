#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patrolscope/corpus.hpp"
#include "patrolscope/econ.hpp"
#include "patrolscope/presence.hpp"
#include "patrolscope/shift.hpp"
#include "patrolscope/synth.hpp"

namespace patrolscope::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct Thresholds {
  int station_days_min = 5;
  double shift_min_h = 4.0;
  std::optional<double> shift_max_h;
  double bracket_max_h = 24.0;
  bool require_same_station = false;
};

struct InputPaths {
  std::filesystem::path pings;
  std::filesystem::path stations;
  std::filesystem::path bg_geometry;
  std::filesystem::path bg_attributes;
  std::filesystem::path city_table;
  std::filesystem::path actions;      // optional bg_id,count table
  std::filesystem::path employees;    // optional city_id,count table
  std::filesystem::path composition;  // optional city_id,<group shares> table
  std::filesystem::path zones;        // optional zone_id,count table
};

struct RunConfig {
  std::filesystem::path output_dir = "out";
  unsigned workers = 1;
  std::uint64_t rng_seed = 1;
  double max_reject_fraction = 0.01;
  io::StudyWindow window;
  InputPaths inputs;
  Thresholds thresholds;
  presence::PresenceConfig presence_cfg;
  std::vector<econ::ModelSpec> models;  // defaults installed when empty
  std::vector<std::pair<std::string, std::vector<std::string>>> decomp_blocks;
  std::optional<synth::SynthSpec> synth_spec;
  std::string config_hash;  // over the canonical config, workers excluded
};

const std::vector<std::string>& subcommands();

// Parses the JSON config, applies --set key.path=value overrides, then the
// worker-count environment override (unless --set pinned workers), and
// computes the config hash.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<unsigned> env_workers);

// Executes one subcommand (or the full chain for "all"), writing artifacts
// and run_report.json under cfg.output_dir. Throws InputError / InternalError
// on failure after dropping a FAILED marker; returns 0 otherwise.
int run(const std::string& subcommand, const RunConfig& cfg);

}  // namespace patrolscope::pipeline
