#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "patrolscope/corpus.hpp"
#include "patrolscope/timeutil.hpp"

namespace patrolscope::synth {

// Deterministic splittable RNG so per-agent streams are independent of
// worker count and platform.
std::uint64_t splitmix64(std::uint64_t& state);

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);  // inclusive bounds
  double normal();                  // Box-Muller
  // Log-normal with the mode pinned: exp(N(ln(mode) + sigma^2, sigma)).
  double lognormal_mode(double mode, double sigma);

private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct CitySpec {
  std::string city_id = "c01";
  double origin_lat = 40.0;   // SW corner of the grid
  double origin_lon = -86.0;
  int grid_rows = 8;
  int grid_cols = 8;
  double cell_m = 500.0;
  int n_stations = 2;
  int n_officers = 50;
  int n_civilians = 150;
  std::string tz = "UTC-05";  // fixed-offset zones keep local scheduling exact
};

struct SynthSpec {
  std::uint64_t rng_seed = 1;
  timeutil::CivilDate start_date{2017, 6, 1};
  int n_days = 30;
  double shift_start_hour_mean = 8.0;
  double shift_start_hour_sd = 0.75;
  double shift_length_h_mean = 8.0;
  double shift_length_h_sd = 0.5;
  int work_days_per_week = 5;
  double ping_gap_mode_min = 10.0;  // modal minutes between pings
  double ping_gap_sigma = 0.6;
  double gps_noise_m = 25.0;
  std::string patrol_policy = "uniform";  // or "rel_black"
  double policy_gain = 0.5;               // weight = 1 + gain * rel_black
  std::vector<CitySpec> cities{CitySpec{}};

  void validate() const;  // throws InputError on infeasible combinations
};

SynthSpec parse_synth_spec(const std::string& json_text);

struct TruthShift {
  std::int64_t start_ts = 0;  // first / last station ping of the planted shift
  std::int64_t end_ts = 0;
};

struct GroundTruth {
  std::set<std::string> officer_ids;
  std::map<std::string, std::string> home_cell;  // device -> Geohash7 code
  std::map<std::string, std::string> officer_city;
  std::map<std::string, std::vector<TruthShift>> shifts;  // sorted per device
  std::map<std::string, double> expected_bg_hours;
  std::map<std::string, double> officers_per_city;
  std::map<std::string, std::map<std::string, double>> dept_composition;
  std::map<std::string, double> officer_homes_by_zone;  // zone = home bg_id
  std::map<std::string, double> actions_by_bg;
};

struct SynthCorpus {
  std::vector<io::DeviceStream> devices;  // sorted by device_id
  std::vector<io::Station> stations;
  std::vector<io::BlockGroup> bgs;
  io::CityTable city_table;
  GroundTruth truth;
  timeutil::CivilDate start_date;
  timeutil::CivilDate end_date;  // exclusive
  std::map<std::string, timeutil::Timezone> tz_by_city;

  io::StudyWindow window() const;
};

// Deterministic for a given spec; worker count never changes the output.
// Civilian devices are post-checked so they can never reach 5 station days
// in any month.
SynthCorpus generate(const SynthSpec& spec, unsigned workers = 1);

// Emits pings.csv, stations.geojson, blockgroups.geojson, bg_attributes.csv,
// city_table.csv, actions.csv, employees.csv, composition.csv, zones.csv and
// truth.json into dir, in the loader formats.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir,
                  const std::string& config_hash);

GroundTruth load_truth(const std::filesystem::path& truth_json);

struct Detection {
  std::set<std::string> officer_ids;
  std::map<std::string, std::vector<TruthShift>> shift_intervals;
  std::map<std::string, std::string> home_cell_h1;
  std::map<std::string, double> bg_hours;
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double mean_iou = 0.0;      // over truth shifts, best-match IoU per shift
  double hours_rho = 0.0;     // detected vs planted expected hours, key union
  double home_hit_rate = 0.0; // detected officers whose H1 cell matches truth
};

Metrics score(const Detection& detected, const GroundTruth& truth);

}  // namespace patrolscope::synth
