#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <doctest.h>

#include "patrolscope/corpus.hpp"
#include "patrolscope/errors.hpp"
#include "patrolscope/officer.hpp"
#include "patrolscope/presence.hpp"
#include "patrolscope/shift.hpp"
#include "patrolscope/synth.hpp"

using namespace patrolscope;
namespace fs = std::filesystem;

namespace {

synth::SynthSpec small_spec() {
  synth::SynthSpec spec;
  spec.rng_seed = 42;
  spec.n_days = 14;
  spec.gps_noise_m = 0.0;
  spec.patrol_policy = "rel_black";
  spec.policy_gain = 0.5;
  spec.cities[0].grid_rows = 6;
  spec.cities[0].grid_cols = 6;
  spec.cities[0].n_stations = 2;
  spec.cities[0].n_officers = 5;
  spec.cities[0].n_civilians = 15;
  return spec;
}

// Enough officer-days that per-cell sampling noise stops dominating the
// hours correlation.
synth::SynthSpec recovery_spec(double noise_m) {
  auto spec = small_spec();
  spec.rng_seed = noise_m > 0.0 ? 7 : 42;
  spec.n_days = 30;
  spec.gps_noise_m = noise_m;
  spec.policy_gain = 2.0;
  spec.cities[0].n_officers = 8;
  spec.cities[0].n_civilians = 24;
  return spec;
}

bool same_corpus(const synth::SynthCorpus& a, const synth::SynthCorpus& b) {
  if (a.devices.size() != b.devices.size()) return false;
  for (std::size_t d = 0; d < a.devices.size(); ++d) {
    const auto& da = a.devices[d];
    const auto& db = b.devices[d];
    if (da.device_id != db.device_id || da.pings != db.pings) return false;
  }
  if (a.truth.officer_ids != b.truth.officer_ids) return false;
  if (a.truth.home_cell != b.truth.home_cell) return false;
  if (a.truth.expected_bg_hours != b.truth.expected_bg_hours) return false;
  if (a.truth.shifts.size() != b.truth.shifts.size()) return false;
  for (const auto& [dev, sa] : a.truth.shifts) {
    const auto& sb = b.truth.shifts.at(dev);
    if (sa.size() != sb.size()) return false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
      if (sa[i].start_ts != sb[i].start_ts || sa[i].end_ts != sb[i].end_ts) return false;
    }
  }
  return true;
}

// Run the real identification chain over a generated corpus.
synth::Detection detect(const synth::SynthCorpus& corpus) {
  const io::StudyWindow window = corpus.window();
  const io::StationIndex sidx(corpus.stations);
  const io::BlockGroupIndex bidx(corpus.bgs);

  synth::Detection det;
  std::vector<shift::Shift> all_shifts;
  for (const auto& dev : corpus.devices) {
    const auto quals = officer::qualify_months(dev, sidx, window);
    const auto qset = officer::qualified_months(quals);
    if (qset.empty()) continue;
    det.officer_ids.insert(dev.device_id);
    const auto home = officer::infer_home(dev, sidx, window);
    if (home.h1) det.home_cell_h1[dev.device_id] = home.h1->home_cell.str();
    for (const auto& s : shift::detect_shifts(dev, home, sidx, qset, window)) {
      det.shift_intervals[dev.device_id].push_back({s.start_ts, s.end_ts});
      all_shifts.push_back(s);
    }
  }
  const auto pres = presence::aggregate_presence(all_shifts, bidx, {}, window, 2);
  det.bg_hours = presence::presence_vector(pres, corpus.bgs, presence::Transform::None);
  return det;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("synthtest-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("splitmix64 matches the published reference sequence") {
  std::uint64_t state = 0;
  CHECK(synth::splitmix64(state) == 0xE220A8397B1DCDAFULL);
  CHECK(synth::splitmix64(state) == 0x6E789E6AA1B965F4ULL);
  CHECK(synth::splitmix64(state) == 0x06C45D188009454FULL);
}

TEST_CASE("rng draws stay in range and hit distribution targets") {
  synth::Rng rng(7);
  bool lo_hit = false, hi_hit = false;
  for (int i = 0; i < 4000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int v = rng.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    lo_hit = lo_hit || v == 2;
    hi_hit = hi_hit || v == 5;
    const double w = rng.uniform(-3.0, -1.0);
    CHECK(w >= -3.0);
    CHECK(w < -1.0);
  }
  CHECK(lo_hit);  // inclusive bounds are reachable
  CHECK(hi_hit);

  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(sd - 1.0) < 0.03);

  // lognormal_mode(m, s): log-draws are N(ln m + s^2, s), so the density peak
  // sits at m. Check the log-space moments.
  const double mode = 600.0, sigma = 0.6;
  double lsum = 0.0, lsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.lognormal_mode(mode, sigma);
    CHECK(v > 0.0);
    const double l = std::log(v);
    lsum += l;
    lsq += l * l;
  }
  const double lmean = lsum / n;
  const double lsd = std::sqrt(lsq / n - lmean * lmean);
  CHECK(std::fabs(lmean - (std::log(mode) + sigma * sigma)) < 0.02);
  CHECK(std::fabs(lsd - sigma) < 0.02);

  // Same seed, same stream.
  synth::Rng r1(99), r2(99);
  for (int i = 0; i < 100; ++i) CHECK(r1.uniform() == r2.uniform());
}

TEST_CASE("spec validation rejects infeasible settings") {
  CHECK_NOTHROW(small_spec().validate());

  auto bad = small_spec();
  bad.cities.clear();
  CHECK_THROWS_AS(bad.validate(), InputError);

  bad = small_spec();
  bad.cities.push_back(bad.cities[0]);  // duplicate city_id
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("duplicate"), InputError);

  bad = small_spec();
  bad.cities[0].cell_m = 100.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("cell_m"), InputError);

  bad = small_spec();
  bad.cities[0].n_stations = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("station"), InputError);

  bad = small_spec();
  bad.cities[0].n_stations = 30;  // more than half the 36 cells
  CHECK_THROWS_AS(bad.validate(), InputError);

  bad = small_spec();
  bad.n_days = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);

  bad = small_spec();
  bad.shift_length_h_mean = 23.0;  // cannot fit the home bracket
  CHECK_THROWS_AS(bad.validate(), InputError);

  bad = small_spec();
  bad.patrol_policy = "chaos";
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("patrol_policy"), InputError);

  bad = small_spec();
  bad.gps_noise_m = -1.0;
  CHECK_THROWS_AS(bad.validate(), InputError);

  bad = small_spec();
  bad.cities[0].tz = "Mars/Olympus";
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("parse_synth_spec reads json and rejects garbage") {
  const std::string text = R"({
    "rng_seed": 9,
    "start_date": "2017-07-01",
    "n_days": 21,
    "gps_noise_m": 12.5,
    "patrol_policy": "rel_black",
    "policy_gain": 0.75,
    "cities": [
      {"city_id": "m01", "grid_rows": 5, "grid_cols": 4, "n_stations": 1,
       "n_officers": 3, "n_civilians": 9, "tz": "UTC-06"}
    ]
  })";
  const auto spec = synth::parse_synth_spec(text);
  CHECK(spec.rng_seed == 9);
  CHECK(spec.start_date.year == 2017);
  CHECK(spec.start_date.month == 7);
  CHECK(spec.n_days == 21);
  CHECK(spec.gps_noise_m == 12.5);
  CHECK(spec.patrol_policy == "rel_black");
  CHECK(spec.policy_gain == 0.75);
  REQUIRE(spec.cities.size() == 1);
  CHECK(spec.cities[0].city_id == "m01");
  CHECK(spec.cities[0].grid_rows == 5);
  CHECK(spec.cities[0].tz == "UTC-06");

  CHECK_THROWS_AS(synth::parse_synth_spec("not json"), InputError);
  CHECK_THROWS_AS(synth::parse_synth_spec(R"({"n_days": "soon"})"), InputError);
}

TEST_CASE("generate is deterministic and independent of worker count") {
  const auto spec = small_spec();
  const auto c1 = synth::generate(spec, 1);
  const auto c2 = synth::generate(spec, 4);
  const auto c3 = synth::generate(spec, 1);
  CHECK(same_corpus(c1, c2));
  CHECK(same_corpus(c1, c3));

  auto other = spec;
  other.rng_seed = 43;
  CHECK_FALSE(same_corpus(c1, synth::generate(other, 1)));
}

TEST_CASE("generated corpus satisfies its structural contracts") {
  const auto spec = small_spec();
  const auto corpus = synth::generate(spec, 2);
  const io::StationIndex sidx(corpus.stations);
  const io::StudyWindow window = corpus.window();

  CHECK(corpus.devices.size() == 20);
  CHECK(std::is_sorted(corpus.devices.begin(), corpus.devices.end(),
                       [](const auto& a, const auto& b) { return a.device_id < b.device_id; }));
  CHECK(corpus.stations.size() == 2);
  CHECK(corpus.bgs.size() == 36);
  CHECK(corpus.truth.officer_ids.size() == 5);
  CHECK(window.months.size() == 1);

  std::set<std::string> ids;
  for (const auto& dev : corpus.devices) {
    ids.insert(dev.device_id);
    CHECK(std::is_sorted(dev.pings.begin(), dev.pings.end(),
                         [](const auto& a, const auto& b) { return a.ts_s < b.ts_s; }));
    for (const auto& p : dev.pings) CHECK(window.in_window(p.ts_s));
  }
  for (const auto& id : corpus.truth.officer_ids) CHECK(ids.count(id));

  // Civilian pings never touch a station footprint.
  for (const auto& dev : corpus.devices) {
    if (corpus.truth.officer_ids.count(dev.device_id)) continue;
    for (const auto& p : dev.pings) CHECK_FALSE(sidx.any(p.loc));
  }

  // Truth shifts are sorted, positive, and inside the window.
  std::size_t total_shifts = 0;
  for (const auto& [dev, shifts] : corpus.truth.shifts) {
    CHECK(corpus.truth.officer_ids.count(dev));
    std::int64_t prev = window.start_ts - 1;
    for (const auto& s : shifts) {
      CHECK(s.start_ts > prev);
      CHECK(s.end_ts > s.start_ts);
      CHECK(window.in_window(s.start_ts));
      CHECK(window.in_window(s.end_ts));
      prev = s.end_ts;
      ++total_shifts;
    }
    // 10 workdays in 14 days; late-evening days that would spill past the
    // window become home-only days, so a couple may be missing.
    CHECK(shifts.size() >= 8);
    CHECK(shifts.size() <= 10);
  }
  CHECK(total_shifts <= 5 * 10);
  CHECK(total_shifts >= 5 * 8);

  // Per-city officer tallies and home zones add up.
  double per_city = 0.0;
  for (const auto& [city, n] : corpus.truth.officers_per_city) per_city += n;
  CHECK(per_city == 5.0);
  double zones = 0.0;
  for (const auto& [zone, n] : corpus.truth.officer_homes_by_zone) zones += n;
  CHECK(zones == 5.0);

  // rel_black weighting: expected hours vary across block groups.
  double lo = 1e18, hi = -1e18;
  for (const auto& [bg, h] : corpus.truth.expected_bg_hours) {
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  CHECK(hi > lo);

  // City table carries the composition the attributes were drawn around.
  REQUIRE(corpus.city_table.count("c01"));
  CHECK(corpus.city_table.at("c01").count("population"));
  CHECK(corpus.city_table.at("c01").count("pct_black"));
}

TEST_CASE("civilians never qualify as officers") {
  const auto corpus = synth::generate(small_spec(), 2);
  const io::StationIndex sidx(corpus.stations);
  const io::StudyWindow window = corpus.window();
  std::size_t officer_quals = 0;
  for (const auto& dev : corpus.devices) {
    const auto quals = officer::qualify_months(dev, sidx, window);
    const bool is_officer = corpus.truth.officer_ids.count(dev.device_id) > 0;
    if (is_officer) {
      officer_quals += officer::qualified_months(quals).empty() ? 0 : 1;
    } else {
      CHECK(officer::qualified_months(quals).empty());
      CHECK(quals.empty());  // not a single station ping, let alone a day
    }
  }
  CHECK(officer_quals == 5);
}

TEST_CASE("zero-noise corpus is recovered perfectly") {
  const auto corpus = synth::generate(recovery_spec(0.0), 2);
  const auto det = detect(corpus);
  const auto m = synth::score(det, corpus.truth);

  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.mean_iou == 1.0);  // detected station boundaries equal planted ones exactly
  CHECK(m.home_hit_rate == 1.0);
  CHECK(m.hours_rho > 0.9);

  // Every planted shift is found one for one.
  for (const auto& [dev, shifts] : corpus.truth.shifts) {
    REQUIRE(det.shift_intervals.count(dev));
    const auto& found = det.shift_intervals.at(dev);
    REQUIRE(found.size() == shifts.size());
    for (std::size_t i = 0; i < shifts.size(); ++i) {
      CHECK(found[i].start_ts == shifts[i].start_ts);
      CHECK(found[i].end_ts == shifts[i].end_ts);
    }
  }
}

TEST_CASE("noisy corpus still scores near-perfect recovery") {
  const auto corpus = synth::generate(recovery_spec(25.0), 2);
  const auto det = detect(corpus);
  const auto m = synth::score(det, corpus.truth);
  CHECK(m.precision >= 0.95);
  CHECK(m.recall >= 0.95);
  CHECK(m.mean_iou >= 0.9);
  CHECK(m.hours_rho >= 0.85);
}

TEST_CASE("score arithmetic on a hand-built detection") {
  synth::GroundTruth truth;
  truth.officer_ids = {"a", "b"};
  truth.home_cell = {{"a", "u4pruyd"}, {"b", "u4pruye"}};
  truth.shifts["a"] = {{0, 100}, {1000, 1100}};
  truth.expected_bg_hours = {{"bg1", 1.0}, {"bg2", 2.0}, {"bg3", 3.0}};

  synth::Detection det;
  det.officer_ids = {"a", "x"};  // one hit, one false positive
  det.home_cell_h1 = {{"a", "u4pruyd"}, {"x", "zzzzzzz"}};
  det.shift_intervals["a"] = {{50, 150}};  // IoU 1/3 with the first truth shift
  det.bg_hours = {{"bg1", 2.0}, {"bg2", 4.0}, {"bg3", 6.0}};

  const auto m = synth::score(det, truth);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.5);
  // Truth shift [0,100] best-matches [50,150] at 50/150; [1000,1100] matches nothing.
  CHECK(m.mean_iou == doctest::Approx((1.0 / 3.0) / 2.0));
  CHECK(m.hours_rho == doctest::Approx(1.0));  // detected doubles the expectation
  CHECK(m.home_hit_rate == 1.0);  // only officer "a" is both detected and true

  // Empty detection against empty truth is trivially perfect.
  const auto empty = synth::score({}, {});
  CHECK(empty.precision == 1.0);
  CHECK(empty.recall == 1.0);
  CHECK(empty.mean_iou == 0.0);
}

TEST_CASE("truth json round-trips through write_corpus") {
  const auto corpus = synth::generate(small_spec(), 2);
  TempDir tmp;
  synth::write_corpus(corpus, tmp.path, "deadbeef00000000");

  for (const char* name :
       {"pings.csv", "stations.geojson", "blockgroups.geojson", "bg_attributes.csv",
        "city_table.csv", "actions.csv", "employees.csv", "composition.csv", "zones.csv",
        "truth.json"}) {
    CHECK(fs::exists(tmp.path / name));
  }

  const auto truth = synth::load_truth(tmp.path / "truth.json");
  CHECK(truth.officer_ids == corpus.truth.officer_ids);
  CHECK(truth.home_cell == corpus.truth.home_cell);
  CHECK(truth.officer_city == corpus.truth.officer_city);
  CHECK(truth.officers_per_city == corpus.truth.officers_per_city);
  CHECK(truth.officer_homes_by_zone == corpus.truth.officer_homes_by_zone);
  REQUIRE(truth.shifts.size() == corpus.truth.shifts.size());
  for (const auto& [dev, shifts] : corpus.truth.shifts) {
    const auto& loaded = truth.shifts.at(dev);
    REQUIRE(loaded.size() == shifts.size());
    for (std::size_t i = 0; i < shifts.size(); ++i) {
      CHECK(loaded[i].start_ts == shifts[i].start_ts);
      CHECK(loaded[i].end_ts == shifts[i].end_ts);
    }
  }
  REQUIRE(truth.expected_bg_hours.size() == corpus.truth.expected_bg_hours.size());
  for (const auto& [bg, h] : corpus.truth.expected_bg_hours) {
    CHECK(truth.expected_bg_hours.at(bg) == h);  // shortest round-trip floats
  }

  // The written corpus loads back through the standard readers.
  const auto loaded = io::load_pings(tmp.path / "pings.csv", corpus.window());
  CHECK(loaded.devices.size() == corpus.devices.size());
  CHECK(loaded.report.rows_kept == loaded.report.rows_total);
}
