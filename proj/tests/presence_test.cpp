#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "patrolscope/corpus.hpp"
#include "patrolscope/errors.hpp"
#include "patrolscope/presence.hpp"

using namespace patrolscope;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = PS_FIXTURES;

io::StudyWindow june_window() {
  return io::StudyWindow::make({2017, 6, 1}, {2017, 7, 1},
                               {{"alpha", timeutil::Timezone::parse("UTC-05")}});
}

std::vector<io::BlockGroup> fixture_bgs() {
  return io::load_blockgroups(kFixtures / "blockgroups.geojson", kFixtures / "bg_attributes.csv");
}

shift::Shift make_shift(std::int64_t start, std::vector<io::Ping> patrol, std::int64_t end = 0) {
  shift::Shift s;
  s.device_id = "dev";
  s.start_ts = start;
  s.end_ts = end ? end : (patrol.empty() ? start + 4 * 3600 : patrol.back().ts_s + 600);
  s.bracket_home_before = start - 3600;
  s.bracket_home_after = s.end_ts + 3600;
  s.station_in = "st1";
  s.station_out = "st1";
  s.city_id = "alpha";
  s.patrol_pings = std::move(patrol);
  return s;
}

std::int64_t ts(int day, int hh, int mm = 0, int ss = 0) {
  return timeutil::ts_from_civil_utc({2017, 6, day}, hh, mm, ss);
}

double total_cell_seconds(const presence::PresenceResult& r) {
  double sum = 0.0;
  for (const auto& c : r.cells) sum += c.seconds;
  return sum;
}

}  // namespace

TEST_CASE("dwell assignment follows the half-gap rule") {
  // Gaps 600, 1200, 300 seconds.
  const std::int64_t t0 = ts(5, 13);
  const auto s = make_shift(ts(5, 12), {{t0, {40.01, -85.99}},
                                        {t0 + 600, {40.01, -85.99}},
                                        {t0 + 1800, {40.01, -85.99}},
                                        {t0 + 2100, {40.01, -85.99}}});
  const auto dwell = presence::assign_dwell(s);
  REQUIRE(dwell.size() == 4);
  CHECK(dwell[0] == 300.0);
  CHECK(dwell[1] == 900.0);   // (1800 - 0) / 2
  CHECK(dwell[2] == 750.0);   // (2100 - 600) / 2
  CHECK(dwell[3] == 150.0);
  CHECK(dwell[0] + dwell[1] + dwell[2] + dwell[3] == 2100.0);  // telescopes exactly

  CHECK(presence::assign_dwell(make_shift(ts(5, 12), {{t0, {40.01, -85.99}}})) ==
        std::vector<double>{0.0});
  CHECK(presence::assign_dwell(make_shift(ts(5, 12), {})).empty());
}

TEST_CASE("dwell conservation is exact on random traces") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::int64_t> gap(1, 3600);
  std::uniform_int_distribution<int> count(2, 60);
  for (int trial = 0; trial < 300; ++trial) {
    std::int64_t t = ts(5, 12);
    std::vector<io::Ping> patrol;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      t += gap(rng);
      patrol.push_back({t, {40.01, -85.99}});
    }
    const auto s = make_shift(ts(5, 12), std::move(patrol));
    const auto dwell = presence::assign_dwell(s);
    double sum = 0.0;
    for (double d : dwell) sum += d;
    const auto span =
        static_cast<double>(s.patrol_pings.back().ts_s - s.patrol_pings.front().ts_s);
    CHECK(sum == span);  // bitwise equality, not approximate
  }
}

TEST_CASE("aggregation conserves seconds across block groups") {
  const auto bgs = fixture_bgs();
  const io::BlockGroupIndex idx(bgs);
  const auto window = june_window();
  presence::PresenceConfig cfg;
  cfg.speed_cap_mph = std::nullopt;  // retain everything

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> gap(30, 1200);
  std::uniform_real_distribution<double> lat(39.99, 40.05), lon(-86.01, -85.95);
  std::vector<shift::Shift> shifts;
  double expected = 0.0;
  for (int k = 0; k < 40; ++k) {
    std::int64_t t = ts(5 + (k % 20), 12);
    std::vector<io::Ping> patrol;
    for (int i = 0; i < 25; ++i) {
      t += gap(rng);
      patrol.push_back({t, {lat(rng), lon(rng)}});  // some points fall outside every bg
    }
    expected += static_cast<double>(patrol.back().ts_s - patrol.front().ts_s);
    shifts.push_back(make_shift(ts(5 + (k % 20), 12), std::move(patrol)));
  }

  const auto result = presence::aggregate_presence(shifts, idx, cfg, window);
  CHECK(result.excluded_speed == 0);
  CHECK(result.counted_seconds == expected);
  CHECK(total_cell_seconds(result) + result.unassigned_seconds == result.counted_seconds);
  CHECK(result.unassigned_pings > 0);
  CHECK(result.counted_pings == 40u * 25u);

  // Per-cell hour buckets sum to the cell total.
  for (const auto& c : result.cells) {
    double by_hour = 0.0;
    for (double v : c.seconds_by_hour) by_hour += v;
    CHECK(by_hour == c.seconds);
  }

  // Worker count never changes the result.
  const auto r4 = presence::aggregate_presence(shifts, idx, cfg, window, 4);
  REQUIRE(r4.cells.size() == result.cells.size());
  for (std::size_t i = 0; i < r4.cells.size(); ++i) {
    CHECK(r4.cells[i].bg_id == result.cells[i].bg_id);
    CHECK(r4.cells[i].seconds == result.cells[i].seconds);
    CHECK(r4.cells[i].shift_count == result.cells[i].shift_count);
  }
  CHECK(r4.unassigned_seconds == result.unassigned_seconds);
}

TEST_CASE("speed filter chains against the last retained ping") {
  const auto bgs = fixture_bgs();
  const io::BlockGroupIndex idx(bgs);
  const auto window = june_window();
  presence::PresenceConfig cfg;
  cfg.speed_cap_mph = 50.0;

  // p0 at x, p1 jumps ~11 km in 60 s (excluded), p2 back near p0 at +120 s:
  // against p1 it would be another impossible jump, but the chain compares
  // against p0, so p2 is retained.
  const geo::GeoPoint base{40.01, -85.99};
  const geo::GeoPoint far{40.11, -85.99};
  const std::int64_t t0 = ts(6, 13);
  const auto s = make_shift(ts(6, 12), {{t0, base}, {t0 + 60, far}, {t0 + 120, base}});
  const auto r = presence::aggregate_presence({s}, idx, cfg, window);
  CHECK(r.excluded_speed == 1);
  CHECK(r.counted_pings == 2);

  // Without the filter all three count.
  presence::PresenceConfig open;
  open.speed_cap_mph = std::nullopt;
  CHECK(presence::aggregate_presence({s}, idx, open, window).counted_pings == 3);

  // A zero-second gap between retained candidates is excluded under a cap.
  const auto dup = make_shift(ts(6, 12), {{t0, base}, {t0, far}});
  CHECK(presence::aggregate_presence({dup}, idx, cfg, window).excluded_speed == 1);

  CHECK_THROWS_AS(presence::aggregate_presence({}, idx, presence::PresenceConfig{-1.0}, window),
                  InputError);
}

TEST_CASE("hour of shift buckets") {
  const auto bgs = fixture_bgs();
  const io::BlockGroupIndex idx(bgs);
  const auto window = june_window();
  presence::PresenceConfig cfg;
  cfg.speed_cap_mph = std::nullopt;

  const std::int64_t start = ts(5, 12);
  const geo::GeoPoint in00{40.015, -85.996};
  // Elapsed: 30 min, exactly 1 h, 1 h + 1 s, 11.5 h, 14 h (clamped to 12).
  const auto s = make_shift(start,
                            {{start + 1800, in00},
                             {start + 3600, in00},
                             {start + 3601, in00},
                             {start + 41400, in00},
                             {start + 50400, in00}},
                            start + 50500);
  const auto r = presence::aggregate_presence({s}, idx, cfg, window);
  REQUIRE(r.cells.size() == 1);
  const auto& cell = r.cells[0];
  CHECK(cell.bg_id == "alpha-bg-00");
  const auto dwell = presence::assign_dwell(s);
  CHECK(cell.seconds_by_hour[0] == dwell[0] + dwell[1]);  // 30 min and 1 h marks
  CHECK(cell.seconds_by_hour[1] == dwell[2]);             // 1 h + 1 s
  CHECK(cell.seconds_by_hour[11] == dwell[3] + dwell[4]);  // the 12th bucket absorbs overflow
  CHECK(cell.shift_count == 1);
}

TEST_CASE("weekday nine to five exclusion") {
  const auto bgs = fixture_bgs();
  const io::BlockGroupIndex idx(bgs);
  const auto window = june_window();  // alpha runs on UTC-05

  presence::PresenceConfig cfg;
  cfg.speed_cap_mph = std::nullopt;
  cfg.exclude_weekday_9to5 = true;

  const geo::GeoPoint in00{40.015, -85.996};
  // 2017-06-06 is a Tuesday. 13:00 UTC is 08:00 local; 15:00 UTC is 10:00 local.
  const auto tue = make_shift(ts(6, 12, 30),
                              {{ts(6, 13), in00}, {ts(6, 15), in00}, {ts(6, 23, 30), in00}});
  const auto local_rule = presence::aggregate_presence({tue}, idx, cfg, window);
  CHECK(local_rule.excluded_offhours == 1);  // only the 10:00 local ping
  CHECK(local_rule.counted_pings == 2);

  presence::PresenceConfig utc_cfg = cfg;
  utc_cfg.local_time_9to5 = false;
  const auto utc_rule = presence::aggregate_presence({tue}, idx, utc_cfg, window);
  CHECK(utc_rule.excluded_offhours == 2);  // 13:00 and 15:00 UTC both inside 9-17 UTC

  // 2017-06-10 is a Saturday: nothing is excluded.
  const auto sat = make_shift(ts(10, 12, 30), {{ts(10, 15), in00}, {ts(10, 16), in00}});
  CHECK(presence::aggregate_presence({sat}, idx, cfg, window).excluded_offhours == 0);

  // Boundary hours: 08:59:59 local kept, 09:00:00 excluded, 16:59:59 excluded,
  // 17:00:00 kept. 14:00 UTC is 09:00 local on UTC-05.
  const auto edges = make_shift(
      ts(6, 12, 30), {{ts(6, 13, 59, 59), in00}, {ts(6, 14), in00},
                      {ts(6, 21, 59, 59), in00}, {ts(6, 22), in00}});
  const auto er = presence::aggregate_presence({edges}, idx, cfg, window);
  CHECK(er.excluded_offhours == 2);
  CHECK(er.counted_pings == 2);
}

TEST_CASE("presence vector fills zeros and applies arsinh") {
  const auto bgs = fixture_bgs();
  const io::BlockGroupIndex idx(bgs);
  const auto window = june_window();
  presence::PresenceConfig cfg;
  cfg.speed_cap_mph = std::nullopt;

  const geo::GeoPoint in00{40.015, -85.996};
  const std::int64_t t0 = ts(5, 13);
  const auto s = make_shift(ts(5, 12), {{t0, in00}, {t0 + 7200, in00}});
  const auto r = presence::aggregate_presence({s}, idx, cfg, window);

  const auto plain = presence::presence_vector(r, bgs, presence::Transform::None);
  REQUIRE(plain.size() == 4);
  CHECK(plain.at("alpha-bg-00") == 2.0);
  CHECK(plain.at("alpha-bg-11") == 0.0);

  const auto trans = presence::presence_vector(r, bgs, presence::Transform::Arsinh);
  CHECK(trans.at("alpha-bg-00") == std::asinh(2.0));
  CHECK(trans.at("alpha-bg-11") == 0.0);
}
