#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "patrolscope/corpus.hpp"
#include "patrolscope/errors.hpp"

using namespace patrolscope;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = PS_FIXTURES;

io::StudyWindow june_window() {
  return io::StudyWindow::make({2017, 6, 1}, {2017, 7, 1},
                               {{"alpha", timeutil::Timezone::parse("UTC-05")}});
}

class TempDir {
public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("pstest-" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path file(const std::string& name, const std::string& content) const {
    const fs::path p = path_ / name;
    std::ofstream out(p);
    out << content;
    return p;
  }
  const fs::path& path() const { return path_; }

private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("study window months and halves") {
  const auto w = june_window();
  REQUIRE(w.months.size() == 1);
  CHECK(w.months[0] == timeutil::MonthId{2017, 6});
  CHECK(w.h1_month_count() == 1);
  CHECK(w.in_window(w.start_ts));
  CHECK(!w.in_window(w.end_ts));
  CHECK(w.tz_for("alpha").offset_s_at(w.start_ts) == -5 * 3600);
  CHECK(w.tz_for("unknown-city").is_utc());

  const auto w5 = io::StudyWindow::make({2017, 1, 15}, {2017, 6, 2});
  REQUIRE(w5.months.size() == 6);  // Jan..Jun touch [start, end)
  CHECK(w5.h1_month_count() == 3);
  CHECK_THROWS_AS(io::StudyWindow::make({2017, 6, 1}, {2017, 6, 1}), InputError);
}

TEST_CASE("fixture corpus loads with zero rejects") {
  const auto corpus = io::load_pings(kFixtures / "pings.csv", june_window());
  CHECK(corpus.report.rows_total == 64);
  CHECK(corpus.report.rows_kept == 64);
  CHECK(corpus.report.rejects.empty());
  CHECK(corpus.report.duplicates == 0);
  CHECK(corpus.report.out_of_window == 0);
  REQUIRE(corpus.devices.size() == 3);
  CHECK(corpus.devices[0].device_id == "civilian-1");  // sorted by id
  CHECK(corpus.devices[1].device_id == "officer-1");
  CHECK(corpus.devices[2].device_id == "officer-2");
  for (const auto& dev : corpus.devices) {
    for (std::size_t i = 1; i < dev.pings.size(); ++i) {
      CHECK(dev.pings[i - 1].ts_s <= dev.pings[i].ts_s);
    }
  }
}

TEST_CASE("ping loader rejects malformed rows with reasons") {
  TempDir tmp;
  const auto p = tmp.file("bad.csv",
                          "device_id,ts_unix_s,lat,lon\n"
                          "d1,1496620800,40.0,-86.0\n"
                          "d1,1496620900,95.0,-86.0\n"       // lat out of range
                          "d1,1496621000,40.0,-191.0\n"      // lon out of range
                          "d1,notatime,40.0,-86.0\n"         // bad timestamp
                          "d1,1496621200,40.0\n"             // bad column count
                          ",1496621300,40.0,-86.0\n"         // empty device id
                          "d1,1496621400,40.0,oops\n"        // bad coordinate
                          "d1,1496620800,40.0,-86.0\n"       // duplicate of row 1
                          "d1,1400000000,40.0,-86.0\n");     // out of window
  const auto corpus = io::load_pings(p, june_window(), 1.0);
  CHECK(corpus.report.rows_total == 9);
  CHECK(corpus.report.rows_kept == 1);  // the duplicate is dropped, not kept
  CHECK(corpus.report.out_of_window == 1);
  CHECK(corpus.report.duplicates == 1);
  CHECK(corpus.report.malformed() == 6);

  std::size_t lat_reason = 0, dup_reason = 0;
  for (const auto& r : corpus.report.rejects) {
    if (r.reason.find("lat") != std::string::npos) ++lat_reason;
    if (r.reason.find("duplicate") != std::string::npos) ++dup_reason;
    CHECK(r.line_no >= 2);
  }
  CHECK(lat_reason >= 1);
  CHECK(dup_reason == 1);

  REQUIRE(corpus.devices.size() == 1);
  CHECK(corpus.devices[0].pings.size() == 1);
}

TEST_CASE("ping loader enforces the reject budget") {
  TempDir tmp;
  std::string text = "device_id,ts_unix_s,lat,lon\n";
  for (int i = 0; i < 98; ++i) {
    text += "d1," + std::to_string(1496620800 + i) + ",40.0,-86.0\n";
  }
  text += "d1,nope,40.0,-86.0\n";
  text += "d1,alsonope,40.0,-86.0\n";  // 2 malformed of 100 rows
  const auto p = tmp.file("budget.csv", text);
  CHECK_THROWS_AS(io::load_pings(p, june_window(), 0.01), InputError);
  CHECK_NOTHROW(io::load_pings(p, june_window(), 0.05));
}

TEST_CASE("jsonl pings load like csv") {
  TempDir tmp;
  const auto p = tmp.file("pings.jsonl",
                          R"({"device_id":"d1","ts_unix_s":1496620800,"lat":40.0,"lon":-86.0})"
                          "\n"
                          R"({"device_id":"d1","ts_unix_s":1496620860,"lat":40.001,"lon":-86.0})"
                          "\n"
                          R"({"device_id":"d1","ts_unix_s":"oops","lat":40.0,"lon":-86.0})"
                          "\n"
                          "not json at all\n");
  const auto corpus = io::load_pings(p, june_window(), 1.0);
  CHECK(corpus.report.rows_total == 4);
  CHECK(corpus.report.rows_kept == 2);
  CHECK(corpus.report.malformed() == 2);
  REQUIRE(corpus.devices.size() == 1);
  CHECK(corpus.devices[0].pings.front().loc.lat == 40.0);
}

TEST_CASE("station geofences load and index") {
  std::vector<std::string> warnings;
  const auto stations = io::load_geofences(kFixtures / "stations.geojson", &warnings);
  REQUIRE(stations.size() == 2);
  CHECK(warnings.empty());
  CHECK(stations[0].station_id == "alpha-st1");

  const io::StationIndex idx(stations);
  const auto* hit = idx.find({40.0100, -85.9900});
  REQUIRE(hit != nullptr);
  CHECK(hit->station_id == "alpha-st1");
  CHECK(idx.find({40.0100, -85.9700}) != nullptr);
  CHECK(idx.find({40.0150, -85.9960}) == nullptr);  // patrol point
  CHECK(idx.find({40.0305, -85.9695}) == nullptr);  // home point
}

TEST_CASE("non-convex station ring falls back to its hull") {
  TempDir tmp;
  // An L-shaped (concave) hexagon.
  const auto p = tmp.file("l.geojson", R"({
    "type": "FeatureCollection",
    "features": [{
      "type": "Feature",
      "properties": {"station_id": "s1", "city_id": "alpha"},
      "geometry": {"type": "Polygon", "coordinates": [[
        [0.0, 0.0], [0.003, 0.0], [0.003, 0.001], [0.001, 0.001], [0.001, 0.003], [0.0, 0.003]
      ]]}
    }]
  })");
  std::vector<std::string> warnings;
  const auto stations = io::load_geofences(p, &warnings);
  REQUIRE(stations.size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("s1") != std::string::npos);
  // The hull covers the concave notch.
  CHECK(geo::contains(stations[0].footprint, {0.002, 0.002}));
}

TEST_CASE("degenerate and duplicate stations are fatal") {
  TempDir tmp;
  const auto degenerate = tmp.file("deg.geojson", R"({
    "type": "FeatureCollection",
    "features": [{
      "type": "Feature",
      "properties": {"station_id": "s1", "city_id": "alpha"},
      "geometry": {"type": "Polygon", "coordinates": [[[0,0],[0,0],[1,1]]]}
    }]
  })");
  CHECK_THROWS_AS(io::load_geofences(degenerate), InputError);

  const auto dup = tmp.file("dup.geojson", R"({
    "type": "FeatureCollection",
    "features": [
      {"type": "Feature", "properties": {"station_id": "s1", "city_id": "alpha"},
       "geometry": {"type": "Polygon", "coordinates": [[[0,0],[0.001,0],[0.001,0.001],[0,0.001]]]}},
      {"type": "Feature", "properties": {"station_id": "s1", "city_id": "alpha"},
       "geometry": {"type": "Polygon", "coordinates": [[[0.01,0],[0.011,0],[0.011,0.001],[0.01,0.001]]]}}
    ]
  })");
  CHECK_THROWS_AS(io::load_geofences(dup), InputError);
}

TEST_CASE("block groups join attributes and flag bad values") {
  std::vector<std::string> warnings;
  const auto bgs =
      io::load_blockgroups(kFixtures / "blockgroups.geojson", kFixtures / "bg_attributes.csv",
                           &warnings);
  REQUIRE(bgs.size() == 4);
  CHECK(warnings.empty());
  CHECK(bgs[0].bg_id == "alpha-bg-00");
  CHECK(bgs[0].attr("population") == 1450.0);
  CHECK(bgs[0].attr("pct_black") == 0.2);
  CHECK(!bgs[0].attr("nonexistent").has_value());

  const io::BlockGroupIndex idx(bgs);
  REQUIRE(idx.find({40.0305, -85.9695}) != nullptr);
  CHECK(idx.find({40.0305, -85.9695})->bg_id == "alpha-bg-11");
  CHECK(idx.find({40.05, -85.97}) == nullptr);

  TempDir tmp;
  const auto attrs = tmp.file("attrs.csv",
                              "bg_id,population,pct_black\n"
                              "alpha-bg-00,1450,1.2\n"        // share out of range
                              "alpha-bg-01,-5,0.3\n"          // negative population
                              "alpha-bg-10,abc,0.2\n"         // unparseable
                              "alpha-bg-zz,100,0.1\n");       // unknown bg
  std::vector<std::string> w2;
  const auto bgs2 = io::load_blockgroups(kFixtures / "blockgroups.geojson", attrs, &w2);
  REQUIRE(bgs2.size() == 4);
  CHECK(w2.size() == 4);
  CHECK(!bgs2[0].attr("pct_black").has_value());
  CHECK(!bgs2[1].attr("population").has_value());
  CHECK(bgs2[1].attr("pct_black") == 0.3);
  CHECK(!bgs2[2].attr("population").has_value());
}

TEST_CASE("block group containment is boundary inclusive") {
  std::vector<std::string> warnings;
  const auto bgs =
      io::load_blockgroups(kFixtures / "blockgroups.geojson", kFixtures / "bg_attributes.csv",
                           &warnings);
  const auto& bg = bgs[0];  // lat 40.00..40.02, lon -86.00..-85.98
  CHECK(bg.contains({40.01, -85.99}));
  CHECK(bg.contains({40.00, -85.99}));   // south edge
  CHECK(bg.contains({40.00, -86.00}));   // corner
  CHECK(!bg.contains({39.9999, -85.99}));
  CHECK(!bg.contains({40.03, -85.99}));
}

TEST_CASE("city and id-value tables") {
  const auto cities = io::load_city_table(kFixtures / "city_table.csv");
  REQUIRE(cities.count("alpha") == 1);
  CHECK(cities.at("alpha").at("population") == 5315.0);
  CHECK(cities.at("alpha").at("pct_black") == 0.235);

  const auto actions = io::load_id_value_csv(kFixtures / "actions.csv");
  REQUIRE(actions.size() == 4);
  CHECK(actions.at("alpha-bg-11") == 31.0);

  TempDir tmp;
  CHECK_THROWS_AS(io::load_city_table(tmp.file("bad.csv", "nope,population\nx,1\n")), InputError);
}

TEST_CASE("serialization round trips byte for byte") {
  const auto corpus = io::load_pings(kFixtures / "pings.csv", june_window());
  std::vector<std::string> warnings;
  const auto stations = io::load_geofences(kFixtures / "stations.geojson", &warnings);
  const auto bgs =
      io::load_blockgroups(kFixtures / "blockgroups.geojson", kFixtures / "bg_attributes.csv",
                           &warnings);

  TempDir tmp;
  const auto p1 = tmp.path() / "pings1.csv";
  io::write_pings_csv(corpus.devices, p1);
  const auto reload = io::load_pings(p1, june_window());
  const auto p2 = tmp.path() / "pings2.csv";
  io::write_pings_csv(reload.devices, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(reload.report.rows_kept == corpus.report.rows_kept);

  const auto s1 = tmp.path() / "stations1.geojson";
  io::write_stations_geojson(stations, s1);
  const auto stations2 = io::load_geofences(s1, &warnings);
  const auto s2 = tmp.path() / "stations2.geojson";
  io::write_stations_geojson(stations2, s2);
  CHECK(slurp(s1) == slurp(s2));

  const auto g1 = tmp.path() / "bgs1.geojson";
  const auto a1 = tmp.path() / "attrs1.csv";
  const std::vector<std::string> cols = {"population", "pct_white", "pct_black", "pct_hispanic",
                                         "pct_asian", "pct_college", "median_income_k",
                                         "census_return_rate", "homicide_count",
                                         "dist_nearest_homicide_km"};
  io::write_blockgroups_geojson(bgs, g1);
  io::write_bg_attributes_csv(bgs, cols, a1);
  const auto bgs2 = io::load_blockgroups(g1, a1, &warnings);
  const auto g2 = tmp.path() / "bgs2.geojson";
  const auto a2 = tmp.path() / "attrs2.csv";
  io::write_blockgroups_geojson(bgs2, g2);
  io::write_bg_attributes_csv(bgs2, cols, a2);
  CHECK(slurp(g1) == slurp(g2));
  CHECK(slurp(a1) == slurp(a2));
}

TEST_CASE("missing input file is an input error") {
  CHECK_THROWS_AS(io::load_pings(kFixtures / "no-such-file.csv", june_window()), InputError);
  CHECK_THROWS_AS(io::load_geofences(kFixtures / "no-such.geojson"), InputError);
}
