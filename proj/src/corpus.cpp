#include "patrolscope/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "patrolscope/csv.hpp"
#include "patrolscope/errors.hpp"

namespace patrolscope::io {

using csvutil::fmt_double;
using csvutil::parse_double;
using csvutil::parse_int;
using json = nlohmann::json;

namespace {

bool share_like(const std::string& name) {
  return name.rfind("pct_", 0) == 0 || name == "census_return_rate";
}

bool on_segment(const geo::GeoPoint& a, const geo::GeoPoint& b, const geo::GeoPoint& p) {
  const double cr = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
  if (cr != 0.0) return false;
  return p.lon >= std::min(a.lon, b.lon) && p.lon <= std::max(a.lon, b.lon) &&
         p.lat >= std::min(a.lat, b.lat) && p.lat <= std::max(a.lat, b.lat);
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

// First non-comment line; '#' lines carry run metadata such as config hashes.
bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    return true;
  }
  return false;
}

json parse_json_file(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return j;
}

std::vector<geo::GeoPoint> ring_from_geojson(const json& coords, const std::string& where) {
  std::vector<geo::GeoPoint> ring;
  for (const auto& pair : coords) {
    if (!pair.is_array() || pair.size() < 2) throw InputError(where + ": bad coordinate pair");
    const double lon = pair[0].get<double>();
    const double lat = pair[1].get<double>();
    auto p = geo::GeoPoint::checked(lat, lon);
    if (!p) throw InputError(where + ": coordinate out of range");
    ring.push_back(*p);
  }
  while (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
  return ring;
}

json ring_to_geojson(const std::vector<geo::GeoPoint>& ring) {
  json coords = json::array();
  for (const auto& p : ring) coords.push_back(json::array({p.lon, p.lat}));
  if (!ring.empty()) coords.push_back(json::array({ring.front().lon, ring.front().lat}));
  return json::array({coords});
}

}  // namespace

double speed_mph(const Ping& a, const Ping& b) {
  const double dt = static_cast<double>(b.ts_s - a.ts_s);
  if (dt <= 0.0) {
    throw InputError("speed_mph: second ping must be strictly later (dt=" + fmt_double(dt) + "s)");
  }
  return geo::speed_mph(a.loc, b.loc, dt);
}

bool BlockGroup::contains(const geo::GeoPoint& p) const {
  if (!bbox.contains(p)) return false;
  const std::size_t n = ring.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& vi = ring[i];
    const auto& vj = ring[j];
    if (on_segment(vj, vi, p)) return true;  // boundary counts inside
    if ((vi.lat > p.lat) != (vj.lat > p.lat)) {
      const double x = vj.lon + (p.lat - vj.lat) * (vi.lon - vj.lon) / (vi.lat - vj.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

std::optional<double> BlockGroup::attr(const std::string& name) const {
  auto it = attributes.find(name);
  if (it == attributes.end()) return std::nullopt;
  return it->second;
}

StudyWindow StudyWindow::make(const CivilDate& start, const CivilDate& end,
                              std::map<std::string, Timezone> tz_by_city, Timezone default_tz) {
  if (!(start < end)) throw InputError("study window end must be after start");
  StudyWindow w;
  w.start_date = start;
  w.end_date = end;
  w.start_ts = timeutil::ts_from_date_utc(start);
  w.end_ts = timeutil::ts_from_date_utc(end);
  w.tz_by_city = std::move(tz_by_city);
  w.default_tz = default_tz;
  MonthId m{start.year, start.month};
  const std::int64_t last_day = w.end_ts - 1;
  const MonthId last = [&] {
    auto parts = timeutil::utc_parts(last_day);
    return MonthId{parts.date.year, parts.date.month};
  }();
  while (m <= last) {
    w.months.push_back(m);
    m = m.next();
  }
  return w;
}

const Timezone& StudyWindow::tz_for(const std::string& city_id) const {
  auto it = tz_by_city.find(city_id);
  return it == tz_by_city.end() ? default_tz : it->second;
}

PingCorpus load_pings(const std::filesystem::path& path, const StudyWindow& window,
                      double max_reject_fraction) {
  auto in = open_or_throw(path);

  const std::string ext = path.extension().string();
  bool jsonl = ext == ".jsonl" || ext == ".ndjson";
  if (!jsonl && ext != ".csv") {
    jsonl = in.peek() == '{';
  }

  PingCorpus corpus;
  LoadReport& rep = corpus.report;

  std::unordered_map<std::string, std::size_t> device_slot;
  struct Key {
    std::int64_t ts;
    double lat, lon;
    auto operator<=>(const Key&) const = default;
  };
  std::vector<std::set<Key>> seen;

  std::string line;
  std::size_t line_no = 0;

  int col_device = 0, col_ts = 1, col_lat = 2, col_lon = 3, n_cols = 4;
  if (!jsonl) {
    if (!next_data_line(in, line, line_no)) throw InputError(path.string() + ": empty ping file");
    const auto header = csvutil::split(line);
    col_device = col_ts = col_lat = col_lon = -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
      if (header[i] == "device_id") col_device = i;
      if (header[i] == "ts_unix_s") col_ts = i;
      if (header[i] == "lat") col_lat = i;
      if (header[i] == "lon") col_lon = i;
    }
    if (col_device < 0 || col_ts < 0 || col_lat < 0 || col_lon < 0) {
      throw InputError(path.string() + ": header must name device_id,ts_unix_s,lat,lon");
    }
    n_cols = static_cast<int>(header.size());
  }

  auto ingest = [&](std::string device_id, std::int64_t ts, double lat, double lon,
                    std::size_t at_line) {
    if (device_id.empty()) {
      rep.rejects.push_back({at_line, "empty device_id"});
      return;
    }
    if (!geo::valid_lat(lat)) {
      rep.rejects.push_back({at_line, "lat out of range"});
      return;
    }
    if (!geo::valid_lon(lon)) {
      rep.rejects.push_back({at_line, "lon out of range"});
      return;
    }
    if (!window.in_window(ts)) {
      ++rep.out_of_window;
      return;
    }
    auto [it, fresh] = device_slot.try_emplace(device_id, corpus.devices.size());
    if (fresh) {
      corpus.devices.push_back(DeviceStream{device_id, {}});
      seen.emplace_back();
    }
    const auto loc = *geo::GeoPoint::checked(lat, lon);
    if (!seen[it->second].insert(Key{ts, loc.lat, loc.lon}).second) {
      ++rep.duplicates;
      rep.rejects.push_back({at_line, "duplicate row"});
      return;
    }
    corpus.devices[it->second].pings.push_back(Ping{ts, loc});
    ++rep.rows_kept;
  };

  while (next_data_line(in, line, line_no)) {
    if (line.empty()) continue;
    ++rep.rows_total;
    if (jsonl) {
      json row = json::parse(line, nullptr, false);
      if (row.is_discarded() || !row.is_object()) {
        rep.rejects.push_back({line_no, "bad json"});
        continue;
      }
      if (!row.contains("device_id") || !row.contains("ts_unix_s") || !row.contains("lat") ||
          !row.contains("lon") || !row["ts_unix_s"].is_number() || !row["lat"].is_number() ||
          !row["lon"].is_number() || !row["device_id"].is_string()) {
        rep.rejects.push_back({line_no, "missing or mistyped field"});
        continue;
      }
      ingest(row["device_id"].get<std::string>(), row["ts_unix_s"].get<std::int64_t>(),
             row["lat"].get<double>(), row["lon"].get<double>(), line_no);
    } else {
      const auto fields = csvutil::split(line);
      if (static_cast<int>(fields.size()) != n_cols) {
        rep.rejects.push_back({line_no, "bad column count"});
        continue;
      }
      const auto ts = parse_int(fields[col_ts]);
      const auto lat = parse_double(fields[col_lat]);
      const auto lon = parse_double(fields[col_lon]);
      if (!ts) {
        rep.rejects.push_back({line_no, "bad timestamp"});
        continue;
      }
      if (!lat || !lon) {
        rep.rejects.push_back({line_no, "bad coordinate"});
        continue;
      }
      ingest(std::string(fields[col_device]), *ts, *lat, *lon, line_no);
    }
  }

  if (rep.rows_total > 0 &&
      static_cast<double>(rep.malformed()) > max_reject_fraction * double(rep.rows_total)) {
    throw InputError(path.string() + ": " + std::to_string(rep.malformed()) + " of " +
                     std::to_string(rep.rows_total) + " rows rejected (limit " +
                     fmt_double(max_reject_fraction * 100.0) + "%)");
  }

  std::sort(corpus.devices.begin(), corpus.devices.end(),
            [](const DeviceStream& a, const DeviceStream& b) { return a.device_id < b.device_id; });
  for (auto& dev : corpus.devices) {
    std::sort(dev.pings.begin(), dev.pings.end(), [](const Ping& a, const Ping& b) {
      return std::tie(a.ts_s, a.loc.lat, a.loc.lon) < std::tie(b.ts_s, b.loc.lat, b.loc.lon);
    });
  }
  return corpus;
}

std::vector<Station> load_geofences(const std::filesystem::path& path,
                                    std::vector<std::string>* warnings) {
  const json doc = parse_json_file(path);
  if (doc.value("type", "") != "FeatureCollection") {
    throw InputError(path.string() + ": expected a GeoJSON FeatureCollection");
  }
  std::vector<Station> stations;
  std::set<std::string> ids;
  for (const auto& feature : doc.value("features", json::array())) {
    const auto& props = feature.at("properties");
    Station st;
    st.station_id = props.value("station_id", "");
    st.city_id = props.value("city_id", "");
    if (st.station_id.empty() || st.city_id.empty()) {
      throw InputError(path.string() + ": station feature needs station_id and city_id");
    }
    if (!ids.insert(st.station_id).second) {
      throw InputError(path.string() + ": duplicate station_id " + st.station_id);
    }
    const auto& geom = feature.at("geometry");
    if (geom.value("type", "") != "Polygon") {
      throw InputError("station " + st.station_id + ": geometry must be a Polygon");
    }
    auto ring = ring_from_geojson(geom.at("coordinates").at(0), "station " + st.station_id);
    std::set<std::pair<double, double>> distinct;
    for (const auto& p : ring) distinct.insert({p.lat, p.lon});
    if (distinct.size() < 3) {
      throw InputError("station " + st.station_id + ": fewer than 3 distinct vertices");
    }
    try {
      st.footprint = geo::ConvexPolygon::from_ring(ring);
    } catch (const std::invalid_argument&) {
      st.footprint = geo::ConvexPolygon::from_ring(geo::convex_hull(ring));
      if (warnings) {
        warnings->push_back("station " + st.station_id +
                            ": ring not convex, substituted convex hull");
      }
    }
    stations.push_back(std::move(st));
  }
  std::sort(stations.begin(), stations.end(),
            [](const Station& a, const Station& b) { return a.station_id < b.station_id; });
  return stations;
}

std::vector<BlockGroup> load_blockgroups(const std::filesystem::path& geom_path,
                                         const std::filesystem::path& attr_path,
                                         std::vector<std::string>* warnings) {
  const json doc = parse_json_file(geom_path);
  if (doc.value("type", "") != "FeatureCollection") {
    throw InputError(geom_path.string() + ": expected a GeoJSON FeatureCollection");
  }
  std::vector<BlockGroup> bgs;
  std::map<std::string, std::size_t> slot;
  for (const auto& feature : doc.value("features", json::array())) {
    const auto& props = feature.at("properties");
    BlockGroup bg;
    bg.bg_id = props.value("bg_id", "");
    bg.city_id = props.value("city_id", "");
    if (bg.bg_id.empty() || bg.city_id.empty()) {
      throw InputError(geom_path.string() + ": block group feature needs bg_id and city_id");
    }
    if (slot.count(bg.bg_id)) {
      throw InputError(geom_path.string() + ": duplicate bg_id " + bg.bg_id);
    }
    const auto& geom = feature.at("geometry");
    if (geom.value("type", "") != "Polygon") {
      throw InputError("block group " + bg.bg_id + ": geometry must be a Polygon");
    }
    bg.ring = ring_from_geojson(geom.at("coordinates").at(0), "block group " + bg.bg_id);
    if (bg.ring.size() < 3) {
      throw InputError("block group " + bg.bg_id + ": ring needs at least 3 vertices");
    }
    bg.bbox = geo::BBox::of(bg.ring);
    slot[bg.bg_id] = bgs.size();
    bgs.push_back(std::move(bg));
  }

  auto in = open_or_throw(attr_path);
  std::string line;
  std::size_t line_no = 0;
  if (!next_data_line(in, line, line_no)) {
    throw InputError(attr_path.string() + ": empty attribute file");
  }
  const auto header_views = csvutil::split(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());
  if (header.empty() || header[0] != "bg_id") {
    throw InputError(attr_path.string() + ": first attribute column must be bg_id");
  }
  while (next_data_line(in, line, line_no)) {
    if (line.empty()) continue;
    const auto fields = csvutil::split(line);
    if (fields.size() != header.size()) {
      if (warnings) {
        warnings->push_back(attr_path.string() + ":" + std::to_string(line_no) +
                            ": bad column count, row ignored");
      }
      continue;
    }
    const std::string bg_id(fields[0]);
    auto it = slot.find(bg_id);
    if (it == slot.end()) {
      if (warnings) {
        warnings->push_back(attr_path.string() + ":" + std::to_string(line_no) +
                            ": attribute row for unknown bg_id " + bg_id + ", row ignored");
      }
      continue;
    }
    BlockGroup& bg = bgs[it->second];
    for (std::size_t c = 1; c < header.size(); ++c) {
      if (fields[c].empty() || fields[c] == "nan") continue;  // missing
      const auto v = parse_double(fields[c]);
      if (!v || !std::isfinite(*v)) {
        if (warnings) {
          warnings->push_back(bg_id + ": unparseable " + header[c] + ", flagged missing");
        }
        continue;
      }
      if (share_like(header[c]) && (*v < 0.0 || *v > 1.0)) {
        if (warnings) {
          warnings->push_back(bg_id + ": " + header[c] + "=" + fmt_double(*v) +
                              " outside [0,1], flagged missing");
        }
        continue;
      }
      if (header[c] == "population" && *v < 0.0) {
        if (warnings) {
          warnings->push_back(bg_id + ": negative population, flagged missing");
        }
        continue;
      }
      bg.attributes[header[c]] = *v;
    }
  }

  std::sort(bgs.begin(), bgs.end(),
            [](const BlockGroup& a, const BlockGroup& b) { return a.bg_id < b.bg_id; });
  return bgs;
}

CityTable load_city_table(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t line_no = 0;
  if (!next_data_line(in, line, line_no)) throw InputError(path.string() + ": empty city table");
  const auto header_views = csvutil::split(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());
  if (header.empty() || header[0] != "city_id") {
    throw InputError(path.string() + ": first column must be city_id");
  }
  CityTable table;
  while (next_data_line(in, line, line_no)) {
    if (line.empty()) continue;
    const auto fields = csvutil::split(line);
    if (fields.size() != header.size()) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad column count");
    }
    auto& row = table[std::string(fields[0])];
    for (std::size_t c = 1; c < header.size(); ++c) {
      if (fields[c].empty() || fields[c] == "nan") continue;
      const auto v = parse_double(fields[c]);
      if (!v) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad number in " +
                         header[c]);
      }
      row[header[c]] = *v;
    }
  }
  return table;
}

std::map<std::string, double> load_id_value_csv(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t line_no = 0;
  if (!next_data_line(in, line, line_no)) throw InputError(path.string() + ": empty table");
  std::map<std::string, double> out;
  while (next_data_line(in, line, line_no)) {
    if (line.empty()) continue;
    const auto fields = csvutil::split(line);
    if (fields.size() < 2) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": want id,value");
    }
    const auto v = parse_double(fields[1]);
    if (!v) throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad value");
    out[std::string(fields[0])] = *v;
  }
  return out;
}

StationIndex::StationIndex(const std::vector<Station>& stations) {
  by_id_.reserve(stations.size());
  for (const auto& s : stations) by_id_.push_back(&s);
  std::sort(by_id_.begin(), by_id_.end(),
            [](const Station* a, const Station* b) { return a->station_id < b->station_id; });
}

const Station* StationIndex::find(const geo::GeoPoint& p) const {
  for (const Station* s : by_id_) {
    if (s->footprint.bbox().contains(p) && geo::contains(s->footprint, p)) return s;
  }
  return nullptr;
}

BlockGroupIndex::BlockGroupIndex(const std::vector<BlockGroup>& bgs) {
  by_id_.reserve(bgs.size());
  for (const auto& b : bgs) by_id_.push_back(&b);
  std::sort(by_id_.begin(), by_id_.end(),
            [](const BlockGroup* a, const BlockGroup* b) { return a->bg_id < b->bg_id; });
}

const BlockGroup* BlockGroupIndex::find(const geo::GeoPoint& p) const {
  for (const BlockGroup* b : by_id_) {
    if (b->contains(p)) return b;
  }
  return nullptr;
}

void write_pings_csv(const std::vector<DeviceStream>& devices, const std::filesystem::path& path,
                     const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "device_id,ts_unix_s,lat,lon\n";
  for (const auto& dev : devices) {
    for (const auto& p : dev.pings) {
      out << dev.device_id << ',' << p.ts_s << ',' << fmt_double(p.loc.lat) << ','
          << fmt_double(p.loc.lon) << '\n';
    }
  }
}

void write_stations_geojson(const std::vector<Station>& stations,
                            const std::filesystem::path& path) {
  json features = json::array();
  for (const auto& s : stations) {
    features.push_back({{"type", "Feature"},
                        {"properties", {{"station_id", s.station_id}, {"city_id", s.city_id}}},
                        {"geometry",
                         {{"type", "Polygon"},
                          {"coordinates", ring_to_geojson(s.footprint.vertices())}}}});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) << '\n';
}

void write_blockgroups_geojson(const std::vector<BlockGroup>& bgs,
                               const std::filesystem::path& path) {
  json features = json::array();
  for (const auto& b : bgs) {
    features.push_back({{"type", "Feature"},
                        {"properties", {{"bg_id", b.bg_id}, {"city_id", b.city_id}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", ring_to_geojson(b.ring)}}}});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) << '\n';
}

void write_bg_attributes_csv(const std::vector<BlockGroup>& bgs,
                             const std::vector<std::string>& columns,
                             const std::filesystem::path& path,
                             const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "bg_id";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& b : bgs) {
    out << b.bg_id;
    for (const auto& c : columns) {
      out << ',';
      if (auto v = b.attr(c)) out << fmt_double(*v);
    }
    out << '\n';
  }
}

void write_city_table_csv(const CityTable& table, const std::vector<std::string>& columns,
                          const std::filesystem::path& path,
                          const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "city_id";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& [city, row] : table) {
    out << city;
    for (const auto& c : columns) {
      out << ',';
      if (auto it = row.find(c); it != row.end()) out << fmt_double(it->second);
    }
    out << '\n';
  }
}

void write_rejects_csv(const LoadReport& report, const std::filesystem::path& path,
                       const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "line_no,reason\n";
  for (const auto& r : report.rejects) out << r.line_no << ',' << r.reason << '\n';
}

}  // namespace patrolscope::io
