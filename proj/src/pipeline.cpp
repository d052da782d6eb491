#include "patrolscope/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "patrolscope/csv.hpp"
#include "patrolscope/errors.hpp"
#include "patrolscope/officer.hpp"
#include "patrolscope/parallel.hpp"

namespace patrolscope::pipeline {

using csvutil::fmt_double;
using json = nlohmann::json;
using timeutil::MonthId;

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> kSubs = {"validate", "synth",   "qualify",
                                                 "homes",    "shifts",  "presence",
                                                 "regress",  "validate-city", "all"};
  return kSubs;
}

namespace {

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_override(json& cfg, const std::string& expr) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InputError("override must look like key.path=value: " + expr);
  }
  const std::string path = expr.substr(0, eq);
  const std::string raw = expr.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted strings pass through

  json* node = &cfg;
  std::size_t at = 0;
  while (true) {
    const auto dot = path.find('.', at);
    const std::string key = path.substr(at, dot == std::string::npos ? dot : dot - at);
    if (key.empty()) throw InputError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    at = dot + 1;
  }
}

econ::ModelSpec parse_model(const json& mj) {
  econ::ModelSpec m;
  m.name = mj.value("name", m.name);
  m.outcome = mj.value("outcome", std::string{"arsinh_hours"});
  for (const auto& r : mj.value("regressors", json::array())) m.regressors.push_back(r.get<std::string>());
  for (const auto& r : mj.value("mean_center", json::array())) m.mean_center.insert(r.get<std::string>());
  for (const auto& pair : mj.value("interactions", json::array())) {
    m.interactions.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
  }
  m.city_fe = mj.value("city_fe", false);
  m.filter_column = mj.value("filter_column", std::string{});
  return m;
}

std::vector<econ::ModelSpec> default_models() {
  econ::ModelSpec raw;
  raw.name = "disparity_raw";
  raw.outcome = "arsinh_hours";
  raw.regressors = {"rel_black", "rel_hispanic", "rel_asian"};
  raw.mean_center = {"rel_black", "rel_hispanic", "rel_asian"};

  econ::ModelSpec controls = raw;
  controls.name = "disparity_controls";
  for (const char* c : {"log_population", "pct_college", "median_income_k", "census_return_rate",
                        "homicide_count", "dist_nearest_homicide_km"}) {
    controls.regressors.push_back(c);
  }

  econ::ModelSpec within = controls;
  within.name = "disparity_within";
  within.city_fe = true;
  return {raw, controls, within};
}

std::vector<std::pair<std::string, std::vector<std::string>>> default_blocks() {
  return {{"socioeconomics", {"log_population", "pct_college", "median_income_k", "census_return_rate"}},
          {"crime", {"homicide_count", "dist_nearest_homicide_km"}},
          {"race", {"rel_black", "rel_hispanic", "rel_asian"}}};
}

RunConfig config_from_json(const json& j, std::optional<unsigned> env_workers,
                           bool workers_pinned) {
  RunConfig cfg;
  cfg.output_dir = j.value("output_dir", std::string{"out"});
  cfg.workers = j.value("workers", 1u);
  if (!workers_pinned && env_workers) cfg.workers = *env_workers;
  if (cfg.workers < 1) cfg.workers = 1;
  cfg.rng_seed = j.value("rng_seed", static_cast<std::uint64_t>(1));
  cfg.max_reject_fraction = j.value("max_reject_fraction", 0.01);

  if (j.contains("synth")) {
    auto spec = synth::parse_synth_spec(j["synth"].dump());
    spec.rng_seed = j["synth"].value("rng_seed", cfg.rng_seed);
    cfg.synth_spec = std::move(spec);
  }

  if (j.contains("window")) {
    const auto& wj = j["window"];
    std::map<std::string, timeutil::Timezone> tz_by_city;
    const json tzj = wj.value("tz_by_city", json::object());  // items() on the temporary dangles
    for (const auto& [city, tz] : tzj.items()) {
      tz_by_city[city] = timeutil::Timezone::parse(tz.get<std::string>());
    }
    timeutil::Timezone default_tz;
    if (wj.contains("default_tz")) {
      default_tz = timeutil::Timezone::parse(wj["default_tz"].get<std::string>());
    }
    cfg.window = io::StudyWindow::make(timeutil::parse_date(wj.at("start").get<std::string>()),
                                       timeutil::parse_date(wj.at("end").get<std::string>()),
                                       std::move(tz_by_city), default_tz);
  } else if (cfg.synth_spec) {
    // Derive the window from the synthetic corpus definition.
    const auto& spec = *cfg.synth_spec;
    std::map<std::string, timeutil::Timezone> tz_by_city;
    for (const auto& c : spec.cities) tz_by_city[c.city_id] = timeutil::Timezone::parse(c.tz);
    const std::int64_t end_ts = timeutil::ts_from_date_utc(spec.start_date) +
                                static_cast<std::int64_t>(spec.n_days) * 86400;
    cfg.window = io::StudyWindow::make(spec.start_date, timeutil::utc_parts(end_ts).date,
                                       std::move(tz_by_city));
  } else {
    throw InputError("config needs a window or a synth spec");
  }

  if (j.contains("inputs")) {
    const auto& ij = j["inputs"];
    auto get = [&](const char* key) {
      return std::filesystem::path(ij.value(key, std::string{}));
    };
    cfg.inputs.pings = get("pings");
    cfg.inputs.stations = get("stations");
    cfg.inputs.bg_geometry = get("bg_geometry");
    cfg.inputs.bg_attributes = get("bg_attributes");
    cfg.inputs.city_table = get("city_table");
    cfg.inputs.actions = get("actions");
    cfg.inputs.employees = get("employees");
    cfg.inputs.composition = get("composition");
    cfg.inputs.zones = get("zones");
  }

  if (j.contains("thresholds")) {
    const auto& tj = j["thresholds"];
    cfg.thresholds.station_days_min = tj.value("station_days_min", 5);
    cfg.thresholds.shift_min_h = tj.value("shift_min_h", 4.0);
    if (tj.contains("shift_max_h") && !tj["shift_max_h"].is_null()) {
      cfg.thresholds.shift_max_h = tj["shift_max_h"].get<double>();
    }
    cfg.thresholds.bracket_max_h = tj.value("bracket_max_h", 24.0);
    cfg.thresholds.require_same_station = tj.value("require_same_station", false);
    if (cfg.thresholds.station_days_min < 1 || cfg.thresholds.shift_min_h <= 0 ||
        cfg.thresholds.bracket_max_h <= 0) {
      throw InputError("thresholds must be positive");
    }
  }

  if (j.contains("presence")) {
    const auto& pj = j["presence"];
    if (pj.contains("speed_cap_mph")) {
      if (pj["speed_cap_mph"].is_null()) {
        cfg.presence_cfg.speed_cap_mph.reset();
      } else {
        cfg.presence_cfg.speed_cap_mph = pj["speed_cap_mph"].get<double>();
      }
    }
    cfg.presence_cfg.exclude_weekday_9to5 = pj.value("exclude_weekday_9to5", false);
    cfg.presence_cfg.local_time_9to5 = pj.value("local_time_9to5", true);
  }

  for (const auto& mj : j.value("models", json::array())) cfg.models.push_back(parse_model(mj));
  for (const auto& bj : j.value("decomposition", json::array())) {
    std::vector<std::string> cols;
    for (const auto& c : bj.value("columns", json::array())) cols.push_back(c.get<std::string>());
    cfg.decomp_blocks.emplace_back(bj.value("name", std::string{"block"}), std::move(cols));
  }

  json canonical = j;
  canonical.erase("workers");
  canonical.erase("output_dir");
  cfg.config_hash = fnv1a_hex(canonical.dump());
  return cfg;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<unsigned> env_workers) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  bool workers_pinned = false;
  for (const auto& expr : overrides) {
    apply_override(j, expr);
    if (expr.rfind("workers=", 0) == 0) workers_pinned = true;
  }

  try {
    return config_from_json(j, env_workers, workers_pinned);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

namespace {

namespace fs = std::filesystem;

struct StageLog {
  json stages = json::array();
  std::vector<std::string> warnings;
};

class Stage {
public:
  Stage(StageLog& log, std::string name)
      : log_(log), name_(std::move(name)), t0_(std::chrono::steady_clock::now()) {}

  void count(const std::string& key, double v) { counts_[key] = v; }
  void count(const std::string& key, std::size_t v) { counts_[key] = v; }

  ~Stage() {
    const auto dt = std::chrono::steady_clock::now() - t0_;
    json row;
    row["name"] = name_;
    row["seconds"] = std::chrono::duration<double>(dt).count();
    row["counts"] = counts_;
    log_.stages.push_back(std::move(row));
  }

private:
  StageLog& log_;
  std::string name_;
  json counts_ = json::object();
  std::chrono::steady_clock::time_point t0_;
};

fs::path resolve_input(const RunConfig& cfg, const fs::path& explicit_path,
                       const char* synth_name, const char* label, bool required) {
  if (!explicit_path.empty()) {
    if (!fs::exists(explicit_path)) {
      throw InputError(std::string("input ") + label + " not found: " + explicit_path.string());
    }
    return explicit_path;
  }
  const fs::path synth_path = cfg.output_dir / "synth" / synth_name;
  if (fs::exists(synth_path)) return synth_path;
  if (required) {
    throw InputError(std::string("missing input ") + label +
                     " (set inputs." + label + " or run the synth stage first)");
  }
  return {};
}

fs::path artifact(const RunConfig& cfg, const char* name) { return cfg.output_dir / name; }

fs::path require_artifact(const RunConfig& cfg, const char* name, const char* producer) {
  const fs::path p = artifact(cfg, name);
  if (!fs::exists(p)) {
    throw InputError(std::string(name) + " not found in " + cfg.output_dir.string() +
                     "; run the " + producer + " stage first");
  }
  return p;
}

std::ofstream open_artifact(const RunConfig& cfg, const char* name) {
  std::ofstream out(artifact(cfg, name));
  if (!out) throw InputError("cannot write " + (cfg.output_dir / name).string());
  out << "# config_hash=" << cfg.config_hash << "\n";
  return out;
}

void write_json_artifact(const RunConfig& cfg, const char* name, json j) {
  j["config_hash"] = cfg.config_hash;
  std::ofstream out(artifact(cfg, name));
  if (!out) throw InputError("cannot write " + (cfg.output_dir / name).string());
  out << j.dump(1) << '\n';
}

struct Loaded {
  io::PingCorpus corpus;
  std::vector<io::Station> stations;
};

Loaded load_core(const RunConfig& cfg, StageLog& log) {
  Loaded l;
  const auto pings = resolve_input(cfg, cfg.inputs.pings, "pings.csv", "pings", true);
  const auto stations = resolve_input(cfg, cfg.inputs.stations, "stations.geojson", "stations", true);
  l.corpus = io::load_pings(pings, cfg.window, cfg.max_reject_fraction);
  l.stations = io::load_geofences(stations, &log.warnings);
  for (const auto& w : l.corpus.report.warnings) log.warnings.push_back(w);
  return l;
}

std::vector<io::BlockGroup> load_bgs(const RunConfig& cfg, StageLog& log) {
  const auto geom = resolve_input(cfg, cfg.inputs.bg_geometry, "blockgroups.geojson",
                                  "bg_geometry", true);
  const auto attrs = resolve_input(cfg, cfg.inputs.bg_attributes, "bg_attributes.csv",
                                   "bg_attributes", true);
  return io::load_blockgroups(geom, attrs, &log.warnings);
}

io::CityTable load_cities(const RunConfig& cfg) {
  const auto path = resolve_input(cfg, cfg.inputs.city_table, "city_table.csv", "city_table", true);
  return io::load_city_table(path);
}

// ---- derived per-device results -------------------------------------------

struct QualRow {
  std::string device_id;
  MonthId month;
  int station_days = 0;
  bool qualified = false;
  std::string city_id;
};

MonthId parse_month(const std::string& s) {
  const auto dash = s.find('-');
  const auto y = csvutil::parse_int(s.substr(0, dash));
  const auto m = csvutil::parse_int(s.substr(dash + 1));
  if (dash == std::string::npos || !y || !m || *m < 1 || *m > 12) {
    throw InputError("bad month value " + s);
  }
  return MonthId{static_cast<int>(*y), static_cast<int>(*m)};
}

std::vector<QualRow> read_qualifications(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<QualRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto f = csvutil::split(line);
    if (f.size() != 5) throw InputError(path.string() + ": bad qualification row");
    QualRow r;
    r.device_id = std::string(f[0]);
    r.month = parse_month(std::string(f[1]));
    r.station_days = static_cast<int>(csvutil::parse_int(f[2]).value_or(0));
    r.qualified = f[3] == "1";
    r.city_id = std::string(f[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

struct HomeRows {
  std::map<std::string, officer::HomePair> by_device;
};

HomeRows read_homes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  HomeRows out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto f = csvutil::split(line);
    if (f.size() != 4) throw InputError(path.string() + ": bad home row");
    officer::HomeLocation loc;
    loc.device_id = std::string(f[0]);
    loc.half = f[1] == "H1" ? officer::Half::H1 : officer::Half::H2;
    loc.home_cell = geo::Geohash7::parse(std::string(f[2]));
    loc.support = static_cast<std::size_t>(csvutil::parse_int(f[3]).value_or(0));
    auto& pair = out.by_device[loc.device_id];
    (loc.half == officer::Half::H1 ? pair.h1 : pair.h2) = loc;
  }
  return out;
}

std::map<std::string, std::set<MonthId>> qualified_by_device(const std::vector<QualRow>& rows) {
  std::map<std::string, std::set<MonthId>> out;
  for (const auto& r : rows) {
    if (r.qualified) out[r.device_id].insert(r.month);
  }
  return out;
}

// Modal city per device with at least one qualified month.
std::map<std::string, std::string> modal_city_by_device(const std::vector<QualRow>& rows) {
  std::map<std::string, std::vector<officer::MonthQualification>> by_device;
  for (const auto& r : rows) {
    by_device[r.device_id].push_back({r.device_id, r.month, r.station_days, r.qualified, r.city_id});
  }
  std::map<std::string, std::string> out;
  for (const auto& [dev, quals] : by_device) {
    const bool any = std::any_of(quals.begin(), quals.end(),
                                 [](const auto& q) { return q.qualified; });
    if (any) out[dev] = officer::modal_city(quals);
  }
  return out;
}

std::vector<shift::Shift> detect_all_shifts(const Loaded& l,
                                            const std::map<std::string, std::set<MonthId>>& qmonths,
                                            const HomeRows& homes, const RunConfig& cfg) {
  const io::StationIndex stations(l.stations);
  shift::ShiftConfig scfg;
  scfg.min_shift_h = cfg.thresholds.shift_min_h;
  scfg.max_shift_h = cfg.thresholds.shift_max_h;
  scfg.bracket_max_h = cfg.thresholds.bracket_max_h;
  scfg.require_same_station = cfg.thresholds.require_same_station;

  auto per_device = parallel_map(l.corpus.devices, cfg.workers, [&](const io::DeviceStream& dev) {
    const auto qit = qmonths.find(dev.device_id);
    const auto hit = homes.by_device.find(dev.device_id);
    if (qit == qmonths.end() || hit == homes.by_device.end()) return std::vector<shift::Shift>{};
    return shift::detect_shifts(dev, hit->second, stations, qit->second, cfg.window, scfg);
  });

  std::vector<shift::Shift> all;
  for (auto& v : per_device) {
    for (auto& s : v) all.push_back(std::move(s));
  }
  return all;
}

// ---- stages ----------------------------------------------------------------

void stage_synth(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "synth");
  if (!cfg.synth_spec) throw InputError("synth stage requires a synth section in the config");
  const auto corpus = synth::generate(*cfg.synth_spec, cfg.workers);
  write_corpus(corpus, cfg.output_dir / "synth", cfg.config_hash);
  std::size_t pings = 0;
  for (const auto& d : corpus.devices) pings += d.pings.size();
  stage.count("devices", corpus.devices.size());
  stage.count("pings", pings);
  stage.count("stations", corpus.stations.size());
  stage.count("blockgroups", corpus.bgs.size());
  stage.count("officers", corpus.truth.officer_ids.size());
}

void stage_validate(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "validate");
  const Loaded l = load_core(cfg, log);
  const auto bgs = load_bgs(cfg, log);
  const auto cities = load_cities(cfg);

  io::write_rejects_csv(l.corpus.report, artifact(cfg, "rejects.csv"),
                        "config_hash=" + cfg.config_hash);
  stage.count("rows_total", l.corpus.report.rows_total);
  stage.count("rows_kept", l.corpus.report.rows_kept);
  stage.count("duplicates", l.corpus.report.duplicates);
  stage.count("out_of_window", l.corpus.report.out_of_window);
  stage.count("malformed", l.corpus.report.malformed());
  stage.count("devices", l.corpus.devices.size());
  stage.count("stations", l.stations.size());
  stage.count("blockgroups", bgs.size());
  stage.count("cities", cities.size());
}

void stage_qualify(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "qualify");
  const Loaded l = load_core(cfg, log);
  const io::StationIndex stations(l.stations);
  officer::QualifyConfig qcfg{cfg.thresholds.station_days_min};

  const auto quals = parallel_map(l.corpus.devices, cfg.workers, [&](const io::DeviceStream& dev) {
    return officer::qualify_months(dev, stations, cfg.window, qcfg);
  });

  auto out = open_artifact(cfg, "qualifications.csv");
  out << "device_id,month,station_days,qualified,city_id\n";
  std::size_t rows = 0, qualified_devices = 0;
  for (const auto& dev_quals : quals) {
    bool any = false;
    for (const auto& q : dev_quals) {
      out << q.device_id << ',' << q.month.str() << ',' << q.station_days << ','
          << (q.qualified ? 1 : 0) << ',' << q.city_id << '\n';
      ++rows;
      any = any || q.qualified;
    }
    if (any) ++qualified_devices;
  }
  stage.count("devices", l.corpus.devices.size());
  stage.count("rows", rows);
  stage.count("qualified_devices", qualified_devices);
}

void stage_homes(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "homes");
  const auto quals = read_qualifications(require_artifact(cfg, "qualifications.csv", "qualify"));
  const auto qmonths = qualified_by_device(quals);
  const Loaded l = load_core(cfg, log);
  const io::StationIndex stations(l.stations);

  const auto& devices = l.corpus.devices;
  const auto homes = parallel_map(devices, cfg.workers, [&](const io::DeviceStream& dev) {
    if (!qmonths.count(dev.device_id)) return officer::HomePair{};
    return officer::infer_home(dev, stations, cfg.window);
  });

  auto out = open_artifact(cfg, "homes.csv");
  out << "device_id,half,home_cell,support\n";
  std::size_t rows = 0, absent_halves = 0;
  for (std::size_t i = 0; i < devices.size(); ++i) {
    if (!qmonths.count(devices[i].device_id)) continue;
    for (const auto* loc : {&homes[i].h1, &homes[i].h2}) {
      if (!loc->has_value()) {
        ++absent_halves;
        continue;
      }
      out << (*loc)->device_id << ',' << ((*loc)->half == officer::Half::H1 ? "H1" : "H2") << ','
          << (*loc)->home_cell.str() << ',' << (*loc)->support << '\n';
      ++rows;
    }
  }
  stage.count("devices", qmonths.size());
  stage.count("rows", rows);
  stage.count("absent_halves", absent_halves);
}

void stage_shifts(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "shifts");
  const auto quals = read_qualifications(require_artifact(cfg, "qualifications.csv", "qualify"));
  const auto homes = read_homes(require_artifact(cfg, "homes.csv", "homes"));
  const Loaded l = load_core(cfg, log);
  const auto shifts = detect_all_shifts(l, qualified_by_device(quals), homes, cfg);

  auto out = open_artifact(cfg, "shifts.csv");
  out << "device_id,start_ts,end_ts,n_patrol_pings,station_in,station_out\n";
  for (const auto& s : shifts) {
    out << s.device_id << ',' << s.start_ts << ',' << s.end_ts << ',' << s.patrol_pings.size()
        << ',' << s.station_in << ',' << s.station_out << '\n';
  }

  json stats_json;
  if (const auto stats = shift::shift_statistics(shifts, cfg.window)) {
    stats_json["n_shifts"] = stats->n_shifts;
    stats_json["n_devices"] = stats->n_devices;
    stats_json["mean_h"] = stats->mean_h;
    stats_json["median_h"] = stats->median_h;
    stats_json["shifts_per_device_month"] = stats->shifts_per_device_month;
  }
  write_json_artifact(cfg, "shift_stats.json", std::move(stats_json));
  stage.count("shifts", shifts.size());
}

void stage_presence(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "presence");
  const auto quals = read_qualifications(require_artifact(cfg, "qualifications.csv", "qualify"));
  const auto homes = read_homes(require_artifact(cfg, "homes.csv", "homes"));
  const Loaded l = load_core(cfg, log);
  const auto bgs = load_bgs(cfg, log);
  const io::BlockGroupIndex bg_index(bgs);

  const auto shifts = detect_all_shifts(l, qualified_by_device(quals), homes, cfg);
  const auto result =
      presence::aggregate_presence(shifts, bg_index, cfg.presence_cfg, cfg.window, cfg.workers);

  auto out = open_artifact(cfg, "presence.csv");
  out << "bg_id,hours,arsinh_hours,shift_count";
  for (int b = 1; b <= presence::kHourBuckets; ++b) {
    char buf[16];
    std::snprintf(buf, sizeof buf, ",hour_%02d", b);
    out << buf;
  }
  out << '\n';
  for (const auto& cell : result.cells) {
    out << cell.bg_id << ',' << fmt_double(cell.hours()) << ','
        << fmt_double(econ::arsinh(cell.hours())) << ',' << cell.shift_count;
    for (int b = 1; b <= presence::kHourBuckets; ++b) {
      out << ',' << fmt_double(cell.hours_by_shift_hour(b));
    }
    out << '\n';
  }

  stage.count("shifts", shifts.size());
  stage.count("cells", result.cells.size());
  stage.count("counted_pings", result.counted_pings);
  stage.count("unassigned_pings", result.unassigned_pings);
  stage.count("unassigned_hours", result.unassigned_hours());
  stage.count("excluded_speed", result.excluded_speed);
  stage.count("excluded_offhours", result.excluded_offhours);
}

struct PresenceArtifact {
  std::map<std::string, double> hours;
  std::map<std::string, std::size_t> shift_count;
};

PresenceArtifact read_presence(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  PresenceArtifact out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto f = csvutil::split(line);
    if (f.size() < 4) throw InputError(path.string() + ": bad presence row");
    const std::string bg(f[0]);
    out.hours[bg] = csvutil::parse_double(f[1]).value_or(0.0);
    out.shift_count[bg] = static_cast<std::size_t>(csvutil::parse_int(f[3]).value_or(0));
  }
  return out;
}

econ::Table build_regression_table(const std::vector<io::BlockGroup>& bgs,
                                   const io::CityTable& cities, const PresenceArtifact& presence,
                                   const std::map<std::string, double>* actions) {
  econ::Table t;
  const auto rel = econ::build_relative_shares(bgs, cities);

  std::optional<econ::ActionOutcomes> action_outcomes;
  if (actions) {
    std::map<std::string, double> hours_all;
    for (const auto& bg : bgs) {
      auto it = presence.hours.find(bg.bg_id);
      hours_all[bg.bg_id] = it == presence.hours.end() ? 0.0 : it->second;
    }
    action_outcomes = econ::arrests_per_hour(hours_all, *actions);
  }

  for (std::size_t i = 0; i < bgs.size(); ++i) {
    const auto& bg = bgs[i];
    const std::size_t r = t.add_row(bg.bg_id, bg.city_id);
    const auto hit = presence.hours.find(bg.bg_id);
    const double hours = hit == presence.hours.end() ? 0.0 : hit->second;
    t.set("hours", r, hours);
    t.set("arsinh_hours", r, econ::arsinh(hours));

    if (rel[i].rel_black) t.set("rel_black", r, *rel[i].rel_black);
    if (rel[i].rel_hispanic) t.set("rel_hispanic", r, *rel[i].rel_hispanic);
    if (rel[i].rel_asian) t.set("rel_asian", r, *rel[i].rel_asian);

    for (const auto& [name, value] : bg.attributes) t.set(name, r, value);
    if (const auto pop = bg.attr("population"); pop && *pop > 0.0) {
      t.set("log_population", r, std::log(*pop));
    }
    if (action_outcomes) {
      t.set("arsinh_actions", r, action_outcomes->arsinh_actions.at(bg.bg_id));
      const auto rit = action_outcomes->arsinh_ratio.find(bg.bg_id);
      if (rit != action_outcomes->arsinh_ratio.end()) t.set("arsinh_ratio", r, rit->second);
    }
  }
  return t;
}

void write_model_outputs(const RunConfig& cfg, const econ::ModelSpec& spec,
                         const econ::RegressionResult& fit) {
  const std::string csv_name = "regress_" + spec.name + ".csv";
  std::ofstream out(cfg.output_dir / csv_name);
  if (!out) throw InputError("cannot write " + csv_name);
  out << "# config_hash=" << cfg.config_hash << "\n";
  out << "# model=" << spec.name << " outcome=" << spec.outcome << " n_obs=" << fit.n_obs
      << " r_squared=" << fmt_double(fit.r_squared) << " n_groups=" << fit.n_groups << "\n";
  out << "term,coefficient,se,p,stars\n";
  for (const auto& c : fit.coefficients) {
    out << c.term << ',' << fmt_double(c.beta) << ',' << fmt_double(c.se) << ','
        << fmt_double(c.p) << ',' << c.stars << '\n';
  }

  const std::string txt_name = "regress_" + spec.name + ".txt";
  std::ofstream txt(cfg.output_dir / txt_name);
  if (!txt) throw InputError("cannot write " + txt_name);
  txt << "Model " << spec.name << "  (outcome: " << spec.outcome << ")\n";
  txt << "N = " << fit.n_obs << "   R-squared = " << fmt_double(fit.r_squared);
  if (fit.n_groups) txt << "   absorbed groups = " << fit.n_groups;
  txt << "\n\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-40s %14s %12s %10s\n", "term", "coef", "se", "p");
  txt << line;
  for (const auto& c : fit.coefficients) {
    std::snprintf(line, sizeof line, "%-40s %14.6g%-3s %12.5g %10.4g\n", c.term.c_str(), c.beta,
                  c.stars.c_str(), c.se, c.p);
    txt << line;
  }
}

void stage_regress(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "regress");
  const auto presence_art = read_presence(require_artifact(cfg, "presence.csv", "presence"));
  const auto bgs = load_bgs(cfg, log);
  const auto cities = load_cities(cfg);

  std::optional<std::map<std::string, double>> actions;
  const auto actions_path = resolve_input(cfg, cfg.inputs.actions, "actions.csv", "actions", false);
  if (!actions_path.empty()) actions = io::load_id_value_csv(actions_path);

  const econ::Table table =
      build_regression_table(bgs, cities, presence_art, actions ? &*actions : nullptr);

  auto models = cfg.models.empty() ? default_models() : cfg.models;
  std::size_t fitted = 0;
  const econ::RegressionResult* first_fit = nullptr;
  std::vector<econ::RegressionResult> fits;
  fits.reserve(models.size());
  for (const auto& m : models) {
    fits.push_back(econ::fit_ols(table, m));
    write_model_outputs(cfg, m, fits.back());
    ++fitted;
  }
  if (!fits.empty()) first_fit = &fits.front();

  const auto blocks = cfg.decomp_blocks.empty() ? default_blocks() : cfg.decomp_blocks;
  {
    const auto decomp = econ::variance_decomposition(table, "arsinh_hours", blocks);
    auto out = open_artifact(cfg, "decomposition.csv");
    out << "city,block,r2_cumulative,delta_r2,n_obs\n";
    for (const auto& row : decomp.rows) {
      for (std::size_t b = 0; b < decomp.block_names.size(); ++b) {
        out << row.city << ',' << decomp.block_names[b] << ',' << fmt_double(row.r2_cumulative[b])
            << ',' << fmt_double(row.delta_r2[b]) << ',' << row.n_obs << '\n';
      }
    }
  }

  {
    std::vector<double> xs, ys;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
      const double x = table.get("rel_black", r);
      const double y = table.get("arsinh_hours", r);
      if (std::isfinite(x) && std::isfinite(y)) {
        xs.push_back(x);
        ys.push_back(y);
      }
    }
    if (xs.size() >= 2) {
      const auto scatter = econ::binned_scatter(xs, ys);
      auto out = open_artifact(cfg, "scatter_rel_black.csv");
      out << "# rho=" << fmt_double(scatter.rho) << "\n";
      out << "bin,x_mean,y_mean\n";
      for (std::size_t b = 0; b < scatter.x_mean.size(); ++b) {
        out << (b + 1) << ',' << fmt_double(scatter.x_mean[b]) << ','
            << fmt_double(scatter.y_mean[b]) << '\n';
      }
    }
  }

  if (first_fit) {
    auto out = open_artifact(cfg, "elasticities.csv");
    out << "term,y_mean,x_mean,beta,factor,elasticity\n";
    double y_sum = 0.0;
    std::size_t y_n = 0;
    const auto& hours = table.col("hours");
    for (double v : hours) {
      if (std::isfinite(v)) {
        y_sum += v;
        ++y_n;
      }
    }
    const double y_mean = y_n ? y_sum / static_cast<double>(y_n) : 0.0;
    for (const char* term : {"rel_black", "rel_hispanic", "rel_asian"}) {
      const econ::Coefficient* c = first_fit->find(term);
      if (!c || y_mean <= 0.0 || !table.has(term)) continue;
      double x_sum = 0.0;
      std::size_t x_n = 0;
      for (double v : table.col(term)) {
        if (std::isfinite(v)) {
          x_sum += v;
          ++x_n;
        }
      }
      if (!x_n) continue;
      const double x_mean = x_sum / static_cast<double>(x_n);
      const double factor = econ::arsinh_elasticity_factor(y_mean);
      const double el = econ::elasticity_arsinh({y_mean, x_mean, c->beta});
      out << term << ',' << fmt_double(y_mean) << ',' << fmt_double(x_mean) << ','
          << fmt_double(c->beta) << ',' << fmt_double(factor) << ',' << fmt_double(el) << '\n';
    }
  }

  stage.count("models", fitted);
  stage.count("rows", table.n_rows());
}

void stage_validate_city(const RunConfig& cfg, StageLog& log) {
  Stage stage(log, "validate-city");
  const auto quals = read_qualifications(require_artifact(cfg, "qualifications.csv", "qualify"));
  const auto homes = read_homes(require_artifact(cfg, "homes.csv", "homes"));
  const auto bgs = load_bgs(cfg, log);
  const io::BlockGroupIndex bg_index(bgs);

  econ::ValidationInputs in;
  in.city_table = load_cities(cfg);

  const auto modal = modal_city_by_device(quals);
  for (const auto& [dev, city] : modal) in.detected_counts[city] += 1.0;

  std::map<std::string, std::vector<officer::RaceShares>> comp_members;
  for (const auto& [dev, city] : modal) {
    const auto hit = homes.by_device.find(dev);
    if (hit == homes.by_device.end() || !hit->second.h1) continue;
    const auto& h1 = *hit->second.h1;
    if (const auto shares = officer::impute_device_race(h1, bg_index)) {
      comp_members[city].push_back(*shares);
    }
    if (const auto* bg = bg_index.find(geo::geohash7_center(h1.home_cell))) {
      in.detected_zone_counts[bg->bg_id] += 1.0;
    }
  }
  for (const auto& [city, members] : comp_members) {
    const auto mean = officer::mean_shares(members);
    in.detected_composition[city] = {{"white", mean.white},
                                     {"black", mean.black},
                                     {"hispanic", mean.hispanic},
                                     {"asian", mean.asian}};
  }

  const auto employees = resolve_input(cfg, cfg.inputs.employees, "employees.csv", "employees", false);
  if (!employees.empty()) in.employee_counts = io::load_id_value_csv(employees);
  const auto composition =
      resolve_input(cfg, cfg.inputs.composition, "composition.csv", "composition", false);
  if (!composition.empty()) {
    std::map<std::string, std::map<std::string, double>> comp;
    for (const auto& [city, row] : io::load_city_table(composition)) comp[city] = row;
    in.police_composition = std::move(comp);
  }
  const auto zones = resolve_input(cfg, cfg.inputs.zones, "zones.csv", "zones", false);
  if (!zones.empty()) in.zone_residences = io::load_id_value_csv(zones);

  const auto rep = econ::city_validation_suite(in);
  json j;
  if (rep.count_rho) j["count_rho"] = *rep.count_rho;
  if (rep.per_capita_rho) j["per_capita_rho"] = *rep.per_capita_rho;
  if (rep.zone_rho) j["zone_rho"] = *rep.zone_rho;
  json comp_rows = json::array();
  for (const auto& c : rep.composition) {
    comp_rows.push_back({{"group", c.group}, {"slope", c.slope}, {"se", c.se}, {"n", c.n}});
  }
  j["composition"] = std::move(comp_rows);
  j["notes"] = rep.notes;
  j["detected_officers"] = modal.size();
  write_json_artifact(cfg, "validation.json", std::move(j));

  stage.count("detected_officers", modal.size());
  stage.count("cities", in.detected_counts.size());
  for (const auto& n : rep.notes) log.warnings.push_back(n);
}

void run_stage(const std::string& name, const RunConfig& cfg, StageLog& log) {
  if (name == "validate") {
    stage_validate(cfg, log);
  } else if (name == "synth") {
    stage_synth(cfg, log);
  } else if (name == "qualify") {
    stage_qualify(cfg, log);
  } else if (name == "homes") {
    stage_homes(cfg, log);
  } else if (name == "shifts") {
    stage_shifts(cfg, log);
  } else if (name == "presence") {
    stage_presence(cfg, log);
  } else if (name == "regress") {
    stage_regress(cfg, log);
  } else if (name == "validate-city") {
    stage_validate_city(cfg, log);
  } else {
    throw InputError("unknown subcommand " + name);
  }
}

}  // namespace

int run(const std::string& subcommand, const RunConfig& cfg) {
  const auto known = subcommands();
  if (std::find(known.begin(), known.end(), subcommand) == known.end()) {
    throw InputError("unknown subcommand " + subcommand);
  }

  std::filesystem::create_directories(cfg.output_dir);
  const fs::path failed_marker = cfg.output_dir / "FAILED";
  std::error_code ec;
  fs::remove(failed_marker, ec);

  std::vector<std::string> plan;
  if (subcommand == "all") {
    if (cfg.synth_spec) plan.push_back("synth");
    plan.insert(plan.end(),
                {"validate", "qualify", "homes", "shifts", "presence", "regress", "validate-city"});
  } else {
    plan.push_back(subcommand);
  }

  StageLog log;
  const auto started = std::chrono::system_clock::now();
  auto write_report = [&](const std::string& error) {
    json rep;
    rep["version"] = kVersion;
    rep["config_hash"] = cfg.config_hash;
    rep["command"] = subcommand;
    rep["workers"] = cfg.workers;
    rep["started_at_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(started.time_since_epoch()).count();
    rep["finished_at_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count();
    rep["stages"] = log.stages;
    rep["warnings"] = log.warnings;
    if (!error.empty()) rep["error"] = error;
    std::ofstream out(cfg.output_dir / "run_report.json");
    if (out) out << rep.dump(1) << '\n';
  };

  std::string current;
  try {
    for (const auto& name : plan) {
      current = name;
      run_stage(name, cfg, log);
    }
  } catch (const std::exception& e) {
    std::ofstream marker(failed_marker);
    marker << "stage=" << current << "\n" << e.what() << "\n";
    write_report(current + ": " + e.what());
    throw;
  }
  write_report("");
  return 0;
}

}  // namespace patrolscope::pipeline
