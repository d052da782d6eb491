#include "patrolscope/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "patrolscope/csv.hpp"
#include "patrolscope/errors.hpp"
#include "patrolscope/geo.hpp"
#include "patrolscope/parallel.hpp"

namespace patrolscope::synth {

using json = nlohmann::json;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

std::uint64_t sub_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = root;
  s = splitmix64(s) ^ (a * 0x9E3779B97F4A7C15ULL);
  s = splitmix64(s) ^ (b * 0xBF58476D1CE4E5B9ULL);
  s = splitmix64(s) ^ (c * 0x94D049BB133111EBULL);
  return splitmix64(s);
}

constexpr double kMPerDeg = geo::kEarthRadiusM * 3.14159265358979323846 / 180.0;

}  // namespace

double Rng::uniform() {
  return static_cast<double>(splitmix64(state_) >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::lognormal_mode(double mode, double sigma) {
  const double mu = std::log(mode) + sigma * sigma;
  return std::exp(mu + sigma * normal());
}

void SynthSpec::validate() const {
  if (cities.empty()) throw InputError("synth spec needs at least one city");
  std::set<std::string> ids;
  for (const auto& c : cities) {
    if (!ids.insert(c.city_id).second) throw InputError("duplicate synth city_id " + c.city_id);
    if (c.grid_rows < 1 || c.grid_cols < 1 || c.grid_rows * c.grid_cols < 2) {
      throw InputError("synth city " + c.city_id + ": grid too small");
    }
    if (c.cell_m < 200.0) throw InputError("synth city " + c.city_id + ": cell_m below 200");
    if (c.n_stations < 1 && c.n_officers > 0) {
      throw InputError("synth city " + c.city_id + ": officers need a station");
    }
    if (c.n_stations > c.grid_rows * c.grid_cols / 2) {
      throw InputError("synth city " + c.city_id + ": too many stations for the grid");
    }
    if (c.n_officers < 0 || c.n_civilians < 0) {
      throw InputError("synth city " + c.city_id + ": negative agent count");
    }
    timeutil::Timezone::parse(c.tz);
  }
  if (n_days < 1) throw InputError("synth spec: n_days must be positive");
  if (work_days_per_week < 1 || work_days_per_week > 7) {
    throw InputError("synth spec: work_days_per_week out of range");
  }
  if (shift_length_h_mean + 2.0 > 24.0) {
    throw InputError("synth spec: shift length cannot fit a 24 h home bracket");
  }
  if (shift_length_h_mean < 4.5 || shift_length_h_mean > 11.0) {
    throw InputError("synth spec: shift_length_h_mean outside [4.5, 11]");
  }
  if (shift_start_hour_mean < 5.0 || shift_start_hour_mean > 11.0) {
    throw InputError("synth spec: shift_start_hour_mean outside [5, 11]");
  }
  if (ping_gap_mode_min <= 0.0 || ping_gap_sigma <= 0.0) {
    throw InputError("synth spec: ping gap parameters must be positive");
  }
  if (gps_noise_m < 0.0) throw InputError("synth spec: negative gps noise");
  if (patrol_policy != "uniform" && patrol_policy != "rel_black") {
    throw InputError("synth spec: unknown patrol_policy " + patrol_policy);
  }
  if (!std::isfinite(policy_gain) || policy_gain < 0.0) {
    throw InputError("synth spec: policy_gain must be finite and non-negative");
  }
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InputError("synth spec: invalid JSON");

  SynthSpec s;
  try {
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    if (j.contains("start_date")) {
      s.start_date = timeutil::parse_date(j["start_date"].get<std::string>());
    }
    s.n_days = j.value("n_days", s.n_days);
    s.shift_start_hour_mean = j.value("shift_start_hour_mean", s.shift_start_hour_mean);
    s.shift_start_hour_sd = j.value("shift_start_hour_sd", s.shift_start_hour_sd);
    s.shift_length_h_mean = j.value("shift_length_h_mean", s.shift_length_h_mean);
    s.shift_length_h_sd = j.value("shift_length_h_sd", s.shift_length_h_sd);
    s.work_days_per_week = j.value("work_days_per_week", s.work_days_per_week);
    s.ping_gap_mode_min = j.value("ping_gap_mode_min", s.ping_gap_mode_min);
    s.ping_gap_sigma = j.value("ping_gap_sigma", s.ping_gap_sigma);
    s.gps_noise_m = j.value("gps_noise_m", s.gps_noise_m);
    s.patrol_policy = j.value("patrol_policy", s.patrol_policy);
    s.policy_gain = j.value("policy_gain", s.policy_gain);

    if (j.contains("cities")) {
      s.cities.clear();
      for (const auto& cj : j["cities"]) {
        CitySpec c;
        c.city_id = cj.value("city_id", c.city_id);
        c.origin_lat = cj.value("origin_lat", c.origin_lat);
        c.origin_lon = cj.value("origin_lon", c.origin_lon);
        c.grid_rows = cj.value("grid_rows", c.grid_rows);
        c.grid_cols = cj.value("grid_cols", c.grid_cols);
        c.cell_m = cj.value("cell_m", c.cell_m);
        c.n_stations = cj.value("n_stations", c.n_stations);
        c.n_officers = cj.value("n_officers", c.n_officers);
        c.n_civilians = cj.value("n_civilians", c.n_civilians);
        c.tz = cj.value("tz", c.tz);
        s.cities.push_back(std::move(c));
      }
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

io::StudyWindow SynthCorpus::window() const {
  return io::StudyWindow::make(start_date, end_date, tz_by_city);
}

namespace {

struct CityPlan {
  const CitySpec* spec = nullptr;
  std::size_t city_idx = 0;
  double dlat = 0.0;  // degrees per grid cell
  double dlon = 0.0;
  std::vector<io::BlockGroup> bgs;
  std::vector<io::Station> stations;
  std::vector<geo::GeoPoint> station_centers;
  std::set<int> station_bg;  // grid indices hosting a station
  std::vector<double> weight_cdf;  // patrol policy, cumulative and normalized
  double weight_total = 0.0;
  std::vector<double> weights;
  std::int64_t tz_offset_s = 0;
  std::map<std::string, double> city_shares;  // pct_* plus population
};

struct AgentJob {
  const CityPlan* city = nullptr;
  bool officer = false;
  int index = 0;  // within city and kind
};

struct AgentResult {
  io::DeviceStream stream;
  // Officer-only truth.
  std::string home_cell;
  std::string home_bg;
  std::vector<TruthShift> shifts;
  double patrol_seconds = 0.0;
};

geo::GeoPoint grid_point(const CityPlan& city, int r, int c, double fr, double fc) {
  return {city.spec->origin_lat + (static_cast<double>(r) + fr) * city.dlat,
          city.spec->origin_lon + (static_cast<double>(c) + fc) * city.dlon};
}

geo::GeoPoint jitter(const geo::GeoPoint& p, double noise_m, Rng& rng) {
  if (noise_m <= 0.0) return p;
  const double dlat = noise_m * rng.normal() / kMPerDeg;
  const double dlon =
      noise_m * rng.normal() / (kMPerDeg * std::cos(p.lat * 3.14159265358979323846 / 180.0));
  return {p.lat + dlat, p.lon + dlon};
}

bool near_any_station(const CityPlan& city, const geo::GeoPoint& p, double margin_m) {
  for (const auto& c : city.station_centers) {
    if (geo::haversine_m(c, p) < margin_m) return true;
  }
  return false;
}

int pick_bg(const CityPlan& city, Rng& rng) {
  const double u = rng.uniform() * city.weight_total;
  const auto it = std::upper_bound(city.weight_cdf.begin(), city.weight_cdf.end(), u);
  const auto idx = static_cast<int>(it - city.weight_cdf.begin());
  return std::min(idx, static_cast<int>(city.weight_cdf.size()) - 1);
}

class DayClock {
public:
  DayClock(std::int64_t window_start_ts, std::int64_t tz_offset_s)
      : base_(window_start_ts - tz_offset_s) {}

  std::int64_t at(int day, double local_sec) const {
    return base_ + static_cast<std::int64_t>(day) * 86400 +
           static_cast<std::int64_t>(std::llround(local_sec));
  }

private:
  std::int64_t base_;
};

AgentResult run_officer(const SynthSpec& spec, const CityPlan& city, int idx,
                        std::int64_t window_start_ts, std::int64_t window_end_ts) {
  const CitySpec& cs = *city.spec;
  Rng rng(sub_seed(spec.rng_seed, 2, city.city_idx, static_cast<std::uint64_t>(idx)));
  AgentResult out;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-o%04d", cs.city_id.c_str(), idx);
  out.stream.device_id = buf;

  const int n_bgs = cs.grid_rows * cs.grid_cols;
  int home_idx = rng.uniform_int(0, n_bgs - 1);
  for (int tries = 0; city.station_bg.count(home_idx) && tries < n_bgs; ++tries) {
    home_idx = (home_idx + 1) % n_bgs;
  }
  const int hr = home_idx / cs.grid_cols;
  const int hc = home_idx % cs.grid_cols;
  geo::GeoPoint home = grid_point(city, hr, hc, rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7));
  const geo::Geohash7 home_cell = geo::encode_geohash7(home);
  home = geo::geohash7_center(home_cell);  // center the point so noise stays in-cell
  out.home_cell = home_cell.str();
  out.home_bg = city.bgs[static_cast<std::size_t>(home_idx)].bg_id;

  const geo::GeoPoint station = city.station_centers[static_cast<std::size_t>(idx) %
                                                     city.station_centers.size()];
  const DayClock clock(window_start_ts, city.tz_offset_s);
  auto gap = [&] {
    return std::clamp(rng.lognormal_mode(spec.ping_gap_mode_min * 60.0, spec.ping_gap_sigma),
                      60.0, 3600.0);
  };
  auto in_win = [&](std::int64_t ts) { return ts >= window_start_ts && ts < window_end_ts; };
  auto emit = [&](std::int64_t ts, const geo::GeoPoint& p) {
    if (in_win(ts)) out.stream.pings.push_back({ts, jitter(p, spec.gps_noise_m, rng)});
  };

  for (int d = 0; d < spec.n_days; ++d) {
    const bool workday = (d + idx) % 7 < spec.work_days_per_week;
    const double start = std::clamp(
        (spec.shift_start_hour_mean + spec.shift_start_hour_sd * rng.normal()) * 3600.0,
        5.0 * 3600, 11.0 * 3600);
    const double len = std::clamp(
        (spec.shift_length_h_mean + spec.shift_length_h_sd * rng.normal()) * 3600.0,
        4.5 * 3600, 11.0 * 3600);
    const double end = start + len;
    // Only plant a shift when the full bracket, local morning to local
    // evening, maps inside the UTC window; a truncated plant would leave an
    // unrecoverable truth interval. Edge days degrade to home-only days.
    const bool fits = in_win(clock.at(d, start - 5400)) && in_win(clock.at(d, end + 4500));
    if (!workday || !fits) {
      for (double t = 8.0 * 3600; t < 21.0 * 3600; t += gap() * 4.0) emit(clock.at(d, t), home);
      continue;
    }

    for (double t = start - 5400; t <= start - 900; t += gap()) emit(clock.at(d, t), home);
    for (int s = 0; s < 3; ++s) emit(clock.at(d, start + 120.0 * s), station);

    const double patrol_lo = start + 240;
    const double patrol_hi = end - 300;
    for (double t = patrol_lo + gap(); t <= patrol_hi; t += gap()) {
      const int bg = pick_bg(city, rng);
      const int r = bg / cs.grid_cols;
      const int c = bg % cs.grid_cols;
      geo::GeoPoint p;
      for (int attempt = 0; attempt < 8; ++attempt) {
        p = jitter(grid_point(city, r, c, rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)),
                   spec.gps_noise_m, rng);
        if (geo::encode_geohash7(p) != home_cell) break;  // never fake a home visit
      }
      out.stream.pings.push_back({clock.at(d, t), p});
    }
    for (int s = 0; s < 3; ++s) emit(clock.at(d, end + 120.0 * s), station);
    for (double t = end + 900; t <= end + 4500; t += gap()) emit(clock.at(d, t), home);

    out.shifts.push_back({clock.at(d, start), clock.at(d, end + 240.0)});
    out.patrol_seconds += patrol_hi - patrol_lo;
  }
  return out;
}

AgentResult run_civilian(const SynthSpec& spec, const CityPlan& city, int idx,
                         std::int64_t window_start_ts, std::int64_t window_end_ts) {
  const CitySpec& cs = *city.spec;
  Rng rng(sub_seed(spec.rng_seed, 3, city.city_idx, static_cast<std::uint64_t>(idx)));
  AgentResult out;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-v%04d", cs.city_id.c_str(), idx);
  out.stream.device_id = buf;

  const int n_bgs = cs.grid_rows * cs.grid_cols;
  auto safe_point = [&](int bg) {
    const int r = bg / cs.grid_cols;
    const int c = bg % cs.grid_cols;
    geo::GeoPoint p = grid_point(city, r, c, rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95));
    // Stay clear of station footprints so a civilian can never bank a
    // station day, even through GPS noise.
    for (int attempt = 0; attempt < 16 && near_any_station(city, p, 250.0); ++attempt) {
      p = grid_point(city, r, c, rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95));
    }
    if (near_any_station(city, p, 250.0)) {
      p = grid_point(city, r, c, 0.95, 0.95);
    }
    return p;
  };
  const geo::GeoPoint home = safe_point(rng.uniform_int(0, n_bgs - 1));
  const geo::GeoPoint work = safe_point(rng.uniform_int(0, n_bgs - 1));

  const DayClock clock(window_start_ts, city.tz_offset_s);
  auto gap = [&] {
    return std::clamp(rng.lognormal_mode(spec.ping_gap_mode_min * 60.0, spec.ping_gap_sigma),
                      60.0, 3600.0);
  };
  auto emit = [&](std::int64_t ts, const geo::GeoPoint& p) {
    if (ts < window_start_ts || ts >= window_end_ts) return;
    geo::GeoPoint noisy = jitter(p, spec.gps_noise_m, rng);
    for (int attempt = 0; attempt < 8 && near_any_station(city, noisy, 80.0); ++attempt) {
      noisy = jitter(p, spec.gps_noise_m, rng);
    }
    if (!near_any_station(city, noisy, 80.0)) out.stream.pings.push_back({ts, noisy});
  };

  for (int d = 0; d < spec.n_days; ++d) {
    const bool workday = (d + idx) % 7 < 5;
    for (double t = 6.5 * 3600; t <= 8.0 * 3600; t += gap()) emit(clock.at(d, t), home);
    if (workday) {
      for (double t = 9.5 * 3600; t <= 16.5 * 3600; t += gap() * 2.0) emit(clock.at(d, t), work);
    } else {
      const geo::GeoPoint errand = safe_point(rng.uniform_int(0, n_bgs - 1));
      for (double t = 13.0 * 3600; t <= 15.0 * 3600; t += gap()) emit(clock.at(d, t), errand);
    }
    for (double t = 18.0 * 3600; t <= 21.5 * 3600; t += gap()) emit(clock.at(d, t), home);
  }
  return out;
}

}  // namespace

SynthCorpus generate(const SynthSpec& spec, unsigned workers) {
  spec.validate();

  SynthCorpus out;
  out.start_date = spec.start_date;
  const std::int64_t start_ts = timeutil::ts_from_date_utc(spec.start_date);
  const std::int64_t end_ts = start_ts + static_cast<std::int64_t>(spec.n_days) * 86400;
  out.end_date = timeutil::utc_parts(end_ts).date;

  std::vector<CityPlan> plans(spec.cities.size());
  for (std::size_t ci = 0; ci < spec.cities.size(); ++ci) {
    const CitySpec& cs = spec.cities[ci];
    CityPlan& plan = plans[ci];
    plan.spec = &cs;
    plan.city_idx = ci;
    plan.dlat = cs.cell_m / kMPerDeg;
    plan.dlon = cs.cell_m / (kMPerDeg * std::cos(cs.origin_lat * 3.14159265358979323846 / 180.0));
    out.tz_by_city[cs.city_id] = timeutil::Timezone::parse(cs.tz);
    plan.tz_offset_s = out.tz_by_city[cs.city_id].offset_s_at(start_ts);

    const int n_bgs = cs.grid_rows * cs.grid_cols;
    double pop_total = 0.0;
    std::map<std::string, double> share_weighted;
    for (int b = 0; b < n_bgs; ++b) {
      Rng rng(sub_seed(spec.rng_seed, 1, ci, static_cast<std::uint64_t>(b)));
      const int r = b / cs.grid_cols;
      const int c = b % cs.grid_cols;
      io::BlockGroup bg;
      char buf[48];
      std::snprintf(buf, sizeof buf, "%s-bg-%02dx%02d", cs.city_id.c_str(), r, c);
      bg.bg_id = buf;
      bg.city_id = cs.city_id;
      bg.ring = {grid_point(plan, r, c, 0.0, 0.0), grid_point(plan, r, c, 0.0, 1.0),
                 grid_point(plan, r, c, 1.0, 1.0), grid_point(plan, r, c, 1.0, 0.0)};
      bg.bbox = geo::BBox::of(bg.ring);

      const double wb = 0.05 + 0.9 * rng.uniform();
      const double wh = 0.05 + 0.9 * rng.uniform();
      const double wa = 0.05 + 0.9 * rng.uniform();
      const double ww = 0.2 + 0.8 * rng.uniform();
      const double norm = (wb + wh + wa + ww) / 0.97;
      bg.attributes["pct_black"] = wb / norm;
      bg.attributes["pct_hispanic"] = wh / norm;
      bg.attributes["pct_asian"] = wa / norm;
      bg.attributes["pct_white"] = ww / norm;
      bg.attributes["population"] = 600.0 + 1400.0 * rng.uniform();
      bg.attributes["pct_college"] = 0.1 + 0.5 * rng.uniform();
      bg.attributes["median_income_k"] = 30.0 + 90.0 * rng.uniform();
      bg.attributes["census_return_rate"] = 0.5 + 0.45 * rng.uniform();
      bg.attributes["homicide_count"] = std::floor(6.0 * rng.uniform() * rng.uniform());
      bg.attributes["dist_nearest_homicide_km"] = 0.2 + 4.8 * rng.uniform();

      const double pop = bg.attributes["population"];
      pop_total += pop;
      for (const char* g : {"pct_black", "pct_hispanic", "pct_asian", "pct_white"}) {
        share_weighted[g] += pop * bg.attributes[g];
      }
      plan.bgs.push_back(std::move(bg));
    }
    plan.city_shares["population"] = pop_total;
    for (auto& [name, w] : share_weighted) plan.city_shares[name] = w / pop_total;

    for (int s = 0; s < cs.n_stations; ++s) {
      const int b = ((2 * s + 1) * n_bgs) / (2 * cs.n_stations);
      plan.station_bg.insert(b);
      const int r = b / cs.grid_cols;
      const int c = b % cs.grid_cols;
      const geo::GeoPoint center = grid_point(plan, r, c, 0.5, 0.5);
      const double hlat = 60.0 / kMPerDeg;
      const double hlon = 60.0 / (kMPerDeg * std::cos(center.lat * 3.14159265358979323846 / 180.0));
      io::Station st;
      char buf[48];
      std::snprintf(buf, sizeof buf, "%s-st%02d", cs.city_id.c_str(), s);
      st.station_id = buf;
      st.city_id = cs.city_id;
      st.footprint = geo::ConvexPolygon::from_ring(
          {{center.lat - hlat, center.lon - hlon},
           {center.lat - hlat, center.lon + hlon},
           {center.lat + hlat, center.lon + hlon},
           {center.lat + hlat, center.lon - hlon}});
      plan.station_centers.push_back(center);
      plan.stations.push_back(std::move(st));
    }

    plan.weights.resize(static_cast<std::size_t>(n_bgs), 1.0);
    if (spec.patrol_policy == "rel_black") {
      const double city_black = plan.city_shares["pct_black"];
      for (int b = 0; b < n_bgs; ++b) {
        const double rel = plan.bgs[static_cast<std::size_t>(b)].attributes["pct_black"] / city_black;
        plan.weights[static_cast<std::size_t>(b)] = 1.0 + spec.policy_gain * rel;
      }
    }
    plan.weight_cdf.resize(plan.weights.size());
    double cum = 0.0;
    for (std::size_t b = 0; b < plan.weights.size(); ++b) {
      cum += plan.weights[b];
      plan.weight_cdf[b] = cum;
    }
    plan.weight_total = cum;
  }

  std::vector<AgentJob> jobs;
  for (auto& plan : plans) {
    for (int o = 0; o < plan.spec->n_officers; ++o) jobs.push_back({&plan, true, o});
    for (int v = 0; v < plan.spec->n_civilians; ++v) jobs.push_back({&plan, false, v});
  }
  auto results = parallel_map(jobs, workers, [&](const AgentJob& job) {
    return job.officer ? run_officer(spec, *job.city, job.index, start_ts, end_ts)
                       : run_civilian(spec, *job.city, job.index, start_ts, end_ts);
  });

  GroundTruth& truth = out.truth;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const AgentJob& job = jobs[i];
    AgentResult& res = results[i];
    const std::string dev = res.stream.device_id;
    if (job.officer) {
      truth.officer_ids.insert(dev);
      truth.home_cell[dev] = res.home_cell;
      truth.officer_city[dev] = job.city->spec->city_id;
      truth.shifts[dev] = res.shifts;
      truth.officers_per_city[job.city->spec->city_id] += 1.0;
      truth.officer_homes_by_zone[res.home_bg] += 1.0;

      const auto& home_bg = *std::find_if(
          job.city->bgs.begin(), job.city->bgs.end(),
          [&](const io::BlockGroup& bg) { return bg.bg_id == res.home_bg; });
      auto& comp = truth.dept_composition[job.city->spec->city_id];
      comp["black"] += home_bg.attr("pct_black").value_or(0.0);
      comp["hispanic"] += home_bg.attr("pct_hispanic").value_or(0.0);
      comp["asian"] += home_bg.attr("pct_asian").value_or(0.0);
      comp["white"] += home_bg.attr("pct_white").value_or(0.0);

      const double share_base = job.city->weight_total;
      for (std::size_t b = 0; b < job.city->weights.size(); ++b) {
        truth.expected_bg_hours[job.city->bgs[b].bg_id] +=
            res.patrol_seconds * job.city->weights[b] / share_base / 3600.0;
      }
    }
    out.devices.push_back(std::move(res.stream));
  }
  for (auto& [city, comp] : truth.dept_composition) {
    const double n = truth.officers_per_city[city];
    for (auto& [g, v] : comp) v /= n;
  }

  for (auto& plan : plans) {
    Rng rng(sub_seed(spec.rng_seed, 4, plan.city_idx, 0));
    for (std::size_t b = 0; b < plan.bgs.size(); ++b) {
      const double w = plan.weights[b] / plan.weight_total *
                       static_cast<double>(plan.weights.size());
      truth.actions_by_bg[plan.bgs[b].bg_id] =
          std::floor(40.0 * w * (0.8 + 0.4 * rng.uniform()));
    }
    out.stations.insert(out.stations.end(), plan.stations.begin(), plan.stations.end());
    out.bgs.insert(out.bgs.end(), plan.bgs.begin(), plan.bgs.end());
    auto& row = out.city_table[plan.spec->city_id];
    row = plan.city_shares;
  }

  std::sort(out.devices.begin(), out.devices.end(),
            [](const io::DeviceStream& a, const io::DeviceStream& b) {
              return a.device_id < b.device_id;
            });
  std::sort(out.stations.begin(), out.stations.end(),
            [](const io::Station& a, const io::Station& b) { return a.station_id < b.station_id; });
  std::sort(out.bgs.begin(), out.bgs.end(),
            [](const io::BlockGroup& a, const io::BlockGroup& b) { return a.bg_id < b.bg_id; });

  // Civilians must be unable to qualify: no civilian ping inside any station.
  const io::StationIndex stations(out.stations);
  for (const auto& dev : out.devices) {
    if (truth.officer_ids.count(dev.device_id)) continue;
    for (const auto& ping : dev.pings) {
      if (stations.any(ping.loc)) {
        throw InternalError("synth generator leaked a civilian station ping for " +
                            dev.device_id);
      }
    }
  }
  return out;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir,
                  const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  const std::string comment = config_hash.empty() ? "" : "config_hash=" + config_hash;

  io::write_pings_csv(corpus.devices, dir / "pings.csv", comment);
  io::write_stations_geojson(corpus.stations, dir / "stations.geojson");
  io::write_blockgroups_geojson(corpus.bgs, dir / "blockgroups.geojson");
  io::write_bg_attributes_csv(corpus.bgs,
                              {"population", "pct_white", "pct_black", "pct_hispanic", "pct_asian",
                               "pct_college", "median_income_k", "census_return_rate",
                               "homicide_count", "dist_nearest_homicide_km"},
                              dir / "bg_attributes.csv", comment);
  io::write_city_table_csv(corpus.city_table,
                           {"population", "pct_white", "pct_black", "pct_hispanic", "pct_asian"},
                           dir / "city_table.csv", comment);

  auto write_pairs = [&](const std::filesystem::path& path, const std::string& header,
                         const std::map<std::string, double>& rows) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write " + path.string());
    if (!comment.empty()) f << "# " << comment << "\n";
    f << header << "\n";
    for (const auto& [k, v] : rows) f << k << ',' << csvutil::fmt_double(v) << '\n';
  };
  write_pairs(dir / "actions.csv", "bg_id,count", corpus.truth.actions_by_bg);
  write_pairs(dir / "employees.csv", "city_id,count", corpus.truth.officers_per_city);
  write_pairs(dir / "zones.csv", "zone_id,count", corpus.truth.officer_homes_by_zone);

  {
    std::ofstream f(dir / "composition.csv");
    if (!f) throw InputError("cannot write composition.csv");
    if (!comment.empty()) f << "# " << comment << "\n";
    f << "city_id,black,hispanic,asian,white\n";
    for (const auto& [city, comp] : corpus.truth.dept_composition) {
      f << city;
      for (const char* g : {"black", "hispanic", "asian", "white"}) {
        auto it = comp.find(g);
        f << ',' << csvutil::fmt_double(it == comp.end() ? 0.0 : it->second);
      }
      f << '\n';
    }
  }

  json truth;
  if (!config_hash.empty()) truth["config_hash"] = config_hash;
  truth["officer_ids"] = corpus.truth.officer_ids;
  truth["home_cell"] = corpus.truth.home_cell;
  truth["officer_city"] = corpus.truth.officer_city;
  json shifts = json::object();
  for (const auto& [dev, list] : corpus.truth.shifts) {
    json arr = json::array();
    for (const auto& s : list) arr.push_back(json::array({s.start_ts, s.end_ts}));
    shifts[dev] = std::move(arr);
  }
  truth["shifts"] = std::move(shifts);
  truth["expected_bg_hours"] = corpus.truth.expected_bg_hours;
  truth["officers_per_city"] = corpus.truth.officers_per_city;
  truth["dept_composition"] = corpus.truth.dept_composition;
  truth["officer_homes_by_zone"] = corpus.truth.officer_homes_by_zone;
  truth["actions_by_bg"] = corpus.truth.actions_by_bg;

  std::ofstream f(dir / "truth.json");
  if (!f) throw InputError("cannot write truth.json");
  f << truth.dump(1) << '\n';
}

GroundTruth load_truth(const std::filesystem::path& truth_json) {
  std::ifstream in(truth_json);
  if (!in) throw InputError("cannot open " + truth_json.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(truth_json.string() + ": " + e.what());
  }
  GroundTruth t;
  try {
    // Bind each subobject before iterating: items() on the temporary that
    // value() returns would dangle.
    const json ids = j.value("officer_ids", json::array());
    for (const auto& id : ids) t.officer_ids.insert(id.get<std::string>());
    const json home = j.value("home_cell", json::object());
    for (const auto& [k, v] : home.items()) t.home_cell[k] = v.get<std::string>();
    const json city = j.value("officer_city", json::object());
    for (const auto& [k, v] : city.items()) t.officer_city[k] = v.get<std::string>();
    const json shifts = j.value("shifts", json::object());
    for (const auto& [k, v] : shifts.items()) {
      for (const auto& pair : v) {
        t.shifts[k].push_back({pair[0].get<std::int64_t>(), pair[1].get<std::int64_t>()});
      }
    }
    const json hours = j.value("expected_bg_hours", json::object());
    for (const auto& [k, v] : hours.items()) t.expected_bg_hours[k] = v.get<double>();
    const json percity = j.value("officers_per_city", json::object());
    for (const auto& [k, v] : percity.items()) t.officers_per_city[k] = v.get<double>();
    const json comp = j.value("dept_composition", json::object());
    for (const auto& [k, v] : comp.items()) {
      for (const auto& [g, s] : v.items()) t.dept_composition[k][g] = s.get<double>();
    }
    const json zones = j.value("officer_homes_by_zone", json::object());
    for (const auto& [k, v] : zones.items()) t.officer_homes_by_zone[k] = v.get<double>();
    const json actions = j.value("actions_by_bg", json::object());
    for (const auto& [k, v] : actions.items()) t.actions_by_bg[k] = v.get<double>();
  } catch (const json::exception& e) {
    throw InputError(truth_json.string() + ": " + e.what());
  }
  return t;
}

namespace {

double interval_iou(const TruthShift& a, const TruthShift& b) {
  const auto lo = std::max(a.start_ts, b.start_ts);
  const auto hi = std::min(a.end_ts, b.end_ts);
  if (hi <= lo) return 0.0;
  const auto uni = std::max(a.end_ts, b.end_ts) - std::min(a.start_ts, b.start_ts);
  return static_cast<double>(hi - lo) / static_cast<double>(uni);
}

}  // namespace

Metrics score(const Detection& detected, const GroundTruth& truth) {
  Metrics m;
  std::size_t hits = 0;
  for (const auto& id : detected.officer_ids) hits += truth.officer_ids.count(id);
  m.precision = detected.officer_ids.empty()
                    ? 1.0
                    : static_cast<double>(hits) / static_cast<double>(detected.officer_ids.size());
  m.recall = truth.officer_ids.empty()
                 ? 1.0
                 : static_cast<double>(hits) / static_cast<double>(truth.officer_ids.size());

  double iou_sum = 0.0;
  std::size_t iou_n = 0;
  for (const auto& [dev, true_shifts] : truth.shifts) {
    const auto dit = detected.shift_intervals.find(dev);
    for (const auto& ts : true_shifts) {
      double best = 0.0;
      if (dit != detected.shift_intervals.end()) {
        for (const auto& ds : dit->second) best = std::max(best, interval_iou(ts, ds));
      }
      iou_sum += best;
      ++iou_n;
    }
  }
  m.mean_iou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;

  std::set<std::string> keys;
  for (const auto& [bg, v] : truth.expected_bg_hours) keys.insert(bg);
  for (const auto& [bg, v] : detected.bg_hours) keys.insert(bg);
  std::vector<double> xs, ys;
  for (const auto& bg : keys) {
    auto tit = truth.expected_bg_hours.find(bg);
    auto dit = detected.bg_hours.find(bg);
    xs.push_back(tit == truth.expected_bg_hours.end() ? 0.0 : tit->second);
    ys.push_back(dit == detected.bg_hours.end() ? 0.0 : dit->second);
  }
  if (xs.size() >= 2) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    m.hours_rho = (sxx > 0 && syy > 0) ? sxy / std::sqrt(sxx * syy) : 0.0;
  }

  std::size_t home_den = 0, home_hits = 0;
  for (const auto& id : truth.officer_ids) {
    if (!detected.officer_ids.count(id)) continue;
    ++home_den;
    auto hit = detected.home_cell_h1.find(id);
    auto tit = truth.home_cell.find(id);
    if (hit != detected.home_cell_h1.end() && tit != truth.home_cell.end() &&
        hit->second == tit->second) {
      ++home_hits;
    }
  }
  m.home_hit_rate = home_den ? static_cast<double>(home_hits) / static_cast<double>(home_den) : 0.0;
  return m;
}

}  // namespace patrolscope::synth
