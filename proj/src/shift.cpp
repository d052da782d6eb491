#include "patrolscope/shift.hpp"

#include <algorithm>

#include "patrolscope/errors.hpp"

namespace patrolscope::shift {

std::vector<Shift> detect_shifts(const DeviceStream& dev, const officer::HomePair& home,
                                 const StationIndex& stations,
                                 const std::set<MonthId>& qualified_months,
                                 const StudyWindow& window, const ShiftConfig& cfg) {
  if (cfg.min_shift_h <= 0 || cfg.bracket_max_h <= 0 ||
      (cfg.max_shift_h && *cfg.max_shift_h < cfg.min_shift_h)) {
    throw InputError("detect_shifts: invalid shift thresholds");
  }
  std::vector<Shift> out;
  if (qualified_months.empty() || (!home.h1 && !home.h2)) return out;

  // Classify once. Station membership wins over the home cell.
  enum class Kind : unsigned char { Other, Home, Station };
  const std::size_t n = dev.pings.size();
  std::vector<Kind> kind(n, Kind::Other);
  std::vector<const io::Station*> station_at(n, nullptr);
  std::vector<std::size_t> home_idx;
  for (std::size_t i = 0; i < n; ++i) {
    const Ping& p = dev.pings[i];
    if (!window.in_window(p.ts_s)) continue;
    if (const io::Station* st = stations.find(p.loc)) {
      kind[i] = Kind::Station;
      station_at[i] = st;
      continue;
    }
    const auto& h = home.for_ts(p.ts_s, window);
    if (h && geo::encode_geohash7(p.loc) == h->home_cell) {
      kind[i] = Kind::Home;
      home_idx.push_back(i);
    }
  }

  const auto bracket_cap = static_cast<std::int64_t>(cfg.bracket_max_h * 3600.0);
  const auto span_min = static_cast<std::int64_t>(cfg.min_shift_h * 3600.0);

  for (std::size_t b = 0; b + 1 < home_idx.size(); ++b) {
    const std::size_t lo = home_idx[b];
    const std::size_t hi = home_idx[b + 1];
    if (dev.pings[hi].ts_s - dev.pings[lo].ts_s > bracket_cap) continue;

    std::size_t first_st = n, last_st = n;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      if (kind[i] != Kind::Station) continue;
      if (first_st == n) first_st = i;
      last_st = i;
    }
    if (first_st == n || first_st == last_st) continue;

    const std::int64_t span = dev.pings[last_st].ts_s - dev.pings[first_st].ts_s;
    if (span < span_min) continue;
    if (cfg.max_shift_h && static_cast<double>(span) > *cfg.max_shift_h * 3600.0) continue;
    if (cfg.require_same_station &&
        station_at[first_st]->station_id != station_at[last_st]->station_id) {
      continue;
    }

    const auto& city = station_at[first_st]->city_id;
    const auto local = window.tz_for(city).local(dev.pings[first_st].ts_s);
    if (!qualified_months.count(local.month_id())) continue;

    Shift s;
    s.device_id = dev.device_id;
    s.start_ts = dev.pings[first_st].ts_s;
    s.end_ts = dev.pings[last_st].ts_s;
    s.bracket_home_before = dev.pings[lo].ts_s;
    s.bracket_home_after = dev.pings[hi].ts_s;
    s.station_in = station_at[first_st]->station_id;
    s.station_out = station_at[last_st]->station_id;
    s.city_id = city;
    for (std::size_t i = first_st + 1; i < last_st; ++i) {
      if (kind[i] != Kind::Station) s.patrol_pings.push_back(dev.pings[i]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<ShiftStats> shift_statistics(const std::vector<Shift>& shifts,
                                           const StudyWindow& window) {
  if (shifts.empty()) return std::nullopt;
  ShiftStats st;
  st.n_shifts = shifts.size();

  std::set<std::string> devices;
  std::set<std::pair<std::string, MonthId>> device_months;
  std::vector<double> spans;
  spans.reserve(shifts.size());
  double total = 0.0;
  for (const auto& s : shifts) {
    devices.insert(s.device_id);
    const auto local = window.tz_for(s.city_id).local(s.start_ts);
    device_months.insert({s.device_id, local.month_id()});
    spans.push_back(s.span_h());
    total += s.span_h();
  }
  st.n_devices = devices.size();
  st.mean_h = total / static_cast<double>(spans.size());

  std::sort(spans.begin(), spans.end());
  const std::size_t mid = spans.size() / 2;
  st.median_h = spans.size() % 2 ? spans[mid] : (spans[mid - 1] + spans[mid]) / 2.0;
  st.shifts_per_device_month =
      static_cast<double>(st.n_shifts) / static_cast<double>(device_months.size());
  return st;
}

}  // namespace patrolscope::shift
