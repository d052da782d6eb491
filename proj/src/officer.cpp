#include "patrolscope/officer.hpp"

#include <algorithm>

#include "patrolscope/errors.hpp"

namespace patrolscope::officer {

std::vector<MonthQualification> qualify_months(const DeviceStream& dev,
                                               const StationIndex& stations,
                                               const StudyWindow& window,
                                               const QualifyConfig& cfg) {
  // month -> city -> distinct local day numbers with a station ping
  std::map<MonthId, std::map<std::string, std::set<std::int64_t>>> days;
  for (const auto& ping : dev.pings) {
    if (!window.in_window(ping.ts_s)) continue;
    const io::Station* st = stations.find(ping.loc);
    if (!st) continue;
    const auto local = window.tz_for(st->city_id).local(ping.ts_s);
    days[local.month_id()][st->city_id].insert(local.day_number());
  }

  std::vector<MonthQualification> out;
  out.reserve(days.size());
  for (const auto& [month, by_city] : days) {
    MonthQualification q;
    q.device_id = dev.device_id;
    q.month = month;
    for (const auto& [city, d] : by_city) {
      const int n = static_cast<int>(d.size());
      if (n > q.station_days) {
        q.station_days = n;
        q.city_id = city;
      }
    }
    q.qualified = q.station_days >= cfg.min_station_days;
    out.push_back(std::move(q));
  }
  return out;
}

std::set<MonthId> qualified_months(const std::vector<MonthQualification>& quals) {
  std::set<MonthId> out;
  for (const auto& q : quals) {
    if (q.qualified) out.insert(q.month);
  }
  return out;
}

std::string modal_city(const std::vector<MonthQualification>& quals) {
  std::map<std::string, int> votes;
  for (const auto& q : quals) {
    if (q.qualified) ++votes[q.city_id];
  }
  if (votes.empty()) {
    for (const auto& q : quals) ++votes[q.city_id];
  }
  std::string best;
  int best_n = 0;
  for (const auto& [city, n] : votes) {
    if (n > best_n) {
      best = city;
      best_n = n;
    }
  }
  return best;
}

std::int64_t half_boundary_ts(const StudyWindow& window) {
  const std::size_t h1 = window.h1_month_count();
  if (h1 >= window.months.size()) return window.end_ts;
  const MonthId first_h2 = window.months[h1];
  return timeutil::ts_from_date_utc({first_h2.year, first_h2.month, 1});
}

const std::optional<HomeLocation>& HomePair::for_ts(std::int64_t ts,
                                                    const StudyWindow& window) const {
  return ts < half_boundary_ts(window) ? h1 : h2;
}

HomePair infer_home(const DeviceStream& dev, const StationIndex& stations,
                    const StudyWindow& window) {
  if (dev.pings.empty()) throw InputError("infer_home: empty stream for " + dev.device_id);
  const std::int64_t split = half_boundary_ts(window);

  std::map<geo::Geohash7, std::size_t> tally[2];
  for (const auto& ping : dev.pings) {
    if (!window.in_window(ping.ts_s)) continue;
    if (stations.any(ping.loc)) continue;
    tally[ping.ts_s < split ? 0 : 1][geo::encode_geohash7(ping.loc)]++;
  }

  HomePair out;
  for (int h = 0; h < 2; ++h) {
    const geo::Geohash7* best = nullptr;
    std::size_t best_n = 0;
    for (const auto& [cell, n] : tally[h]) {  // map order breaks ties lexicographically
      if (n > best_n) {
        best = &cell;
        best_n = n;
      }
    }
    if (!best) continue;
    HomeLocation loc{dev.device_id, h == 0 ? Half::H1 : Half::H2, *best, best_n};
    (h == 0 ? out.h1 : out.h2) = loc;
  }
  return out;
}

std::optional<RaceShares> impute_device_race(const HomeLocation& home,
                                             const BlockGroupIndex& blockgroups) {
  const geo::GeoPoint center = geo::geohash7_center(home.home_cell);
  const io::BlockGroup* bg = blockgroups.find(center);
  if (!bg) return std::nullopt;
  RaceShares s;
  s.white = bg->attr("pct_white").value_or(0.0);
  s.black = bg->attr("pct_black").value_or(0.0);
  s.hispanic = bg->attr("pct_hispanic").value_or(0.0);
  s.asian = bg->attr("pct_asian").value_or(0.0);
  return s;
}

RaceShares mean_shares(const std::vector<RaceShares>& members) {
  RaceShares m;
  if (members.empty()) return m;
  for (const auto& s : members) {
    m.white += s.white;
    m.black += s.black;
    m.hispanic += s.hispanic;
    m.asian += s.asian;
  }
  const double n = static_cast<double>(members.size());
  m.white /= n;
  m.black /= n;
  m.hispanic /= n;
  m.asian /= n;
  return m;
}

}  // namespace patrolscope::officer
