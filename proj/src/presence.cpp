#include "patrolscope/presence.hpp"

#include <algorithm>
#include <cmath>

#include "patrolscope/errors.hpp"
#include "patrolscope/parallel.hpp"

namespace patrolscope::presence {

std::vector<double> assign_dwell(const Shift& s) {
  const auto& p = s.patrol_pings;
  const std::size_t n = p.size();
  std::vector<double> dwell(n, 0.0);
  if (n < 2) return dwell;
  dwell[0] = static_cast<double>(p[1].ts_s - p[0].ts_s) / 2.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    dwell[i] = static_cast<double>(p[i + 1].ts_s - p[i - 1].ts_s) / 2.0;
  }
  dwell[n - 1] = static_cast<double>(p[n - 1].ts_s - p[n - 2].ts_s) / 2.0;
  return dwell;
}

namespace {

struct ShiftTally {
  struct Cell {
    double seconds = 0.0;
    std::array<double, kHourBuckets> seconds_by_hour{};
  };
  std::map<std::string, Cell> by_bg;
  double unassigned_seconds = 0.0;
  std::size_t unassigned_pings = 0;
  std::size_t excluded_speed = 0;
  std::size_t excluded_offhours = 0;
  std::size_t counted_pings = 0;
};

ShiftTally tally_shift(const Shift& s, const BlockGroupIndex& blockgroups,
                       const PresenceConfig& cfg, const StudyWindow& window) {
  ShiftTally t;
  const auto dwell = assign_dwell(s);
  const auto tz = cfg.local_time_9to5 ? window.tz_for(s.city_id) : timeutil::Timezone{};

  const io::Ping* prev_retained = nullptr;
  for (std::size_t i = 0; i < s.patrol_pings.size(); ++i) {
    const io::Ping& p = s.patrol_pings[i];
    if (cfg.speed_cap_mph && prev_retained) {
      const double dt = static_cast<double>(p.ts_s - prev_retained->ts_s);
      if (dt <= 0.0 || geo::speed_mph(prev_retained->loc, p.loc, dt) > *cfg.speed_cap_mph) {
        ++t.excluded_speed;
        continue;
      }
    }
    prev_retained = &p;

    if (cfg.exclude_weekday_9to5) {
      const auto local = tz.local(p.ts_s);
      if (local.weekday >= 1 && local.weekday <= 5 && local.hour >= 9 && local.hour < 17) {
        ++t.excluded_offhours;
        continue;
      }
    }

    const int bucket = std::clamp<int>(
        static_cast<int>((p.ts_s - s.start_ts + 3599) / 3600),  // ceil of elapsed hours
        1, kHourBuckets);
    ++t.counted_pings;
    const io::BlockGroup* bg = blockgroups.find(p.loc);
    if (!bg) {
      t.unassigned_seconds += dwell[i];
      ++t.unassigned_pings;
      continue;
    }
    auto& cell = t.by_bg[bg->bg_id];
    cell.seconds += dwell[i];
    cell.seconds_by_hour[static_cast<std::size_t>(bucket - 1)] += dwell[i];
  }
  return t;
}

}  // namespace

PresenceResult aggregate_presence(const std::vector<Shift>& shifts,
                                  const BlockGroupIndex& blockgroups, const PresenceConfig& cfg,
                                  const StudyWindow& window, unsigned workers) {
  if (cfg.speed_cap_mph && *cfg.speed_cap_mph <= 0.0) {
    throw InputError("aggregate_presence: speed cap must be positive");
  }

  const auto tallies = parallel_map(shifts, workers, [&](const Shift& s) {
    return tally_shift(s, blockgroups, cfg, window);
  });

  PresenceResult out;
  std::map<std::string, PresenceCell> cells;
  std::map<std::string, std::size_t> shift_counts;
  for (const auto& t : tallies) {  // fixed order keeps sums worker-count independent
    for (const auto& [bg_id, c] : t.by_bg) {
      auto& cell = cells[bg_id];
      cell.bg_id = bg_id;
      cell.seconds += c.seconds;
      for (int b = 0; b < kHourBuckets; ++b) {
        cell.seconds_by_hour[static_cast<std::size_t>(b)] +=
            c.seconds_by_hour[static_cast<std::size_t>(b)];
      }
      ++shift_counts[bg_id];
    }
    out.unassigned_seconds += t.unassigned_seconds;
    out.unassigned_pings += t.unassigned_pings;
    out.excluded_speed += t.excluded_speed;
    out.excluded_offhours += t.excluded_offhours;
    out.counted_pings += t.counted_pings;
  }
  out.cells.reserve(cells.size());
  for (auto& [bg_id, cell] : cells) {
    cell.shift_count = shift_counts[bg_id];
    out.counted_seconds += cell.seconds;
    out.cells.push_back(std::move(cell));
  }
  out.counted_seconds += out.unassigned_seconds;
  return out;
}

std::map<std::string, double> presence_vector(const PresenceResult& result,
                                              const std::vector<io::BlockGroup>& bgs,
                                              Transform transform) {
  std::map<std::string, double> out;
  for (const auto& bg : bgs) out[bg.bg_id] = 0.0;
  for (const auto& cell : result.cells) out[cell.bg_id] = cell.hours();
  if (transform == Transform::Arsinh) {
    for (auto& [bg_id, v] : out) v = std::asinh(v);
  }
  return out;
}

}  // namespace patrolscope::presence
