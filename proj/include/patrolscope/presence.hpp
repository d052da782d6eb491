#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patrolscope/corpus.hpp"
#include "patrolscope/shift.hpp"

namespace patrolscope::presence {

using io::BlockGroupIndex;
using io::StudyWindow;
using shift::Shift;

inline constexpr int kHourBuckets = 12;  // hour-of-shift 1..12, overflow lumped into 12

struct PresenceConfig {
  std::optional<double> speed_cap_mph = 50.0;  // nullopt disables the filter
  bool exclude_weekday_9to5 = false;
  bool local_time_9to5 = true;  // false: evaluate the 9-5 rule in UTC
};

// Half-gap dwell per patrol ping, in seconds, aligned with shift.patrol_pings.
// Interior ping i gets (t[i+1]-t[i-1])/2, endpoints half the single gap, a
// lone ping 0. The sum telescopes to the patrol span exactly.
std::vector<double> assign_dwell(const Shift& s);

// Dwell is tracked in seconds: integer-second inputs make every accumulation
// dyadic and therefore exact. Hours are derived views.
struct PresenceCell {
  std::string bg_id;
  double seconds = 0.0;
  std::array<double, kHourBuckets> seconds_by_hour{};
  std::size_t shift_count = 0;

  double hours() const { return seconds / 3600.0; }
  double hours_by_shift_hour(int bucket_1based) const {
    return seconds_by_hour[static_cast<std::size_t>(bucket_1based - 1)] / 3600.0;
  }
};

struct PresenceResult {
  std::vector<PresenceCell> cells;  // sorted by bg_id; only block groups with presence
  double unassigned_seconds = 0.0;
  std::size_t unassigned_pings = 0;
  std::size_t excluded_speed = 0;
  std::size_t excluded_offhours = 0;
  std::size_t counted_pings = 0;
  double counted_seconds = 0.0;  // == sum over cells + unassigned, exactly

  double unassigned_hours() const { return unassigned_seconds / 3600.0; }
};

// Speed filter chains against the previous retained patrol ping of the same
// shift; excluded pings keep their dwell out of every bucket. The result is
// independent of the worker count.
PresenceResult aggregate_presence(const std::vector<Shift>& shifts,
                                  const BlockGroupIndex& blockgroups, const PresenceConfig& cfg,
                                  const StudyWindow& window, unsigned workers = 1);

enum class Transform { None, Arsinh };

// Outcome keyed by bg_id over the full block-group list; zero-presence block
// groups enter with value 0.
std::map<std::string, double> presence_vector(const PresenceResult& result,
                                              const std::vector<io::BlockGroup>& bgs,
                                              Transform transform);

}  // namespace patrolscope::presence
