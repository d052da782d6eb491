#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "patrolscope/corpus.hpp"
#include "patrolscope/officer.hpp"

namespace patrolscope::shift {

using io::DeviceStream;
using io::Ping;
using io::StationIndex;
using io::StudyWindow;
using timeutil::MonthId;

struct ShiftConfig {
  double min_shift_h = 4.0;             // station-to-station span floor
  std::optional<double> max_shift_h;    // optional ceiling for sensitivity runs
  double bracket_max_h = 24.0;          // home-to-home bracket ceiling
  bool require_same_station = false;
};

struct Shift {
  std::string device_id;
  std::int64_t start_ts = 0;  // first station ping inside the bracket
  std::int64_t end_ts = 0;    // last station ping inside the bracket
  std::vector<Ping> patrol_pings;  // strictly between start/end, outside all stations
  std::int64_t bracket_home_before = 0;
  std::int64_t bracket_home_after = 0;
  std::string station_in;
  std::string station_out;
  std::string city_id;  // city of station_in

  double span_h() const { return static_cast<double>(end_ts - start_ts) / 3600.0; }
};

// Scans home -> station -> patrol (no home ping) -> station -> home. Brackets
// are consecutive home-cell pings; candidates emit earliest-first and never
// overlap. A candidate only counts when the device qualified in the
// city-local month of its first station ping.
std::vector<Shift> detect_shifts(const DeviceStream& dev, const officer::HomePair& home,
                                 const StationIndex& stations,
                                 const std::set<MonthId>& qualified_months,
                                 const StudyWindow& window, const ShiftConfig& cfg = {});

struct ShiftStats {
  std::size_t n_shifts = 0;
  std::size_t n_devices = 0;  // devices with >= 1 shift
  double mean_h = 0.0;
  double median_h = 0.0;
  double shifts_per_device_month = 0.0;
};

// Absent when there are no shifts. Device-months count distinct
// (device, start month) pairs in the city-local month of start_ts.
std::optional<ShiftStats> shift_statistics(const std::vector<Shift>& shifts,
                                           const StudyWindow& window);

}  // namespace patrolscope::shift
