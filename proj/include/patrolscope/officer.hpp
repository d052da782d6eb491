#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "patrolscope/corpus.hpp"
#include "patrolscope/geo.hpp"
#include "patrolscope/timeutil.hpp"

namespace patrolscope::officer {

using io::BlockGroupIndex;
using io::DeviceStream;
using io::StationIndex;
using io::StudyWindow;
using timeutil::MonthId;

struct QualifyConfig {
  int min_station_days = 5;  // distinct local calendar days with a station ping
};

// One device-month with at least one station ping. station_days counts
// distinct city-local calendar days at stations of the modal city; city ties
// break to the lexicographically smallest city_id.
struct MonthQualification {
  std::string device_id;
  MonthId month;
  int station_days = 0;
  bool qualified = false;
  std::string city_id;
};

std::vector<MonthQualification> qualify_months(const DeviceStream& dev,
                                               const StationIndex& stations,
                                               const StudyWindow& window,
                                               const QualifyConfig& cfg = {});

// Months where the device qualified, ascending.
std::set<MonthId> qualified_months(const std::vector<MonthQualification>& quals);

// City with the most qualified months (all months with station pings when
// none qualified); ties break lexicographically. Empty when quals is empty.
std::string modal_city(const std::vector<MonthQualification>& quals);

enum class Half { H1, H2 };

struct HomeLocation {
  std::string device_id;
  Half half = Half::H1;
  geo::Geohash7 home_cell;
  std::size_t support = 0;  // pings in the modal cell
};

// Home cells per window half. H1 covers the first ceil(n/2) window months,
// split at a UTC month boundary; a half with no non-station pings is absent.
struct HomePair {
  std::optional<HomeLocation> h1;
  std::optional<HomeLocation> h2;

  const std::optional<HomeLocation>& for_ts(std::int64_t ts, const StudyWindow& window) const;
};

// UTC timestamp splitting H1 from H2.
std::int64_t half_boundary_ts(const StudyWindow& window);

HomePair infer_home(const DeviceStream& dev, const StationIndex& stations,
                    const StudyWindow& window);

struct RaceShares {
  double white = 0.0;
  double black = 0.0;
  double hispanic = 0.0;
  double asian = 0.0;

  double sum() const { return white + black + hispanic + asian; }
};

// Expected-value imputation from the home cell's containing block group;
// absent when the cell center falls outside every block group. Missing share
// attributes read as 0.
std::optional<RaceShares> impute_device_race(const HomeLocation& home,
                                             const BlockGroupIndex& blockgroups);

RaceShares mean_shares(const std::vector<RaceShares>& members);

}  // namespace patrolscope::officer
