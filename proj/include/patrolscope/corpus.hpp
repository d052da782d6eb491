#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patrolscope/geo.hpp"
#include "patrolscope/timeutil.hpp"

namespace patrolscope::io {

using timeutil::CivilDate;
using timeutil::MonthId;
using timeutil::Timezone;

struct Ping {
  std::int64_t ts_s = 0;  // UTC seconds since epoch
  geo::GeoPoint loc;

  friend bool operator==(const Ping&, const Ping&) = default;
};

// Great-circle speed between consecutive samples; throws InputError unless
// b is strictly later than a.
double speed_mph(const Ping& a, const Ping& b);

// All retained pings of one device, sorted by (ts, lat, lon).
struct DeviceStream {
  std::string device_id;
  std::vector<Ping> pings;
};

struct Station {
  std::string station_id;
  std::string city_id;
  geo::ConvexPolygon footprint;
};

// Census block group: polygon ring (may be non-convex) plus named covariates.
// A covariate absent from `attributes` is missing; regressions drop rows
// listwise per model.
struct BlockGroup {
  std::string bg_id;
  std::string city_id;
  std::vector<geo::GeoPoint> ring;  // closed implicitly, >= 3 vertices
  geo::BBox bbox;

  std::map<std::string, double> attributes;

  // Ray-casting containment; boundary counts as inside.
  bool contains(const geo::GeoPoint& p) const;

  std::optional<double> attr(const std::string& name) const;
};

struct StudyWindow {
  CivilDate start_date;
  CivilDate end_date;  // exclusive
  std::int64_t start_ts = 0;
  std::int64_t end_ts = 0;
  std::vector<MonthId> months;  // exactly covering [start, end)
  std::map<std::string, Timezone> tz_by_city;
  Timezone default_tz;

  static StudyWindow make(const CivilDate& start, const CivilDate& end,
                          std::map<std::string, Timezone> tz_by_city = {},
                          Timezone default_tz = {});

  const Timezone& tz_for(const std::string& city_id) const;
  bool in_window(std::int64_t ts) const { return ts >= start_ts && ts < end_ts; }

  // Halves for home inference: H1 = first ceil(n/2) months, H2 = rest.
  std::size_t h1_month_count() const { return (months.size() + 1) / 2; }
};

struct RejectRecord {
  std::size_t line_no = 0;
  std::string reason;
};

struct LoadReport {
  std::size_t rows_total = 0;  // data rows seen (header excluded)
  std::size_t rows_kept = 0;
  std::size_t duplicates = 0;
  std::size_t out_of_window = 0;
  std::vector<RejectRecord> rejects;  // malformed + duplicates, with line numbers
  std::vector<std::string> warnings;

  std::size_t malformed() const { return rejects.size() - duplicates; }
};

struct PingCorpus {
  std::vector<DeviceStream> devices;  // sorted by device_id
  LoadReport report;
};

// CSV (device_id,ts_unix_s,lat,lon) or JSON-lines with the same fields.
// Rows outside the window are dropped and counted; malformed rows go to the
// rejects report. More than max_reject_fraction malformed rows is fatal.
PingCorpus load_pings(const std::filesystem::path& path, const StudyWindow& window,
                      double max_reject_fraction = 0.01);

// GeoJSON FeatureCollection of station footprints. Non-convex rings are
// replaced by their convex hull (logged in *warnings); a feature with fewer
// than 3 distinct vertices is fatal.
std::vector<Station> load_geofences(const std::filesystem::path& path,
                                    std::vector<std::string>* warnings = nullptr);

// Geometry GeoJSON joined to a bg_id-keyed attribute CSV. Share-type
// attributes outside [0,1] and negative populations are dropped (flagged
// missing) with a warning.
std::vector<BlockGroup> load_blockgroups(const std::filesystem::path& geom_path,
                                         const std::filesystem::path& attr_path,
                                         std::vector<std::string>* warnings = nullptr);

// city_id-keyed attribute table (population, racial shares, ...).
using CityTable = std::map<std::string, std::map<std::string, double>>;
CityTable load_city_table(const std::filesystem::path& path);

// Two-column id,value table (action counts per BG, employee counts per city,
// residence counts per zone).
std::map<std::string, double> load_id_value_csv(const std::filesystem::path& path);

// Spatial lookup over station geofences with bbox prefilter.
// Non-owning: holds pointers into the caller's vector, which must outlive
// the index. Temporaries are rejected at compile time.
class StationIndex {
public:
  explicit StationIndex(const std::vector<Station>& stations);
  explicit StationIndex(std::vector<Station>&&) = delete;

  // First matching station in station_id order, or nullptr.
  const Station* find(const geo::GeoPoint& p) const;
  bool any(const geo::GeoPoint& p) const { return find(p) != nullptr; }

private:
  std::vector<const Station*> by_id_;
};

// Spatial lookup over block groups with bbox prefilter. Non-owning, like
// StationIndex.
class BlockGroupIndex {
public:
  explicit BlockGroupIndex(const std::vector<BlockGroup>& bgs);
  explicit BlockGroupIndex(std::vector<BlockGroup>&&) = delete;

  const BlockGroup* find(const geo::GeoPoint& p) const;

private:
  std::vector<const BlockGroup*> by_id_;
};

// Canonical serializations. Loading a corpus and re-serializing it is
// idempotent byte for byte.
void write_pings_csv(const std::vector<DeviceStream>& devices, const std::filesystem::path& path,
                     const std::string& header_comment = {});
void write_stations_geojson(const std::vector<Station>& stations,
                            const std::filesystem::path& path);
void write_blockgroups_geojson(const std::vector<BlockGroup>& bgs,
                               const std::filesystem::path& path);
void write_bg_attributes_csv(const std::vector<BlockGroup>& bgs,
                             const std::vector<std::string>& columns,
                             const std::filesystem::path& path,
                             const std::string& header_comment = {});
void write_city_table_csv(const CityTable& table, const std::vector<std::string>& columns,
                          const std::filesystem::path& path,
                          const std::string& header_comment = {});
void write_rejects_csv(const LoadReport& report, const std::filesystem::path& path,
                       const std::string& header_comment = {});

}  // namespace patrolscope::io
