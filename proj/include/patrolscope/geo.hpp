#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace patrolscope::geo {

// Mean Earth radius. Fixed so distance outputs are bit-reproducible.
inline constexpr double kEarthRadiusM = 6'371'000.0;
inline constexpr double kMetersPerMile = 1'609.344;

// WGS84 coordinate pair in degrees. lat in [-90, 90], lon in [-180, 180);
// an input lon of exactly 180 is normalized to -180.
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  GeoPoint() = default;
  GeoPoint(double lat_deg, double lon_deg);

  // Non-throwing variant for row-level validation in parsers.
  static std::optional<GeoPoint> checked(double lat_deg, double lon_deg);

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

bool valid_lat(double lat_deg);
bool valid_lon(double lon_deg);

struct BBox {
  double lat_lo = 0.0, lat_hi = 0.0, lon_lo = 0.0, lon_hi = 0.0;

  bool contains(const GeoPoint& p) const {
    return p.lat >= lat_lo && p.lat <= lat_hi && p.lon >= lon_lo && p.lon <= lon_hi;
  }
  static BBox of(const std::vector<GeoPoint>& pts);
};

// 7-character base-32 geohash cell, roughly 152 m x 152 m at mid latitudes.
class Geohash7 {
public:
  static constexpr int kLength = 7;

  Geohash7() : code_{} { code_.fill('0'); }

  // Validates length and alphabet.
  static Geohash7 parse(const std::string& code);

  std::string str() const { return std::string(code_.begin(), code_.end()); }

  auto operator<=>(const Geohash7&) const = default;

private:
  friend Geohash7 encode_geohash7(const GeoPoint&);
  std::array<char, kLength> code_;
};

Geohash7 encode_geohash7(const GeoPoint& p);

// Bounding box of the encoded cell.
BBox decode_geohash7(const Geohash7& h);
GeoPoint geohash7_center(const Geohash7& h);

// Strictly convex polygon, counter-clockwise in (lon, lat) plane coordinates,
// closed implicitly. Construction drops duplicate and collinear vertices and
// fixes orientation; it throws std::invalid_argument if fewer than three
// vertices remain or the result is not strictly convex.
class ConvexPolygon {
public:
  ConvexPolygon() = default;  // empty polygon: contains nothing

  static ConvexPolygon from_ring(std::vector<GeoPoint> ring);

  const std::vector<GeoPoint>& vertices() const { return vertices_; }
  const BBox& bbox() const { return bbox_; }

private:
  std::vector<GeoPoint> vertices_;
  BBox bbox_;
};

// True iff p is inside or on the boundary. Planar test on lon/lat; adequate
// at building scale (geodesic error under 1 cm for sub-km polygons).
bool contains(const ConvexPolygon& poly, const GeoPoint& p);

// Counter-clockwise convex hull (monotone chain), collinear points dropped.
// Requires at least 3 non-collinear distinct points; throws otherwise.
std::vector<GeoPoint> convex_hull(std::vector<GeoPoint> pts);

// Great-circle distance with the fixed mean Earth radius.
double haversine_m(const GeoPoint& a, const GeoPoint& b);

// Speed between two positions dt_s seconds apart. dt_s must be positive.
double speed_mph(const GeoPoint& a, const GeoPoint& b, double dt_s);

}  // namespace patrolscope::geo
