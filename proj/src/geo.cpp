#include "patrolscope/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "patrolscope/errors.hpp"

namespace patrolscope::geo {

namespace {

constexpr const char* kBase32 = "0123456789bcdefghjkmnpqrstuvwxyz";

int base32_index(char c) {
  for (int i = 0; i < 32; ++i) {
    if (kBase32[i] == c) return i;
  }
  return -1;
}

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Cross product of (b-a) x (p-a) in the lon/lat plane.
double cross(const GeoPoint& a, const GeoPoint& b, const GeoPoint& p) {
  return (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
}

}  // namespace

bool valid_lat(double lat_deg) {
  return std::isfinite(lat_deg) && lat_deg >= -90.0 && lat_deg <= 90.0;
}

bool valid_lon(double lon_deg) {
  return std::isfinite(lon_deg) && lon_deg >= -180.0 && lon_deg <= 180.0;
}

GeoPoint::GeoPoint(double lat_deg, double lon_deg) {
  auto p = checked(lat_deg, lon_deg);
  if (!p) {
    throw std::invalid_argument("GeoPoint out of range: lat=" + std::to_string(lat_deg) +
                                " lon=" + std::to_string(lon_deg));
  }
  *this = *p;
}

std::optional<GeoPoint> GeoPoint::checked(double lat_deg, double lon_deg) {
  if (!valid_lat(lat_deg) || !valid_lon(lon_deg)) return std::nullopt;
  GeoPoint p;
  p.lat = lat_deg;
  p.lon = lon_deg == 180.0 ? -180.0 : lon_deg;
  return p;
}

BBox BBox::of(const std::vector<GeoPoint>& pts) {
  BBox b;
  if (pts.empty()) return b;
  b.lat_lo = b.lat_hi = pts.front().lat;
  b.lon_lo = b.lon_hi = pts.front().lon;
  for (const auto& p : pts) {
    b.lat_lo = std::min(b.lat_lo, p.lat);
    b.lat_hi = std::max(b.lat_hi, p.lat);
    b.lon_lo = std::min(b.lon_lo, p.lon);
    b.lon_hi = std::max(b.lon_hi, p.lon);
  }
  return b;
}

Geohash7 Geohash7::parse(const std::string& code) {
  if (code.size() != kLength) {
    throw std::invalid_argument("geohash must have exactly 7 characters: \"" + code + "\"");
  }
  Geohash7 h;
  for (int i = 0; i < kLength; ++i) {
    if (base32_index(code[i]) < 0) {
      throw std::invalid_argument("invalid geohash character '" + std::string(1, code[i]) + "'");
    }
    h.code_[i] = code[i];
  }
  return h;
}

Geohash7 encode_geohash7(const GeoPoint& p) {
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  Geohash7 h;
  bool even = true;  // even bits refine longitude
  int bit = 0, ch = 0;
  int out = 0;
  while (out < Geohash7::kLength) {
    if (even) {
      double mid = (lon_lo + lon_hi) / 2.0;
      if (p.lon >= mid) {
        ch = (ch << 1) | 1;
        lon_lo = mid;
      } else {
        ch <<= 1;
        lon_hi = mid;
      }
    } else {
      double mid = (lat_lo + lat_hi) / 2.0;
      if (p.lat >= mid) {
        ch = (ch << 1) | 1;
        lat_lo = mid;
      } else {
        ch <<= 1;
        lat_hi = mid;
      }
    }
    even = !even;
    if (++bit == 5) {
      h.code_[out++] = kBase32[ch];
      bit = 0;
      ch = 0;
    }
  }
  return h;
}

BBox decode_geohash7(const Geohash7& h) {
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  bool even = true;
  for (char c : h.str()) {
    int idx = base32_index(c);
    for (int b = 4; b >= 0; --b) {
      int bit = (idx >> b) & 1;
      if (even) {
        double mid = (lon_lo + lon_hi) / 2.0;
        (bit ? lon_lo : lon_hi) = mid;
      } else {
        double mid = (lat_lo + lat_hi) / 2.0;
        (bit ? lat_lo : lat_hi) = mid;
      }
      even = !even;
    }
  }
  return BBox{lat_lo, lat_hi, lon_lo, lon_hi};
}

GeoPoint geohash7_center(const Geohash7& h) {
  BBox b = decode_geohash7(h);
  return GeoPoint((b.lat_lo + b.lat_hi) / 2.0, (b.lon_lo + b.lon_hi) / 2.0);
}

std::vector<GeoPoint> convex_hull(std::vector<GeoPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const GeoPoint& a, const GeoPoint& b) {
    return a.lon < b.lon || (a.lon == b.lon && a.lat < b.lat);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const std::size_t n = pts.size();
  if (n < 3) throw std::invalid_argument("convex hull needs at least 3 distinct points");

  std::vector<GeoPoint> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper chain
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) throw std::invalid_argument("points are collinear; no convex hull");
  return hull;
}

ConvexPolygon ConvexPolygon::from_ring(std::vector<GeoPoint> ring) {
  // Drop consecutive duplicates including an explicit closing vertex.
  std::vector<GeoPoint> pts;
  for (const auto& p : ring) {
    if (pts.empty() || !(pts.back() == p)) pts.push_back(p);
  }
  while (pts.size() > 1 && pts.front() == pts.back()) pts.pop_back();
  if (pts.size() < 3) throw std::invalid_argument("polygon needs at least 3 distinct vertices");

  // Orient counter-clockwise (shoelace).
  double area2 = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[(i + 1) % pts.size()];
    area2 += a.lon * b.lat - b.lon * a.lat;
  }
  if (area2 < 0.0) std::reverse(pts.begin(), pts.end());

  // Drop collinear vertices, then demand strict convexity.
  std::vector<GeoPoint> kept;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& prev = pts[(i + n - 1) % n];
    const auto& cur = pts[i];
    const auto& next = pts[(i + 1) % n];
    if (cross(prev, cur, next) != 0.0) kept.push_back(cur);
  }
  if (kept.size() < 3) throw std::invalid_argument("polygon is degenerate after collinear removal");
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& a = kept[i];
    const auto& b = kept[(i + 1) % kept.size()];
    const auto& c = kept[(i + 2) % kept.size()];
    if (cross(a, b, c) <= 0.0) throw std::invalid_argument("polygon ring is not convex");
  }

  ConvexPolygon poly;
  poly.vertices_ = std::move(kept);
  poly.bbox_ = BBox::of(poly.vertices_);
  return poly;
}

bool contains(const ConvexPolygon& poly, const GeoPoint& p) {
  const auto& v = poly.vertices();
  if (v.empty() || !poly.bbox().contains(p)) return false;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (cross(v[i], v[(i + 1) % n], p) < 0.0) return false;  // boundary counts inside
  }
  return true;
}

double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = deg2rad(a.lat);
  const double phi2 = deg2rad(b.lat);
  const double dphi = deg2rad(b.lat - a.lat);
  const double dlam = deg2rad(b.lon - a.lon);
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlam / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double speed_mph(const GeoPoint& a, const GeoPoint& b, double dt_s) {
  if (!(dt_s > 0.0)) {
    throw InputError("speed_mph requires a positive time delta, got " + std::to_string(dt_s));
  }
  const double mps = haversine_m(a, b) / dt_s;
  return mps * 3600.0 / kMetersPerMile;
}

}  // namespace patrolscope::geo
