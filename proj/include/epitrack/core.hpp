#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "epitrack/errors.hpp"

namespace epitrack {

// A person identifier: opaque, non-empty, at most 64 bytes, case-sensitive.
using PersonId = std::string;

// Seconds since the UNIX epoch, UTC. Non-negative.
using Timestamp = std::int64_t;

inline constexpr double kEarthRadiusM = 6'371'000.0;
inline constexpr double kPi = 3.14159265358979323846;
// Meters per degree of latitude on the sphere model (~111.19 km).
inline constexpr double kMetersPerDegree = kEarthRadiusM * kPi / 180.0;
inline constexpr std::int64_t kSecondsPerDay = 86'400;

inline constexpr double deg2rad(double deg) { return deg * (kPi / 180.0); }

inline bool valid_person_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (unsigned char ch : id) {
    // Control characters, commas and quotes would break the line-oriented formats.
    if (ch < 0x20 || ch == 0x7f || ch == ',' || ch == '"') return false;
  }
  return true;
}

inline void check_person_id(const std::string& id) {
  require(valid_person_id(id), Errc::bad_request, "invalid person id: \"" + id + "\"");
}

// Coordinates are stored at 6 decimal places (~0.11 m); micro-degrees fit int32.
inline std::int32_t to_micro_deg(double deg) {
  return static_cast<std::int32_t>(std::llround(deg * 1e6));
}
inline double micro_to_deg(std::int32_t micro) { return micro / 1e6; }

struct GeoPoint {
  double lat = 0.0;  // decimal degrees, WGS84, [-90, 90]
  double lon = 0.0;  // decimal degrees, WGS84, [-180, 180]

  bool valid() const {
    return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
           lon >= -180.0 && lon <= 180.0;
  }
  // Rounded to the stored 6-decimal precision.
  GeoPoint rounded() const {
    return {micro_to_deg(to_micro_deg(lat)), micro_to_deg(to_micro_deg(lon))};
  }
};

inline void check_geo(const GeoPoint& p) {
  require(p.valid(), Errc::bad_request,
          "coordinates out of range: lat=" + std::to_string(p.lat) +
              " lon=" + std::to_string(p.lon));
}

struct TrajectoryPoint {
  PersonId person;
  GeoPoint loc;
  Timestamp time = 0;
};

inline void check_point(const TrajectoryPoint& p) {
  check_person_id(p.person);
  check_geo(p.loc);
  require(p.time >= 0, Errc::bad_request, "negative timestamp for " + p.person);
}

struct Area {
  std::string area_id;
  GeoPoint center;
  double radius_m = 0.0;  // (0, 10000]
};

inline void check_area(const Area& a) {
  require(valid_person_id(a.area_id), Errc::bad_request, "invalid area id: \"" + a.area_id + "\"");
  check_geo(a.center);
  require(a.radius_m > 0.0 && a.radius_m <= 10'000.0, Errc::bad_request,
          "area radius out of (0, 10000] m: " + a.area_id);
}

// Co-location tolerances. epsilon = 0 and delta_t = 0 degenerate to exact
// equality of (stored coordinates, time).
struct ProximityConfig {
  double epsilon_m = 2.0;        // spatial radius, [0, 1000]
  std::int64_t delta_t_s = 300;  // temporal tolerance, [0, 86400]
};

inline void check_proximity(const ProximityConfig& cfg) {
  require(std::isfinite(cfg.epsilon_m) && cfg.epsilon_m >= 0.0 && cfg.epsilon_m <= 1000.0,
          Errc::bad_request, "epsilon out of [0, 1000] m");
  require(cfg.delta_t_s >= 0 && cfg.delta_t_s <= kSecondsPerDay, Errc::bad_request,
          "delta_t out of [0, 86400] s");
}

// Great-circle distance on a sphere of radius 6371 km.
inline double haversine(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = deg2rad(a.lat);
  const double phi2 = deg2rad(b.lat);
  const double dphi = deg2rad(b.lat - a.lat);
  const double dlam = deg2rad(b.lon - a.lon);
  const double sp = std::sin(dphi / 2.0);
  const double sl = std::sin(dlam / 2.0);
  const double h = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

// Two observations of different persons count as a contact when they are
// within epsilon meters and their times differ by at most delta_t seconds
// (both bounds inclusive).
inline bool colocated(const TrajectoryPoint& p, const TrajectoryPoint& q,
                      const ProximityConfig& cfg) {
  require(p.person != q.person, Errc::bad_request,
          "colocated() called with the same person on both sides: " + p.person);
  const std::int64_t dt = p.time >= q.time ? p.time - q.time : q.time - p.time;
  if (dt > cfg.delta_t_s) return false;
  return haversine(p.loc, q.loc) <= cfg.epsilon_m;
}

// Membership is inclusive at the boundary.
inline bool area_contains(const Area& area, const GeoPoint& loc) {
  return haversine(area.center, loc) <= area.radius_m;
}

}  // namespace epitrack
