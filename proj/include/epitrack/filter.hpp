#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/format.hpp"

namespace epitrack {

// Authority-chosen region whose points are discarded before storage
// (roads, highways, anything declared valueless).
struct ExclusionZone {
  std::string zone_id;
  GeoPoint center;
  double radius_m = 0.0;
};

inline void check_zone(const ExclusionZone& z) {
  require(valid_person_id(z.zone_id), Errc::bad_request, "invalid zone id: \"" + z.zone_id + "\"");
  check_geo(z.center);
  require(z.radius_m > 0.0, Errc::bad_request, "zone radius must be > 0: " + z.zone_id);
}

// Returns the id of the first zone containing the point (drop), or nullopt (keep).
// Zone boundaries are inclusive.
inline std::optional<std::string> filter_point(const TrajectoryPoint& p,
                                               std::span<const ExclusionZone> zones) {
  for (const ExclusionZone& z : zones) {
    if (haversine(z.center, p.loc) <= z.radius_m) return z.zone_id;
  }
  return std::nullopt;
}

// Building entry/exit record from fixed installations.
struct IntervalRecord {
  PersonId person;
  Area area;
  Timestamp entry = 0;
  Timestamp exit = 0;
};

inline void check_interval(const IntervalRecord& rec) {
  check_person_id(rec.person);
  check_area(rec.area);
  require(rec.entry >= 0 && rec.entry < rec.exit, Errc::bad_request,
          "interval must satisfy 0 <= entry < exit for " + rec.person);
}

// Synthesizes presence points at the area center every delta_t seconds from
// entry, exit always included. Everyone inside one building is pairwise
// co-located after expansion. delta_t = 0 degenerates to {entry, exit}.
inline std::vector<TrajectoryPoint> expand_interval(const IntervalRecord& rec,
                                                    std::int64_t delta_t_s) {
  check_interval(rec);
  require(delta_t_s >= 0, Errc::bad_request, "negative delta_t");
  std::vector<TrajectoryPoint> out;
  if (delta_t_s > 0) {
    for (Timestamp t = rec.entry; t < rec.exit; t += delta_t_s) {
      out.push_back({rec.person, rec.area.center, t});
    }
  } else {
    out.push_back({rec.person, rec.area.center, rec.entry});
  }
  out.push_back({rec.person, rec.area.center, rec.exit});
  return out;
}

// Client-side reporting rules: one report at most every report_period_x
// seconds, and none at all while the device moves stationary_radius_y meters
// or less from its last report.
struct DeviceReportConfig {
  std::int64_t report_period_x_s = 300;
  double stationary_radius_y_m = 2.0;
};

// report_period_x = 0 disables the time gate (useful for already-sampled streams).
inline void check_report_config(const DeviceReportConfig& cfg) {
  require(cfg.report_period_x_s >= 0, Errc::bad_request, "report period must be >= 0");
  require(cfg.stationary_radius_y_m >= 0.0, Errc::bad_request, "stationary radius must be >= 0");
}

// Streaming stationarity dedup for one device.
class StationaryDeduper {
 public:
  explicit StationaryDeduper(DeviceReportConfig cfg) : cfg_(cfg) { check_report_config(cfg_); }

  bool offer(const GeoPoint& loc, Timestamp time) {
    if (emitted_) {
      if (time - last_time_ < cfg_.report_period_x_s) return false;
      if (haversine(loc, last_loc_) <= cfg_.stationary_radius_y_m) return false;
    }
    emitted_ = true;
    last_loc_ = loc;
    last_time_ = time;
    return true;
  }

 private:
  DeviceReportConfig cfg_;
  bool emitted_ = false;
  GeoPoint last_loc_;
  Timestamp last_time_ = 0;
};

// Applies the reporting rules to one person's time-ordered stream.
// The first point is always emitted. Idempotent.
inline std::vector<TrajectoryPoint> dedup_stationary(std::span<const TrajectoryPoint> stream,
                                                     const DeviceReportConfig& cfg) {
  std::vector<TrajectoryPoint> out;
  if (stream.empty()) return out;
  StationaryDeduper dedup(cfg);
  const PersonId& person = stream.front().person;
  Timestamp prev = stream.front().time;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const TrajectoryPoint& p = stream[i];
    require(p.person == person, Errc::bad_request,
            "dedup_stationary stream mixes persons: " + person + " vs " + p.person);
    require(i == 0 || p.time >= prev, Errc::unsorted_input,
            "dedup_stationary input not sorted by time for " + person);
    prev = p.time;
    if (dedup.offer(p.loc, p.time)) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Formats
// ---------------------------------------------------------------------------

inline constexpr std::string_view kZonesCsvHeader = "zone_id,lat,lon,radius_m";
inline constexpr std::string_view kIntervalsCsvHeader = "person_id,area_id,entry_ts,exit_ts";

inline std::vector<ExclusionZone> read_zones_csv(std::istream& in) {
  csv::Reader reader(in, kZonesCsvHeader, "zones csv");
  std::vector<ExclusionZone> out;
  std::vector<std::string_view> f;
  while (reader.next(f, 4)) {
    ExclusionZone z{std::string(f[0]),
                    GeoPoint{csv::parse_double(f[1], "lat"), csv::parse_double(f[2], "lon")},
                    csv::parse_double(f[3], "radius_m")};
    check_zone(z);
    out.push_back(std::move(z));
  }
  return out;
}

inline void write_zones_csv(std::ostream& out, std::span<const ExclusionZone> zones) {
  out << kZonesCsvHeader << '\n';
  for (const ExclusionZone& z : zones) {
    out << z.zone_id << ',' << format_deg(z.center.lat) << ',' << format_deg(z.center.lon) << ','
        << format_fixed(z.radius_m, 1) << '\n';
  }
}

// Interval rows reference areas by id; the caller resolves them against the
// known area registry.
struct IntervalRow {
  PersonId person;
  std::string area_id;
  Timestamp entry = 0;
  Timestamp exit = 0;
};

inline std::vector<IntervalRow> read_intervals_csv(std::istream& in) {
  csv::Reader reader(in, kIntervalsCsvHeader, "intervals csv");
  std::vector<IntervalRow> out;
  std::vector<std::string_view> f;
  while (reader.next(f, 4)) {
    IntervalRow row{std::string(f[0]), std::string(f[1]), csv::parse_ts(f[2]), csv::parse_ts(f[3])};
    check_person_id(row.person);
    require(row.entry < row.exit, Errc::bad_request,
            "interval entry >= exit for " + row.person + " in " + row.area_id);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace epitrack
