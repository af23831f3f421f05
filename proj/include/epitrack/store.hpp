#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/format.hpp"

#include "json.hpp"

namespace epitrack {

// ---------------------------------------------------------------------------
// Patient registry
// ---------------------------------------------------------------------------

enum class PatientStatus { active, recovered, dead };

inline std::string_view to_string(PatientStatus s) {
  switch (s) {
    case PatientStatus::active: return "active";
    case PatientStatus::recovered: return "recovered";
    case PatientStatus::dead: return "dead";
  }
  return "?";
}

inline PatientStatus parse_patient_status(std::string_view s) {
  if (s == "active") return PatientStatus::active;
  if (s == "recovered") return PatientStatus::recovered;
  if (s == "dead") return PatientStatus::dead;
  fail(Errc::bad_request, "unknown patient status: \"" + std::string(s) + "\"");
}

struct PatientRecord {
  PersonId person;
  PatientStatus status = PatientStatus::active;
  Timestamp confirmed_at = 0;
};

struct AppendReceipt {
  std::size_t accepted = 0;
  std::size_t duplicates = 0;
};

// ---------------------------------------------------------------------------
// Grid index
//
// Points are keyed by (latitude row, longitude column, time bucket). Rows are
// bands of cell_m meters of latitude; column width is chosen per row so that a
// column spans at least cell_m meters everywhere in the band. Bands touching
// |lat| >= 88 collapse into single polar cap cells. A probe for radius
// eps <= cell_m therefore only needs the rows of lat +- one band, a small
// column range derived from the exact longitude bound, and time buckets
// {b-1, b, b+1}.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kPolarLatDeg = 88.0;
inline constexpr std::int32_t kNorthCap = std::numeric_limits<std::int32_t>::max();
inline constexpr std::int32_t kSouthCap = std::numeric_limits<std::int32_t>::min();

struct GridKey {
  std::int32_t row = 0;
  std::int32_t col = 0;
  std::int64_t bucket = 0;

  bool operator==(const GridKey&) const = default;
};

struct GridKeyHash {
  std::size_t operator()(const GridKey& k) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    auto mix = [&h](std::uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    mix(static_cast<std::uint32_t>(k.row));
    mix(static_cast<std::uint32_t>(k.col));
    mix(static_cast<std::uint64_t>(k.bucket));
    return static_cast<std::size_t>(h);
  }
};

}  // namespace detail

// Compact stored observation; person interned, coordinates in micro-degrees.
struct PointRec {
  std::uint32_t person = 0;
  std::int32_t lat_micro = 0;
  std::int32_t lon_micro = 0;
  Timestamp ts = 0;

  GeoPoint loc() const { return {micro_to_deg(lat_micro), micro_to_deg(lon_micro)}; }
};

class GridIndex {
 public:
  GridIndex() = default;

  GridIndex(double cell_m, std::int64_t bucket_s)
      : cell_m_(std::max(cell_m, 10.0)),
        bucket_s_(std::max<std::int64_t>(bucket_s, 1)),
        lat_step_deg_(cell_m_ / kMetersPerDegree) {}

  double cell_m() const { return cell_m_; }
  std::int64_t bucket_s() const { return bucket_s_; }

  void build(std::span<const PointRec> points) {
    cells_.clear();
    cells_.reserve(points.size());
    for (std::uint32_t i = 0; i < points.size(); ++i) {
      cells_[key_of(points[i])].push_back(i);
    }
  }

  // Indices of every stored point that could be within eps meters and
  // delta_t seconds of (loc, ts). Complete for eps <= cell_m and
  // delta_t <= bucket_s; callers re-check the exact predicate.
  void probe(const GeoPoint& loc, Timestamp ts, double eps, std::int64_t delta_t,
             std::vector<std::uint32_t>& out) const {
    require(eps <= cell_m_ + 1e-9, Errc::bad_request,
            "probe radius exceeds index cell size");
    require(delta_t <= bucket_s_, Errc::bad_request,
            "probe time tolerance exceeds index bucket size");
    out.clear();

    std::int32_t rows[3] = {row_of(std::max(loc.lat - lat_step_deg_, -90.0)), row_of(loc.lat),
                            row_of(std::min(loc.lat + lat_step_deg_, 90.0))};
    std::sort(std::begin(rows), std::end(rows));

    const std::int64_t b = bucket_of(ts);
    for (int r = 0; r < 3; ++r) {
      if (r > 0 && rows[r] == rows[r - 1]) continue;
      const std::int32_t row = rows[r];
      std::int64_t c0 = 0, c1 = 0, ncols = 1;
      if (row == detail::kNorthCap || row == detail::kSouthCap) {
        c0 = c1 = 0;
      } else {
        ncols = ncols_of(row);
        const double width = 360.0 / static_cast<double>(ncols);
        const double slack = lon_slack_deg(loc.lat, row, eps);
        c0 = static_cast<std::int64_t>(std::floor((loc.lon + 180.0 - slack) / width));
        c1 = static_cast<std::int64_t>(std::floor((loc.lon + 180.0 + slack) / width));
        if (c1 - c0 + 1 >= ncols) {
          c0 = 0;
          c1 = ncols - 1;
        }
      }
      for (std::int64_t c = c0; c <= c1; ++c) {
        const auto col = static_cast<std::int32_t>(((c % ncols) + ncols) % ncols);
        for (std::int64_t db = -1; db <= 1; ++db) {
          auto it = cells_.find(detail::GridKey{row, col, b + db});
          if (it == cells_.end()) continue;
          out.insert(out.end(), it->second.begin(), it->second.end());
        }
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }

 private:
  std::int32_t row_of(double lat) const {
    if (lat >= detail::kPolarLatDeg) return detail::kNorthCap;
    if (lat <= -detail::kPolarLatDeg) return detail::kSouthCap;
    return static_cast<std::int32_t>(std::floor(lat / lat_step_deg_));
  }

  // Smallest cos(lat) over the band (its edge farthest from the equator).
  double band_cos_min(std::int32_t row) const {
    const double e0 = std::abs(row * lat_step_deg_);
    const double e1 = std::abs((row + 1) * lat_step_deg_);
    const double far = std::min(std::max(e0, e1), detail::kPolarLatDeg + lat_step_deg_);
    return std::cos(deg2rad(far));
  }

  std::int64_t ncols_of(std::int32_t row) const {
    const double width = cell_m_ / (kMetersPerDegree * band_cos_min(row));
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(360.0 / width)));
  }

  // Exact bound on |dlon| degrees between the probe point and any point of the
  // row's band at distance <= eps: dist >= 2R*sqrt(cos(phi1)cos(phi2))*sin(dlam/2).
  double lon_slack_deg(double probe_lat, std::int32_t row, double eps) const {
    const double prod = std::cos(deg2rad(probe_lat)) * band_cos_min(row);
    if (prod <= 0.0) return 360.0;
    const double s = eps / (2.0 * kEarthRadiusM * std::sqrt(prod));
    if (s >= 1.0) return 360.0;
    const double slack = 2.0 * std::asin(s) * (180.0 / kPi);
    return slack * (1.0 + 1e-9) + 1e-12;
  }

  std::int64_t bucket_of(Timestamp ts) const {
    const std::int64_t q = ts / bucket_s_;
    return (ts % bucket_s_ < 0) ? q - 1 : q;
  }

  detail::GridKey key_of(const PointRec& p) const {
    const GeoPoint loc = p.loc();
    const std::int32_t row = row_of(loc.lat);
    std::int32_t col = 0;
    if (row != detail::kNorthCap && row != detail::kSouthCap) {
      const std::int64_t ncols = ncols_of(row);
      const double width = 360.0 / static_cast<double>(ncols);
      const auto c = static_cast<std::int64_t>(std::floor((loc.lon + 180.0) / width));
      col = static_cast<std::int32_t>(((c % ncols) + ncols) % ncols);
    }
    return {row, col, bucket_of(p.ts)};
  }

  double cell_m_ = 10.0;
  std::int64_t bucket_s_ = 300;
  double lat_step_deg_ = 10.0 / kMetersPerDegree;
  std::unordered_map<detail::GridKey, std::vector<std::uint32_t>, detail::GridKeyHash> cells_;
};

// ---------------------------------------------------------------------------
// Snapshot
// ---------------------------------------------------------------------------

struct SnapshotData {
  Timestamp as_of = 0;
  ProximityConfig proximity;
  std::vector<PersonId> persons;  // lexicographically sorted intern table
  std::unordered_map<std::string, std::uint32_t> person_index;
  std::vector<PointRec> points;  // sorted by (person, ts); (person, ts) unique
  std::vector<std::pair<std::uint32_t, std::uint32_t>> person_span;  // [begin, end) per person
  std::vector<PatientRecord> patients;                               // sorted by person id
  GridIndex index;
};

// Immutable view of the trajectory log and patient registry at a cutoff time.
class StoreSnapshot {
 public:
  StoreSnapshot() : d_(std::make_shared<SnapshotData>()) {}
  explicit StoreSnapshot(std::shared_ptr<const SnapshotData> d) : d_(std::move(d)) {}

  Timestamp as_of() const { return d_->as_of; }
  const ProximityConfig& proximity() const { return d_->proximity; }
  const std::vector<PersonId>& persons() const { return d_->persons; }
  const std::vector<PointRec>& points() const { return d_->points; }
  const std::vector<PatientRecord>& patients() const { return d_->patients; }

  std::optional<std::uint32_t> person_index(const PersonId& id) const {
    auto it = d_->person_index.find(id);
    if (it == d_->person_index.end()) return std::nullopt;
    return it->second;
  }

  std::span<const PointRec> points_of(std::uint32_t person) const {
    const auto [b, e] = d_->person_span[person];
    return {d_->points.data() + b, d_->points.data() + e};
  }

  TrajectoryPoint materialize(const PointRec& r) const {
    return {d_->persons[r.person], r.loc(), r.ts};
  }

  // All stored points of other persons co-located with p under cfg.
  // Requires cfg.epsilon_m <= index cell size and cfg.delta_t_s <= bucket size.
  std::vector<TrajectoryPoint> candidates_near(const TrajectoryPoint& p,
                                               const ProximityConfig& cfg) const {
    check_point(p);
    check_proximity(cfg);
    std::vector<std::uint32_t> idx;
    d_->index.probe(p.loc, p.time, cfg.epsilon_m, cfg.delta_t_s, idx);
    std::vector<TrajectoryPoint> out;
    for (std::uint32_t i : idx) {
      const PointRec& r = d_->points[i];
      if (d_->persons[r.person] == p.person) continue;
      TrajectoryPoint q = materialize(r);
      if (colocated(p, q, cfg)) out.push_back(std::move(q));
    }
    return out;  // index order == (person, ts) order
  }

  // Index-level variant used by the investigation engine.
  void probe_indices(const GeoPoint& loc, Timestamp ts, const ProximityConfig& cfg,
                     std::vector<std::uint32_t>& out) const {
    d_->index.probe(loc, ts, cfg.epsilon_m, cfg.delta_t_s, out);
  }

  void save(const std::filesystem::path& dir) const;

  const SnapshotData& data() const { return *d_; }

 private:
  std::shared_ptr<const SnapshotData> d_;
};

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

// Append-only trajectory log plus patient registry. Mutations must be
// serialized by the caller (single writer); snapshots are immutable and safe
// to share across threads.
class TrajectoryStore {
 public:
  explicit TrajectoryStore(ProximityConfig proximity = {}) : proximity_(proximity) {
    check_proximity(proximity_);
  }

  const ProximityConfig& proximity() const { return proximity_; }

  // Batch append. Exact duplicates (person, time, stored coordinates) are
  // dropped and counted; a point that reuses (person, time) with different
  // coordinates rejects the whole batch, leaving the store untouched.
  AppendReceipt append_points(std::span<const TrajectoryPoint> batch) {
    struct Key {
      std::int32_t lat, lon;
    };
    std::map<std::pair<std::string_view, Timestamp>, Key> incoming;
    for (const TrajectoryPoint& p : batch) {
      check_point(p);
      const Key k{to_micro_deg(p.loc.lat), to_micro_deg(p.loc.lon)};
      const auto conflicts = [&](const Key& other) {
        return other.lat != k.lat || other.lon != k.lon;
      };
      if (auto it = incoming.find({p.person, p.time}); it != incoming.end()) {
        require(!conflicts(it->second), Errc::conflicting_duplicate,
                p.person + "@" + std::to_string(p.time) + " appears twice with different coordinates");
      } else {
        incoming.emplace(std::pair<std::string_view, Timestamp>{p.person, p.time}, k);
      }
      if (auto pit = traj_.find(p.person); pit != traj_.end()) {
        if (auto tit = pit->second.find(p.time); tit != pit->second.end()) {
          require(!conflicts(Key{tit->second.first, tit->second.second}),
                  Errc::conflicting_duplicate,
                  p.person + "@" + std::to_string(p.time) +
                      " conflicts with a stored point at different coordinates");
        }
      }
    }

    AppendReceipt receipt;
    for (const TrajectoryPoint& p : batch) {
      auto& per = traj_[p.person];
      const auto [it, inserted] =
          per.emplace(p.time, std::pair{to_micro_deg(p.loc.lat), to_micro_deg(p.loc.lon)});
      (void)it;
      if (inserted) {
        ++receipt.accepted;
        ++point_count_;
      } else {
        ++receipt.duplicates;
      }
    }
    return receipt;
  }

  void report_patient(const PersonId& person, Timestamp confirmed_at) {
    check_person_id(person);
    require(confirmed_at >= 0, Errc::bad_request, "negative confirmation time");
    auto it = patients_.find(person);
    require(it == patients_.end() || it->second.status != PatientStatus::active,
            Errc::duplicate_report, person + " is already an active patient");
    patients_[person] = PatientRecord{person, PatientStatus::active, confirmed_at};
  }

  // Allowed transitions: active -> recovered, active -> dead.
  void update_status(const PersonId& person, PatientStatus new_status) {
    check_person_id(person);
    auto it = patients_.find(person);
    require(it != patients_.end() && it->second.status == PatientStatus::active,
            Errc::illegal_transition, person + " has no active patient record");
    require(new_status == PatientStatus::recovered || new_status == PatientStatus::dead,
            Errc::illegal_transition,
            "active -> " + std::string(to_string(new_status)) + " is not allowed");
    it->second.status = new_status;
  }

  bool has_person(const PersonId& person) const {
    return traj_.count(person) > 0 || patients_.count(person) > 0;
  }

  const PatientRecord* patient(const PersonId& person) const {
    auto it = patients_.find(person);
    return it == patients_.end() ? nullptr : &it->second;
  }

  std::size_t point_count() const { return point_count_; }
  std::size_t patient_count() const { return patients_.size(); }

  // Latest timestamp present in the store (points and confirmations).
  Timestamp latest_time() const {
    Timestamp t = 0;
    for (const auto& [person, times] : traj_) {
      (void)person;
      if (!times.empty()) t = std::max(t, times.rbegin()->first);
    }
    for (const auto& [person, rec] : patients_) {
      (void)person;
      t = std::max(t, rec.confirmed_at);
    }
    return t;
  }

  StoreSnapshot snapshot(Timestamp as_of) const { return snapshot(as_of, proximity_); }

  // Snapshot with an explicit proximity config; the grid uses cell size
  // max(epsilon, 10 m) and bucket size max(delta_t, 1 s).
  StoreSnapshot snapshot(Timestamp as_of, const ProximityConfig& proximity) const {
    check_proximity(proximity);
    require(as_of >= 0, Errc::bad_request, "negative as_of");
    auto d = std::make_shared<SnapshotData>();
    d->as_of = as_of;
    d->proximity = proximity;

    for (const auto& [person, times] : traj_) {
      if (!times.empty() && times.begin()->first <= as_of) d->persons.push_back(person);
    }
    for (const auto& [person, rec] : patients_) {
      if (rec.confirmed_at <= as_of) d->persons.push_back(person);
    }
    std::sort(d->persons.begin(), d->persons.end());
    d->persons.erase(std::unique(d->persons.begin(), d->persons.end()), d->persons.end());
    for (std::uint32_t i = 0; i < d->persons.size(); ++i) d->person_index.emplace(d->persons[i], i);

    d->person_span.assign(d->persons.size(), {0, 0});
    d->points.reserve(point_count_);
    for (std::uint32_t i = 0; i < d->persons.size(); ++i) {
      const auto b = static_cast<std::uint32_t>(d->points.size());
      if (auto it = traj_.find(d->persons[i]); it != traj_.end()) {
        for (const auto& [ts, ll] : it->second) {
          if (ts > as_of) break;
          d->points.push_back(PointRec{i, ll.first, ll.second, ts});
        }
      }
      d->person_span[i] = {b, static_cast<std::uint32_t>(d->points.size())};
    }

    for (const auto& [person, rec] : patients_) {
      if (rec.confirmed_at <= as_of) d->patients.push_back(rec);
    }

    d->index = GridIndex(std::max(proximity.epsilon_m, 10.0),
                         std::max<std::int64_t>(proximity.delta_t_s, 1));
    d->index.build(d->points);
    return StoreSnapshot(std::move(d));
  }

  void save(const std::filesystem::path& dir) const { snapshot(latest_time()).save(dir); }

  static TrajectoryStore load(const std::filesystem::path& dir);

 private:
  ProximityConfig proximity_;
  // person -> time -> (lat_micro, lon_micro); ordered maps keep iteration
  // deterministic and per-person times strictly increasing.
  std::map<PersonId, std::map<Timestamp, std::pair<std::int32_t, std::int32_t>>> traj_;
  std::map<PersonId, PatientRecord> patients_;
  std::size_t point_count_ = 0;
};

// ---------------------------------------------------------------------------
// Formats: trajectory CSV/JSONL, patient CSV, snapshot directory
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPointsCsvHeader = "person_id,lat,lon,ts";
inline constexpr std::string_view kPatientsCsvHeader = "person_id,status,confirmed_at";

inline void write_points_csv(std::ostream& out, std::span<const TrajectoryPoint> points) {
  out << kPointsCsvHeader << '\n';
  for (const TrajectoryPoint& p : points) {
    out << p.person << ',' << format_deg(p.loc.lat) << ',' << format_deg(p.loc.lon) << ','
        << p.time << '\n';
  }
}

inline std::vector<TrajectoryPoint> read_points_csv(std::istream& in) {
  csv::Reader reader(in, kPointsCsvHeader, "points csv");
  std::vector<TrajectoryPoint> out;
  std::vector<std::string_view> f;
  while (reader.next(f, 4)) {
    TrajectoryPoint p{std::string(f[0]),
                      GeoPoint{csv::parse_double(f[1], "lat"), csv::parse_double(f[2], "lon")},
                      csv::parse_ts(f[3])};
    check_point(p);
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_points_jsonl(std::ostream& out, std::span<const TrajectoryPoint> points) {
  for (const TrajectoryPoint& p : points) {
    nlohmann::json j{{"person_id", p.person}, {"lat", p.loc.lat}, {"lon", p.loc.lon},
                     {"ts", p.time}};
    out << j.dump() << '\n';
  }
}

inline std::vector<TrajectoryPoint> read_points_jsonl(std::istream& in) {
  std::vector<TrajectoryPoint> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded() && j.is_object(), Errc::bad_request,
            "points jsonl line " + std::to_string(line_no) + ": not a JSON object");
    require(j.contains("person_id") && j.contains("lat") && j.contains("lon") && j.contains("ts"),
            Errc::bad_request,
            "points jsonl line " + std::to_string(line_no) + ": missing person_id/lat/lon/ts");
    require(j["person_id"].is_string() && j["lat"].is_number() && j["lon"].is_number() &&
                j["ts"].is_number_integer(),
            Errc::bad_request, "points jsonl line " + std::to_string(line_no) + ": bad field type");
    TrajectoryPoint p{j["person_id"].get<std::string>(),
                      GeoPoint{j["lat"].get<double>(), j["lon"].get<double>()},
                      j["ts"].get<std::int64_t>()};
    check_point(p);
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_patients_csv(std::ostream& out, std::span<const PatientRecord> patients) {
  out << kPatientsCsvHeader << '\n';
  for (const PatientRecord& r : patients) {
    out << r.person << ',' << to_string(r.status) << ',' << r.confirmed_at << '\n';
  }
}

inline std::vector<PatientRecord> read_patients_csv(std::istream& in) {
  csv::Reader reader(in, kPatientsCsvHeader, "patients csv");
  std::vector<PatientRecord> out;
  std::vector<std::string_view> f;
  while (reader.next(f, 3)) {
    PatientRecord r{std::string(f[0]), parse_patient_status(f[1]), csv::parse_ts(f[2])};
    check_person_id(r.person);
    out.push_back(std::move(r));
  }
  return out;
}

inline void StoreSnapshot::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "points.csv", std::ios::binary);
    require(out.good(), Errc::bad_request, "cannot write " + (dir / "points.csv").string());
    out << kPointsCsvHeader << '\n';
    for (const PointRec& r : d_->points) {
      out << d_->persons[r.person] << ',' << format_micro_deg(r.lat_micro) << ','
          << format_micro_deg(r.lon_micro) << ',' << r.ts << '\n';
    }
  }
  {
    std::ofstream out(dir / "patients.csv", std::ios::binary);
    write_patients_csv(out, d_->patients);
  }
  {
    std::ofstream out(dir / "meta", std::ios::binary);
    MetaMap meta{{"as_of", std::to_string(d_->as_of)},
                 {"epsilon", format_fixed(d_->proximity.epsilon_m)},
                 {"delta_t", std::to_string(d_->proximity.delta_t_s)}};
    write_meta(out, meta);
  }
}

inline TrajectoryStore TrajectoryStore::load(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta");
  require(meta_in.good(), Errc::bad_request, "cannot read " + (dir / "meta").string());
  const MetaMap meta = read_meta(meta_in);
  ProximityConfig prox{csv::parse_double(meta_get(meta, "epsilon"), "epsilon"),
                       csv::parse_int(meta_get(meta, "delta_t"), "delta_t")};
  TrajectoryStore store(prox);

  std::ifstream pts(dir / "points.csv", std::ios::binary);
  require(pts.good(), Errc::bad_request, "cannot read " + (dir / "points.csv").string());
  const auto points = read_points_csv(pts);
  store.append_points(points);

  std::ifstream pat(dir / "patients.csv", std::ios::binary);
  require(pat.good(), Errc::bad_request, "cannot read " + (dir / "patients.csv").string());
  for (const PatientRecord& r : read_patients_csv(pat)) {
    store.patients_[r.person] = r;
  }
  return store;
}

}  // namespace epitrack
