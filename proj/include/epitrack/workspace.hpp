#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/epi.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/filter.hpp"
#include "epitrack/format.hpp"
#include "epitrack/investigate.hpp"
#include "epitrack/store.hpp"

namespace epitrack {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::bad_request, "cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::bad_request, "cannot write " + path.string());
  out << content;
}

struct IngestReport {
  std::size_t accepted = 0;
  std::size_t duplicates = 0;
  std::size_t filtered = 0;  // dropped by exclusion zones, counted not stored
};

// A data directory: the trajectory store, the configured exclusion zones and
// public areas, and the persisted, id-addressed investigation artifacts.
//
//   <data-dir>/store/{points.csv,patients.csv,meta}
//   <data-dir>/zones.csv, <data-dir>/areas.csv
//   <data-dir>/investigations/inv-000001/{meta,classes.csv,black_areas.csv,suspects.csv}
//
// Mutations are serialized internally; investigations run one at a time.
class Workspace {
 public:
  explicit Workspace(std::filesystem::path dir, ProximityConfig default_prox = {})
      : dir_(std::move(dir)) {
    if (std::filesystem::exists(store_dir() / "meta")) {
      store_ = TrajectoryStore::load(store_dir());
    } else {
      store_ = TrajectoryStore(default_prox);
    }
    if (std::filesystem::exists(zones_path())) {
      std::ifstream in(zones_path(), std::ios::binary);
      zones_ = read_zones_csv(in);
    }
    if (std::filesystem::exists(areas_path())) {
      std::ifstream in(areas_path(), std::ios::binary);
      areas_ = read_areas_csv(in);
    }
  }

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path store_dir() const { return dir_ / "store"; }
  std::filesystem::path zones_path() const { return dir_ / "zones.csv"; }
  std::filesystem::path areas_path() const { return dir_ / "areas.csv"; }
  std::filesystem::path investigations_dir() const { return dir_ / "investigations"; }

  const std::vector<ExclusionZone>& zones() const { return zones_; }
  const std::vector<Area>& areas() const { return areas_; }

  void set_zones(std::vector<ExclusionZone> zones) {
    std::lock_guard lock(mu_);
    zones_ = std::move(zones);
    std::ostringstream out;
    write_zones_csv(out, zones_);
    write_file(zones_path(), out.str());
  }

  void set_areas(std::vector<Area> areas) {
    std::lock_guard lock(mu_);
    areas_ = std::move(areas);
    std::ostringstream out;
    write_areas_csv(out, areas_);
    write_file(areas_path(), out.str());
  }

  // Zone filtering + append + persist; the single-writer path.
  IngestReport ingest_points(std::span<const TrajectoryPoint> points) {
    std::lock_guard lock(mu_);
    std::vector<TrajectoryPoint> kept;
    kept.reserve(points.size());
    IngestReport report;
    for (const TrajectoryPoint& p : points) {
      if (filter_point(p, zones_)) {
        ++report.filtered;
      } else {
        kept.push_back(p);
      }
    }
    const AppendReceipt receipt = store_.append_points(kept);
    report.accepted = receipt.accepted;
    report.duplicates = receipt.duplicates;
    store_.save(store_dir());
    return report;
  }

  // Entry/exit records expand into center presence points, then take the
  // same filtering path as raw points.
  IngestReport ingest_intervals(std::span<const IntervalRow> rows) {
    std::vector<TrajectoryPoint> points;
    for (const IntervalRow& row : rows) {
      const Area* area = find_area(row.area_id);
      require(area != nullptr, Errc::bad_request, "unknown area id: " + row.area_id);
      const auto expanded = expand_interval({row.person, *area, row.entry, row.exit},
                                            store_.proximity().delta_t_s);
      points.insert(points.end(), expanded.begin(), expanded.end());
    }
    return ingest_points(points);
  }

  void report_patient(const PersonId& person, Timestamp confirmed_at) {
    std::lock_guard lock(mu_);
    store_.report_patient(person, confirmed_at);
    store_.save(store_dir());
  }

  void update_status(const PersonId& person, PatientStatus status) {
    std::lock_guard lock(mu_);
    if (!store_.has_person(person)) {
      fail(Errc::unknown_person, person + " has never appeared in trajectories or patient records");
    }
    store_.update_status(person, status);
    store_.save(store_dir());
  }

  const TrajectoryStore& store() const { return store_; }

  // ---- investigations -----------------------------------------------------

  std::string run_investigation(const InvestigationConfig& cfg) {
    std::lock_guard lock(inv_mu_);
    const StoreSnapshot snap = [&] {
      std::lock_guard slock(mu_);
      return store_.snapshot(cfg.current_date, cfg.proximity);
    }();
    const InvestigationResult result = epitrack::run_investigation(snap, areas_, cfg);

    const std::string id = next_id();
    const auto inv_dir = investigations_dir() / id;
    std::filesystem::create_directories(inv_dir);
    {
      std::ostringstream out;
      write_classes_csv(out, result.classification);
      write_file(inv_dir / "classes.csv", out.str());
    }
    {
      std::ostringstream out;
      write_black_areas_csv(out, result.black_areas);
      write_file(inv_dir / "black_areas.csv", out.str());
    }
    {
      std::ostringstream out;
      write_suspects_csv(out, result.suspects);
      write_file(inv_dir / "suspects.csv", out.str());
    }
    {
      MetaMap meta{{"id", id},
                   {"as_of", std::to_string(cfg.current_date)},
                   {"incubation_s", std::to_string(cfg.incubation_s)},
                   {"epsilon", format_fixed(cfg.proximity.epsilon_m)},
                   {"delta_t", std::to_string(cfg.proximity.delta_t_s)},
                   {"alpha", std::to_string(cfg.alpha)},
                   {"black_window",
                    cfg.black_area_window_s ? std::to_string(*cfg.black_area_window_s)
                                            : "unbounded"},
                   {"causal", cfg.causal_ordering ? "true" : "false"}};
      std::ostringstream out;
      write_meta(out, meta);
      write_file(inv_dir / "meta", out.str());
    }
    return id;
  }

  std::vector<std::string> investigation_ids() const {
    std::vector<std::string> ids;
    if (std::filesystem::exists(investigations_dir())) {
      for (const auto& entry : std::filesystem::directory_iterator(investigations_dir())) {
        if (entry.is_directory()) ids.push_back(entry.path().filename().string());
      }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  std::string latest_investigation_id() const {
    const auto ids = investigation_ids();
    require(!ids.empty(), Errc::bad_request, "no investigations have been run yet");
    return ids.back();
  }

  std::filesystem::path investigation_path(const std::string& id, const std::string& file) const {
    const auto path = investigations_dir() / id / file;
    require(std::filesystem::exists(path), Errc::bad_request, "no such investigation: " + id);
    return path;
  }

  InvestigationConfig investigation_config(const std::string& id) const {
    std::ifstream in(investigation_path(id, "meta"));
    const MetaMap meta = read_meta(in);
    InvestigationConfig cfg;
    cfg.current_date = csv::parse_ts(meta_get(meta, "as_of"));
    cfg.incubation_s = csv::parse_int(meta_get(meta, "incubation_s"), "incubation_s");
    cfg.proximity.epsilon_m = csv::parse_double(meta_get(meta, "epsilon"), "epsilon");
    cfg.proximity.delta_t_s = csv::parse_int(meta_get(meta, "delta_t"), "delta_t");
    cfg.alpha = static_cast<int>(csv::parse_int(meta_get(meta, "alpha"), "alpha"));
    const std::string& win = meta_get(meta, "black_window");
    if (win != "unbounded") cfg.black_area_window_s = csv::parse_int(win, "black_window");
    cfg.causal_ordering = meta_get(meta, "causal") == "true";
    return cfg;
  }

  struct LoadedInvestigation {
    InvestigationConfig config;
    StoreSnapshot snapshot;
    Classification classification;
    SuspectsByArea suspects;
  };

  LoadedInvestigation load_investigation(const std::string& id) {
    const InvestigationConfig cfg = investigation_config(id);
    LoadedInvestigation out{cfg, {}, {}, {}};
    {
      std::lock_guard lock(mu_);
      out.snapshot = store_.snapshot(cfg.current_date, cfg.proximity);
    }
    {
      std::ifstream in(investigation_path(id, "classes.csv"));
      out.classification = read_classes_csv(in);
      out.classification.as_of = cfg.current_date;
    }
    {
      std::ifstream in(investigation_path(id, "suspects.csv"));
      out.suspects = read_suspects_csv(in);
    }
    return out;
  }

 private:
  const Area* find_area(const std::string& id) const {
    for (const Area& a : areas_) {
      if (a.area_id == id) return &a;
    }
    return nullptr;
  }

  std::string next_id() {
    int n = 0;
    for (const std::string& id : investigation_ids()) {
      if (id.size() == 10 && id.rfind("inv-", 0) == 0) {
        n = std::max(n, static_cast<int>(csv::parse_int(id.substr(4), "investigation id")));
      }
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "inv-%06d", n + 1);
    return buf;
  }

  std::filesystem::path dir_;
  TrajectoryStore store_{ProximityConfig{}};
  std::vector<ExclusionZone> zones_;
  std::vector<Area> areas_;
  std::mutex mu_;      // store + zone/area mutations
  std::mutex inv_mu_;  // investigations run one at a time
};

}  // namespace epitrack
