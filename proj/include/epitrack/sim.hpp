#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/filter.hpp"
#include "epitrack/format.hpp"
#include "epitrack/investigate.hpp"

namespace epitrack {

// ---------------------------------------------------------------------------
// Deterministic RNG streams
//
// Every random decision draws from a stream keyed by (seed, purpose, ids), so
// unrelated knobs (participation, offline probability) never shift each
// other's draws and a (config, seed) pair fixes the whole simulation.
// ---------------------------------------------------------------------------

namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ v); }

inline std::uint64_t key(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0,
                         std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  for (const char ch : purpose) h = mix(h, static_cast<std::uint64_t>(ch));
  h = mix(h, a);
  h = mix(h, b);
  h = mix(h, c);
  return h;
}

// One uniform draw in [0, 1) without engine state.
inline double uniform_once(std::uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

// Stream of draws; built on mt19937_64 whose output sequence is pinned by the
// standard, so runs are reproducible across toolchains.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : eng_(key) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
    const auto span = static_cast<double>(hi - lo + 1);
    const auto off = static_cast<std::int64_t>(uniform() * span);
    return lo + std::min(off, hi - lo);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rng

// ---------------------------------------------------------------------------
// Configuration and world
// ---------------------------------------------------------------------------

struct BBox {
  double min_lat = 40.70;
  double min_lon = -74.02;
  double max_lat = 40.78;
  double max_lon = -73.94;
};

struct SimConfig {
  int persons = 50;
  int pois = 10;
  int days = 7;
  std::uint64_t seed = 1;
  double participation = 1.0;  // fraction of persons whose devices report
  double p_offline = 0.0;      // per device-day probability of buffering a day
  double p_trans = 0.5;        // transmission probability per co-location episode
  int initial_patients = 1;
  DeviceReportConfig report;    // sampling cadence x, stationarity radius y
  ProximityConfig proximity;    // transmission co-location rule
  BBox bbox;
  int min_visits_per_day = 1;
  int max_visits_per_day = 4;
  std::int64_t min_visit_s = 900;
  std::int64_t max_visit_s = 7200;
  double speed_mps = 1.4;
  std::int64_t day_start_s = 6 * 3600;   // earliest departure
  std::int64_t day_end_s = 22 * 3600;    // itineraries truncate here
};

inline void check_sim_config(const SimConfig& cfg) {
  require(cfg.initial_patients >= 1 && cfg.persons >= cfg.initial_patients, Errc::bad_request,
          "need persons >= initial_patients >= 1");
  require(cfg.pois >= 0 && cfg.days >= 1, Errc::bad_request, "need pois >= 0 and days >= 1");
  require(cfg.participation > 0.0 && cfg.participation <= 1.0, Errc::bad_request,
          "participation out of (0, 1]");
  require(cfg.p_offline >= 0.0 && cfg.p_offline <= 1.0, Errc::bad_request,
          "p_offline out of [0, 1]");
  require(cfg.p_trans >= 0.0 && cfg.p_trans <= 1.0, Errc::bad_request, "p_trans out of [0, 1]");
  require(cfg.report.report_period_x_s > 0, Errc::bad_request,
          "simulator needs a positive report period");
  check_report_config(cfg.report);
  check_proximity(cfg.proximity);
  require(cfg.bbox.min_lat < cfg.bbox.max_lat && cfg.bbox.min_lon < cfg.bbox.max_lon,
          Errc::bad_request, "degenerate bounding box");
  require(std::abs(cfg.bbox.min_lat) <= 85.0 && std::abs(cfg.bbox.max_lat) <= 85.0,
          Errc::bad_request, "bounding box latitude must stay within +-85 degrees");
  require(cfg.min_visits_per_day >= 1 && cfg.max_visits_per_day >= cfg.min_visits_per_day,
          Errc::bad_request, "bad visits-per-day range");
  require(cfg.min_visit_s > 0 && cfg.max_visit_s >= cfg.min_visit_s, Errc::bad_request,
          "bad visit duration range");
  require(cfg.speed_mps > 0.0, Errc::bad_request, "speed must be > 0");
  require(cfg.day_start_s >= 0 && cfg.day_end_s > cfg.day_start_s &&
              cfg.day_end_s <= kSecondsPerDay,
          Errc::bad_request, "bad itinerary window");
}

struct PlannedVisit {
  int poi = 0;
  std::int64_t duration_s = 0;
};

struct DayPlan {
  std::int64_t depart_offset_s = 0;  // grid-aligned seconds after midnight
  std::vector<PlannedVisit> visits;
};

struct World {
  std::vector<PersonId> person_ids;
  std::vector<GeoPoint> homes;  // never reported, never a contact site
  std::vector<Area> pois;
  std::vector<std::vector<DayPlan>> plans;  // [person][day]
};

inline constexpr double kPoiRadiusM = 25.0;
inline constexpr double kSiteSeparationM = 80.0;

// Deterministic world: homes and POIs placed uniformly in the box with a
// minimum mutual separation, and a per-person per-day itinerary of POI visits.
inline World generate_world(const SimConfig& cfg) {
  check_sim_config(cfg);
  World w;
  w.person_ids.reserve(cfg.persons);
  for (int p = 0; p < cfg.persons; ++p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "u%05d", p + 1);
    w.person_ids.emplace_back(buf);
  }

  rng::Stream sites(rng::key(cfg.seed, "sites"));
  std::vector<GeoPoint> placed;
  double separation = kSiteSeparationM;
  const int total = cfg.persons + cfg.pois;
  placed.reserve(total);
  while (static_cast<int>(placed.size()) < total) {
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      GeoPoint cand{sites.uniform(cfg.bbox.min_lat, cfg.bbox.max_lat),
                    sites.uniform(cfg.bbox.min_lon, cfg.bbox.max_lon)};
      ok = std::none_of(placed.begin(), placed.end(), [&](const GeoPoint& g) {
        return haversine(g, cand) < separation;
      });
      if (ok) placed.push_back(cand);
    }
    if (!ok) separation /= 2.0;  // box too crowded; relax deterministically
  }
  w.homes.assign(placed.begin(), placed.begin() + cfg.persons);
  for (int k = 0; k < cfg.pois; ++k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "poi-%04d", k + 1);
    w.pois.push_back(Area{buf, placed[cfg.persons + k], kPoiRadiusM});
  }

  const std::int64_t x = cfg.report.report_period_x_s;
  w.plans.assign(cfg.persons, {});
  for (int p = 0; p < cfg.persons; ++p) {
    w.plans[p].resize(cfg.days);
    for (int d = 0; d < cfg.days; ++d) {
      rng::Stream r(rng::key(cfg.seed, "itinerary", p, d));
      DayPlan& plan = w.plans[p][d];
      // Departures land on the sampling grid so the first away sample is a
      // full reporting period from home.
      const std::int64_t latest = std::max(cfg.day_start_s, cfg.day_end_s - 4 * 3600);
      plan.depart_offset_s = r.uniform_int(cfg.day_start_s / x, latest / x) * x;
      if (cfg.pois == 0) continue;
      const auto visits = r.uniform_int(cfg.min_visits_per_day, cfg.max_visits_per_day);
      int prev = -1;
      for (std::int64_t v = 0; v < visits; ++v) {
        auto poi = static_cast<int>(r.uniform_int(0, cfg.pois - 1));
        if (poi == prev && cfg.pois > 1) poi = (poi + 1) % cfg.pois;
        prev = poi;
        plan.visits.push_back({poi, r.uniform_int(cfg.min_visit_s, cfg.max_visit_s)});
      }
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct Transmission {
  PersonId source;
  PersonId target;
  GeoPoint loc;
  Timestamp time = 0;
};

struct GroundTruth {
  std::vector<Transmission> transmissions;  // chronological
  std::set<PersonId> true_infected;         // includes the initial patients
};

struct Batch {
  int flush_day = 0;
  PersonId person;
  std::vector<TrajectoryPoint> points;
};

struct SimResult {
  World world;
  std::vector<Batch> batches;  // arrival order: (flush_day, person)
  GroundTruth truth;
  std::vector<PersonId> initial_patients;
  Timestamp end_time = 0;
};

namespace detail_sim {

struct Segment {
  Timestamp t0 = 0;  // [t0, t1)
  Timestamp t1 = 0;
  GeoPoint from;  // travel: endpoints; visit: both = POI center
  GeoPoint to;
  bool at_poi = false;
  bool home_bound = false;
};

struct TickPos {
  std::uint32_t person = 0;
  GeoPoint loc;
};

}  // namespace detail_sim

// Moves every person along its itinerary, samples positions on the reporting
// grid, applies the client-side stationarity dedup per participating device,
// buffers offline days, and evolves ground-truth infections: one transmission
// trial per contiguous co-location episode, evaluated at the first sample
// where exactly one side is infectious.
inline SimResult simulate(const SimConfig& cfg) {
  SimResult result;
  result.world = generate_world(cfg);
  const World& w = result.world;
  const std::int64_t x = cfg.report.report_period_x_s;
  const Timestamp end_time = static_cast<Timestamp>(cfg.days) * kSecondsPerDay;
  result.end_time = end_time;
  const std::int64_t n_ticks = end_time / x;

  // --- segment timelines ---------------------------------------------------
  std::vector<std::vector<detail_sim::Segment>> segs(cfg.persons);
  for (int p = 0; p < cfg.persons; ++p) {
    Timestamp free_at = 0;  // end of the previous excursion
    for (int d = 0; d < cfg.days; ++d) {
      const DayPlan& plan = w.plans[p][d];
      if (plan.visits.empty()) continue;
      const Timestamp day0 = static_cast<Timestamp>(d) * kSecondsPerDay;
      const Timestamp day_end = day0 + cfg.day_end_s;
      Timestamp t = std::max(day0 + plan.depart_offset_s, free_at);
      if (t >= day_end) continue;
      GeoPoint pos = w.homes[p];
      bool left_home = false;
      for (const PlannedVisit& v : plan.visits) {
        const GeoPoint dest = w.pois[v.poi].center;
        const auto travel =
            static_cast<Timestamp>(std::ceil(haversine(pos, dest) / cfg.speed_mps));
        if (t + travel >= day_end) break;
        segs[p].push_back({t, t + travel, pos, dest, false, false});
        left_home = true;
        t += travel;
        const Timestamp stay_end = std::min(t + v.duration_s, day_end);
        segs[p].push_back({t, stay_end, dest, dest, true, false});
        t = stay_end;
        pos = dest;
        if (t >= day_end) break;
      }
      if (left_home) {  // walk back
        const auto travel =
            static_cast<Timestamp>(std::ceil(haversine(pos, w.homes[p]) / cfg.speed_mps));
        segs[p].push_back({t, t + travel, pos, w.homes[p], false, true});
        t += travel;
      }
      free_at = t;
    }
  }

  // --- away samples on the tick grid ----------------------------------------
  std::vector<std::vector<detail_sim::TickPos>> by_tick(n_ticks);
  for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(cfg.persons); ++p) {
    for (const detail_sim::Segment& s : segs[p]) {
      // Strictly after the segment start: at the departure instant the person
      // is still at the previous site. Visits include their arrival instant.
      std::int64_t k = s.t0 / x + 1;
      if (s.at_poi && s.t0 % x == 0) k = s.t0 / x;
      const double dist = s.at_poi ? 0.0 : haversine(s.from, s.to);
      for (; k < n_ticks && k * x < s.t1; ++k) {
        const Timestamp t = k * x;
        if (t < s.t0) continue;
        GeoPoint pos = s.to;
        if (!s.at_poi) {
          const double gone = cfg.speed_mps * static_cast<double>(t - s.t0);
          if (dist - gone <= cfg.speed_mps * static_cast<double>(x)) {
            // Inside the final sampling step of the leg: POI-bound legs snap
            // to the destination, home-bound devices are already off.
            if (s.home_bound) continue;
          } else {
            const double f = gone / dist;
            pos = {s.from.lat + (s.to.lat - s.from.lat) * f,
                   s.from.lon + (s.to.lon - s.from.lon) * f};
          }
        }
        by_tick[static_cast<std::size_t>(k)].push_back({p, pos});
      }
    }
  }

  // --- participation, infection state, episode registry ---------------------
  std::vector<char> reports(cfg.persons, 0);
  for (int p = 0; p < cfg.persons; ++p) {
    const bool seeded = p < cfg.initial_patients;  // case trajectories are always on file
    reports[p] =
        (seeded || rng::uniform_once(rng::key(cfg.seed, "participate", p)) < cfg.participation)
            ? 1
            : 0;
  }

  std::vector<Timestamp> infected_at(cfg.persons, -1);
  std::vector<char> infected(cfg.persons, 0);
  for (int p = 0; p < cfg.persons; ++p) {
    if (p < cfg.initial_patients) {
      infected[p] = 1;
      result.truth.true_infected.insert(w.person_ids[p]);
      result.initial_patients.push_back(w.person_ids[p]);
    }
  }

  struct Episode {
    std::int64_t last_tick = -10;
    bool trial_pending = true;
  };
  std::unordered_map<std::uint64_t, Episode> episodes;

  std::vector<StationaryDeduper> dedupers(cfg.persons, StationaryDeduper(cfg.report));
  std::vector<std::vector<std::vector<TrajectoryPoint>>> day_points(
      cfg.persons, std::vector<std::vector<TrajectoryPoint>>(cfg.days));

  // transmission spatial hash: conservative degree sizes for the whole box
  const double eps_cell = std::max(cfg.proximity.epsilon_m, 1.0);
  const double max_abs_lat = std::max(std::abs(cfg.bbox.min_lat), std::abs(cfg.bbox.max_lat));
  const double dlat = eps_cell / kMetersPerDegree * (1.0 + 1e-6);
  const double dlon =
      eps_cell / (kMetersPerDegree * std::cos(deg2rad(std::min(max_abs_lat + 1.0, 89.0)))) *
      (1.0 + 1e-6);

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> tick_pairs;

  for (std::int64_t k = 0; k < n_ticks; ++k) {
    const Timestamp t = k * x;
    const auto& here = by_tick[static_cast<std::size_t>(k)];

    // device reporting
    for (const detail_sim::TickPos& tp : here) {
      if (!reports[tp.person]) continue;
      if (dedupers[tp.person].offer(tp.loc, t)) {
        day_points[tp.person][static_cast<std::size_t>(t / kSecondsPerDay)].push_back(
            {w.person_ids[tp.person], tp.loc, t});
      }
    }

    // co-location pairs via one-tick spatial hash
    cells.clear();
    auto cell_key = [&](const GeoPoint& g) {
      const auto cy = static_cast<std::int64_t>(std::floor(g.lat / dlat));
      const auto cx = static_cast<std::int64_t>(std::floor(g.lon / dlon));
      return (static_cast<std::uint64_t>(cy & 0xffffffffll) << 32) |
             static_cast<std::uint64_t>(cx & 0xffffffffll);
    };
    for (std::uint32_t i = 0; i < here.size(); ++i) cells[cell_key(here[i].loc)].push_back(i);

    tick_pairs.clear();
    for (std::uint32_t i = 0; i < here.size(); ++i) {
      const GeoPoint& gi = here[i].loc;
      const auto cy = static_cast<std::int64_t>(std::floor(gi.lat / dlat));
      const auto cx = static_cast<std::int64_t>(std::floor(gi.lon / dlon));
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const std::uint64_t key = (static_cast<std::uint64_t>((cy + dy) & 0xffffffffll) << 32) |
                                    static_cast<std::uint64_t>((cx + dx) & 0xffffffffll);
          auto it = cells.find(key);
          if (it == cells.end()) continue;
          for (const std::uint32_t j : it->second) {
            if (j <= i) continue;
            if (haversine(gi, here[j].loc) <= cfg.proximity.epsilon_m) {
              tick_pairs.emplace_back(std::min(here[i].person, here[j].person),
                                      std::max(here[i].person, here[j].person));
            }
          }
        }
      }
    }
    std::sort(tick_pairs.begin(), tick_pairs.end());
    tick_pairs.erase(std::unique(tick_pairs.begin(), tick_pairs.end()), tick_pairs.end());

    // episodes + transmission trials (state as of tick start)
    std::vector<std::pair<std::uint32_t, std::uint32_t>> new_infections;  // (source, target)
    for (const auto& [a, b] : tick_pairs) {
      const std::uint64_t key = (static_cast<std::uint64_t>(a) << 32) | b;
      Episode& ep = episodes[key];
      if (ep.last_tick != k - 1) ep.trial_pending = true;  // a fresh episode
      ep.last_tick = k;
      if (!ep.trial_pending) continue;
      if (infected[a] == infected[b]) {
        if (infected[a]) ep.trial_pending = false;  // both already infected
        continue;  // both susceptible: trial waits until one side turns
      }
      ep.trial_pending = false;
      if (rng::uniform_once(rng::key(cfg.seed, "transmission", a, b,
                                     static_cast<std::uint64_t>(k))) < cfg.p_trans) {
        new_infections.emplace_back(infected[a] ? a : b, infected[a] ? b : a);
      }
    }
    for (const auto& [src, dst] : new_infections) {
      if (infected[dst]) continue;  // first successful exposure this tick wins
      infected[dst] = 1;
      infected_at[dst] = t;
      GeoPoint at;
      for (const detail_sim::TickPos& tp : here) {
        if (tp.person == dst) {
          at = tp.loc;
          break;
        }
      }
      result.truth.transmissions.push_back({w.person_ids[src], w.person_ids[dst], at, t});
      result.truth.true_infected.insert(w.person_ids[dst]);
    }
  }

  // --- batching: offline devices hold a day and flush later -----------------
  std::vector<std::vector<TrajectoryPoint>> buffer(cfg.persons);
  for (int d = 0; d < cfg.days; ++d) {
    for (int p = 0; p < cfg.persons; ++p) {
      if (!reports[p]) continue;
      auto& buf = buffer[p];
      auto& today = day_points[p][d];
      buf.insert(buf.end(), today.begin(), today.end());
      today.clear();
      const bool offline =
          rng::uniform_once(rng::key(cfg.seed, "offline", p, d)) < cfg.p_offline;
      if ((d + 1 == cfg.days || !offline) && !buf.empty()) {
        result.batches.push_back({d, w.person_ids[p], std::move(buf)});
        buf.clear();
      }
    }
  }
  return result;
}

// Fraction of the true transmission targets that the classification caught as
// non-seed suspects. 1.0 when there were no transmissions to find.
inline double measure_recall(const Classification& cls, const GroundTruth& gt) {
  std::set<PersonId> targets;
  for (const Transmission& tr : gt.transmissions) targets.insert(tr.target);
  if (targets.empty()) return 1.0;
  std::size_t hit = 0;
  for (const PersonId& t : targets) {
    const auto d = cls.class_of(t);
    if (d && *d >= 1) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(targets.size());
}

// ---------------------------------------------------------------------------
// Formats
// ---------------------------------------------------------------------------

inline constexpr std::string_view kGroundTruthCsvHeader = "source,target,lat,lon,ts";

inline void write_ground_truth_csv(std::ostream& out, const GroundTruth& gt) {
  out << kGroundTruthCsvHeader << '\n';
  for (const Transmission& tr : gt.transmissions) {
    out << tr.source << ',' << tr.target << ',' << format_deg(tr.loc.lat) << ','
        << format_deg(tr.loc.lon) << ',' << tr.time << '\n';
  }
}

inline GroundTruth read_ground_truth_csv(std::istream& in) {
  csv::Reader reader(in, kGroundTruthCsvHeader, "ground truth csv");
  GroundTruth gt;
  std::vector<std::string_view> f;
  while (reader.next(f, 5)) {
    Transmission tr{std::string(f[0]), std::string(f[1]),
                    GeoPoint{csv::parse_double(f[2], "lat"), csv::parse_double(f[3], "lon")},
                    csv::parse_ts(f[4])};
    gt.true_infected.insert(tr.source);
    gt.true_infected.insert(tr.target);
    gt.transmissions.push_back(std::move(tr));
  }
  return gt;
}

inline MetaMap world_meta(const SimConfig& cfg) {
  return MetaMap{{"seed", std::to_string(cfg.seed)},
                 {"persons", std::to_string(cfg.persons)},
                 {"pois", std::to_string(cfg.pois)},
                 {"days", std::to_string(cfg.days)},
                 {"participation", format_fixed(cfg.participation)},
                 {"p_offline", format_fixed(cfg.p_offline)},
                 {"p_trans", format_fixed(cfg.p_trans)},
                 {"initial_patients", std::to_string(cfg.initial_patients)},
                 {"report_period_x", std::to_string(cfg.report.report_period_x_s)},
                 {"stationary_radius_y", format_fixed(cfg.report.stationary_radius_y_m)},
                 {"epsilon", format_fixed(cfg.proximity.epsilon_m)},
                 {"delta_t", std::to_string(cfg.proximity.delta_t_s)},
                 {"bbox", format_deg(cfg.bbox.min_lat) + " " + format_deg(cfg.bbox.min_lon) + " " +
                              format_deg(cfg.bbox.max_lat) + " " + format_deg(cfg.bbox.max_lon)}};
}

}  // namespace epitrack
