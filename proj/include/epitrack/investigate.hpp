#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/format.hpp"
#include "epitrack/store.hpp"

namespace epitrack {

struct InvestigationConfig {
  Timestamp current_date = 0;                        // CD; must equal the snapshot cutoff
  std::int64_t incubation_s = 14 * kSecondsPerDay;   // IP
  ProximityConfig proximity;                         // co-location tolerances
  int alpha = 3;                                     // black-area threshold, >= 1
  std::optional<std::int64_t> black_area_window_s;   // nullopt = unbounded
  bool causal_ordering = false;                      // see classify_suspects
};

inline void check_investigation_config(const InvestigationConfig& cfg) {
  require(cfg.current_date >= 0, Errc::bad_request, "negative current_date");
  require(cfg.incubation_s > 0, Errc::bad_request, "incubation period must be > 0");
  check_proximity(cfg.proximity);
  require(cfg.alpha >= 1, Errc::bad_request, "alpha must be >= 1");
  require(!cfg.black_area_window_s || *cfg.black_area_window_s >= 0, Errc::bad_request,
          "black-area window must be >= 0");
}

struct ClassMember {
  PersonId person;
  Timestamp contact_ts = 0;  // the contact that placed the member; confirmed_at for class 0
};

// Partition of the reachable population into disjoint contact-distance
// classes: class 0 = seeding patients, class d = persons whose shortest
// contact chain to a seed has length d. Unreachable persons are unclassified.
struct Classification {
  Timestamp as_of = 0;
  std::vector<std::vector<ClassMember>> classes;  // classes[d] sorted by person id

  std::optional<int> class_of(const PersonId& person) const {
    for (std::size_t d = 0; d < classes.size(); ++d) {
      const auto& members = classes[d];
      auto it = std::lower_bound(members.begin(), members.end(), person,
                                 [](const ClassMember& m, const PersonId& p) { return m.person < p; });
      if (it != members.end() && it->person == person) return static_cast<int>(d);
    }
    return std::nullopt;
  }

  std::size_t total_classified() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.size();
    return n;
  }
};

struct AreaCount {
  Area area;
  int count = 0;       // distinct confirmed patients seen inside
  bool is_black = false;
};

struct BlackAreaResult {
  std::vector<AreaCount> areas;  // every input area, sorted by area_id

  std::vector<const AreaCount*> black() const {
    std::vector<const AreaCount*> out;
    for (const AreaCount& a : areas) {
      if (a.is_black) out.push_back(&a);
    }
    return out;
  }
};

struct AreaVisit {
  PersonId person;
  Timestamp visit_ts = 0;  // earliest qualifying visit
};

struct SuspectsByArea {
  // one entry per black area, sorted by area_id; visits sorted by person id
  std::vector<std::pair<std::string, std::vector<AreaVisit>>> by_area;

  std::set<PersonId> union_suspects() const {
    std::set<PersonId> out;
    for (const auto& [id, visits] : by_area) {
      (void)id;
      for (const AreaVisit& v : visits) out.insert(v.person);
    }
    return out;
  }
};

struct QueryResponse {
  bool aux = false;                          // suspected in either sense
  std::optional<int> distance_class;         // s, when contact-classified
  std::optional<std::string> black_area_id;  // ba_k, when a black-area visitor
};

namespace detail {

// Contact time of a co-location event: the two observations differ by at most
// delta_t and count as simultaneous; the later one is used everywhere.
inline Timestamp contact_time(Timestamp a, Timestamp b) { return a >= b ? a : b; }

}  // namespace detail

// Multi-source shortest-distance classification over the contact graph whose
// vertices are persons and whose edges are co-location events with contact
// time inside the incubation window (CD - t <= IP). Seeds are the active
// patients; expansion stops at the first empty class. With causal_ordering a
// chain edge must not precede the contact that placed its source.
inline Classification classify_suspects(const StoreSnapshot& snap,
                                        const InvestigationConfig& cfg) {
  check_investigation_config(cfg);
  require(cfg.current_date == snap.as_of(), Errc::bad_request,
          "investigation current_date must equal the snapshot cutoff");

  const auto& persons = snap.persons();
  const std::size_t n = persons.size();
  constexpr Timestamp kUnset = std::numeric_limits<Timestamp>::max();
  const Timestamp window_start = cfg.current_date - cfg.incubation_s;

  std::vector<int> dist(n, -1);
  std::vector<Timestamp> placed_at(n, kUnset);  // contact that placed the person

  Classification result;
  result.as_of = snap.as_of();

  std::vector<std::uint32_t> frontier;
  std::vector<ClassMember> seeds;
  for (const PatientRecord& rec : snap.patients()) {
    if (rec.status != PatientStatus::active) continue;
    const auto ix = snap.person_index(rec.person);
    if (!ix) continue;
    dist[*ix] = 0;
    // Seeds are infectious over their whole stored trajectory; the causal
    // constraint starts binding from class 1 onward.
    placed_at[*ix] = std::numeric_limits<Timestamp>::min();
    frontier.push_back(*ix);
    seeds.push_back({rec.person, rec.confirmed_at});
  }
  require(!seeds.empty(), Errc::no_patients, "no active patients to seed the classification");
  std::sort(frontier.begin(), frontier.end());
  std::sort(seeds.begin(), seeds.end(),
            [](const ClassMember& a, const ClassMember& b) { return a.person < b.person; });
  result.classes.push_back(std::move(seeds));

  std::vector<Timestamp> best(n, kUnset);
  std::vector<std::uint32_t> touched;
  std::vector<std::uint32_t> probe_hits;

  while (!frontier.empty()) {
    touched.clear();
    for (const std::uint32_t u : frontier) {
      for (const PointRec& pu : snap.points_of(u)) {
        // A qualifying edge needs contact_time >= window_start; the partner
        // observation is at most delta_t earlier.
        if (pu.ts < window_start - cfg.proximity.delta_t_s) continue;
        const TrajectoryPoint tu = snap.materialize(pu);
        snap.probe_indices(tu.loc, tu.ts, cfg.proximity, probe_hits);
        for (const std::uint32_t qi : probe_hits) {
          const PointRec& qv = snap.points()[qi];
          if (qv.person == u || dist[qv.person] != -1) continue;
          const Timestamp t = detail::contact_time(pu.ts, qv.ts);
          if (t < window_start) continue;
          if (cfg.causal_ordering && t < placed_at[u]) continue;
          const TrajectoryPoint tq = snap.materialize(qv);
          if (!colocated(tu, tq, cfg.proximity)) continue;
          if (best[qv.person] == kUnset) touched.push_back(qv.person);
          best[qv.person] = std::min(best[qv.person], t);
        }
      }
    }
    if (touched.empty()) break;
    std::sort(touched.begin(), touched.end());
    std::vector<ClassMember> cls;
    cls.reserve(touched.size());
    const int d = static_cast<int>(result.classes.size());
    for (const std::uint32_t v : touched) {
      dist[v] = d;
      placed_at[v] = best[v];
      cls.push_back({persons[v], best[v]});
      best[v] = kUnset;
    }
    frontier = touched;
    result.classes.push_back(std::move(cls));
  }
  return result;
}

// Counts, per predefined area, the distinct confirmed patients (any status)
// with at least one stored observation inside it; areas reaching alpha are
// black. A finite window restricts visit times to [CD - window, CD].
inline BlackAreaResult find_black_areas(const StoreSnapshot& snap, std::span<const Area> areas,
                                        const InvestigationConfig& cfg) {
  check_investigation_config(cfg);
  require(!areas.empty(), Errc::bad_request, "no areas configured");
  const Timestamp window_start =
      cfg.black_area_window_s ? cfg.current_date - *cfg.black_area_window_s
                              : std::numeric_limits<Timestamp>::min();

  std::map<std::string, const Area*> by_id;
  for (const Area& a : areas) {
    check_area(a);
    require(by_id.emplace(a.area_id, &a).second, Errc::bad_request,
            "duplicate area id: " + a.area_id);
  }

  BlackAreaResult result;
  for (const auto& [id, area] : by_id) {
    (void)id;
    int count = 0;
    for (const PatientRecord& rec : snap.patients()) {
      const auto ix = snap.person_index(rec.person);
      if (!ix) continue;
      bool visited = false;
      for (const PointRec& p : snap.points_of(*ix)) {
        if (p.ts < window_start) continue;
        if (area_contains(*area, p.loc())) {
          visited = true;
          break;
        }
      }
      if (visited) ++count;
    }
    result.areas.push_back({*area, count, count >= cfg.alpha});
  }
  return result;
}

// Per black area, every non-patient person with at least one observation
// inside it (within the window), carrying the earliest qualifying visit time.
inline SuspectsByArea suspects_from_black_areas(const StoreSnapshot& snap,
                                                const BlackAreaResult& ba,
                                                const InvestigationConfig& cfg) {
  check_investigation_config(cfg);
  const Timestamp window_start =
      cfg.black_area_window_s ? cfg.current_date - *cfg.black_area_window_s
                              : std::numeric_limits<Timestamp>::min();

  std::set<std::uint32_t> patient_ix;
  for (const PatientRecord& rec : snap.patients()) {
    if (auto ix = snap.person_index(rec.person)) patient_ix.insert(*ix);
  }

  SuspectsByArea result;
  for (const AreaCount& ac : ba.areas) {
    if (!ac.is_black) continue;
    std::vector<AreaVisit> visits;
    for (std::uint32_t person = 0; person < snap.persons().size(); ++person) {
      if (patient_ix.count(person)) continue;
      Timestamp first = std::numeric_limits<Timestamp>::max();
      for (const PointRec& p : snap.points_of(person)) {
        if (p.ts < window_start || p.ts >= first) continue;
        if (area_contains(ac.area, p.loc())) first = p.ts;
      }
      if (first != std::numeric_limits<Timestamp>::max()) {
        visits.push_back({snap.persons()[person], first});
      }
    }
    result.by_area.emplace_back(ac.area.area_id, std::move(visits));
  }
  return result;
}

// Answers the client protocol: the caller learns only their own distance
// class and/or one black-area id, never another person's identity.
inline QueryResponse query_person(const PersonId& person, const StoreSnapshot& snap,
                                  const Classification& cls, const SuspectsByArea& sba) {
  check_person_id(person);
  require(snap.person_index(person).has_value(), Errc::unknown_person,
          person + " has never appeared in trajectories or patient records");
  QueryResponse resp;
  resp.distance_class = cls.class_of(person);
  for (const auto& [area_id, visits] : sba.by_area) {  // by_area sorted by id
    const bool hit = std::any_of(visits.begin(), visits.end(),
                                 [&](const AreaVisit& v) { return v.person == person; });
    if (hit) {
      resp.black_area_id = area_id;
      break;
    }
  }
  resp.aux = resp.distance_class.has_value() || resp.black_area_id.has_value();
  return resp;
}

// One investigation = classify, then black areas, then their visitors, all on
// one immutable snapshot.
struct InvestigationResult {
  InvestigationConfig config;
  Classification classification;
  BlackAreaResult black_areas;
  SuspectsByArea suspects;
};

inline InvestigationResult run_investigation(const StoreSnapshot& snap,
                                             std::span<const Area> areas,
                                             const InvestigationConfig& cfg) {
  InvestigationResult r;
  r.config = cfg;
  r.classification = classify_suspects(snap, cfg);
  if (!areas.empty()) {
    r.black_areas = find_black_areas(snap, areas, cfg);
    r.suspects = suspects_from_black_areas(snap, r.black_areas, cfg);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Formats
// ---------------------------------------------------------------------------

inline constexpr std::string_view kAreasCsvHeader = "area_id,lat,lon,radius_m";
inline constexpr std::string_view kClassesCsvHeader = "person_id,distance_class,contact_ts";
inline constexpr std::string_view kBlackAreasCsvHeader = "area_id,count,is_black";
inline constexpr std::string_view kSuspectsCsvHeader = "area_id,person_id,visit_ts";

inline std::vector<Area> read_areas_csv(std::istream& in) {
  csv::Reader reader(in, kAreasCsvHeader, "areas csv");
  std::vector<Area> out;
  std::vector<std::string_view> f;
  while (reader.next(f, 4)) {
    Area a{std::string(f[0]),
           GeoPoint{csv::parse_double(f[1], "lat"), csv::parse_double(f[2], "lon")},
           csv::parse_double(f[3], "radius_m")};
    check_area(a);
    out.push_back(std::move(a));
  }
  return out;
}

inline void write_areas_csv(std::ostream& out, std::span<const Area> areas) {
  out << kAreasCsvHeader << '\n';
  for (const Area& a : areas) {
    out << a.area_id << ',' << format_deg(a.center.lat) << ',' << format_deg(a.center.lon) << ','
        << format_fixed(a.radius_m, 1) << '\n';
  }
}

inline void write_classes_csv(std::ostream& out, const Classification& cls) {
  out << kClassesCsvHeader << '\n';
  for (std::size_t d = 0; d < cls.classes.size(); ++d) {
    for (const ClassMember& m : cls.classes[d]) {
      out << m.person << ',' << d << ',' << m.contact_ts << '\n';
    }
  }
}

inline Classification read_classes_csv(std::istream& in) {
  csv::Reader reader(in, kClassesCsvHeader, "classes csv");
  Classification cls;
  std::vector<std::string_view> f;
  while (reader.next(f, 3)) {
    const auto d = static_cast<std::size_t>(csv::parse_int(f[1], "distance_class"));
    require(d <= 100000, Errc::bad_request, "implausible distance class");
    if (cls.classes.size() <= d) cls.classes.resize(d + 1);
    cls.classes[d].push_back({std::string(f[0]), csv::parse_ts(f[2])});
  }
  return cls;
}

inline void write_black_areas_csv(std::ostream& out, const BlackAreaResult& ba) {
  out << kBlackAreasCsvHeader << '\n';
  for (const AreaCount& a : ba.areas) {
    out << a.area.area_id << ',' << a.count << ',' << (a.is_black ? "true" : "false") << '\n';
  }
}

inline void write_suspects_csv(std::ostream& out, const SuspectsByArea& sba) {
  out << kSuspectsCsvHeader << '\n';
  for (const auto& [area_id, visits] : sba.by_area) {
    for (const AreaVisit& v : visits) {
      out << area_id << ',' << v.person << ',' << v.visit_ts << '\n';
    }
  }
}

inline SuspectsByArea read_suspects_csv(std::istream& in) {
  csv::Reader reader(in, kSuspectsCsvHeader, "suspects csv");
  SuspectsByArea sba;
  std::vector<std::string_view> f;
  while (reader.next(f, 3)) {
    const std::string area(f[0]);
    if (sba.by_area.empty() || sba.by_area.back().first != area) {
      sba.by_area.emplace_back(area, std::vector<AreaVisit>{});
    }
    sba.by_area.back().second.push_back({std::string(f[1]), csv::parse_ts(f[2])});
  }
  return sba;
}

}  // namespace epitrack
