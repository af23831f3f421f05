#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "epitrack/core.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/format.hpp"
#include "epitrack/investigate.hpp"
#include "epitrack/store.hpp"

namespace epitrack {

struct ContactStats {
  Timestamp window_start = 0;
  Timestamp window_end = 0;
  double contacts_per_infective_per_day = 0.0;
  std::int64_t distinct_pairs = 0;
  int infective_count = 0;
};

struct EpiEstimate {
  double beta_hat = 0.0;   // observed contact rate x transmission probability
  double theta_hat = 0.0;  // detected / (detected + undetected), in [0, 1]
  std::int64_t iu_size = 0;  // classified suspects outside class 0
};

struct EpiParams {
  double beta = 0.0;    // per-day transmission rate
  double gamma = 0.1;   // per-day recovery rate
  double sigma = 0.2;   // per-day latency rate (SEIR only)
  double p_trans = 1.0; // transmission probability per contact
};

struct CompartmentState {
  double S = 0.0;
  double E = 0.0;  // zero in SIR mode
  double I = 0.0;
  double R = 0.0;
  double N = 0.0;
};

struct SeriesPoint {
  double t_days = 0.0;
  CompartmentState state;
};

// Observed contact rate of the confirmed infectives over the incubation
// window, scaled by the per-contact transmission probability; plus the
// detected-fraction estimate derived from the classification.
inline std::pair<ContactStats, EpiEstimate> estimate_contact_rate(const StoreSnapshot& snap,
                                                                  const Classification& cls,
                                                                  const InvestigationConfig& cfg,
                                                                  double p_trans) {
  check_investigation_config(cfg);
  require(p_trans >= 0.0 && p_trans <= 1.0, Errc::bad_request, "p_trans out of [0, 1]");
  require(!cls.classes.empty() && !cls.classes[0].empty(), Errc::empty_window,
          "no infectives in window");

  const Timestamp window_start = cfg.current_date - cfg.incubation_s;
  const double window_days = static_cast<double>(cfg.incubation_s) / kSecondsPerDay;

  std::set<std::uint32_t> infectives;
  for (const ClassMember& m : cls.classes[0]) {
    if (auto ix = snap.person_index(m.person)) infectives.insert(*ix);
  }
  require(!infectives.empty(), Errc::empty_window, "no infectives in window");

  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<std::uint32_t> hits;
  for (const std::uint32_t u : infectives) {
    for (const PointRec& pu : snap.points_of(u)) {
      if (pu.ts < window_start - cfg.proximity.delta_t_s) continue;
      const TrajectoryPoint tu = snap.materialize(pu);
      snap.probe_indices(tu.loc, tu.ts, cfg.proximity, hits);
      for (const std::uint32_t qi : hits) {
        const PointRec& qv = snap.points()[qi];
        if (qv.person == u) continue;
        if (detail::contact_time(pu.ts, qv.ts) < window_start) continue;
        if (!colocated(tu, snap.materialize(qv), cfg.proximity)) continue;
        pairs.emplace(std::min(u, qv.person), std::max(u, qv.person));
      }
    }
  }

  ContactStats stats;
  stats.window_start = window_start;
  stats.window_end = cfg.current_date;
  stats.distinct_pairs = static_cast<std::int64_t>(pairs.size());
  stats.infective_count = static_cast<int>(infectives.size());
  stats.contacts_per_infective_per_day =
      static_cast<double>(stats.distinct_pairs) / (stats.infective_count * window_days);

  EpiEstimate est;
  est.beta_hat = stats.contacts_per_infective_per_day * p_trans;
  const auto detected = static_cast<std::int64_t>(cls.classes[0].size());
  est.iu_size = static_cast<std::int64_t>(cls.total_classified()) - detected;
  est.theta_hat = static_cast<double>(detected) / static_cast<double>(detected + est.iu_size);
  return {stats, est};
}

namespace detail {

struct Rates {
  double dS, dE, dI, dR;
};

template <typename Rhs>
inline std::vector<SeriesPoint> integrate_rk4(const CompartmentState& init, double horizon_days,
                                              double step_days, int record_every, Rhs rhs) {
  require(step_days > 0.0 && std::isfinite(step_days), Errc::bad_request, "step must be > 0");
  require(horizon_days >= 0.0 && std::isfinite(horizon_days), Errc::bad_request,
          "horizon must be >= 0");
  require(record_every >= 1, Errc::bad_request, "record_every must be >= 1");
  require(init.N > 0.0, Errc::bad_request, "population must be > 0");
  require(init.S >= 0.0 && init.E >= 0.0 && init.I >= 0.0 && init.R >= 0.0, Errc::bad_request,
          "compartments must be >= 0");
  require(std::abs(init.S + init.E + init.I + init.R - init.N) <= 1e-6 * init.N,
          Errc::bad_request, "initial state must satisfy S+E+I+R = N");

  const double tol = 1e-6 * init.N + 1e-9;
  auto checked = [&](const CompartmentState& y, double t) {
    const bool ok = std::isfinite(y.S) && std::isfinite(y.E) && std::isfinite(y.I) &&
                    std::isfinite(y.R) && y.S >= -tol && y.E >= -tol && y.I >= -tol &&
                    y.R >= -tol && y.S <= init.N + tol && y.E <= init.N + tol &&
                    y.I <= init.N + tol && y.R <= init.N + tol;
    require(ok, Errc::non_finite_state,
            "integration left the valid state region at t = " + format_fixed(t, 6));
  };

  auto advance = [&](const CompartmentState& y, double h) {
    auto add = [](const CompartmentState& s, const Rates& r, double f) {
      CompartmentState o = s;
      o.S += f * r.dS;
      o.E += f * r.dE;
      o.I += f * r.dI;
      o.R += f * r.dR;
      return o;
    };
    const Rates k1 = rhs(y);
    const Rates k2 = rhs(add(y, k1, h / 2.0));
    const Rates k3 = rhs(add(y, k2, h / 2.0));
    const Rates k4 = rhs(add(y, k3, h));
    CompartmentState o = y;
    o.S += h / 6.0 * (k1.dS + 2.0 * k2.dS + 2.0 * k3.dS + k4.dS);
    o.E += h / 6.0 * (k1.dE + 2.0 * k2.dE + 2.0 * k3.dE + k4.dE);
    o.I += h / 6.0 * (k1.dI + 2.0 * k2.dI + 2.0 * k3.dI + k4.dI);
    o.R += h / 6.0 * (k1.dR + 2.0 * k2.dR + 2.0 * k3.dR + k4.dR);
    return o;
  };

  std::vector<SeriesPoint> series;
  CompartmentState y = init;
  double t = 0.0;
  series.push_back({0.0, y});
  const auto n_full = static_cast<std::int64_t>(std::floor(horizon_days / step_days + 1e-12));
  for (std::int64_t k = 1; k <= n_full; ++k) {
    y = advance(y, step_days);
    t = static_cast<double>(k) * step_days;
    checked(y, t);
    if (k % record_every == 0 && !(k == n_full && horizon_days - t <= 1e-12 * horizon_days)) {
      series.push_back({t, y});
    }
  }
  const double rem = horizon_days - static_cast<double>(n_full) * step_days;
  if (rem > 1e-12 * std::max(1.0, horizon_days)) {
    y = advance(y, rem);
    checked(y, horizon_days);
  }
  if (horizon_days > 0.0) series.push_back({horizon_days, y});
  return series;
}

}  // namespace detail

// Kermack-McKendrick SIR, fixed-step RK4:
//   dS = -beta*S*I/N, dI = beta*S*I/N - gamma*I, dR = gamma*I.
// The series always contains t = 0 and t = horizon; record_every thins the
// interior samples.
inline std::vector<SeriesPoint> simulate_sir(const EpiParams& params, const CompartmentState& init,
                                             double horizon_days, double step_days,
                                             int record_every = 1) {
  require(params.beta >= 0.0 && params.gamma > 0.0, Errc::bad_request,
          "SIR needs beta >= 0 and gamma > 0");
  require(init.E == 0.0, Errc::bad_request, "SIR mode has no E compartment");
  return detail::integrate_rk4(init, horizon_days, step_days, record_every,
                               [&](const CompartmentState& y) {
                                 const double inf = params.beta * y.S * y.I / y.N;
                                 return detail::Rates{-inf, 0.0, inf - params.gamma * y.I,
                                                      params.gamma * y.I};
                               });
}

// SEIR adds a latency compartment: dE = beta*S*I/N - sigma*E, dI = sigma*E - gamma*I.
inline std::vector<SeriesPoint> simulate_seir(const EpiParams& params, const CompartmentState& init,
                                              double horizon_days, double step_days,
                                              int record_every = 1) {
  require(params.beta >= 0.0 && params.gamma > 0.0 && params.sigma > 0.0, Errc::bad_request,
          "SEIR needs beta >= 0, gamma > 0 and sigma > 0");
  return detail::integrate_rk4(init, horizon_days, step_days, record_every,
                               [&](const CompartmentState& y) {
                                 const double inf = params.beta * y.S * y.I / y.N;
                                 return detail::Rates{-inf, inf - params.sigma * y.E,
                                                      params.sigma * y.E - params.gamma * y.I,
                                                      params.gamma * y.I};
                               });
}

inline constexpr std::string_view kSeriesCsvHeader = "t_days,S,E,I,R";

inline void write_series_csv(std::ostream& out, std::span<const SeriesPoint> series) {
  out << kSeriesCsvHeader << '\n';
  for (const SeriesPoint& p : series) {
    out << format_fixed(p.t_days, 6) << ',' << format_fixed(p.state.S, 6) << ','
        << format_fixed(p.state.E, 6) << ',' << format_fixed(p.state.I, 6) << ','
        << format_fixed(p.state.R, 6) << '\n';
  }
}

}  // namespace epitrack
