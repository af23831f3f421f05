#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include "epitrack/core.hpp"
#include "epitrack/epi.hpp"
#include "epitrack/errors.hpp"
#include "epitrack/investigate.hpp"
#include "epitrack/store.hpp"
#include "epitrack/workspace.hpp"

#include "httplib.h"
#include "json.hpp"

namespace epitrack {

struct ApiError {
  std::string code;  // conflicting_duplicate | unknown_person | no_patients |
                     // illegal_transition | bad_request
  std::string message;
  int http_status = 400;
};

// Collapses internal error codes onto the fixed public enumeration.
inline ApiError to_api_error(const Error& e) {
  switch (e.code()) {
    case Errc::conflicting_duplicate: return {"conflicting_duplicate", e.what(), 409};
    case Errc::unknown_person: return {"unknown_person", e.what(), 404};
    case Errc::no_patients:
    case Errc::empty_window: return {"no_patients", e.what(), 409};
    case Errc::illegal_transition:
    case Errc::duplicate_report: return {"illegal_transition", e.what(), 409};
    case Errc::bad_request:
    case Errc::non_finite_state:
    case Errc::unsorted_input: return {"bad_request", e.what(), 400};
  }
  return {"bad_request", e.what(), 400};
}

namespace detail_http {

inline void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

inline void send_error(httplib::Response& res, const ApiError& e) {
  send_json(res, nlohmann::json{{"code", e.code}, {"message", e.message}}, e.http_status);
}

template <typename Fn>
inline void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, to_api_error(e));
  } catch (const nlohmann::json::exception& e) {
    send_error(res, {"bad_request", e.what(), 400});
  } catch (const std::exception& e) {
    send_error(res, {"bad_request", e.what(), 400});
  }
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  nlohmann::json j = nlohmann::json::parse(req.body, nullptr, false);
  require(!j.is_discarded() && j.is_object(), Errc::bad_request, "body is not a JSON object");
  return j;
}

}  // namespace detail_http

// Wires the HTTP surface onto a workspace. Endpoints:
//   POST /v1/points               JSONL body -> {accepted, duplicates, filtered}
//   POST /v1/intervals            JSONL body -> {accepted, duplicates, filtered}
//   GET  /v1/patients             patient table
//   POST /v1/patients             {person_id, confirmed_at}
//   POST /v1/patients/{id}/status {status}
//   POST /v1/investigations       investigation params -> {investigation_id}
//   GET  /v1/investigations       id list
//   GET  /v1/investigations/{id}/classes|black-areas|suspects-by-area  [?format=json]
//   GET  /v1/query/{person_id}?investigation={id}
//   GET  /v1/epi/estimate?investigation={id}&p_trans=...
//   POST /v1/epi/simulate         {model, params, init, horizon, step}
//   GET  /v1/status
class Service {
 public:
  explicit Service(Workspace& ws) : ws_(ws) {}

  void register_routes(httplib::Server& srv) {
    using httplib::Request;
    using httplib::Response;
    namespace dh = detail_http;
    using nlohmann::json;

    srv.Post("/v1/points", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        std::istringstream body(req.body);
        const auto points = read_points_jsonl(body);
        const IngestReport r = ws_.ingest_points(points);
        dh::send_json(res, json{{"accepted", r.accepted},
                                {"duplicates", r.duplicates},
                                {"filtered", r.filtered}});
      });
    });

    srv.Post("/v1/intervals", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        std::vector<IntervalRow> rows;
        std::istringstream body(req.body);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(body, line)) {
          ++line_no;
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (line.empty()) continue;
          json j = json::parse(line, nullptr, false);
          require(!j.is_discarded() && j.is_object(), Errc::bad_request,
                  "intervals jsonl line " + std::to_string(line_no) + ": not a JSON object");
          require(j.contains("person_id") && j.contains("area_id") && j.contains("entry_ts") &&
                      j.contains("exit_ts"),
                  Errc::bad_request,
                  "intervals jsonl line " + std::to_string(line_no) + ": missing fields");
          IntervalRow row{j.at("person_id").get<std::string>(), j.at("area_id").get<std::string>(),
                          j.at("entry_ts").get<Timestamp>(), j.at("exit_ts").get<Timestamp>()};
          require(row.entry >= 0 && row.entry < row.exit, Errc::bad_request,
                  "intervals jsonl line " + std::to_string(line_no) + ": entry must be < exit");
          rows.push_back(std::move(row));
        }
        const IngestReport r = ws_.ingest_intervals(rows);
        dh::send_json(res, json{{"accepted", r.accepted},
                                {"duplicates", r.duplicates},
                                {"filtered", r.filtered}});
      });
    });

    srv.Get("/v1/patients", [this](const Request&, Response& res) {
      dh::guarded(res, [&] {
        const StoreSnapshot snap = ws_.store().snapshot(ws_.store().latest_time());
        json arr = json::array();
        for (const PatientRecord& r : snap.patients()) {
          arr.push_back(json{{"person_id", r.person},
                             {"status", std::string(to_string(r.status))},
                             {"confirmed_at", r.confirmed_at}});
        }
        dh::send_json(res, arr);
      });
    });

    srv.Post("/v1/patients", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        const json j = dh::parse_body(req);
        require(j.contains("person_id") && j.contains("confirmed_at"), Errc::bad_request,
                "expected {person_id, confirmed_at}");
        require(j.at("confirmed_at").is_number_integer(), Errc::bad_request,
                "confirmed_at must be integer epoch seconds");
        const auto person = j.at("person_id").get<std::string>();
        const auto at = j.at("confirmed_at").get<Timestamp>();
        ws_.report_patient(person, at);
        dh::send_json(res,
                      json{{"person_id", person}, {"status", "active"}, {"confirmed_at", at}});
      });
    });

    srv.Post(R"(/v1/patients/([^/]+)/status)", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        const json j = dh::parse_body(req);
        require(j.contains("status"), Errc::bad_request, "expected {status}");
        const PersonId person = req.matches[1];
        const PatientStatus status = parse_patient_status(j.at("status").get<std::string>());
        ws_.update_status(person, status);
        dh::send_json(res, json{{"person_id", person},
                                {"status", std::string(to_string(status))}});
      });
    });

    srv.Post("/v1/investigations", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        const json j = dh::parse_body(req);
        InvestigationConfig cfg;
        cfg.current_date =
            j.contains("as_of") ? j.at("as_of").get<Timestamp>() : ws_.store().latest_time();
        const double ip_days = j.value("ip_days", 14.0);
        require(ip_days > 0.0, Errc::bad_request, "ip_days must be > 0");
        cfg.incubation_s = static_cast<std::int64_t>(std::llround(ip_days * kSecondsPerDay));
        cfg.proximity.epsilon_m = j.value("epsilon_m", 2.0);
        cfg.proximity.delta_t_s = j.value("delta_t_s", static_cast<std::int64_t>(300));
        cfg.alpha = j.value("alpha", 3);
        if (j.contains("black_area_window_s") && !j.at("black_area_window_s").is_null()) {
          cfg.black_area_window_s = j.at("black_area_window_s").get<std::int64_t>();
        }
        cfg.causal_ordering = j.value("causal", false);
        dh::send_json(res, json{{"investigation_id", ws_.run_investigation(cfg)}});
      });
    });

    srv.Get("/v1/investigations", [this](const Request&, Response& res) {
      dh::guarded(res, [&] { dh::send_json(res, json(ws_.investigation_ids())); });
    });

    srv.Get(R"(/v1/investigations/([^/]+)/(classes|black-areas|suspects-by-area))",
            [this](const Request& req, Response& res) {
              dh::guarded(res, [&] {
                const std::string id = req.matches[1];
                const std::string what = req.matches[2];
                const std::string file = what == "classes"        ? "classes.csv"
                                         : what == "black-areas"  ? "black_areas.csv"
                                                                  : "suspects.csv";
                const std::string csv = read_file(ws_.investigation_path(id, file));
                if (req.get_param_value("format") == "json") {
                  dh::send_json(res, csv_to_json(csv));
                } else {
                  res.set_content(csv, "text/csv");
                }
              });
            });

    srv.Get(R"(/v1/query/([^/]+))", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        const PersonId person = req.matches[1];
        const std::string id = req.has_param("investigation")
                                   ? req.get_param_value("investigation")
                                   : ws_.latest_investigation_id();
        auto inv = ws_.load_investigation(id);
        const QueryResponse q = query_person(person, inv.snapshot, inv.classification,
                                             inv.suspects);
        json j{{"aux", q.aux}, {"s", nullptr}, {"ba_k", nullptr}};
        if (q.distance_class) j["s"] = *q.distance_class;
        if (q.black_area_id) j["ba_k"] = *q.black_area_id;
        dh::send_json(res, j);
      });
    });

    srv.Get("/v1/epi/estimate", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        const std::string id = req.has_param("investigation")
                                   ? req.get_param_value("investigation")
                                   : ws_.latest_investigation_id();
        double p_trans = 1.0;
        if (req.has_param("p_trans")) {
          p_trans = csv::parse_double(req.get_param_value("p_trans"), "p_trans");
        }
        auto inv = ws_.load_investigation(id);
        const auto [stats, est] =
            estimate_contact_rate(inv.snapshot, inv.classification, inv.config, p_trans);
        dh::send_json(
            res,
            json{{"investigation_id", id},
                 {"window", json{{"start", stats.window_start}, {"end", stats.window_end}}},
                 {"distinct_pairs", stats.distinct_pairs},
                 {"infective_count", stats.infective_count},
                 {"contacts_per_infective_per_day", stats.contacts_per_infective_per_day},
                 {"p_trans", p_trans},
                 {"beta_hat", est.beta_hat},
                 {"theta_hat", est.theta_hat},
                 {"iu_size", est.iu_size}});
      });
    });

    srv.Post("/v1/epi/simulate", [this](const Request& req, Response& res) {
      dh::guarded(res, [&] {
        const json j = dh::parse_body(req);
        const std::string model = j.value("model", "sir");
        require(model == "sir" || model == "seir", Errc::bad_request,
                "model must be \"sir\" or \"seir\"");
        EpiParams params;
        const json pj = j.value("params", json::object());
        params.beta = pj.value("beta", 0.0);
        params.gamma = pj.value("gamma", 0.1);
        params.sigma = pj.value("sigma", 0.2);
        CompartmentState init;
        const json ij = j.value("init", json::object());
        init.N = ij.value("N", 0.0);
        init.I = ij.value("I", 0.0);
        init.E = ij.value("E", 0.0);
        init.R = ij.value("R", 0.0);
        init.S = ij.contains("S") ? ij.at("S").get<double>() : init.N - init.E - init.I - init.R;
        const double horizon = j.value("horizon", 0.0);
        const double step = j.value("step", 0.0);
        const int record_every = j.value("record_every", 1);
        const auto series = model == "sir"
                                ? simulate_sir(params, init, horizon, step, record_every)
                                : simulate_seir(params, init, horizon, step, record_every);
        json arr = json::array();
        for (const SeriesPoint& p : series) {
          arr.push_back(json{{"t_days", p.t_days},
                             {"S", p.state.S},
                             {"E", p.state.E},
                             {"I", p.state.I},
                             {"R", p.state.R}});
        }
        dh::send_json(res, json{{"model", model}, {"series", arr}});
      });
    });

    srv.Get("/v1/status", [this](const Request&, Response& res) {
      dh::guarded(res, [&] {
        dh::send_json(res, json{{"points", ws_.store().point_count()},
                                {"patients", ws_.store().patient_count()},
                                {"areas", ws_.areas().size()},
                                {"zones", ws_.zones().size()},
                                {"investigations", ws_.investigation_ids()}});
      });
    });
  }

 private:
  // Lossless view of an export CSV as an array of objects (dashboard food).
  static nlohmann::json csv_to_json(const std::string& csv) {
    nlohmann::json rows = nlohmann::json::array();
    std::istringstream in(csv);
    std::string line;
    std::vector<std::string> header;
    std::vector<std::string_view> fields;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      csv::split(line, fields);
      if (header.empty()) {
        header.assign(fields.begin(), fields.end());
        continue;
      }
      nlohmann::json row;
      for (std::size_t i = 0; i < header.size() && i < fields.size(); ++i) {
        row[header[i]] = std::string(fields[i]);
      }
      rows.push_back(std::move(row));
    }
    return rows;
  }

  Workspace& ws_;
};

}  // namespace epitrack
