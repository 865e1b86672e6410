#include "prescribe/http_api.h"

#include <atomic>
#include <cmath>

#include "httplib.h"
#include "prescribe/error.h"
#include "prescribe/textio.h"

namespace prescribe::http {

int status_for(const std::string& kind) {
  if (kind == "UnknownCase") return 404;
  if (kind == "PolicyMissing" || kind == "NotApplicable" || kind == "OutOfOrderEvent") return 409;
  if (kind == "UnknownModel") return 503;
  if (kind == "TargetUnreachable" || kind == "GainMismatch") return 422;
  if (kind == "NotFound") return 404;
  if (kind == "IoError") return 500;
  return 400;
}

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& kind, const std::string& message) {
  send_json(res, {{"error", kind}, {"message", message}}, status_for(kind));
}

json parse_body(const httplib::Request& req) {
  if (trim(req.body).empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed JSON body: ") + e.what());
  }
}

std::uint64_t parse_sequence(const std::string& text) {
  const auto v = parse_int(trim(text));
  if (!v || *v < 0) throw ConfigError("sequence must be a non-negative integer");
  return static_cast<std::uint64_t>(*v);
}

}  // namespace

struct ApiServer::Impl {
  service::Engine& engine;
  ApiOptions options;
  httplib::Server server;
  std::optional<json> curves_json;
  std::optional<policy::QiniCurve> curve;
  std::atomic<bool> stopping{false};

  Impl(service::Engine& e, ApiOptions o) : engine(e), options(std::move(o)) {
    if (options.curves) {
      try {
        curves_json = json::parse(read_file(*options.curves));
      } catch (const json::exception& ex) {
        throw ConfigError("curves file " + options.curves->string() + ": " + ex.what());
      }
      curve = policy::curve_from_json(*curves_json);
    }
    routes();
  }

  // Wraps a handler so library errors become {"error", "message"} bodies.
  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e.kind(), e.what());
      } catch (const json::exception& e) {
        send_error(res, "ConfigError", e.what());
      } catch (const std::exception& e) {
        send_error(res, "InternalError", e.what());
        res.status = 500;
      }
    };
  }

  policy::Policy policy_from_request(const json& body) {
    // {"select": "auto" | "target", "cost": {...}, "target_gain": g}
    if (body.contains("select")) {
      if (!curve) throw ConfigError("server has no curves; commit an explicit threshold");
      policy::CostModel cost{body.at("cost").at("v").get<double>(), body.at("cost").at("c").get<double>()};
      std::optional<double> target;
      const auto mode = body.at("select").get<std::string>();
      if (mode == "target") target = body.at("target_gain").get<double>();
      else if (mode != "auto") throw ConfigError("select must be auto or target");
      auto p = policy::select_policy(*curve, policy::net_value_curve(*curve, cost), cost, target);
      p.curve_hash = curves_json->at("curve_hash").get<std::string>();
      return p;
    }
    auto p = policy::policy_from_json(body);
    if (curves_json) {
      const auto hash = curves_json->at("curve_hash").get<std::string>();
      if (p.curve_hash.empty()) p.curve_hash = hash;
      else if (p.curve_hash != hash)
        throw ConfigError("policy was derived from curve " + p.curve_hash + ", server holds " + hash);
    }
    if (p.kind == policy::ThresholdKind::kTopFraction) {
      if (!curve) throw ConfigError("top_fraction policies need the server's curves");
      p = policy::resolve_top_fraction(*curve, p);
      // Spot-check a client-computed gain against the served points.
      if (body.contains("expected_gain")) {
        const auto net = policy::net_value_curve(*curve, p.cost);
        for (const auto& pt : net) {
          if (std::abs(pt.n_percent - 100 * p.top_fraction) > 1e-9) continue;
          const double scale = std::max(1.0, std::abs(pt.gain));
          if (std::abs(pt.gain - p.expected_gain) > 1e-6 * scale)
            throw Error("GainMismatch", "client gain " + format_double(p.expected_gain) + " differs from server gain " +
                                            format_double(pt.gain));
        }
      }
    }
    return p;
  }

  void routes() {
    server.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto p = engine.current_policy();
      send_json(res, {{"status", "ok"},
                      {"model_loaded", engine.has_model()},
                      {"dictionary_hash", engine.has_model() ? hex64(engine.dictionary().hash()) : ""},
                      {"policy_version", p ? json(p->version) : json(nullptr)},
                      {"cases", engine.cases().size()},
                      {"last_sequence", engine.last_sequence()},
                      {"curves_loaded", curves_json.has_value()}});
    }));

    server.Post("/cases/:id/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& id = req.path_params.at("id");
      const json body = parse_body(req);
      const auto attrs = service::attributes_from_json(body.value("case_attributes", json()));
      service::CaseState state;
      if (body.contains("events")) {
        if (!body["events"].is_array()) throw ConfigError("events must be an array");
        std::vector<eventlog::Event> events;
        for (const auto& e : body["events"]) events.push_back(service::event_from_json(id, e));
        for (auto& e : events) state = engine.ingest(id, std::move(e), attrs);
      } else {
        state = engine.ingest(id, service::event_from_json(id, body), attrs);
      }
      send_json(res, service::to_json(state));
    }));

    server.Post("/cases/:id/close", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      std::optional<Instant> end;
      if (body.contains("end") && !body["end"].is_null())
        end = service::required_timestamp(body["end"].get<std::string>());
      send_json(res, service::to_json(engine.close(req.path_params.at("id"), end)));
    }));

    server.Get("/cases/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, service::to_json(engine.case_state(req.path_params.at("id")), true));
    }));

    server.Get("/cases/:id/recommendation", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, service::to_json(engine.recommend(req.path_params.at("id"))));
    }));

    server.Get("/cases", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<service::CaseStatus> status;
      if (req.has_param("status")) status = service::parse_case_status(req.get_param_value("status"));
      json out = json::array();
      for (const auto& s : engine.cases(status)) out.push_back(service::to_json(s));
      send_json(res, out);
    }));

    server.Get("/audit", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::uint64_t after = req.has_param("after") ? parse_sequence(req.get_param_value("after")) : 0;
      json out = json::array();
      for (const auto& r : engine.audit(after)) out.push_back(service::to_json(r));
      send_json(res, out);
    }));

    server.Get("/curves", guarded([this](const httplib::Request&, httplib::Response& res) {
      if (!curves_json) throw Error("NotFound", "no curves loaded");
      send_json(res, *curves_json);
    }));

    server.Get("/policy", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto p = engine.current_policy();
      if (!p) throw PolicyMissing("no policy committed");
      send_json(res, policy::to_json(*p));
    }));

    server.Get("/policy/history", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& p : engine.policy_history()) out.push_back(policy::to_json(p));
      send_json(res, out);
    }));

    server.Post("/policy", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto committed = engine.commit_policy(policy_from_request(parse_body(req)));
      send_json(res, policy::to_json(committed), 201);
    }));

    server.Get("/stream", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t after = 0;
      try {
        if (req.has_header("Last-Event-ID")) after = parse_sequence(req.get_header_value("Last-Event-ID"));
        else if (req.has_param("after")) after = parse_sequence(req.get_param_value("after"));
      } catch (const Error& e) {
        send_error(res, e.kind(), e.what());
        return;
      }
      res.set_header("Cache-Control", "no-cache");
      auto cursor = std::make_shared<std::uint64_t>(after);
      res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
        if (stopping) return false;
        const auto recs = engine.wait_for(*cursor, options.stream_heartbeat);
        if (stopping) return false;
        std::string chunk;
        for (const auto& r : recs) {
          chunk += "id: " + std::to_string(r.sequence) + "\nevent: recommendation\ndata: " +
                   service::to_json(r).dump() + "\n\n";
          *cursor = r.sequence;
        }
        if (chunk.empty()) chunk = ": keep-alive\n\n";
        return sink.write(chunk.data(), chunk.size());
      });
    });
  }
};

ApiServer::ApiServer(service::Engine& engine, ApiOptions options)
    : impl_(std::make_unique<Impl>(engine, std::move(options))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ApiServer::run() { impl_->server.listen_after_bind(); }

void ApiServer::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->server.stop();
}

}  // namespace prescribe::http
