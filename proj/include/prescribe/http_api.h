#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "prescribe/service.h"

namespace prescribe::http {

struct ApiOptions {
  // curves.json written by `prescribe evaluate`; served by GET /curves and
  // used to resolve top-fraction policies.
  std::optional<std::filesystem::path> curves;
  // SSE keep-alive interval when no recommendation arrives.
  std::chrono::milliseconds stream_heartbeat{5000};
};

// HTTP status for a library error kind.
int status_for(const std::string& kind);

// JSON/HTTP front end of an Engine. Routes:
//   GET  /health
//   POST /cases/{id}/events     one event, or {"events": [...]}
//   POST /cases/{id}/close
//   GET  /cases/{id}
//   GET  /cases/{id}/recommendation
//   GET  /cases?status=...
//   GET  /audit?after=...
//   GET  /curves
//   GET  /policy, GET /policy/history, POST /policy
//   GET  /stream                server-sent events, resumable via Last-Event-ID
class ApiServer {
 public:
  ApiServer(service::Engine& engine, ApiOptions options = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace prescribe::http
