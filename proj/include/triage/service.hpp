#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "triage/engine.hpp"

namespace triage {

struct ServiceOptions {
  std::filesystem::path data_dir;
  /// When non-empty, every /v1 route except /v1/health requires
  /// "Authorization: Bearer <token>".
  std::string token;
  int threads = 8;
};

/// JSON views shared by the HTTP layer and tests.
nlohmann::json session_view(const Project& project);
nlohmann::json metrics_view(const Project& project);
nlohmann::json advice_view(const Project& project);

/// HTTP front end over a directory of projects.
///
///   GET  /v1/health
///   POST /v1/projects                     body: config object
///   GET  /v1/projects/{id}
///   POST /v1/projects/{id}/documents      body: JSONL documents
///   GET  /v1/projects/{id}/batch?limit=N
///   POST /v1/projects/{id}/labels         body: {"labels": [LabelRecord...]}
///   POST /v1/projects/{id}/retrain
///   GET  /v1/projects/{id}/jobs/{job}
///   GET  /v1/projects/{id}/metrics
///   GET  /v1/projects/{id}/advice
///
/// Errors are {"code", "message", "details"}.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Projects loaded from the data directory at construction.
  std::size_t recovered_projects() const;

  /// Binds the listening socket. Port 0 picks a free port. Returns the bound
  /// port, or -1 when the address is unavailable.
  int bind(const std::string& host, int port);
  /// Serves until stop(); requires a successful bind().
  bool run();
  /// Blocks until run() is accepting connections.
  void wait_until_ready() const;
  void stop();
  /// Blocks until every started training job has finished.
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace triage
