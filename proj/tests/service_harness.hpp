#pragma once

#include <httplib.h>

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include <json.hpp>

#include "triage/service.hpp"
#include "triage/simulator.hpp"

namespace triage::testing {

// A Service listening on a free loopback port for the lifetime of the object.
class LiveService {
 public:
  explicit LiveService(ServiceOptions options)
      : service_(std::make_unique<Service>(std::move(options))) {
    port_ = service_->bind("127.0.0.1", 0);
    if (port_ < 0) throw std::runtime_error("bind failed");
    thread_ = std::thread([this] { service_->run(); });
    service_->wait_until_ready();
  }
  ~LiveService() {
    service_->stop();
    thread_.join();
  }

  int port() const { return port_; }
  Service& service() { return *service_; }

  httplib::Client client(const std::string& token = "") const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    if (!token.empty()) c.set_bearer_token_auth(token);
    return c;
  }

 private:
  std::unique_ptr<Service> service_;
  int port_ = -1;
  std::thread thread_;
};

inline nlohmann::json body_of(const httplib::Result& r) {
  if (!r) throw std::runtime_error("request failed: " + httplib::to_string(r.error()));
  return r->body.empty() ? nlohmann::json() : nlohmann::json::parse(r->body);
}

inline std::string corpus_jsonl(const OracleCorpus& oracle) {
  std::string out;
  for (const auto& d : oracle.data->corpus.documents()) out += nlohmann::json(d).dump() + "\n";
  return out;
}

inline nlohmann::json labels_for(const OracleCorpus& oracle, const nlohmann::json& items) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& item : items) {
    const auto id = item.at("doc_id").get<std::string>();
    labels.push_back({{"doc_id", id},
                      {"decision", oracle.truth.at(id) ? "included" : "excluded"},
                      {"screener_id", "tester"}});
  }
  return {{"labels", labels}};
}

// Polls a job until it leaves the queued and running states.
inline nlohmann::json wait_job(httplib::Client& c, const std::string& project,
                               const std::string& job) {
  for (int i = 0; i < 6000; ++i) {
    auto j = body_of(c.Get("/v1/projects/" + project + "/jobs/" + job));
    const auto status = j.value("status", "");
    if (status == "done" || status == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  throw std::runtime_error("job did not finish");
}

}  // namespace triage::testing
