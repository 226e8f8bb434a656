#include "triage/service.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <map>
#include <random>
#include <shared_mutex>
#include <thread>

#include "triage/error.hpp"
#include "triage/metrics.hpp"

namespace triage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kWrongPhase: return 409;
    case ErrorCode::kPendingLabels: return 412;
    case ErrorCode::kSingleClass:
    case ErrorCode::kUntrainedModel: return 422;
    case ErrorCode::kAdapterFailure:
    case ErrorCode::kIo: return 500;
    default: return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message, json details = json::object()) {
  send_json(res, status, {{"code", code}, {"message", message}, {"details", std::move(details)}});
}

void send_error(httplib::Response& res, const Error& e) {
  json details = json::object();
  if (const auto* pending = dynamic_cast<const PendingLabelsError*>(&e)) {
    details["pending_ids"] = pending->ids();
  }
  if (e.code() == ErrorCode::kInvalidArgument) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    if (colon != std::string::npos && msg.find(' ') > colon) details["field"] = msg.substr(0, colon);
  }
  send_error(res, http_status(e.code()), to_string(e.code()), e.what(), std::move(details));
}

json document_item(const Document& d, const Prediction* p) {
  json item{{"doc_id", d.id}, {"title", d.title}, {"abstract", d.abstract},
            {"keywords", d.keywords}};
  if (d.year) item["year"] = *d.year;
  if (p) item["priority_score"] = p->priority_score;
  return item;
}

std::string random_id(std::string_view prefix) {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(gen()));
  return std::string(prefix) + std::string(buf, 12);
}

}  // namespace

// ---------------------------------------------------------------------------
// Views

json advice_view(const Project& project) {
  const auto state = project.state();
  const auto& stop = state.config.stop;
  json advice;
  advice["stop_training"] = should_stop_training(state.iterations, stop);
  advice["rho_threshold"] = opt(stop.rho_threshold);
  advice["patience"] = stop.patience;
  advice["rank_similarity"] =
      state.iterations.empty() ? json(nullptr) : opt(state.iterations.back().rank_similarity);
  advice["training_size"] = state.screened.size();
  advice["max_training_size"] =
      stop.max_training_size ? json(*stop.max_training_size) : json(nullptr);
  advice["iterations"] = state.iterations.size();
  advice["max_iterations"] = stop.max_iterations ? json(*stop.max_iterations) : json(nullptr);

  std::optional<BatchRate> recent;
  for (const auto& b : batch_history(state)) {
    if (b.complete) recent = b;
  }
  advice["min_inclusion_rate"] = stop.min_inclusion_rate;
  if (recent) {
    advice["stop_screening"] =
        should_stop_screening(recent->included, recent->size, stop.min_inclusion_rate);
    advice["recent_batch"] = {{"index", recent->index},
                              {"size", recent->size},
                              {"included", recent->included},
                              {"rate", recent->rate()}};
  } else {
    advice["stop_screening"] = false;
    advice["recent_batch"] = nullptr;
  }
  return advice;
}

json session_view(const Project& project) {
  const auto state = project.state();
  const std::size_t n = state.screened.size() + state.unscreened.size();
  const auto pending = state.pending_ids();
  return {{"project_id", project.id()},
          {"phase", phase_name(state.phase)},
          {"model_version", state.model_version},
          {"n", n},
          {"screened", state.screened.size()},
          {"unscreened", state.unscreened.size()},
          {"identified", state.identified()},
          {"pending", pending.size()},
          {"training_in_flight", project.training_in_flight()},
          {"config", to_json(state.config)},
          {"advice", advice_view(project)}};
}

json metrics_view(const Project& project) {
  const auto state = project.state();
  const std::size_t n = state.screened.size() + state.unscreened.size();
  json m;
  m["project_id"] = project.id();
  m["phase"] = phase_name(state.phase);
  m["model_version"] = state.model_version;
  m["n"] = n;
  m["screened"] = state.screened.size();
  m["identified"] = state.identified();
  m["he"] = n ? human_effort(state.screened.size(), n) : 0.0;
  m["ir"] = nullptr;
  m["ir_denominator_known"] = false;

  json rates = json::array();
  for (const auto& b : batch_history(state)) {
    rates.push_back({{"index", b.index},
                     {"phase", phase_name(b.phase)},
                     {"size", b.size},
                     {"labeled", b.labeled},
                     {"included", b.included},
                     {"complete", b.complete},
                     {"rate", b.rate()}});
  }
  m["batch_inclusion_rates"] = rates;

  json rho = json::array();
  json f1 = json::array();
  for (const auto& r : state.iterations) {
    rho.push_back({{"iteration", r.index},
                   {"model_version", r.model_version},
                   {"value", opt(r.rank_similarity)}});
    f1.push_back({{"model_version", r.model_version},
                  {"training_size", r.training_size},
                  {"f1", opt(r.validation_f1)}});
  }
  m["rank_similarity"] = rho;
  m["validation_f1"] = f1;
  return m;
}

// ---------------------------------------------------------------------------
// Service

namespace {

struct Job {
  std::string id;
  std::string status = "queued";
  json result = nullptr;
  json error = nullptr;
};

struct Entry {
  std::unique_ptr<Project> project;
  std::mutex mu;  // guards jobs and running
  std::map<std::string, Job> jobs;
  bool running = false;
  std::size_t job_counter = 0;
};

}  // namespace

struct Service::Impl {
  ServiceOptions options;
  httplib::Server server;
  mutable std::shared_mutex projects_mu;
  std::map<std::string, std::shared_ptr<Entry>> projects;
  std::size_t recovered = 0;

  std::mutex threads_mu;
  std::condition_variable threads_cv;
  std::vector<std::thread> threads;
  std::size_t active_jobs = 0;

  fs::path projects_dir() const { return options.data_dir / "projects"; }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(projects_mu);
    auto it = projects.find(id);
    if (it == projects.end()) throw Error(ErrorCode::kNotFound, "unknown project: " + id);
    return it->second;
  }

  void recover() {
    if (!fs::exists(projects_dir())) return;
    for (const auto& dirent : fs::directory_iterator(projects_dir())) {
      if (!dirent.is_directory() || !fs::exists(dirent.path() / "config.json")) continue;
      const auto id = dirent.path().filename().string();
      auto entry = std::make_shared<Entry>();
      entry->project = Project::recover(id, dirent.path());
      projects.emplace(id, std::move(entry));
      ++recovered;
    }
  }

  // Requires entry->mu.
  std::string start_job(const std::shared_ptr<Entry>& entry) {
    const auto state = entry->project->state();
    if (entry->running) throw Error(ErrorCode::kConflict, "a training job is already running");
    if (auto pending = state.pending_ids(); !pending.empty()) {
      throw PendingLabelsError(std::move(pending));
    }
    if (state.phase != Phase::kActiveLearning) {
      throw Error(ErrorCode::kWrongPhase,
                  "retrain requires the active_learning phase, not " +
                      std::string(phase_name(state.phase)));
    }
    const std::string job_id = "job-" + std::to_string(++entry->job_counter);
    entry->jobs[job_id] = Job{job_id};
    entry->running = true;

    std::lock_guard tl(threads_mu);
    ++active_jobs;
    threads.emplace_back([this, entry, job_id] {
      {
        std::lock_guard lock(entry->mu);
        entry->jobs[job_id].status = "running";
      }
      json result = nullptr;
      json error = nullptr;
      try {
        const auto rec = entry->project->run_iteration();
        result = rec;
      } catch (const Error& e) {
        error = {{"code", to_string(e.code())}, {"message", e.what()}};
      } catch (const std::exception& e) {
        error = {{"code", "internal"}, {"message", e.what()}};
      }
      {
        std::lock_guard lock(entry->mu);
        auto& job = entry->jobs[job_id];
        job.status = error.is_null() ? "done" : "failed";
        job.result = std::move(result);
        job.error = std::move(error);
        entry->running = false;
      }
      std::lock_guard tl2(threads_mu);
      --active_jobs;
      threads_cv.notify_all();
    });
    return job_id;
  }

  bool authorized(const httplib::Request& req) const {
    if (options.token.empty()) return true;
    return req.get_header_value("Authorization") == "Bearer " + options.token;
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req)) {
        send_error(res, 401, "unauthorized", "missing or invalid bearer token");
        return;
      }
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const json::exception& e) {
        send_error(res, 400, "parse_error", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void routes();
};

void Service::Impl::routes() {
  server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  server.Post("/v1/projects", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = req.body.empty() ? json::object() : json::parse(req.body);
    const auto config = config_from_json(body);
    std::string id;
    {
      std::unique_lock lock(projects_mu);
      do {
        id = random_id("p");
      } while (projects.count(id) || fs::exists(projects_dir() / id));
      auto entry = std::make_shared<Entry>();
      entry->project = std::make_unique<Project>(
          id, config, make_corpus_data(Corpus{}, config.train.hash_bits),
          std::make_unique<ProjectJournal>(projects_dir() / id));
      projects.emplace(id, entry);
    }
    auto view = session_view(*find(id)->project);
    send_json(res, 201, view);
  }));

  server.Get(R"(/v1/projects/([^/]+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, session_view(*find(req.matches[1])->project));
             }));

  server.Post(R"(/v1/projects/([^/]+)/documents)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto entry = find(req.matches[1]);
                Corpus docs = ingest_jsonl(req.body);
                const std::size_t offered = docs.size();
                const std::size_t added = entry->project->add_documents(std::move(docs));
                send_json(res, 200,
                          {{"added", added},
                           {"duplicates", offered - added},
                           {"total", entry->project->data()->ids.size()}});
              }));

  server.Get(R"(/v1/projects/([^/]+)/batch)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               auto entry = find(req.matches[1]);
               auto& project = *entry->project;
               std::optional<std::size_t> limit;
               if (req.has_param("limit")) {
                 const auto raw = req.get_param_value("limit");
                 std::size_t pos = 0;
                 long long v = -1;
                 try {
                   v = std::stoll(raw, &pos);
                 } catch (const std::exception&) {
                 }
                 if (pos != raw.size() || v < 1) {
                   throw Error(ErrorCode::kInvalidArgument, "limit: expected a positive integer");
                 }
                 limit = static_cast<std::size_t>(v);
               }
               auto state = project.state();
               if (state.phase == Phase::kBootstrapping && state.issued_batches.empty() &&
                   !state.unscreened.empty()) {
                 project.bootstrap();
                 state = project.state();
               }
               const auto snap = project.snapshot();
               const auto data = project.data();
               std::vector<std::string> ids;
               bool with_scores = false;
               switch (state.phase) {
                 case Phase::kBootstrapping:
                 case Phase::kActiveLearning:
                   ids = state.pending_ids();
                   with_scores = state.phase == Phase::kActiveLearning;
                   break;
                 case Phase::kPrioritizedScreening:
                   ids = project.prioritized_queue();
                   with_scores = true;
                   break;
                 case Phase::kDone:
                   break;
               }
               if (limit && ids.size() > *limit) ids.resize(*limit);
               json items = json::array();
               for (const auto& id : ids) {
                 const Prediction* p = with_scores && snap ? snap->find(id) : nullptr;
                 items.push_back(document_item(data->corpus.at(id), p));
               }
               const bool awaiting = state.phase == Phase::kActiveLearning && ids.empty();
               send_json(res, 200,
                         {{"phase", phase_name(state.phase)},
                          {"model_version", state.model_version},
                          {"items", items},
                          {"done", state.phase == Phase::kDone},
                          {"awaiting_retrain", awaiting}});
             }));

  server.Post(R"(/v1/projects/([^/]+)/labels)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto entry = find(req.matches[1]);
                auto& project = *entry->project;
                const json body = json::parse(req.body);
                const json& list = body.is_array() ? body : body.at("labels");
                if (!list.is_array()) {
                  throw Error(ErrorCode::kInvalidArgument, "labels: expected an array");
                }
                std::size_t accepted = 0;
                json errors = json::array();
                for (std::size_t i = 0; i < list.size(); ++i) {
                  const auto& item = list[i];
                  const std::string doc_id =
                      item.is_object() && item.contains("doc_id") && item["doc_id"].is_string()
                          ? item["doc_id"].get<std::string>()
                          : std::string();
                  try {
                    if (!item.is_object()) {
                      throw Error(ErrorCode::kInvalidArgument, "label record must be an object");
                    }
                    LabelRecord rec = item.get<LabelRecord>();
                    if (!item.contains("timestamp") || item["timestamp"].is_null()) {
                      rec.timestamp = now_utc();
                    }
                    if (!item.contains("iteration")) {
                      rec.iteration = project.state().model_version;
                    }
                    project.record_label(std::move(rec));
                    ++accepted;
                  } catch (const Error& e) {
                    errors.push_back({{"index", i},
                                      {"doc_id", doc_id},
                                      {"code", to_string(e.code())},
                                      {"message", e.what()}});
                  }
                }
                std::optional<std::string> job;
                {
                  std::lock_guard lock(entry->mu);
                  const auto state = project.state();
                  if (state.config.auto_retrain && state.phase == Phase::kActiveLearning &&
                      !entry->running && state.pending_ids().empty()) {
                    job = start_job(entry);
                  }
                }
                const auto state = project.state();
                json out{{"accepted", accepted},
                         {"errors", errors},
                         {"screened", state.screened.size()},
                         {"identified", state.identified()},
                         {"phase", phase_name(state.phase)}};
                if (job) out["job_id"] = *job;
                send_json(res, 200, out);
              }));

  server.Post(R"(/v1/projects/([^/]+)/retrain)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                auto entry = find(req.matches[1]);
                std::string job_id;
                {
                  std::lock_guard lock(entry->mu);
                  job_id = start_job(entry);
                }
                send_json(res, 202, {{"job_id", job_id}, {"status", "queued"}});
              }));

  server.Get(R"(/v1/projects/([^/]+)/jobs/([^/]+))",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               auto entry = find(req.matches[1]);
               std::lock_guard lock(entry->mu);
               auto it = entry->jobs.find(req.matches[2]);
               if (it == entry->jobs.end()) {
                 throw Error(ErrorCode::kNotFound, "unknown job: " + std::string(req.matches[2]));
               }
               send_json(res, 200,
                         {{"job_id", it->second.id},
                          {"status", it->second.status},
                          {"result", it->second.result},
                          {"error", it->second.error}});
             }));

  server.Get(R"(/v1/projects/([^/]+)/metrics)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, metrics_view(*find(req.matches[1])->project));
             }));

  server.Get(R"(/v1/projects/([^/]+)/advice)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, advice_view(*find(req.matches[1])->project));
             }));
}

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  fs::create_directories(impl_->projects_dir());
  impl_->recover();
  const int threads = std::max(1, impl_->options.threads);
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // The library default adds SO_REUSEPORT, which lets a second server share a
  // busy port.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  impl_->routes();
}

Service::~Service() {
  stop();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(impl_->threads_mu);
    threads.swap(impl_->threads);
  }
  for (auto& t : threads) t.join();
}

std::size_t Service::recovered_projects() const { return impl_->recovered; }

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool Service::run() { return impl_->server.listen_after_bind(); }

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

void Service::stop() { impl_->server.stop(); }

void Service::wait_for_jobs() {
  std::unique_lock lock(impl_->threads_mu);
  impl_->threads_cv.wait(lock, [&] { return impl_->active_jobs == 0; });
}

}  // namespace triage
