#include "triage/engine.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace triage {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small value types

std::string format_timestamp(Timestamp t) {
  const auto ms = t.time_since_epoch().count();
  auto secs = static_cast<std::time_t>(ms / 1000);
  auto frac = static_cast<int>(ms % 1000);
  if (frac < 0) {
    frac += 1000;
    --secs;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, frac);
  return buf;
}

Timestamp parse_timestamp(std::string_view s) {
  std::tm tm{};
  int ms = 0;
  int consumed = 0;
  const std::string str(s);
  const int n = std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon,
                            &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &consumed);
  if (n != 6) throw Error(ErrorCode::kParseError, "bad timestamp: " + str);
  std::string_view rest = std::string_view(str).substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == '.') {
    rest.remove_prefix(1);
    int digits = 0;
    while (!rest.empty() && std::isdigit(static_cast<unsigned char>(rest.front()))) {
      if (digits < 3) ms = ms * 10 + (rest.front() - '0');
      ++digits;
      rest.remove_prefix(1);
    }
    for (; digits < 3; ++digits) ms *= 10;
  }
  if (rest != "Z" && !rest.empty()) throw Error(ErrorCode::kParseError, "bad timestamp: " + str);
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t secs = timegm(&tm);
  return Timestamp(std::chrono::milliseconds(static_cast<std::int64_t>(secs) * 1000 + ms));
}

Timestamp now_utc() {
  return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

Decision parse_decision(std::string_view s) {
  if (s == "included") return Decision::kIncluded;
  if (s == "excluded") return Decision::kExcluded;
  throw Error(ErrorCode::kInvalidArgument, "malformed decision: " + std::string(s));
}

std::string_view decision_name(Decision d) {
  return d == Decision::kIncluded ? "included" : "excluded";
}

void to_json(json& j, const LabelRecord& r) {
  j = json{{"doc_id", r.doc_id},
           {"decision", decision_name(r.decision)},
           {"exclusion_criterion",
            r.exclusion_criterion ? json(*r.exclusion_criterion) : json(nullptr)},
           {"screener_id", r.screener_id},
           {"timestamp", format_timestamp(r.timestamp)},
           {"iteration", r.iteration}};
}

void from_json(const json& j, LabelRecord& r) {
  try {
    r.doc_id = j.at("doc_id").get<std::string>();
    r.decision = parse_decision(j.at("decision").get<std::string>());
    r.exclusion_criterion.reset();
    if (auto it = j.find("exclusion_criterion"); it != j.end() && !it->is_null()) {
      r.exclusion_criterion = it->get<std::string>();
    }
    r.screener_id = j.value("screener_id", std::string());
    auto ts = j.find("timestamp");
    r.timestamp = (ts != j.end() && !ts->is_null()) ? parse_timestamp(ts->get<std::string>())
                                                     : Timestamp{};
    r.iteration = j.value("iteration", 0);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed label record: ") + e.what());
  }
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kBootstrapping: return "bootstrapping";
    case Phase::kActiveLearning: return "active_learning";
    case Phase::kPrioritizedScreening: return "prioritized_screening";
    case Phase::kDone: return "done";
  }
  return "bootstrapping";
}

Phase parse_phase(std::string_view s) {
  for (auto p : {Phase::kBootstrapping, Phase::kActiveLearning, Phase::kPrioritizedScreening,
                 Phase::kDone}) {
    if (phase_name(p) == s) return p;
  }
  throw Error(ErrorCode::kParseError, "unknown phase: " + std::string(s));
}

PendingLabelsError::PendingLabelsError(std::vector<std::string> ids)
    : Error(ErrorCode::kPendingLabels,
            "pending labels: " + std::to_string(ids.size()) + " issued documents unlabeled"),
      ids_(std::move(ids)) {}

// ---------------------------------------------------------------------------
// Configuration

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::kInvalidArgument, field + ": " + why);
}

}  // namespace

void ProjectConfig::validate() const {
  if (batch_size < 1) bad_field("batch_size", "must be at least 1");
  if (init_size < 1) bad_field("init_size", "must be at least 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    bad_field("train_fraction", "must lie in (0, 1)");
  }
  if (stop.rho_threshold && !(*stop.rho_threshold >= -1.0 && *stop.rho_threshold <= 1.0)) {
    bad_field("rho_threshold", "must lie in [-1, 1]");
  }
  if (stop.patience < 1) bad_field("patience", "must be at least 1");
  if (stop.max_iterations && *stop.max_iterations < 1) {
    bad_field("max_iterations", "must be at least 1");
  }
  if (stop.max_training_size && *stop.max_training_size < 1) {
    bad_field("max_training_size", "must be at least 1");
  }
  if (!(stop.min_inclusion_rate >= 0.0 && stop.min_inclusion_rate <= 1.0)) {
    bad_field("min_inclusion_rate", "must lie in [0, 1]");
  }
  if (train.epochs < 1) bad_field("epochs", "must be at least 1");
  if (!(train.learning_rate > 0.0)) bad_field("learning_rate", "must be positive");
  if (train.hash_bits < 1 || train.hash_bits > 28) bad_field("hash_bits", "must lie in [1, 28]");
  if (train.kind == ModelKind::kExternalAdapter && train.adapter_command.empty()) {
    bad_field("adapter_command", "required for the external model");
  }
  if (ensemble_runs < 1) bad_field("ensemble_runs", "must be at least 1");
}

json to_json(const ProjectConfig& c) {
  auto opt_int = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  return json{
      {"strategy", strategy_name(c.strategy)},
      {"batch_size", c.batch_size},
      {"init_size", c.init_size},
      {"train_fraction", c.train_fraction},
      {"rho_threshold", opt_int(c.stop.rho_threshold)},
      {"patience", c.stop.patience},
      {"max_iterations", opt_int(c.stop.max_iterations)},
      {"max_training_size", opt_int(c.stop.max_training_size)},
      {"min_inclusion_rate", c.stop.min_inclusion_rate},
      {"model", c.train.kind == ModelKind::kExternalAdapter ? "external" : "reference"},
      {"adapter_command", c.train.adapter_command},
      {"epochs", c.train.epochs},
      {"learning_rate", c.train.learning_rate},
      {"hash_bits", c.train.hash_bits},
      {"ensemble_runs", c.ensemble_runs},
      {"seed", c.seed},
      {"auto_retrain", c.auto_retrain},
      {"exclusion_criteria", c.exclusion_criteria},
  };
}

ProjectConfig config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "config: expected an object");
  ProjectConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      auto count = [&]() -> std::size_t {
        if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
          bad_field(key, "expected a non-negative integer");
        }
        return value.get<std::size_t>();
      };
      auto integer = [&]() -> int {
        if (!value.is_number_integer()) bad_field(key, "expected an integer");
        return value.get<int>();
      };
      auto number = [&]() -> double {
        if (!value.is_number()) bad_field(key, "expected a number");
        return value.get<double>();
      };
      if (key == "strategy") {
        c.strategy = parse_strategy(value.get<std::string>());
      } else if (key == "batch_size") {
        c.batch_size = count();
      } else if (key == "init_size") {
        c.init_size = count();
      } else if (key == "train_fraction") {
        c.train_fraction = number();
      } else if (key == "rho_threshold") {
        c.stop.rho_threshold =
            value.is_null() ? std::nullopt : std::optional<double>(number());
      } else if (key == "patience") {
        c.stop.patience = integer();
      } else if (key == "max_iterations") {
        c.stop.max_iterations = value.is_null() ? std::nullopt : std::optional<int>(integer());
      } else if (key == "max_training_size") {
        c.stop.max_training_size =
            value.is_null() ? std::nullopt : std::optional<std::size_t>(count());
      } else if (key == "min_inclusion_rate") {
        c.stop.min_inclusion_rate = number();
      } else if (key == "model") {
        const auto m = value.get<std::string>();
        if (m == "reference") c.train.kind = ModelKind::kReferenceLinear;
        else if (m == "external") c.train.kind = ModelKind::kExternalAdapter;
        else bad_field(key, "expected \"reference\" or \"external\"");
      } else if (key == "adapter_command") {
        c.train.adapter_command = value.get<std::string>();
      } else if (key == "epochs") {
        c.train.epochs = integer();
      } else if (key == "learning_rate") {
        c.train.learning_rate = number();
      } else if (key == "hash_bits") {
        c.train.hash_bits = integer();
      } else if (key == "ensemble_runs") {
        c.ensemble_runs = integer();
      } else if (key == "seed") {
        if (!value.is_number_unsigned()) bad_field(key, "expected a non-negative integer");
        c.seed = value.get<std::uint64_t>();
      } else if (key == "auto_retrain") {
        if (!value.is_boolean()) bad_field(key, "expected a boolean");
        c.auto_retrain = value.get<bool>();
      } else if (key == "exclusion_criteria") {
        c.exclusion_criteria = value.get<std::vector<std::string>>();
      } else {
        bad_field(key, "unknown field");
      }
    } catch (const json::exception&) {
      bad_field(key, "wrong type");
    } catch (const Error& e) {
      if (std::string_view(e.what()).substr(0, key.size()) == key) throw;
      bad_field(key, e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// History events

void to_json(json& j, const IterationRecord& r) {
  j = json{{"index", r.index},
           {"strategy", strategy_name(r.strategy)},
           {"batch_size", r.batch_size},
           {"batch_included_count", r.batch_included_count},
           {"training_size", r.training_size},
           {"model_version", r.model_version},
           {"rank_similarity", r.rank_similarity ? json(*r.rank_similarity) : json(nullptr)},
           {"validation_f1", r.validation_f1 ? json(*r.validation_f1) : json(nullptr)},
           {"stopped", r.stopped},
           {"sampled_ids", r.sampled_ids}};
}

void from_json(const json& j, IterationRecord& r) {
  r.index = j.at("index").get<int>();
  r.strategy = parse_strategy(j.at("strategy").get<std::string>());
  r.batch_size = j.at("batch_size").get<std::size_t>();
  r.batch_included_count = j.at("batch_included_count").get<std::size_t>();
  r.training_size = j.at("training_size").get<std::size_t>();
  r.model_version = j.at("model_version").get<int>();
  const auto& rs = j.at("rank_similarity");
  r.rank_similarity = rs.is_null() ? std::nullopt : std::optional<double>(rs.get<double>());
  const auto& f1 = j.at("validation_f1");
  r.validation_f1 = f1.is_null() ? std::nullopt : std::optional<double>(f1.get<double>());
  r.stopped = j.at("stopped").get<bool>();
  r.sampled_ids = j.at("sampled_ids").get<std::vector<std::string>>();
}

json to_json(const HistoryEvent& e) {
  return std::visit(
      [](const auto& ev) -> json {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, BootstrapIssued>) {
          return {{"event", "bootstrap"}, {"ids", ev.ids}};
        } else if constexpr (std::is_same_v<T, PhaseChanged>) {
          return {{"event", "phase"}, {"phase", phase_name(ev.phase)}, {"screened", ev.screened}};
        } else {
          return {{"event", "iteration"}, {"record", json(ev.record)}};
        }
      },
      e);
}

HistoryEvent history_event_from_json(const json& j) {
  try {
    const auto kind = j.at("event").get<std::string>();
    if (kind == "bootstrap") return BootstrapIssued{j.at("ids").get<std::vector<std::string>>()};
    if (kind == "phase") {
      return PhaseChanged{parse_phase(j.at("phase").get<std::string>()),
                          j.at("screened").get<std::size_t>()};
    }
    if (kind == "iteration") return IterationCompleted{j.at("record").get<IterationRecord>()};
    throw Error(ErrorCode::kParseError, "unknown history event: " + kind);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("malformed history event: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// State

ProjectState ProjectState::initial(std::string project_id, ProjectConfig config,
                                   const std::vector<std::string>& corpus_ids) {
  ProjectState s;
  s.project_id = std::move(project_id);
  s.config = std::move(config);
  s.unscreened.insert(corpus_ids.begin(), corpus_ids.end());
  return s;
}

void ProjectState::apply(const LabelRecord& rec) {
  const bool fresh = unscreened.erase(rec.doc_id) > 0;
  if (!fresh && !screened.count(rec.doc_id)) {
    throw Error(ErrorCode::kUnknownDocument, "unknown document: " + rec.doc_id);
  }
  effective[rec.doc_id] = rec.decision;
  if (fresh) {
    screened.insert(rec.doc_id);
    screening_order.push_back(rec.doc_id);
  }
}

void ProjectState::apply(const HistoryEvent& ev) {
  if (const auto* b = std::get_if<BootstrapIssued>(&ev)) {
    issued_batches.push_back(b->ids);
  } else if (const auto* p = std::get_if<PhaseChanged>(&ev)) {
    if (p->phase <= phase) {
      throw Error(ErrorCode::kWrongPhase, "phase cannot move from " +
                                              std::string(phase_name(phase)) + " to " +
                                              std::string(phase_name(p->phase)));
    }
    phase = p->phase;
    if (phase == Phase::kPrioritizedScreening) prioritized_start = p->screened;
  } else if (const auto* it = std::get_if<IterationCompleted>(&ev)) {
    iterations.push_back(it->record);
    model_version = it->record.model_version;
    if (!it->record.sampled_ids.empty()) issued_batches.push_back(it->record.sampled_ids);
  }
}

const std::vector<std::string>* ProjectState::current_batch() const {
  if (issued_batches.empty()) return nullptr;
  if (phase != Phase::kBootstrapping && phase != Phase::kActiveLearning) return nullptr;
  return &issued_batches.back();
}

std::vector<std::string> ProjectState::pending_ids() const {
  std::vector<std::string> out;
  if (const auto* batch = current_batch()) {
    for (const auto& id : *batch) {
      if (!screened.count(id)) out.push_back(id);
    }
  }
  return out;
}

std::size_t ProjectState::identified() const {
  return static_cast<std::size_t>(std::count_if(effective.begin(), effective.end(), [](const auto& kv) {
    return kv.second == Decision::kIncluded;
  }));
}

TrainingSet ProjectState::training_set() const {
  TrainingSet set;
  set.items.reserve(screening_order.size());
  for (const auto& id : screening_order) {
    set.items.push_back(
        {id, effective.at(id) == Decision::kIncluded ? Label::kIncluded : Label::kExcluded});
  }
  return set;
}

ProjectState replay(std::string project_id, ProjectConfig config,
                    const std::vector<std::string>& corpus_ids,
                    const std::vector<LabelRecord>& ledger,
                    const std::vector<HistoryEvent>& history) {
  auto state = ProjectState::initial(std::move(project_id), std::move(config), corpus_ids);
  for (const auto& ev : history) state.apply(ev);
  for (const auto& rec : ledger) state.apply(rec);
  return state;
}

// ---------------------------------------------------------------------------
// Stopping rules

double rank_similarity(const std::vector<std::string>& previous,
                       const std::vector<std::string>& current) {
  const std::size_t n = previous.size();
  if (current.size() != n) {
    throw Error(ErrorCode::kIdSetMismatch, "rankings differ in length");
  }
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 ranked ids");
  std::unordered_map<std::string_view, std::size_t> rank;
  rank.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!rank.emplace(previous[i], i).second) {
      throw Error(ErrorCode::kIdSetMismatch, "duplicate id in ranking: " + previous[i]);
    }
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(n);
  unsigned long long sum_d2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = rank.find(current[i]);
    if (it == rank.end() || !seen.insert(current[i]).second) {
      throw Error(ErrorCode::kIdSetMismatch, "ranking id sets differ at " + current[i]);
    }
    const auto d = static_cast<long long>(it->second) - static_cast<long long>(i);
    sum_d2 += static_cast<unsigned long long>(d * d);
  }
  const double nd = static_cast<double>(n);
  return 1.0 - 6.0 * static_cast<double>(sum_d2) / (nd * (nd * nd - 1.0));
}

bool should_stop_training(const std::vector<IterationRecord>& history, const StopConfig& stop) {
  if (history.empty()) return false;
  const auto& last = history.back();
  if (stop.max_training_size && last.training_size >= *stop.max_training_size) return true;
  if (stop.max_iterations && history.size() >= static_cast<std::size_t>(*stop.max_iterations)) {
    return true;
  }
  if (!stop.rho_threshold) return false;
  const auto patience = static_cast<std::size_t>(std::max(stop.patience, 1));
  if (history.size() < patience) return false;
  return std::all_of(history.end() - static_cast<std::ptrdiff_t>(patience), history.end(),
                     [&](const IterationRecord& r) {
                       return r.rank_similarity && *r.rank_similarity >= *stop.rho_threshold;
                     });
}

bool should_stop_screening(std::size_t recent_batch_included, std::size_t batch_size,
                           double min_rate) {
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
  return static_cast<double>(recent_batch_included) / static_cast<double>(batch_size) < min_rate;
}

std::vector<BatchRate> batch_history(const ProjectState& state) {
  std::vector<BatchRate> out;
  auto included = [&](const std::string& id) {
    auto it = state.effective.find(id);
    return it != state.effective.end() && it->second == Decision::kIncluded;
  };
  for (std::size_t b = 0; b < state.issued_batches.size(); ++b) {
    BatchRate r;
    r.index = out.size();
    r.phase = b == 0 ? Phase::kBootstrapping : Phase::kActiveLearning;
    r.size = state.issued_batches[b].size();
    for (const auto& id : state.issued_batches[b]) {
      if (state.screened.count(id)) ++r.labeled;
      if (included(id)) ++r.included;
    }
    r.complete = r.labeled == r.size;
    out.push_back(r);
  }
  if (state.prioritized_start) {
    const auto& order = state.screening_order;
    const std::size_t chunk = state.config.batch_size;
    for (std::size_t start = *state.prioritized_start; start < order.size(); start += chunk) {
      BatchRate r;
      r.index = out.size();
      r.phase = Phase::kPrioritizedScreening;
      const std::size_t end = std::min(order.size(), start + chunk);
      r.labeled = end - start;
      r.size = chunk;
      for (std::size_t i = start; i < end; ++i) {
        if (included(order[i])) ++r.included;
      }
      r.complete = r.labeled == chunk;
      out.push_back(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots and corpus data

const Prediction* PredictionSnapshot::find(std::string_view id) const {
  auto it = position.find(std::string(id));
  return it == position.end() ? nullptr : &predictions[it->second];
}

std::shared_ptr<const PredictionSnapshot> make_snapshot(int model_version,
                                                        std::vector<Prediction> predictions,
                                                        std::optional<F1Report> validation) {
  auto snap = std::make_shared<PredictionSnapshot>();
  snap->model_version = model_version;
  snap->ranking = rank_by_priority(predictions);
  snap->position.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    snap->position.emplace(predictions[i].doc_id, i);
  }
  snap->predictions = std::move(predictions);
  snap->validation = validation;
  return snap;
}

std::shared_ptr<const CorpusData> make_corpus_data(Corpus corpus, int hash_bits,
                                                   const std::vector<SentenceFilter>& filters) {
  auto data = std::make_shared<CorpusData>();
  data->texts = TextIndex(prepare_texts(corpus, filters), hash_bits);
  data->ids.reserve(corpus.size());
  for (const auto& d : corpus.documents()) data->ids.push_back(d.id);
  data->corpus = std::move(corpus);
  return data;
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Journal

namespace {

void append_line(const fs::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::string data = line + '\n';
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::kIo, "write failed: " + path.string());
    }
    off += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw Error(ErrorCode::kIo, "fsync failed: " + path.string());
}

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      // A torn final line from a crash mid-append is dropped.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorCode::kParseError, "corrupt journal line in " + path.string());
    }
  }
  return out;
}

}  // namespace

ProjectJournal::ProjectJournal(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "predictions");
}

void ProjectJournal::write_config(const ProjectConfig& config) const {
  write_atomically(dir_ / "config.json", to_json(config).dump(2) + "\n");
}

void ProjectJournal::write_corpus(const Corpus& corpus) const {
  std::string content;
  for (const auto& d : corpus.documents()) content += json(d).dump() + "\n";
  write_atomically(dir_ / "corpus.jsonl", content);
}

void ProjectJournal::append_label(const LabelRecord& rec) const {
  append_line(dir_ / "ledger.jsonl", json(rec).dump());
}

void ProjectJournal::append_event(const HistoryEvent& ev) const {
  append_line(dir_ / "history.jsonl", to_json(ev).dump());
}

void ProjectJournal::write_predictions(const PredictionSnapshot& snap) const {
  std::string content;
  for (const auto& p : snap.predictions) {
    content += json{{"doc_id", p.doc_id},
                    {"logit0", p.logits.excluded},
                    {"logit1", p.logits.included},
                    {"priority_score", p.priority_score},
                    {"uncertainty", p.uncertainty}}
                   .dump();
    content += '\n';
  }
  write_atomically(dir_ / "predictions" / ("v" + std::to_string(snap.model_version) + ".jsonl"),
                   content);
}

ProjectConfig ProjectJournal::read_config() const {
  std::ifstream in(dir_ / "config.json");
  if (!in) throw Error(ErrorCode::kIo, "missing config in " + dir_.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("bad config: ") + e.what());
  }
}

Corpus ProjectJournal::read_corpus() const {
  Corpus corpus;
  for (const auto& j : read_jsonl(dir_ / "corpus.jsonl")) corpus.add(j.get<Document>());
  return corpus;
}

std::vector<LabelRecord> ProjectJournal::read_ledger() const {
  std::vector<LabelRecord> out;
  for (const auto& j : read_jsonl(dir_ / "ledger.jsonl")) out.push_back(j.get<LabelRecord>());
  return out;
}

std::vector<HistoryEvent> ProjectJournal::read_history() const {
  std::vector<HistoryEvent> out;
  for (const auto& j : read_jsonl(dir_ / "history.jsonl")) {
    out.push_back(history_event_from_json(j));
  }
  return out;
}

std::shared_ptr<const PredictionSnapshot> ProjectJournal::read_predictions(int version) const {
  const auto path = dir_ / "predictions" / ("v" + std::to_string(version) + ".jsonl");
  if (!fs::exists(path)) return nullptr;
  std::vector<Prediction> preds;
  for (const auto& j : read_jsonl(path)) {
    Prediction p;
    p.doc_id = j.at("doc_id").get<std::string>();
    p.logits = {j.at("logit0").get<double>(), j.at("logit1").get<double>()};
    p.priority_score = j.at("priority_score").get<double>();
    p.uncertainty = j.at("uncertainty").get<double>();
    preds.push_back(std::move(p));
  }
  return make_snapshot(version, std::move(preds), std::nullopt);
}

// ---------------------------------------------------------------------------
// Project

namespace {

enum Stream : std::uint64_t {
  kBootstrapStream = 1,
  kSplitStream = 2,
  kOversampleStream = 3,
  kTrainStream = 4,
  kSampleStream = 5,
};

}  // namespace

Project::Project(std::string id, ProjectConfig config, std::shared_ptr<const CorpusData> data,
                 std::unique_ptr<ProjectJournal> journal)
    : id_(std::move(id)), data_(std::move(data)), journal_(std::move(journal)) {
  config.validate();
  if (!data_) data_ = make_corpus_data(Corpus{}, config.train.hash_bits);
  if (data_->texts.hash_bits() != config.train.hash_bits) {
    throw Error(ErrorCode::kInvalidArgument, "hash_bits: corpus features use a different width");
  }
  state_ = ProjectState::initial(id_, config, data_->ids);
  if (journal_) {
    journal_->write_config(config);
    journal_->write_corpus(data_->corpus);
  }
}

std::unique_ptr<Project> Project::recover(std::string id, const fs::path& dir) {
  auto journal = std::make_unique<ProjectJournal>(dir);
  auto config = journal->read_config();
  auto data = make_corpus_data(journal->read_corpus(), config.train.hash_bits);
  auto project = std::make_unique<Project>(id, config, data);
  project->ledger_ = journal->read_ledger();
  project->history_ = journal->read_history();
  project->state_ = replay(id, config, data->ids, project->ledger_, project->history_);
  if (project->state_.model_version > 0) {
    project->snapshot_ = journal->read_predictions(project->state_.model_version);
  }
  project->journal_ = std::move(journal);
  return project;
}

ProjectConfig Project::config() const {
  std::lock_guard lock(mu_);
  return state_.config;
}

ProjectState Project::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::shared_ptr<const CorpusData> Project::data() const {
  std::lock_guard lock(mu_);
  return data_;
}

std::shared_ptr<const PredictionSnapshot> Project::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_;
}

std::vector<LabelRecord> Project::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

std::vector<HistoryEvent> Project::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

bool Project::training_in_flight() const {
  std::lock_guard lock(mu_);
  return training_;
}

void Project::append(const HistoryEvent& ev) {
  if (journal_) journal_->append_event(ev);
  state_.apply(ev);
  history_.push_back(ev);
}

std::size_t Project::add_documents(Corpus docs) {
  std::lock_guard lock(mu_);
  if (state_.phase != Phase::kBootstrapping || !state_.issued_batches.empty()) {
    throw Error(ErrorCode::kWrongPhase, "documents can only be added before the first batch");
  }
  Corpus merged = data_->corpus;
  std::size_t added = 0;
  std::vector<std::string> new_ids;
  for (const auto& d : docs.documents()) {
    if (merged.add(d)) {
      ++added;
      new_ids.push_back(d.id);
    } else {
      merged.note_duplicate();
    }
  }
  auto data = make_corpus_data(std::move(merged), state_.config.train.hash_bits);
  if (journal_) journal_->write_corpus(data->corpus);
  data_ = std::move(data);
  state_.unscreened.insert(new_ids.begin(), new_ids.end());
  return added;
}

BootstrapResult Project::bootstrap(std::optional<std::size_t> k) {
  std::lock_guard lock(mu_);
  if (state_.phase != Phase::kBootstrapping) {
    throw Error(ErrorCode::kWrongPhase, "bootstrap requires the bootstrapping phase");
  }
  if (!state_.issued_batches.empty()) return {state_.issued_batches.back(), false};
  const std::size_t want = k.value_or(state_.config.init_size);
  if (want == 0) throw Error(ErrorCode::kInvalidArgument, "bootstrap size must be positive");
  std::vector<std::string> pool;
  pool.reserve(state_.unscreened.size());
  for (const auto& id : data_->ids) {
    if (state_.unscreened.count(id)) pool.push_back(id);
  }
  if (pool.empty()) throw Error(ErrorCode::kEmptyCorpus, "no unscreened documents to issue");
  auto rng = make_rng(state_.config.seed, kBootstrapStream);
  BootstrapResult result{sample_uniform(pool, want, rng), want > pool.size()};
  append(BootstrapIssued{result.ids});
  return result;
}

void Project::advance_after_label() {
  if (state_.phase == Phase::kBootstrapping && !state_.issued_batches.empty() &&
      state_.pending_ids().empty()) {
    append(PhaseChanged{Phase::kActiveLearning, state_.screened.size()});
  }
  if (state_.phase == Phase::kPrioritizedScreening && state_.unscreened.empty()) {
    append(PhaseChanged{Phase::kDone, state_.screened.size()});
  }
}

void Project::record_label(LabelRecord rec) {
  std::lock_guard lock(mu_);
  if (!state_.screened.count(rec.doc_id) && !state_.unscreened.count(rec.doc_id)) {
    throw Error(ErrorCode::kUnknownDocument, "unknown document: " + rec.doc_id);
  }
  if (journal_) journal_->append_label(rec);
  state_.apply(rec);
  ledger_.push_back(std::move(rec));
  advance_after_label();
}

IterationRecord Project::run_iteration() {
  ProjectState state;
  std::shared_ptr<const CorpusData> data;
  std::shared_ptr<const PredictionSnapshot> previous;
  {
    std::lock_guard lock(mu_);
    if (training_) throw Error(ErrorCode::kConflict, "a training job is already running");
    if (auto pending = state_.pending_ids(); !pending.empty()) {
      throw PendingLabelsError(std::move(pending));
    }
    if (state_.phase != Phase::kActiveLearning) {
      throw Error(ErrorCode::kWrongPhase, "run_iteration requires the active_learning phase, not " +
                                              std::string(phase_name(state_.phase)));
    }
    training_ = true;
    state = state_;
    data = data_;
    previous = snapshot_;
  }
  struct Release {
    Project* self;
    ~Release() {
      std::lock_guard lock(self->mu_);
      self->training_ = false;
    }
  } release{this};

  const auto& cfg = state.config;
  const auto index = static_cast<std::uint64_t>(state.iterations.size());
  const int version = state.model_version + 1;

  const TrainingSet labeled = state.training_set();
  auto split_rng = make_rng(cfg.seed, kSplitStream, index);
  auto [train_part, val_part] = split_train_val(labeled, cfg.train_fraction, split_rng);
  auto over_rng = make_rng(cfg.seed, kOversampleStream, index);
  const TrainingSet balanced = oversample(train_part, over_rng);

  std::vector<std::string> pool;
  pool.reserve(state.unscreened.size());
  for (const auto& id : data->ids) {
    if (state.unscreened.count(id)) pool.push_back(id);
  }
  std::vector<std::string> val_ids;
  std::vector<Label> val_truth;
  for (const auto& it : val_part.items) {
    val_ids.push_back(it.doc_id);
    val_truth.push_back(it.label);
  }

  std::vector<std::vector<Prediction>> pool_runs;
  std::vector<std::vector<Prediction>> val_runs;
  for (int r = 0; r < cfg.ensemble_runs; ++r) {
    TrainConfig tc = cfg.train;
    tc.seed = make_rng(cfg.seed, kTrainStream, index * 1000 + static_cast<std::uint64_t>(r))();
    const auto model = train(balanced, data->texts, tc, version);
    pool_runs.push_back(predict(model, data->texts, pool));
    val_runs.push_back(predict(model, data->texts, val_ids));
  }
  auto predictions = average_predictions(pool_runs);
  const auto val_preds = average_predictions(val_runs);
  std::vector<double> val_scores;
  for (const auto& p : val_preds) val_scores.push_back(p.priority_score);
  const F1Report validation = f1_from_scores(val_scores, val_truth);

  auto snap = make_snapshot(version, std::move(predictions), validation);

  std::optional<double> similarity;
  if (previous) {
    std::unordered_set<std::string_view> now(snap->ranking.begin(), snap->ranking.end());
    std::vector<std::string> prev_shared;
    for (const auto& id : previous->ranking) {
      if (now.count(id)) prev_shared.push_back(id);
    }
    std::unordered_set<std::string_view> before(prev_shared.begin(), prev_shared.end());
    std::vector<std::string> cur_shared;
    for (const auto& id : snap->ranking) {
      if (before.count(id)) cur_shared.push_back(id);
    }
    if (cur_shared.size() >= 2) similarity = rank_similarity(prev_shared, cur_shared);
  }

  std::lock_guard lock(mu_);
  IterationRecord rec;
  rec.index = static_cast<int>(index);
  rec.strategy = cfg.strategy;
  if (const auto* batch = state.current_batch()) {
    rec.batch_size = batch->size();
    for (const auto& id : *batch) {
      auto it = state_.effective.find(id);
      if (it != state_.effective.end() && it->second == Decision::kIncluded) {
        ++rec.batch_included_count;
      }
    }
  }
  rec.training_size = labeled.size();
  rec.model_version = version;
  rec.rank_similarity = similarity;
  rec.validation_f1 = validation.f1;

  auto trial = state_.iterations;
  trial.push_back(rec);
  bool stop = should_stop_training(trial, cfg.stop);
  if (!stop) {
    std::vector<Prediction> open;
    for (const auto& p : snap->predictions) {
      if (state_.unscreened.count(p.doc_id)) open.push_back(p);
    }
    std::size_t k = cfg.batch_size;
    if (cfg.stop.max_training_size) {
      k = std::min(k, *cfg.stop.max_training_size - labeled.size());
    }
    if (!open.empty() && k > 0) {
      auto rng = make_rng(cfg.seed, kSampleStream, index);
      rec.sampled_ids = sample(cfg.strategy, open, k, rng);
    }
    stop = rec.sampled_ids.empty();
  }
  rec.stopped = stop;

  if (journal_) journal_->write_predictions(*snap);
  append(IterationCompleted{rec});
  snapshot_ = std::move(snap);
  if (stop) {
    append(PhaseChanged{Phase::kPrioritizedScreening, state_.screened.size()});
    if (state_.unscreened.empty()) append(PhaseChanged{Phase::kDone, state_.screened.size()});
  }
  return rec;
}

std::vector<std::string> Project::prioritized_queue() const {
  std::lock_guard lock(mu_);
  if (state_.phase != Phase::kPrioritizedScreening && state_.phase != Phase::kDone) {
    throw Error(ErrorCode::kWrongPhase, "no prioritized queue before training stops");
  }
  if (!snapshot_) throw Error(ErrorCode::kUntrainedModel, "no final model");
  std::vector<std::string> out;
  out.reserve(state_.unscreened.size());
  for (const auto& id : snapshot_->ranking) {
    if (state_.unscreened.count(id)) out.push_back(id);
  }
  return out;
}

void Project::finish() {
  std::lock_guard lock(mu_);
  if (state_.phase != Phase::kDone) append(PhaseChanged{Phase::kDone, state_.screened.size()});
}

}  // namespace triage
