#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "triage/classifier.hpp"
#include "triage/corpus.hpp"
#include "triage/error.hpp"
#include "triage/sampling.hpp"

namespace triage {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// ISO-8601 UTC with millisecond precision, e.g. 2024-03-01T12:00:00.000Z.
std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(std::string_view s);
Timestamp now_utc();

enum class Decision { kIncluded, kExcluded };

Decision parse_decision(std::string_view s);
std::string_view decision_name(Decision d);

struct LabelRecord {
  std::string doc_id;
  Decision decision = Decision::kExcluded;
  std::optional<std::string> exclusion_criterion;
  std::string screener_id;
  Timestamp timestamp{};
  int iteration = 0;

  bool operator==(const LabelRecord&) const = default;
};

void to_json(nlohmann::json& j, const LabelRecord& r);
void from_json(const nlohmann::json& j, LabelRecord& r);

enum class Phase { kBootstrapping, kActiveLearning, kPrioritizedScreening, kDone };

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view s);

struct StopConfig {
  /// Spearman threshold on consecutive rankings; nullopt disables the test.
  std::optional<double> rho_threshold = 0.95;
  int patience = 1;
  std::optional<int> max_iterations;
  std::optional<std::size_t> max_training_size;
  /// Advisory stop-screening threshold on the last prioritized batch.
  double min_inclusion_rate = 0.0;

  bool operator==(const StopConfig&) const = default;
};

struct ProjectConfig {
  StrategyKind strategy = StrategyKind::kHighestPriority;
  std::size_t batch_size = 1000;
  std::size_t init_size = 1000;
  double train_fraction = 0.85;
  StopConfig stop;
  TrainConfig train;
  /// Independently seeded models whose predictions are averaged.
  int ensemble_runs = 1;
  std::uint64_t seed = 0;
  bool auto_retrain = false;
  std::vector<std::string> exclusion_criteria;

  bool operator==(const ProjectConfig&) const = default;
  /// Throws Error(kInvalidArgument) whose message starts with the field name.
  void validate() const;
};

nlohmann::json to_json(const ProjectConfig& c);
/// Missing keys keep their defaults; unknown or ill-typed values throw.
ProjectConfig config_from_json(const nlohmann::json& j);

struct IterationRecord {
  int index = 0;
  StrategyKind strategy = StrategyKind::kRandom;
  /// Batch labeled before this cycle's training (the bootstrap batch for
  /// index 0) and how many of its documents were included.
  std::size_t batch_size = 0;
  std::size_t batch_included_count = 0;
  std::size_t training_size = 0;
  int model_version = 0;
  std::optional<double> rank_similarity;
  std::optional<double> validation_f1;
  bool stopped = false;
  /// Next batch issued to screeners; empty once training stops.
  std::vector<std::string> sampled_ids;

  bool operator==(const IterationRecord&) const = default;
};

void to_json(nlohmann::json& j, const IterationRecord& r);
void from_json(const nlohmann::json& j, IterationRecord& r);

struct BootstrapIssued {
  std::vector<std::string> ids;
};
struct PhaseChanged {
  Phase phase = Phase::kBootstrapping;
  /// Screened count at the moment of the transition.
  std::size_t screened = 0;
};
struct IterationCompleted {
  IterationRecord record;
};
using HistoryEvent = std::variant<BootstrapIssued, PhaseChanged, IterationCompleted>;

nlohmann::json to_json(const HistoryEvent& e);
HistoryEvent history_event_from_json(const nlohmann::json& j);

/// Everything that the label ledger and the history log determine.
struct ProjectState {
  std::string project_id;
  ProjectConfig config;
  Phase phase = Phase::kBootstrapping;
  int model_version = 0;
  std::unordered_set<std::string> screened;
  std::unordered_set<std::string> unscreened;
  std::unordered_map<std::string, Decision> effective;
  /// First-decision order of screened ids.
  std::vector<std::string> screening_order;
  /// Every batch handed to screeners by the engine, bootstrap first.
  std::vector<std::vector<std::string>> issued_batches;
  /// Screened count when prioritized screening began.
  std::optional<std::size_t> prioritized_start;
  std::vector<IterationRecord> iterations;

  bool operator==(const ProjectState&) const = default;

  static ProjectState initial(std::string project_id, ProjectConfig config,
                              const std::vector<std::string>& corpus_ids);

  void apply(const LabelRecord& rec);
  void apply(const HistoryEvent& ev);

  const std::vector<std::string>* current_batch() const;
  /// Ids of the current batch that have no decision yet.
  std::vector<std::string> pending_ids() const;
  std::size_t identified() const;
  TrainingSet training_set() const;
};

/// Raised by run_iteration while the current batch still has unlabeled ids.
class PendingLabelsError : public Error {
 public:
  explicit PendingLabelsError(std::vector<std::string> ids);
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

/// Rebuilds the state from empty by replaying both logs.
ProjectState replay(std::string project_id, ProjectConfig config,
                    const std::vector<std::string>& corpus_ids,
                    const std::vector<LabelRecord>& ledger,
                    const std::vector<HistoryEvent>& history);

/// Spearman rank correlation of two rankings of the same id set.
double rank_similarity(const std::vector<std::string>& previous,
                       const std::vector<std::string>& current);

bool should_stop_training(const std::vector<IterationRecord>& history, const StopConfig& stop);

/// Advisory: true iff included / batch_size < min_rate.
bool should_stop_screening(std::size_t recent_batch_included, std::size_t batch_size,
                           double min_rate);

struct BatchRate {
  std::size_t index = 0;
  Phase phase = Phase::kBootstrapping;
  std::size_t size = 0;
  std::size_t labeled = 0;
  std::size_t included = 0;
  bool complete = false;
  double rate() const { return size ? static_cast<double>(included) / size : 0.0; }
};

/// Issued batches followed by batch_size chunks of prioritized screening.
std::vector<BatchRate> batch_history(const ProjectState& state);

/// Model output over the pool that was unscreened when it was trained.
struct PredictionSnapshot {
  int model_version = 0;
  std::vector<Prediction> predictions;
  std::vector<std::string> ranking;
  std::unordered_map<std::string, std::size_t> position;
  std::optional<F1Report> validation;

  const Prediction* find(std::string_view id) const;
};

std::shared_ptr<const PredictionSnapshot> make_snapshot(int model_version,
                                                        std::vector<Prediction> predictions,
                                                        std::optional<F1Report> validation);

/// Corpus with its preprocessed, featurized texts.
struct CorpusData {
  Corpus corpus;
  TextIndex texts;
  std::vector<std::string> ids;
};

std::shared_ptr<const CorpusData> make_corpus_data(
    Corpus corpus, int hash_bits = 18,
    const std::vector<SentenceFilter>& filters = default_filters());

/// Append-only project directory: config.json, corpus.jsonl, ledger.jsonl,
/// history.jsonl and predictions/v<N>.jsonl. Appends are fsynced.
class ProjectJournal {
 public:
  explicit ProjectJournal(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  void write_config(const ProjectConfig& config) const;
  void write_corpus(const Corpus& corpus) const;
  void append_label(const LabelRecord& rec) const;
  void append_event(const HistoryEvent& ev) const;
  void write_predictions(const PredictionSnapshot& snap) const;

  ProjectConfig read_config() const;
  Corpus read_corpus() const;
  std::vector<LabelRecord> read_ledger() const;
  std::vector<HistoryEvent> read_history() const;
  std::shared_ptr<const PredictionSnapshot> read_predictions(int version) const;

 private:
  std::filesystem::path dir_;
};

struct BootstrapResult {
  std::vector<std::string> ids;
  bool clamped = false;
};

/// One screening project: the label ledger, the phase machine and the
/// screen-train-predict-sample loop. All mutations go through one mutex;
/// training runs outside it with at most one job in flight.
class Project {
 public:
  Project(std::string id, ProjectConfig config, std::shared_ptr<const CorpusData> data,
          std::unique_ptr<ProjectJournal> journal = nullptr);

  /// Rebuilds a project from its directory.
  static std::unique_ptr<Project> recover(std::string id, const std::filesystem::path& dir);

  const std::string& id() const { return id_; }
  ProjectConfig config() const;
  ProjectState state() const;
  std::shared_ptr<const CorpusData> data() const;
  std::shared_ptr<const PredictionSnapshot> snapshot() const;
  std::vector<LabelRecord> ledger() const;
  std::vector<HistoryEvent> history() const;
  bool training_in_flight() const;

  /// Adds documents before the first batch is issued.
  std::size_t add_documents(Corpus docs);

  /// Issues the initial random batch (config.init_size unless given).
  /// Returns the outstanding batch when one is already issued.
  BootstrapResult bootstrap(std::optional<std::size_t> k = std::nullopt);

  void record_label(LabelRecord rec);

  /// One screen-train-predict-sample cycle.
  IterationRecord run_iteration();

  /// Unscreened ids by descending final priority score, ties by id.
  std::vector<std::string> prioritized_queue() const;

  /// Human decision to end screening.
  void finish();

 private:
  void append(const HistoryEvent& ev);  // requires mu_
  void advance_after_label();          // requires mu_

  std::string id_;
  mutable std::mutex mu_;
  ProjectState state_;
  std::shared_ptr<const CorpusData> data_;
  std::shared_ptr<const PredictionSnapshot> snapshot_;
  std::vector<LabelRecord> ledger_;
  std::vector<HistoryEvent> history_;
  std::unique_ptr<ProjectJournal> journal_;
  bool training_ = false;
};

/// Deterministic generator for a (seed, stream, index) triple.
Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace triage
