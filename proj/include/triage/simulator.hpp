#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "triage/engine.hpp"
#include "triage/metrics.hpp"
#include "triage/sampling.hpp"

namespace triage {

/// A fully labeled corpus used to answer screening queries instantly.
struct OracleCorpus {
  std::shared_ptr<const CorpusData> data;
  std::unordered_map<std::string, bool> truth;
  std::size_t n_included = 0;
  double prevalence = 0.0;

  std::size_t size() const { return data ? data->ids.size() : 0; }
};

OracleCorpus make_oracle_corpus(Corpus corpus, std::unordered_map<std::string, bool> truth,
                                int hash_bits = 18);

/// Reads "doc_id,label" lines (label 1/0, true/false or included/excluded).
/// A header line is allowed.
std::unordered_map<std::string, bool> read_truth(const std::filesystem::path& path);

/// Template abstracts over a shared background vocabulary. With probability
/// `signal` an included document carries indicative terms and an excluded one
/// carries distractor terms; the rest carry neither.
OracleCorpus generate_synthetic_corpus(std::size_t n, double prevalence, double signal,
                                       std::uint64_t seed, int hash_bits = 18);

struct ExperimentConfig {
  std::vector<StrategyKind> strategies{StrategyKind::kHighestPriority,
                                       StrategyKind::kLeastConfidence, StrategyKind::kRandom};
  std::vector<std::size_t> training_sizes{500, 1000, 2000};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double target_ir = 0.8;
  std::size_t batch_size = 250;
  std::size_t init_size = 500;
  TrainConfig train;
  int ensemble_runs = 1;
  /// Worker threads for independent cells; 0 picks the hardware count.
  unsigned threads = 0;

  void validate() const;
};

struct CellResult {
  StrategyKind strategy = StrategyKind::kRandom;
  std::size_t training_size = 0;
  std::uint64_t seed = 0;
  HeIrCurve curve;
  std::optional<double> he_at_target;
  /// F1 at 0.5 of the final model on its validation split and on the
  /// documents it ranked for prioritized screening.
  std::optional<double> validation_f1;
  std::optional<double> pool_f1;
  std::size_t iterations = 0;
  /// Included and total documents over the active-learning batches.
  std::size_t al_included = 0;
  std::size_t al_screened = 0;

  std::string cell_id() const;
  std::optional<double> al_inclusion_fraction() const;
};

/// Screening in a random order with no model, one row per seed.
struct ControlResult {
  std::uint64_t seed = 0;
  HeIrCurve curve;
  std::optional<double> he_at_target;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::size_t n = 0;
  std::size_t n_included = 0;
  std::vector<CellResult> cells;  // strategy-major, then size, then seed
  std::vector<ControlResult> control;
};

/// Drives one engine per (strategy, size, seed) cell with an oracle screener.
/// Training stops at the cell's training size; the remaining pool is then
/// screened in descending priority with the final model.
ExperimentResult run_experiment(const OracleCorpus& corpus, const ExperimentConfig& config);

/// One cell, exposed for tests and the holdout mode.
CellResult run_cell(const OracleCorpus& corpus, const ExperimentConfig& config,
                    StrategyKind strategy, std::size_t training_size, std::uint64_t seed);

struct Aggregate {
  double mean = 0.0;
  std::optional<double> standard_error;
  std::size_t count = 0;
};

/// Mean and standard error; nullopt SE with fewer than two values.
Aggregate aggregate(const std::vector<double>& values);

struct SizeSummary {
  std::size_t training_size = 0;
  std::optional<Aggregate> he_at_target;  // nullopt when any seed is unreachable
  std::size_t unreachable = 0;
  std::optional<Aggregate> pool_f1;
  std::optional<Aggregate> validation_f1;
  std::optional<Aggregate> al_inclusion_fraction;
};

struct StrategySummary {
  StrategyKind strategy = StrategyKind::kRandom;
  std::vector<SizeSummary> sizes;
  std::optional<std::size_t> best_size;
  std::optional<Aggregate> best_he;
  bool unreachable = false;
  std::optional<EffortSaved> saved_vs_control;
  std::optional<double> hours_saved_vs_control;
  /// Keyed by the other strategy's name; absent when either row is flagged.
  std::vector<std::pair<std::string, EffortSaved>> saved_vs_strategy;
};

struct ComparisonTable {
  double target_ir = 0.8;
  Aggregate control_he;
  std::vector<StrategySummary> strategies;
};

ComparisonTable compare_strategies(const ExperimentResult& result);

nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const ComparisonTable& table);

/// cells/<cell>.csv, control/<seed>.csv, long.csv and summary.json.
void write_report(const ExperimentResult& result, const ComparisonTable& table,
                  const std::filesystem::path& dir);

/// One-shot evaluation: train on a random fraction of the labeled corpus and
/// rank the held-out rest.
struct HoldoutResult {
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  F1Report f1;
  HeIrCurve curve;
  std::optional<double> he_at_target;
};

HoldoutResult run_holdout(const OracleCorpus& corpus, double train_fraction, std::uint64_t seed,
                          const TrainConfig& train_config, double target_ir = 0.8);

nlohmann::json to_json(const HoldoutResult& result);

}  // namespace triage
