#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "triage/corpus.hpp"

namespace triage {

using Rng = std::mt19937_64;

/// Raw two-class model output; index 1 is the "included" class.
struct Logits {
  double excluded = 0.0;
  double included = 0.0;

  bool operator==(const Logits&) const = default;
};

/// Probability of the included class under the normalized exponential.
/// Throws on non-finite input.
double priority_score(Logits logits);

/// 1 - max class probability, evaluated as min(PS, 1 - PS).
double uncertainty(Logits logits);

struct Prediction {
  std::string doc_id;
  Logits logits;
  double priority_score = 0.0;
  double uncertainty = 0.0;

  bool operator==(const Prediction&) const = default;
};

Prediction make_prediction(std::string doc_id, Logits logits);

/// Per-document mean of priority score and uncertainty over several model
/// runs. Every run must cover the same ids in the same order.
std::vector<Prediction> average_predictions(std::span<const std::vector<Prediction>> runs);

enum class Label : int { kExcluded = 0, kIncluded = 1 };

struct LabeledItem {
  std::string doc_id;
  Label label = Label::kExcluded;

  bool operator==(const LabeledItem&) const = default;
};

struct TrainingSet {
  std::vector<LabeledItem> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::size_t count(Label label) const;
  /// Order-independent digest of the (doc_id, label) multiset.
  std::string fingerprint() const;
};

/// Duplicates minority-class items, drawn with replacement, until both
/// classes have equal counts. Originals keep their order; copies follow.
TrainingSet oversample(const TrainingSet& set, Rng& rng);

/// Random partition with |train| = round(fraction * |set|), clamped so that
/// neither side is empty.
std::pair<TrainingSet, TrainingSet> split_train_val(const TrainingSet& set, double fraction,
                                                    Rng& rng);

/// Hashed bag of lowercased word unigrams and bigrams, L2 normalized.
struct SparseFeatures {
  std::vector<std::uint32_t> index;
  std::vector<float> value;
};

class HashedFeaturizer {
 public:
  explicit HashedFeaturizer(int hash_bits = 18);

  int hash_bits() const { return bits_; }
  std::size_t dimension() const { return std::size_t{1} << bits_; }
  SparseFeatures operator()(std::string_view text) const;

 private:
  int bits_;
};

/// Lowercased alphanumeric tokens, in order.
std::vector<std::string> tokenize(std::string_view text);

/// Screening texts keyed by document id, with features computed once.
class TextIndex {
 public:
  TextIndex() = default;
  TextIndex(std::vector<ScreeningText> texts, int hash_bits = 18);

  bool contains(std::string_view id) const;
  const ScreeningText& text(std::string_view id) const;
  const SparseFeatures& features(std::string_view id) const;
  const std::vector<ScreeningText>& texts() const { return texts_; }
  int hash_bits() const { return bits_; }

 private:
  std::size_t slot(std::string_view id) const;

  std::vector<ScreeningText> texts_;
  std::vector<SparseFeatures> features_;
  std::unordered_map<std::string, std::size_t> slots_;
  int bits_ = 18;
};

enum class ModelKind { kReferenceLinear, kExternalAdapter };

struct TrainConfig {
  ModelKind kind = ModelKind::kReferenceLinear;
  int epochs = 5;
  double learning_rate = 0.1;
  int hash_bits = 18;
  std::uint64_t seed = 0;
  /// Shell command for the external adapter (kind == kExternalAdapter).
  std::string adapter_command;

  bool operator==(const TrainConfig&) const = default;
};

/// Two-output linear layer over hashed features.
struct LinearParameters {
  int hash_bits = 18;
  std::vector<double> weights;  // [class][feature], row-major, 2 rows
  double bias[2] = {0.0, 0.0};

  Logits score(const SparseFeatures& x) const;
};

struct ClassifierModel {
  ModelKind kind = ModelKind::kReferenceLinear;
  std::shared_ptr<const LinearParameters> parameters;
  std::string adapter_command;
  int version = 0;
  std::string trained_on;

  bool trained() const;
};

/// Fits a model on the labeled items. `version` is recorded on the result.
ClassifierModel train(const TrainingSet& set, const TextIndex& texts, const TrainConfig& config,
                      int version = 1);

std::vector<Prediction> predict(const ClassifierModel& model,
                                std::span<const ScreeningText> texts);

/// Prediction for indexed documents, reusing their cached features.
std::vector<Prediction> predict(const ClassifierModel& model, const TextIndex& index,
                                std::span<const std::string> ids);

struct F1Report {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  // precision + recall == 0; f1 is reported as 0 by convention.
  bool degenerate = false;
};

/// Confusion-matrix F1 of the included class; PS >= threshold is included.
F1Report f1_from_scores(std::span<const double> scores, std::span<const Label> truth,
                        double threshold = 0.5);

F1Report evaluate_f1(const ClassifierModel& model, const TrainingSet& labeled,
                     const TextIndex& texts, double threshold = 0.5);

}  // namespace triage
