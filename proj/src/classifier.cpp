#include "triage/classifier.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "triage/adapter.hpp"
#include "triage/error.hpp"

namespace triage {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_finite(Logits l) {
  if (!std::isfinite(l.excluded) || !std::isfinite(l.included)) {
    throw Error(ErrorCode::kNonFinite, "logits must be finite");
  }
}

}  // namespace

double priority_score(Logits logits) {
  require_finite(logits);
  const double m = std::max(logits.excluded, logits.included);
  const double e0 = std::exp(logits.excluded - m);
  const double e1 = std::exp(logits.included - m);
  return e1 / (e0 + e1);
}

double uncertainty(Logits logits) {
  const double ps = priority_score(logits);
  return std::min(ps, 1.0 - ps);
}

Prediction make_prediction(std::string doc_id, Logits logits) {
  Prediction p;
  p.doc_id = std::move(doc_id);
  p.logits = logits;
  p.priority_score = priority_score(logits);
  p.uncertainty = std::min(p.priority_score, 1.0 - p.priority_score);
  return p;
}

std::vector<Prediction> average_predictions(std::span<const std::vector<Prediction>> runs) {
  if (runs.empty()) return {};
  if (runs.size() == 1) return runs.front();
  std::vector<Prediction> out = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].size() != out.size()) {
      throw Error(ErrorCode::kIdSetMismatch, "prediction runs differ in length");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (runs[r][i].doc_id != out[i].doc_id) {
        throw Error(ErrorCode::kIdSetMismatch, "prediction runs differ in id order");
      }
      out[i].logits.excluded += runs[r][i].logits.excluded;
      out[i].logits.included += runs[r][i].logits.included;
      out[i].priority_score += runs[r][i].priority_score;
      out[i].uncertainty += runs[r][i].uncertainty;
    }
  }
  const double k = static_cast<double>(runs.size());
  for (auto& p : out) {
    p.logits.excluded /= k;
    p.logits.included /= k;
    p.priority_score /= k;
    p.uncertainty /= k;
  }
  return out;
}

std::size_t TrainingSet::count(Label label) const {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [&](const LabeledItem& it) { return it.label == label; }));
}

std::string TrainingSet::fingerprint() const {
  std::vector<std::string> keys;
  keys.reserve(items.size());
  for (const auto& it : items) {
    keys.push_back(it.doc_id + '\t' + (it.label == Label::kIncluded ? '1' : '0'));
  }
  std::sort(keys.begin(), keys.end());
  std::uint64_t h = kFnvOffset;
  for (const auto& k : keys) {
    h = fnv1a(k, h);
    h = fnv1a("\n", h);
  }
  return hex64(h);
}

TrainingSet oversample(const TrainingSet& set, Rng& rng) {
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    (set.items[i].label == Label::kIncluded ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) {
    throw Error(ErrorCode::kSingleClass, "cannot balance single-class set");
  }
  TrainingSet out = set;
  const auto& minority = pos.size() < neg.size() ? pos : neg;
  const std::size_t deficit = std::max(pos.size(), neg.size()) - minority.size();
  std::uniform_int_distribution<std::size_t> pick(0, minority.size() - 1);
  out.items.reserve(out.items.size() + deficit);
  for (std::size_t i = 0; i < deficit; ++i) {
    out.items.push_back(set.items[minority[pick(rng)]]);
  }
  return out;
}

std::pair<TrainingSet, TrainingSet> split_train_val(const TrainingSet& set, double fraction,
                                                    Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "split fraction must lie in (0, 1)");
  }
  const std::size_t n = set.items.size();
  if (n < 2) {
    throw Error(ErrorCode::kInvalidArgument, "need at least 2 items to split");
  }
  auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::pair<TrainingSet, TrainingSet> out;
  out.first.items.reserve(n_train);
  out.second.items.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? out.first : out.second).items.push_back(set.items[order[i]]);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

HashedFeaturizer::HashedFeaturizer(int hash_bits) : bits_(hash_bits) {
  if (hash_bits < 1 || hash_bits > 28) {
    throw Error(ErrorCode::kInvalidArgument, "hash_bits must lie in [1, 28]");
  }
}

SparseFeatures HashedFeaturizer::operator()(std::string_view text) const {
  const auto tokens = tokenize(text);
  const std::uint64_t mask = dimension() - 1;
  std::vector<std::uint32_t> raw;
  raw.reserve(tokens.size() * 2);
  auto bucket = [&](std::uint64_t h) {
    return static_cast<std::uint32_t>((h ^ (h >> 29)) & mask);
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    raw.push_back(bucket(fnv1a(tokens[i])));
    if (i + 1 < tokens.size()) {
      auto h = fnv1a(tokens[i]);
      h = fnv1a(" ", h);
      raw.push_back(bucket(fnv1a(tokens[i + 1], h)));
    }
  }
  std::sort(raw.begin(), raw.end());
  raw.erase(std::unique(raw.begin(), raw.end()), raw.end());

  SparseFeatures f;
  f.index = std::move(raw);
  if (!f.index.empty()) {
    const float v = static_cast<float>(1.0 / std::sqrt(static_cast<double>(f.index.size())));
    f.value.assign(f.index.size(), v);
  }
  return f;
}

TextIndex::TextIndex(std::vector<ScreeningText> texts, int hash_bits)
    : texts_(std::move(texts)), bits_(hash_bits) {
  HashedFeaturizer featurize(hash_bits);
  features_.reserve(texts_.size());
  for (std::size_t i = 0; i < texts_.size(); ++i) {
    slots_.emplace(texts_[i].doc_id, i);
    features_.push_back(featurize(texts_[i].text));
  }
}

bool TextIndex::contains(std::string_view id) const {
  return slots_.find(std::string(id)) != slots_.end();
}

std::size_t TextIndex::slot(std::string_view id) const {
  auto it = slots_.find(std::string(id));
  if (it == slots_.end()) {
    throw Error(ErrorCode::kMissingText, "no screening text for " + std::string(id));
  }
  return it->second;
}

const ScreeningText& TextIndex::text(std::string_view id) const { return texts_[slot(id)]; }

const SparseFeatures& TextIndex::features(std::string_view id) const {
  return features_[slot(id)];
}

Logits LinearParameters::score(const SparseFeatures& x) const {
  const std::size_t dim = std::size_t{1} << hash_bits;
  double z0 = bias[0];
  double z1 = bias[1];
  for (std::size_t k = 0; k < x.index.size(); ++k) {
    z0 += weights[x.index[k]] * x.value[k];
    z1 += weights[dim + x.index[k]] * x.value[k];
  }
  return {z0, z1};
}

bool ClassifierModel::trained() const {
  if (kind == ModelKind::kReferenceLinear) return parameters != nullptr;
  return !adapter_command.empty() && version > 0;
}

namespace {

ClassifierModel train_linear(const TrainingSet& set, const TextIndex& texts,
                             const TrainConfig& config, int version) {
  if (texts.hash_bits() != config.hash_bits) {
    throw Error(ErrorCode::kInvalidArgument, "text index and config disagree on hash_bits");
  }
  if (config.epochs < 1 || !(config.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epochs and learning_rate must be positive");
  }
  std::vector<const SparseFeatures*> xs;
  std::vector<int> ys;
  xs.reserve(set.size());
  ys.reserve(set.size());
  for (const auto& it : set.items) {
    xs.push_back(&texts.features(it.doc_id));
    ys.push_back(static_cast<int>(it.label));
  }

  auto params = std::make_shared<LinearParameters>();
  params->hash_bits = config.hash_bits;
  const std::size_t dim = std::size_t{1} << config.hash_bits;
  params->weights.assign(2 * dim, 0.0);

  Rng rng(config.seed);
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  const double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const auto& x = *xs[i];
      const Logits z = params->score(x);
      const double p1 = priority_score(z);
      // d(cross-entropy)/d(logit_c) = p_c - y_c; the two rows get opposite
      // gradients of equal magnitude.
      const double g1 = p1 - ys[i];
      const double g0 = -g1;
      for (std::size_t k = 0; k < x.index.size(); ++k) {
        params->weights[x.index[k]] -= lr * g0 * x.value[k];
        params->weights[dim + x.index[k]] -= lr * g1 * x.value[k];
      }
      params->bias[0] -= lr * g0;
      params->bias[1] -= lr * g1;
    }
  }

  ClassifierModel model;
  model.kind = ModelKind::kReferenceLinear;
  model.parameters = std::move(params);
  model.version = version;
  model.trained_on = set.fingerprint();
  return model;
}

ClassifierModel train_external(const TrainingSet& set, const TextIndex& texts,
                               const TrainConfig& config, int version) {
  if (config.adapter_command.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "external adapter needs a command");
  }
  std::vector<std::string> requests;
  requests.reserve(set.size());
  for (const auto& it : set.items) {
    requests.push_back(nlohmann::json{{"doc_id", it.doc_id},
                                      {"text", texts.text(it.doc_id).text},
                                      {"label", static_cast<int>(it.label)}}
                           .dump());
  }
  run_adapter(config.adapter_command, "train", requests);
  ClassifierModel model;
  model.kind = ModelKind::kExternalAdapter;
  model.adapter_command = config.adapter_command;
  model.version = version;
  model.trained_on = set.fingerprint();
  return model;
}

std::vector<Prediction> predict_external(const ClassifierModel& model,
                                         std::span<const std::string> ids,
                                         std::span<const std::string* const> texts) {
  std::vector<std::string> requests;
  requests.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    requests.push_back(nlohmann::json{{"doc_id", ids[i]}, {"text", *texts[i]}}.dump());
  }
  const auto lines = run_adapter(model.adapter_command, "predict", requests);
  std::unordered_map<std::string, Logits> by_id;
  for (const auto& line : lines) {
    try {
      const auto j = nlohmann::json::parse(line);
      by_id[j.at("doc_id").get<std::string>()] =
          Logits{j.at("logit0").get<double>(), j.at("logit1").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kAdapterFailure, std::string("bad adapter response: ") + e.what());
    }
  }
  std::vector<Prediction> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::kAdapterFailure, "adapter returned no logits for " + id);
    }
    out.push_back(make_prediction(id, it->second));
  }
  return out;
}

void require_trained(const ClassifierModel& model) {
  if (!model.trained()) throw Error(ErrorCode::kUntrainedModel, "model is not trained");
}

}  // namespace

ClassifierModel train(const TrainingSet& set, const TextIndex& texts, const TrainConfig& config,
                      int version) {
  if (set.empty()) throw Error(ErrorCode::kInvalidArgument, "empty training set");
  if (set.count(Label::kIncluded) == 0 || set.count(Label::kExcluded) == 0) {
    throw Error(ErrorCode::kSingleClass, "training set has a single class");
  }
  for (const auto& it : set.items) {
    if (!texts.contains(it.doc_id)) {
      throw Error(ErrorCode::kMissingText, "no screening text for " + it.doc_id);
    }
  }
  if (config.kind == ModelKind::kExternalAdapter) {
    return train_external(set, texts, config, version);
  }
  return train_linear(set, texts, config, version);
}

std::vector<Prediction> predict(const ClassifierModel& model,
                                std::span<const ScreeningText> texts) {
  require_trained(model);
  std::vector<Prediction> out;
  out.reserve(texts.size());
  if (model.kind == ModelKind::kExternalAdapter) {
    std::vector<std::string> ids;
    std::vector<const std::string*> bodies;
    for (const auto& t : texts) {
      ids.push_back(t.doc_id);
      bodies.push_back(&t.text);
    }
    return predict_external(model, ids, bodies);
  }
  HashedFeaturizer featurize(model.parameters->hash_bits);
  for (const auto& t : texts) {
    out.push_back(make_prediction(t.doc_id, model.parameters->score(featurize(t.text))));
  }
  return out;
}

std::vector<Prediction> predict(const ClassifierModel& model, const TextIndex& index,
                                std::span<const std::string> ids) {
  require_trained(model);
  if (model.kind == ModelKind::kExternalAdapter) {
    std::vector<const std::string*> bodies;
    bodies.reserve(ids.size());
    for (const auto& id : ids) bodies.push_back(&index.text(id).text);
    return predict_external(model, ids, bodies);
  }
  if (index.hash_bits() != model.parameters->hash_bits) {
    throw Error(ErrorCode::kInvalidArgument, "text index and model disagree on hash_bits");
  }
  std::vector<Prediction> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    out.push_back(make_prediction(id, model.parameters->score(index.features(id))));
  }
  return out;
}

F1Report f1_from_scores(std::span<const double> scores, std::span<const Label> truth,
                        double threshold) {
  if (scores.size() != truth.size()) {
    throw Error(ErrorCode::kInvalidArgument, "scores and labels differ in length");
  }
  if (scores.empty()) throw Error(ErrorCode::kInvalidArgument, "no labeled items to score");
  F1Report r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = truth[i] == Label::kIncluded;
    if (predicted && actual) ++r.tp;
    else if (predicted) ++r.fp;
    else if (actual) ++r.fn;
    else ++r.tn;
  }
  r.precision = (r.tp + r.fp) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  if (r.precision + r.recall == 0.0) {
    r.degenerate = true;
    r.f1 = 0.0;
  } else {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

F1Report evaluate_f1(const ClassifierModel& model, const TrainingSet& labeled,
                     const TextIndex& texts, double threshold) {
  if (labeled.empty()) throw Error(ErrorCode::kInvalidArgument, "no labeled items to score");
  std::vector<std::string> ids;
  std::vector<Label> truth;
  ids.reserve(labeled.size());
  truth.reserve(labeled.size());
  for (const auto& it : labeled.items) {
    ids.push_back(it.doc_id);
    truth.push_back(it.label);
  }
  const auto preds = predict(model, texts, ids);
  std::vector<double> scores;
  scores.reserve(preds.size());
  for (const auto& p : preds) scores.push_back(p.priority_score);
  return f1_from_scores(scores, truth, threshold);
}

}  // namespace triage
