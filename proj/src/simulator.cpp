#include "triage/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "triage/error.hpp"

namespace triage {

namespace fs = std::filesystem;
using nlohmann::json;

OracleCorpus make_oracle_corpus(Corpus corpus, std::unordered_map<std::string, bool> truth,
                                int hash_bits) {
  OracleCorpus oc;
  for (const auto& d : corpus.documents()) {
    auto it = truth.find(d.id);
    if (it == truth.end()) throw Error(ErrorCode::kMissingColumn, "no label for document " + d.id);
    if (it->second) ++oc.n_included;
  }
  if (oc.n_included == 0) throw Error(ErrorCode::kSingleClass, "corpus has no included documents");
  if (oc.n_included == corpus.size()) {
    throw Error(ErrorCode::kSingleClass, "corpus has no excluded documents");
  }
  oc.prevalence = static_cast<double>(oc.n_included) / static_cast<double>(corpus.size());
  std::unordered_map<std::string, bool> kept;
  kept.reserve(corpus.size());
  for (const auto& d : corpus.documents()) kept.emplace(d.id, truth.at(d.id));
  oc.truth = std::move(kept);
  oc.data = make_corpus_data(std::move(corpus), hash_bits);
  return oc;
}

std::unordered_map<std::string, bool> read_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kUnreadableFile, "cannot read " + path.string());
  std::unordered_map<std::string, bool> truth;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected id,label");
    }
    const std::string id = line.substr(0, comma);
    std::string label = line.substr(comma + 1);
    std::transform(label.begin(), label.end(), label.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    bool value;
    if (label == "1" || label == "true" || label == "included") {
      value = true;
    } else if (label == "0" || label == "false" || label == "excluded") {
      value = false;
    } else if (line_no == 1) {
      continue;
    } else {
      throw Error(ErrorCode::kParseError,
                  "line " + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    truth[id] = value;
  }
  if (truth.empty()) throw Error(ErrorCode::kEmptyCorpus, "no labels in " + path.string());
  return truth;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr std::size_t kBackgroundWords = 400;
constexpr std::size_t kIndicativeWords = 16;
constexpr std::size_t kDistractorWords = 16;
constexpr double kNearMissRate = 0.04;

std::string word(const char* prefix, std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%s%zu", prefix, i);
  return buf;
}

}  // namespace

OracleCorpus generate_synthetic_corpus(std::size_t n, double prevalence, double signal,
                                       std::uint64_t seed, int hash_bits) {
  if (!(prevalence > 0.0 && prevalence < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "prevalence must lie in (0, 1)");
  }
  if (!(signal >= 0.0 && signal <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "signal must lie in [0, 1]");
  }
  if (static_cast<double>(n) * prevalence < 2.0) {
    throw Error(ErrorCode::kInvalidArgument, "n * prevalence must be at least 2");
  }
  const auto n_included = static_cast<std::size_t>(std::llround(static_cast<double>(n) * prevalence));

  Rng rng(seed);
  std::vector<char> included(n, 0);
  std::fill(included.begin(), included.begin() + static_cast<std::ptrdiff_t>(n_included), 1);
  std::shuffle(included.begin(), included.end(), rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Zipf-like background: low indices are common.
  auto background = [&]() {
    const double u = unit(rng);
    return word("w", static_cast<std::size_t>(std::pow(u, 2.0) * kBackgroundWords));
  };
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  Corpus corpus;
  std::unordered_map<std::string, bool> truth;
  truth.reserve(n);
  const int width = static_cast<int>(std::to_string(n).size());
  for (std::size_t i = 0; i < n; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "S%0*zu", width, i + 1);
    const bool inc = included[i] != 0;

    std::vector<std::vector<std::string>> sentences(pick(3, 5));
    for (auto& s : sentences) {
      const std::size_t len = pick(8, 14);
      for (std::size_t w = 0; w < len; ++w) s.push_back(background());
    }
    auto plant = [&](const std::string& token) {
      auto& s = sentences[pick(0, sentences.size() - 1)];
      s.insert(s.begin() + static_cast<std::ptrdiff_t>(pick(0, s.size())), token);
    };
    const bool carries = unit(rng) < signal;
    if (carries && inc) {
      for (std::size_t k = pick(2, 6); k > 0; --k) plant(word("ind", pick(0, kIndicativeWords - 1)));
    } else if (carries) {
      for (std::size_t k = pick(2, 5); k > 0; --k) plant(word("dis", pick(0, kDistractorWords - 1)));
      if (unit(rng) < kNearMissRate) plant(word("ind", pick(0, kIndicativeWords - 1)));
    }

    Document doc;
    doc.id = idbuf;
    std::string title;
    for (std::size_t w = pick(4, 7); w > 0; --w) {
      if (!title.empty()) title += ' ';
      title += background();
    }
    title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(title[0])));
    doc.title = title;
    for (const auto& s : sentences) {
      if (!doc.abstract.empty()) doc.abstract += ' ';
      for (std::size_t w = 0; w < s.size(); ++w) {
        if (w) doc.abstract += ' ';
        doc.abstract += s[w];
      }
      doc.abstract += '.';
    }
    doc.year = static_cast<int>(pick(2000, 2023));
    truth.emplace(doc.id, inc);
    corpus.add(std::move(doc));
  }
  return make_oracle_corpus(std::move(corpus), std::move(truth), hash_bits);
}

// ---------------------------------------------------------------------------
// Experiments

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw Error(ErrorCode::kInvalidArgument, "strategies: empty list");
  if (training_sizes.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "training_sizes: empty list");
  }
  if (seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "seeds: empty list");
  if (!std::is_sorted(training_sizes.begin(), training_sizes.end()) ||
      std::adjacent_find(training_sizes.begin(), training_sizes.end()) != training_sizes.end()) {
    throw Error(ErrorCode::kInvalidArgument, "training_sizes: must be strictly ascending");
  }
  if (training_sizes.front() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "training_sizes: must be at least 2");
  }
  if (!(target_ir > 0.0 && target_ir <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "target_ir: must lie in (0, 1]");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size: must be at least 1");
  if (init_size < 2) throw Error(ErrorCode::kInvalidArgument, "init_size: must be at least 2");
  if (ensemble_runs < 1) {
    throw Error(ErrorCode::kInvalidArgument, "ensemble_runs: must be at least 1");
  }
}

std::string CellResult::cell_id() const {
  return std::string(strategy_name(strategy)) + "_size" + std::to_string(training_size) +
         "_seed" + std::to_string(seed);
}

std::optional<double> CellResult::al_inclusion_fraction() const {
  if (al_screened == 0) return std::nullopt;
  return static_cast<double>(al_included) / static_cast<double>(al_screened);
}

CellResult run_cell(const OracleCorpus& corpus, const ExperimentConfig& config,
                    StrategyKind strategy, std::size_t training_size, std::uint64_t seed) {
  ProjectConfig pc;
  pc.strategy = strategy;
  pc.batch_size = config.batch_size;
  pc.init_size = std::min(config.init_size, training_size);
  pc.stop.rho_threshold = std::nullopt;
  pc.stop.max_training_size = training_size;
  pc.train = config.train;
  pc.train.hash_bits = corpus.data->texts.hash_bits();
  pc.ensemble_runs = config.ensemble_runs;
  pc.seed = seed;

  CellResult cell;
  cell.strategy = strategy;
  cell.training_size = training_size;
  cell.seed = seed;

  Project project("simulation", pc, corpus.data);
  int iteration = 0;
  auto screen = [&](const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      LabelRecord rec;
      rec.doc_id = id;
      rec.decision = corpus.truth.at(id) ? Decision::kIncluded : Decision::kExcluded;
      rec.screener_id = "oracle";
      rec.iteration = iteration;
      project.record_label(std::move(rec));
    }
  };

  screen(project.bootstrap().ids);
  std::optional<IterationRecord> last;
  while (project.state().phase == Phase::kActiveLearning) {
    last = project.run_iteration();
    ++iteration;
    screen(last->sampled_ids);
  }
  cell.iterations = static_cast<std::size_t>(iteration);
  if (last) cell.validation_f1 = last->validation_f1;

  if (project.state().phase == Phase::kPrioritizedScreening) {
    const auto snap = project.snapshot();
    std::vector<double> scores;
    std::vector<Label> truth;
    for (const auto& p : snap->predictions) {
      scores.push_back(p.priority_score);
      truth.push_back(corpus.truth.at(p.doc_id) ? Label::kIncluded : Label::kExcluded);
    }
    if (!scores.empty()) cell.pool_f1 = f1_from_scores(scores, truth).f1;
    screen(project.prioritized_queue());
  }

  const auto state = project.state();
  cell.curve = build_curve(state.screening_order, corpus.truth, corpus.size(), corpus.n_included);
  try {
    cell.he_at_target = he_at_target(cell.curve, config.target_ir);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTargetUnreachable) throw;
  }
  for (std::size_t b = 1; b < state.issued_batches.size(); ++b) {
    for (const auto& id : state.issued_batches[b]) {
      ++cell.al_screened;
      if (corpus.truth.at(id)) ++cell.al_included;
    }
  }
  return cell;
}

namespace {

constexpr std::uint64_t kControlStream = 90;

ControlResult run_control(const OracleCorpus& corpus, double target_ir, std::uint64_t seed) {
  ControlResult row;
  row.seed = seed;
  auto order = corpus.data->ids;
  auto rng = make_rng(seed, kControlStream);
  std::shuffle(order.begin(), order.end(), rng);
  row.curve = build_curve(order, corpus.truth, corpus.size(), corpus.n_included);
  row.he_at_target = he_at_target(row.curve, target_ir);
  return row;
}

}  // namespace

ExperimentResult run_experiment(const OracleCorpus& corpus, const ExperimentConfig& config) {
  config.validate();
  if (!corpus.data || corpus.size() == 0) {
    throw Error(ErrorCode::kEmptyCorpus, "oracle corpus is empty");
  }
  ExperimentResult result;
  result.config = config;
  result.n = corpus.size();
  result.n_included = corpus.n_included;

  struct CellKey {
    StrategyKind strategy;
    std::size_t size;
    std::uint64_t seed;
  };
  std::vector<CellKey> keys;
  for (auto s : config.strategies) {
    for (auto size : config.training_sizes) {
      for (auto seed : config.seeds) keys.push_back({s, size, seed});
    }
  }
  result.cells.resize(keys.size());
  std::vector<std::exception_ptr> failures(keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      try {
        result.cells[i] = run_cell(corpus, config, keys[i].strategy, keys[i].size, keys[i].seed);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  unsigned threads = config.threads ? config.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(keys.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  for (auto seed : config.seeds) result.control.push_back(run_control(corpus, config.target_ir, seed));
  return result;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    a.standard_error = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return a;
}

ComparisonTable compare_strategies(const ExperimentResult& result) {
  const auto& cfg = result.config;
  ComparisonTable table;
  table.target_ir = cfg.target_ir;
  std::vector<double> control;
  for (const auto& c : result.control) {
    if (c.he_at_target) control.push_back(*c.he_at_target);
  }
  table.control_he = aggregate(control);

  for (auto strategy : cfg.strategies) {
    StrategySummary row;
    row.strategy = strategy;
    for (auto size : cfg.training_sizes) {
      SizeSummary ss;
      ss.training_size = size;
      std::vector<double> he, pool_f1, val_f1, al;
      for (const auto& cell : result.cells) {
        if (cell.strategy != strategy || cell.training_size != size) continue;
        if (cell.he_at_target) he.push_back(*cell.he_at_target);
        else ++ss.unreachable;
        if (cell.pool_f1) pool_f1.push_back(*cell.pool_f1);
        if (cell.validation_f1) val_f1.push_back(*cell.validation_f1);
        if (auto f = cell.al_inclusion_fraction()) al.push_back(*f);
      }
      if (ss.unreachable == 0 && !he.empty()) ss.he_at_target = aggregate(he);
      if (!pool_f1.empty()) ss.pool_f1 = aggregate(pool_f1);
      if (!val_f1.empty()) ss.validation_f1 = aggregate(val_f1);
      if (!al.empty()) ss.al_inclusion_fraction = aggregate(al);
      if (ss.he_at_target && (!row.best_he || ss.he_at_target->mean < row.best_he->mean)) {
        row.best_he = ss.he_at_target;
        row.best_size = size;
      }
      row.sizes.push_back(ss);
    }
    row.unreachable = !row.best_he.has_value();
    if (!row.unreachable) {
      row.saved_vs_control = effort_saved(cfg.target_ir, row.best_he->mean);
      row.hours_saved_vs_control = hours_saved(cfg.target_ir, row.best_he->mean, result.n);
    }
    table.strategies.push_back(std::move(row));
  }
  for (auto& row : table.strategies) {
    if (row.unreachable) continue;
    for (const auto& other : table.strategies) {
      if (other.strategy == row.strategy || other.unreachable) continue;
      row.saved_vs_strategy.emplace_back(std::string(strategy_name(other.strategy)),
                                         effort_saved(other.best_he->mean, row.best_he->mean));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json agg_json(const std::optional<Aggregate>& a) {
  if (!a) return nullptr;
  return {{"mean", a->mean}, {"se", opt(a->standard_error)}, {"count", a->count}};
}

json saved_json(const EffortSaved& s) { return {{"absolute", s.absolute}, {"relative", s.relative}}; }

}  // namespace

json to_json(const ExperimentConfig& c) {
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(strategy_name(s));
  return {{"strategies", strategies},
          {"training_sizes", c.training_sizes},
          {"seeds", c.seeds},
          {"target_ir", c.target_ir},
          {"batch_size", c.batch_size},
          {"init_size", c.init_size},
          {"epochs", c.train.epochs},
          {"learning_rate", c.train.learning_rate},
          {"hash_bits", c.train.hash_bits},
          {"ensemble_runs", c.ensemble_runs}};
}

json to_json(const ComparisonTable& t) {
  json rows = json::array();
  for (const auto& r : t.strategies) {
    json sizes = json::array();
    for (const auto& s : r.sizes) {
      sizes.push_back({{"training_size", s.training_size},
                       {"he_at_target", agg_json(s.he_at_target)},
                       {"unreachable_seeds", s.unreachable},
                       {"pool_f1", agg_json(s.pool_f1)},
                       {"validation_f1", agg_json(s.validation_f1)},
                       {"al_inclusion_fraction", agg_json(s.al_inclusion_fraction)}});
    }
    json vs = json::object();
    for (const auto& [name, saved] : r.saved_vs_strategy) vs[name] = saved_json(saved);
    rows.push_back(
        {{"strategy", strategy_name(r.strategy)},
         {"best_training_size", r.best_size ? json(*r.best_size) : json(nullptr)},
         {"he_at_target", agg_json(r.best_he)},
         {"unreachable", r.unreachable},
         {"effort_saved_vs_no_ml", r.saved_vs_control ? saved_json(*r.saved_vs_control) : json(nullptr)},
         {"hours_saved_vs_no_ml", opt(r.hours_saved_vs_control)},
         {"effort_saved_vs_strategy", vs},
         {"sizes", sizes}});
  }
  return {{"target_ir", t.target_ir},
          {"no_ml", agg_json(t.control_he)},
          {"strategies", rows}};
}

void write_report(const ExperimentResult& result, const ComparisonTable& table,
                  const fs::path& dir) {
  fs::create_directories(dir / "cells");
  fs::create_directories(dir / "control");
  std::ofstream longf(dir / "long.csv", std::ios::trunc);
  if (!longf) throw Error(ErrorCode::kIo, "cannot write " + (dir / "long.csv").string());
  longf.precision(10);
  longf << "strategy,size,seed,he,ir\n";
  json cells = json::array();
  for (const auto& cell : result.cells) {
    const auto id = cell.cell_id();
    write_curve_csv(cell.curve, dir / "cells" / (id + ".csv"));
    for (const auto& p : cell.curve.points) {
      longf << strategy_name(cell.strategy) << ',' << cell.training_size << ',' << cell.seed << ','
            << p.he << ',' << p.ir << '\n';
    }
    cells.push_back({{"cell", id},
                     {"strategy", strategy_name(cell.strategy)},
                     {"training_size", cell.training_size},
                     {"seed", cell.seed},
                     {"he_at_target", opt(cell.he_at_target)},
                     {"max_ir", cell.curve.max_ir()},
                     {"pool_f1", opt(cell.pool_f1)},
                     {"validation_f1", opt(cell.validation_f1)},
                     {"iterations", cell.iterations},
                     {"al_inclusion_fraction", opt(cell.al_inclusion_fraction())}});
  }
  json control = json::array();
  for (const auto& row : result.control) {
    write_curve_csv(row.curve, dir / "control" / ("seed" + std::to_string(row.seed) + ".csv"));
    for (const auto& p : row.curve.points) {
      longf << "none,0," << row.seed << ',' << p.he << ',' << p.ir << '\n';
    }
    control.push_back({{"seed", row.seed}, {"he_at_target", opt(row.he_at_target)}});
  }
  if (!longf) throw Error(ErrorCode::kIo, "write failed: " + (dir / "long.csv").string());

  const json summary{{"config", to_json(result.config)},
                     {"n", result.n},
                     {"n_included", result.n_included},
                     {"comparison", to_json(table)},
                     {"cells", cells},
                     {"control", control}};
  std::ofstream out(dir / "summary.json", std::ios::trunc);
  out << summary.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + (dir / "summary.json").string());
}

// ---------------------------------------------------------------------------
// Holdout

HoldoutResult run_holdout(const OracleCorpus& corpus, double train_fraction, std::uint64_t seed,
                          const TrainConfig& train_config, double target_ir) {
  TrainingSet all;
  for (const auto& id : corpus.data->ids) {
    all.items.push_back({id, corpus.truth.at(id) ? Label::kIncluded : Label::kExcluded});
  }
  auto split_rng = make_rng(seed, 2);
  auto [train_part, test_part] = split_train_val(all, train_fraction, split_rng);
  auto over_rng = make_rng(seed, 3);
  TrainConfig tc = train_config;
  tc.hash_bits = corpus.data->texts.hash_bits();
  tc.seed = make_rng(seed, 4)();
  const auto model = train(oversample(train_part, over_rng), corpus.data->texts, tc);

  std::vector<std::string> ids;
  std::vector<Label> truth;
  std::size_t test_included = 0;
  for (const auto& it : test_part.items) {
    ids.push_back(it.doc_id);
    truth.push_back(it.label);
    if (it.label == Label::kIncluded) ++test_included;
  }
  const auto preds = predict(model, corpus.data->texts, ids);
  std::vector<double> scores;
  for (const auto& p : preds) scores.push_back(p.priority_score);

  HoldoutResult r;
  r.train_size = train_part.size();
  r.test_size = test_part.size();
  r.f1 = f1_from_scores(scores, truth);
  if (test_included > 0) {
    r.curve = build_curve(rank_by_priority(preds), corpus.truth, test_part.size(), test_included);
    try {
      r.he_at_target = he_at_target(r.curve, target_ir);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTargetUnreachable) throw;
    }
  }
  return r;
}

json to_json(const HoldoutResult& r) {
  return {{"train_size", r.train_size},
          {"test_size", r.test_size},
          {"f1", r.f1.f1},
          {"precision", r.f1.precision},
          {"recall", r.f1.recall},
          {"tp", r.f1.tp},
          {"fp", r.f1.fp},
          {"fn", r.f1.fn},
          {"tn", r.f1.tn},
          {"he_at_target", opt(r.he_at_target)}};
}

}  // namespace triage
