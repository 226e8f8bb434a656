// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "service_harness.hpp"
#include "test_util.hpp"
#include "triage/classifier.hpp"
#include "triage/engine.hpp"
#include "triage/metrics.hpp"
#include "triage/simulator.hpp"

using namespace triage;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail.str("");
      detail << what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void formula_exactness(Outcome& o) {
  std::mt19937_64 gen(20240301);
  std::uniform_real_distribution<double> logit(-30.0, 30.0);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 10000; ++i) {
    const Logits l{logit(gen), logit(gen)};
    const double c = shift(gen);
    const double ps = priority_score(l);
    const double ps0 = 1.0 - ps;
    const double reference = 1.0 / (1.0 + std::exp(l.excluded - l.included));
    worst = std::max({worst, std::abs(ps + ps0 - 1.0),
                      std::abs(priority_score({l.excluded + c, l.included + c}) - ps),
                      std::abs(uncertainty(l) - std::min(ps, 1.0 - ps)),
                      std::abs(ps - reference)});
  }
  const double elapsed = seconds_since(t0);
  o.require(worst <= 1e-12, "max deviation " + std::to_string(worst));
  o.require(elapsed < 1.0, "took " + std::to_string(elapsed) + " s");
  if (o.ok) o.detail << "max deviation " << worst << " over 10000 pairs in " << elapsed << " s";
}

void effort_arithmetic(Outcome& o) {
  const double h1 = hours_saved(0.80, 0.174, 68539, 38.6);
  const double h2 = hours_saved(0.303, 0.174, 68539, 38.6);
  o.require(std::abs(h1 - 1111.5) <= 0.1, "hours (0.80) = " + std::to_string(h1));
  o.require(std::abs(h2 - 229.1) <= 0.1, "hours (0.303) = " + std::to_string(h2));
  const std::vector<std::tuple<double, double, double>> rows{
      {0.53, 0.28, 0.47}, {0.29, 0.24, 0.17}, {0.68, 0.17, 0.75}};
  for (const auto& [svm, model, want] : rows) {
    const double rel = effort_saved(svm, model).relative;
    o.require(std::abs(rel - want) <= 0.01, "relative saving " + std::to_string(rel));
  }
  const double r1 = effort_saved(0.80, 0.252).relative;
  const double r2 = effort_saved(0.303, 0.252).relative;
  o.require(std::abs(r1 - 0.685) <= 0.001, "relative (0.80) = " + std::to_string(r1));
  o.require(std::abs(r2 - 0.168) <= 0.002, "relative (0.303) = " + std::to_string(r2));
  if (o.ok) {
    o.detail << std::fixed << std::setprecision(1) << "hours " << h1 << " / " << h2
             << std::setprecision(3) << ", relative " << r1 << " / " << r2;
  }
}

void metric_bruteforce(Outcome& o) {
  std::mt19937_64 gen(7);
  std::size_t checked_points = 0;
  for (int trace = 0; trace < 100 && o.ok; ++trace) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 200)(gen);
    std::vector<std::string> ids;
    std::unordered_map<std::string, bool> included;
    std::size_t n_included = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("d" + std::to_string(i));
      const bool inc = std::bernoulli_distribution(0.2)(gen);
      included[ids.back()] = inc;
      n_included += inc;
    }
    if (n_included == 0) {
      included[ids[0]] = true;
      n_included = 1;
    }
    std::shuffle(ids.begin(), ids.end(), gen);
    ids.resize(std::uniform_int_distribution<std::size_t>(0, n)(gen));

    const auto curve = build_curve(ids, included, n, n_included);
    o.require(curve.points.size() == ids.size() + 1, "curve length");
    std::size_t found = 0;
    for (std::size_t k = 0; k <= ids.size() && o.ok; ++k) {
      if (k > 0 && included.at(ids[k - 1])) ++found;
      const double he = static_cast<double>(k) / static_cast<double>(n);
      const double ir = static_cast<double>(found) / static_cast<double>(n_included);
      const auto& p = curve.points[k];
      o.require(p.screened == k && p.identified == found && p.he == he && p.ir == ir,
                "trace " + std::to_string(trace) + " point " + std::to_string(k));
      o.require(human_effort(k, n) == he && inclusion_rate(found, n_included) == ir,
                "scalar metric mismatch");
      ++checked_points;
    }
    for (double target : {0.1, 0.5, 0.8, 1.0}) {
      std::optional<double> brute;
      std::size_t f = 0;
      for (std::size_t k = 0; k <= ids.size(); ++k) {
        if (k > 0 && included.at(ids[k - 1])) ++f;
        if (static_cast<double>(f) / static_cast<double>(n_included) >= target) {
          brute = static_cast<double>(k) / static_cast<double>(n);
          break;
        }
      }
      std::optional<double> got;
      try {
        got = he_at_target(curve, target);
      } catch (const Error& e) {
        o.require(e.code() == ErrorCode::kTargetUnreachable, "unexpected error");
      }
      o.require(got == brute, "he_at_target mismatch on trace " + std::to_string(trace));
    }
  }
  if (o.ok) o.detail << "100 traces, " << checked_points << " points match";
}

void spearman_examples(Outcome& o) {
  const std::vector<std::string> a{"a", "b", "c", "d", "e"};
  const double same = rank_similarity(a, a);
  const double rev = rank_similarity(a, {"e", "d", "c", "b", "a"});
  const double swap = rank_similarity(a, {"a", "b", "c", "e", "d"});
  o.require(same == 1.0, "identical gave " + std::to_string(same));
  o.require(rev == -1.0, "reversed gave " + std::to_string(rev));
  o.require(swap == 0.9, "adjacent swap gave " + std::to_string(swap));
  if (o.ok) o.detail << "1.0 / -1.0 / 0.9 exact";
}

void oversampling_balance(Outcome& o) {
  std::mt19937_64 gen(99);
  for (int s = 0; s < 200 && o.ok; ++s) {
    const std::size_t minority = std::uniform_int_distribution<std::size_t>(1, 40)(gen);
    const std::size_t majority =
        minority + std::uniform_int_distribution<std::size_t>(1, 400)(gen);
    const bool minority_included = s % 2 == 0;
    TrainingSet set;
    for (std::size_t i = 0; i < minority + majority; ++i) {
      const bool is_min = i < minority;
      const Label l = is_min == minority_included ? Label::kIncluded : Label::kExcluded;
      set.items.push_back({"x" + std::to_string(i), l});
    }
    std::shuffle(set.items.begin(), set.items.end(), gen);
    Rng rng(static_cast<std::uint64_t>(s));
    const auto out = oversample(set, rng);
    o.require(out.count(Label::kIncluded) == out.count(Label::kExcluded),
              "unbalanced output on set " + std::to_string(s));
    std::map<std::string, Label> in_ids, out_ids;
    for (const auto& it : set.items) in_ids[it.doc_id] = it.label;
    for (const auto& it : out.items) out_ids[it.doc_id] = it.label;
    o.require(in_ids == out_ids, "distinct ids changed on set " + std::to_string(s));
    o.require(out.size() == 2 * majority, "size " + std::to_string(out.size()));
  }
  if (o.ok) o.detail << "200 sets balanced, id sets preserved";
}

// ---------------------------------------------------------------------------

struct DefaultRun {
  ExperimentResult result;
  ComparisonTable table;
  double seconds = 0.0;
  double prevalence = 0.0;
};

const DefaultRun& default_run() {
  static const DefaultRun run = [] {
    DefaultRun r;
    const auto t0 = Clock::now();
    const auto oracle = generate_synthetic_corpus(10000, 0.077, 0.9, 7);
    ExperimentConfig config;
    config.init_size = 500;
    config.batch_size = 250;
    config.seeds = {1, 2, 3, 4, 5};
    r.result = run_experiment(oracle, config);
    r.table = compare_strategies(r.result);
    r.seconds = seconds_since(t0);
    r.prevalence = oracle.prevalence;
    return r;
  }();
  return run;
}

const StrategySummary* summary_for(StrategyKind k) {
  for (const auto& s : default_run().table.strategies) {
    if (s.strategy == k) return &s;
  }
  return nullptr;
}

void end_to_end_effort(Outcome& o) {
  const auto& run = default_run();
  const auto* hp = summary_for(StrategyKind::kHighestPriority);
  o.require(hp && hp->best_he, "no reachable HE for hp");
  if (!o.ok) return;
  const double he = hp->best_he->mean;
  const double saving = effort_saved(0.80, he).relative;
  o.require(he <= 0.40, "mean HE " + std::to_string(he));
  o.require(run.seconds < 300.0, "took " + std::to_string(run.seconds) + " s");
  if (o.ok) {
    o.detail.precision(3);
    o.detail << "hp mean HE@0.8 " << he << " at size " << *hp->best_size << ", saving "
             << saving * 100 << "% vs 0.80, control " << run.table.control_he.mean << ", "
             << run.seconds << " s";
  }
}

void strategy_ordering(Outcome& o) {
  const auto* hp = summary_for(StrategyKind::kHighestPriority);
  const auto* lc = summary_for(StrategyKind::kLeastConfidence);
  const auto* rnd = summary_for(StrategyKind::kRandom);
  o.require(hp && lc && rnd && hp->best_he && lc->best_he && rnd->best_he, "missing strategy row");
  if (!o.ok) return;
  o.require(hp->best_he->mean <= rnd->best_he->mean, "hp above random");
  o.require(lc->best_he->mean <= rnd->best_he->mean, "lc above random");

  std::size_t inc = 0, total = 0;
  for (const auto& cell : default_run().result.cells) {
    if (cell.strategy != StrategyKind::kHighestPriority) continue;
    inc += cell.al_included;
    total += cell.al_screened;
  }
  const double fraction = total ? static_cast<double>(inc) / static_cast<double>(total) : 0.0;
  const double floor = 2.0 * default_run().prevalence;
  o.require(fraction >= floor, "hp AL included fraction " + std::to_string(fraction));
  if (o.ok) {
    o.detail.precision(3);
    o.detail << "HE hp " << hp->best_he->mean << ", lc " << lc->best_he->mean << ", random "
             << rnd->best_he->mean << "; hp AL fraction " << fraction << " >= " << floor;
  }
}

void f1_trend(Outcome& o) {
  const auto* rnd = summary_for(StrategyKind::kRandom);
  o.require(rnd != nullptr, "missing random row");
  if (!o.ok) return;
  std::optional<double> at500, at2000;
  for (const auto& s : rnd->sizes) {
    if (s.pool_f1 && s.training_size == 500) at500 = s.pool_f1->mean;
    if (s.pool_f1 && s.training_size == 2000) at2000 = s.pool_f1->mean;
  }
  o.require(at500 && at2000, "missing F1 values");
  if (!o.ok) return;
  o.require(*at2000 >= *at500 - 0.02, "F1 fell from " + std::to_string(*at500) + " to " +
                                          std::to_string(*at2000));
  if (o.ok) {
    o.detail.precision(3);
    o.detail << "random F1 " << *at500 << " at 500, " << *at2000 << " at 2000";
  }
}

// ---------------------------------------------------------------------------

void ledger_replay(Outcome& o) {
  const auto oracle = generate_synthetic_corpus(1500, 0.1, 0.9, 21);
  testing::TempDir dir;
  std::mt19937_64 gen(5);
  std::size_t checks = 0;
  for (auto strategy : {StrategyKind::kHighestPriority, StrategyKind::kLeastConfidence,
                        StrategyKind::kRandom}) {
    ProjectConfig config;
    config.strategy = strategy;
    config.batch_size = 100;
    config.init_size = 200;
    config.stop.rho_threshold = std::nullopt;
    config.stop.max_training_size = 600;
    config.seed = 17;
    const auto path = dir / std::string(strategy_name(strategy));
    Project p("p", config, oracle.data, std::make_unique<ProjectJournal>(path));

    auto check = [&] {
      const auto live = p.state();
      const auto replayed = replay("p", p.config(), p.data()->ids, p.ledger(), p.history());
      o.require(replayed == live, "replay differs for " + std::string(strategy_name(strategy)));
      o.require(Project::recover("p", path)->state() == live,
                "journal recovery differs for " + std::string(strategy_name(strategy)));
      ++checks;
    };
    auto screen = [&](const std::vector<std::string>& ids) {
      for (const auto& id : ids) {
        LabelRecord rec;
        rec.doc_id = id;
        rec.decision = oracle.truth.at(id) ? Decision::kIncluded : Decision::kExcluded;
        rec.screener_id = "oracle";
        rec.timestamp = now_utc();
        rec.iteration = p.state().model_version;
        p.record_label(rec);
        // Occasional second opinion that overrides the first.
        if (std::bernoulli_distribution(0.03)(gen)) {
          rec.decision = rec.decision == Decision::kIncluded ? Decision::kExcluded
                                                             : Decision::kIncluded;
          rec.screener_id = "reviewer";
          p.record_label(rec);
        }
      }
    };

    check();
    screen(p.bootstrap().ids);
    check();
    while (p.state().phase == Phase::kActiveLearning && o.ok) {
      screen(p.run_iteration().sampled_ids);
      check();
    }
    auto queue = p.prioritized_queue();
    screen({queue.begin(), queue.begin() + 250});
    check();
    screen({queue.begin() + 250, queue.end()});
    o.require(p.state().phase == Phase::kDone, "session did not finish");
    check();
  }
  if (o.ok) o.detail << checks << " replay and recovery checks over 3 sessions";
}

void service_contract(Outcome& o) {
  const auto oracle = generate_synthetic_corpus(800, 0.1, 0.9, 4);
  testing::TempDir dir;
  testing::LiveService live({dir.path(), "", 4});
  auto c = live.client();

  const json config = {{"batch_size", 50},      {"init_size", 100}, {"rho_threshold", nullptr},
                       {"max_training_size", 250}, {"seed", 2}};
  auto created = c.Post("/v1/projects", config.dump(), "application/json");
  o.require(created && created->status == 201, "create");
  if (!o.ok) return;
  const auto id = testing::body_of(created)["project_id"].get<std::string>();
  const std::string base = "/v1/projects/" + id;

  auto up = c.Post(base + "/documents", testing::corpus_jsonl(oracle), "application/x-ndjson");
  o.require(up && up->status == 200 && testing::body_of(up)["added"] == 800, "upload");

  auto batch = testing::body_of(c.Get(base + "/batch"));
  o.require(batch["items"].size() == 100, "bootstrap batch size");

  auto early = c.Post(base + "/retrain", "", "application/json");
  o.require(early && early->status == 412 &&
                testing::body_of(early)["code"] == "pending_labels" &&
                testing::body_of(early)["details"]["pending_ids"].size() == 100,
            "pending-label error");

  int rounds = 0;
  while (o.ok && batch["phase"] != "prioritized_screening") {
    auto lr = c.Post(base + "/labels", testing::labels_for(oracle, batch["items"]).dump(),
                     "application/json");
    o.require(lr && lr->status == 200 && testing::body_of(lr)["errors"].empty(), "labels");
    auto rt = c.Post(base + "/retrain", "", "application/json");
    o.require(rt && rt->status == 202, "retrain accepted");
    if (!o.ok) return;
    const auto job = testing::wait_job(c, id, testing::body_of(rt)["job_id"]);
    o.require(job["status"] == "done", "job " + job.dump());
    ++rounds;
    const int version = testing::body_of(c.Get(base))["model_version"];
    o.require(version == rounds, "model version did not advance");
    batch = testing::body_of(c.Get(base + "/batch"));
  }
  const auto metrics = testing::body_of(c.Get(base + "/metrics"));
  o.require(metrics["screened"] == 250 && metrics["validation_f1"].size() == 4u &&
                metrics["ir"].is_null() && metrics["batch_inclusion_rates"].size() == 4u,
            "metrics " + metrics.dump());

  // A slow external model keeps the first job in flight for the conflict.
  json slow = config;
  slow["model"] = "external";
  slow["adapter_command"] = std::string("sleep 1; ") + TRIAGE_FAKE_ADAPTER;
  const auto sid =
      testing::body_of(c.Post("/v1/projects", slow.dump(), "application/json"))["project_id"]
          .get<std::string>();
  const std::string sbase = "/v1/projects/" + sid;
  c.Post(sbase + "/documents", testing::corpus_jsonl(oracle), "application/x-ndjson");
  c.Post(sbase + "/labels",
         testing::labels_for(oracle, testing::body_of(c.Get(sbase + "/batch"))["items"]).dump(),
         "application/json");
  auto first = c.Post(sbase + "/retrain", "", "application/json");
  auto second = c.Post(sbase + "/retrain", "", "application/json");
  o.require(first && first->status == 202, "slow retrain accepted");
  o.require(second && second->status == 409 && testing::body_of(second)["code"] == "conflict",
            "conflict error");
  if (first && first->status == 202) {
    const auto job = testing::wait_job(c, sid, testing::body_of(first)["job_id"]);
    o.require(job["status"] == "done", "slow job " + job.dump());
  }
  if (o.ok) o.detail << rounds << " retrain rounds, 412 pending and 409 conflict returned";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"formula_exactness", formula_exactness},
      {"effort_arithmetic", effort_arithmetic},
      {"metric_bruteforce", metric_bruteforce},
      {"spearman_examples", spearman_examples},
      {"oversampling_balance", oversampling_balance},
      {"end_to_end_effort", end_to_end_effort},
      {"strategy_ordering", strategy_ordering},
      {"f1_trend", f1_trend},
      {"ledger_replay", ledger_replay},
      {"service_contract", service_contract},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      check(o);
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail.str("");
      o.detail << "exception: " << e.what();
    }
    std::cout << (o.ok ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
    failed += !o.ok;
  }
  return failed == 0 ? 0 : 1;
}
