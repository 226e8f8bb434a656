#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <thread>

#include "test_util.hpp"
#include "triage/engine.hpp"
#include "triage/simulator.hpp"

using namespace triage;
using triage::testing::TempDir;

namespace {

LabelRecord label(const std::string& id, bool included, int iteration = 0) {
  LabelRecord r;
  r.doc_id = id;
  r.decision = included ? Decision::kIncluded : Decision::kExcluded;
  r.screener_id = "s1";
  r.timestamp = parse_timestamp("2024-03-01T12:00:00.000Z");
  r.iteration = iteration;
  return r;
}

const OracleCorpus& small_oracle() {
  static const OracleCorpus oracle = generate_synthetic_corpus(1200, 0.1, 0.9, 11);
  return oracle;
}

ProjectConfig small_config() {
  ProjectConfig c;
  c.strategy = StrategyKind::kHighestPriority;
  c.batch_size = 100;
  c.init_size = 200;
  c.stop.rho_threshold = std::nullopt;
  c.stop.max_training_size = 500;
  c.seed = 3;
  return c;
}

void label_all(Project& p, const std::vector<std::string>& ids, int iteration = 0) {
  const auto& truth = small_oracle().truth;
  for (const auto& id : ids) p.record_label(label(id, truth.at(id), iteration));
}

// Drives the loop until training stops; returns the iteration records.
std::vector<IterationRecord> run_to_prioritized(Project& p) {
  label_all(p, p.bootstrap().ids);
  std::vector<IterationRecord> out;
  while (p.state().phase == Phase::kActiveLearning) {
    out.push_back(p.run_iteration());
    label_all(p, out.back().sampled_ids, out.back().model_version);
  }
  return out;
}

}  // namespace

TEST(Timestamp, RoundTrip) {
  const auto t = parse_timestamp("2024-03-01T12:34:56.789Z");
  EXPECT_EQ(format_timestamp(t), "2024-03-01T12:34:56.789Z");
  EXPECT_EQ(format_timestamp(parse_timestamp("2024-03-01T12:34:56Z")), "2024-03-01T12:34:56.000Z");
  EXPECT_THROW(parse_timestamp("yesterday"), Error);
  EXPECT_THROW(parse_timestamp("2024-03-01T12:34:56+02:00"), Error);
}

TEST(LabelRecord, JsonRoundTrip) {
  auto r = label("d1", true, 2);
  r.exclusion_criterion = "wrong population";
  nlohmann::json j = r;
  EXPECT_EQ(j["decision"], "included");
  EXPECT_EQ(j.get<LabelRecord>(), r);
  EXPECT_THROW(nlohmann::json({{"doc_id", "x"}, {"decision", "maybe"}}).get<LabelRecord>(), Error);
}

TEST(Config, JsonRoundTripAndErrors) {
  auto c = small_config();
  c.exclusion_criteria = {"population", "outcome"};
  EXPECT_EQ(config_from_json(to_json(c)), c);
  EXPECT_EQ(config_from_json(nlohmann::json::object()), ProjectConfig{});
  try {
    config_from_json({{"batchsize", 5}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("batchsize", 0), 0u);
  }
  try {
    config_from_json({{"batch_size", 0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    EXPECT_EQ(std::string(e.what()).rfind("batch_size", 0), 0u);
  }
  EXPECT_THROW(config_from_json({{"train_fraction", 1.5}}), Error);
  EXPECT_THROW(config_from_json({{"strategy", "margin"}}), Error);
}

TEST(History, JsonRoundTrip) {
  IterationRecord rec;
  rec.index = 2;
  rec.model_version = 3;
  rec.rank_similarity = 0.9;
  rec.sampled_ids = {"a", "b"};
  const std::vector<HistoryEvent> events{BootstrapIssued{{"x", "y"}},
                                         PhaseChanged{Phase::kActiveLearning, 2},
                                         IterationCompleted{rec}};
  for (const auto& ev : events) {
    EXPECT_EQ(to_json(history_event_from_json(to_json(ev))), to_json(ev));
  }
  EXPECT_THROW(history_event_from_json({{"event", "nope"}}), Error);
}

TEST(RankSimilarity, Examples) {
  const std::vector<std::string> a{"a", "b", "c", "d", "e"};
  EXPECT_DOUBLE_EQ(rank_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(rank_similarity(a, {"e", "d", "c", "b", "a"}), -1.0);
  EXPECT_DOUBLE_EQ(rank_similarity(a, {"b", "a", "c", "d", "e"}), 0.9);
}

TEST(RankSimilarity, Errors) {
  auto code = [](const std::vector<std::string>& x, const std::vector<std::string>& y) {
    try {
      rank_similarity(x, y);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  EXPECT_EQ(code({"a", "b"}, {"a", "c"}), ErrorCode::kIdSetMismatch);
  EXPECT_EQ(code({"a", "b"}, {"a", "b", "c"}), ErrorCode::kIdSetMismatch);
  EXPECT_EQ(code({"a", "a"}, {"a", "b"}), ErrorCode::kIdSetMismatch);
  EXPECT_EQ(code({"a"}, {"a"}), ErrorCode::kInvalidArgument);
}

TEST(StopRule, RhoWithPatience) {
  StopConfig stop;
  stop.rho_threshold = 0.95;
  stop.patience = 2;
  std::vector<IterationRecord> h(3);
  h[0].rank_similarity = std::nullopt;
  h[1].rank_similarity = 0.97;
  EXPECT_FALSE(should_stop_training({h[0], h[1]}, stop));
  h[2].rank_similarity = 0.96;
  EXPECT_TRUE(should_stop_training(h, stop));
  h[2].rank_similarity = 0.90;
  EXPECT_FALSE(should_stop_training(h, stop));
  EXPECT_FALSE(should_stop_training({}, stop));
}

TEST(StopRule, CapsAndDisabledRho) {
  StopConfig stop;
  stop.rho_threshold = std::nullopt;
  stop.max_training_size = 7000;
  IterationRecord r;
  r.training_size = 6999;
  EXPECT_FALSE(should_stop_training({r}, stop));
  r.training_size = 7000;
  EXPECT_TRUE(should_stop_training({r}, stop));
  stop.max_training_size.reset();
  stop.max_iterations = 2;
  EXPECT_FALSE(should_stop_training({r}, stop));
  EXPECT_TRUE(should_stop_training({r, r}, stop));
}

TEST(StopRule, ScreeningAdvice) {
  EXPECT_TRUE(should_stop_screening(4, 1000, 0.005));
  EXPECT_FALSE(should_stop_screening(5, 1000, 0.005));
  EXPECT_FALSE(should_stop_screening(0, 100, 0.0));
  EXPECT_THROW(should_stop_screening(0, 0, 0.1), Error);
}

TEST(State, LatestLabelWins) {
  auto s = ProjectState::initial("p", ProjectConfig{}, {"a", "b"});
  s.apply(label("a", true));
  s.apply(label("a", false));
  EXPECT_EQ(s.effective.at("a"), Decision::kExcluded);
  EXPECT_EQ(s.screening_order, std::vector<std::string>{"a"});
  EXPECT_EQ(s.screened.size(), 1u);
  EXPECT_EQ(s.identified(), 0u);
  EXPECT_THROW(s.apply(label("zz", true)), Error);
}

TEST(State, PhaseOnlyMovesForward) {
  auto s = ProjectState::initial("p", ProjectConfig{}, {"a"});
  s.apply(PhaseChanged{Phase::kActiveLearning, 0});
  EXPECT_THROW(s.apply(PhaseChanged{Phase::kBootstrapping, 0}), Error);
  EXPECT_THROW(s.apply(PhaseChanged{Phase::kActiveLearning, 0}), Error);
}

TEST(Project, BootstrapIsIdempotentAndClamped) {
  Project p("p", small_config(), small_oracle().data);
  const auto first = p.bootstrap();
  EXPECT_EQ(first.ids.size(), 200u);
  EXPECT_FALSE(first.clamped);
  EXPECT_EQ(p.bootstrap().ids, first.ids);
  EXPECT_EQ(std::set<std::string>(first.ids.begin(), first.ids.end()).size(), 200u);

  auto tiny = generate_synthetic_corpus(50, 0.1, 0.9, 2);
  Project q("q", small_config(), tiny.data);
  const auto r = q.bootstrap();
  EXPECT_TRUE(r.clamped);
  EXPECT_EQ(r.ids.size(), 50u);
}

TEST(Project, PendingLabelsBlockTraining) {
  Project p("p", small_config(), small_oracle().data);
  const auto ids = p.bootstrap().ids;
  label_all(p, {ids.begin(), ids.begin() + 150});
  try {
    p.run_iteration();
    FAIL();
  } catch (const PendingLabelsError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPendingLabels);
    EXPECT_EQ(e.ids().size(), 50u);
  }
  EXPECT_EQ(p.state().phase, Phase::kBootstrapping);
  EXPECT_FALSE(p.training_in_flight());
}

TEST(Project, UnknownDocumentLabel) {
  Project p("p", small_config(), small_oracle().data);
  try {
    p.record_label(label("nope", true));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownDocument);
  }
  EXPECT_TRUE(p.ledger().empty());
}

TEST(Project, WrongPhaseBeforeBootstrap) {
  Project p("p", small_config(), small_oracle().data);
  try {
    p.run_iteration();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kWrongPhase);
  }
  EXPECT_THROW(p.prioritized_queue(), Error);
}

TEST(Project, FullLoop) {
  Project p("p", small_config(), small_oracle().data);
  const auto iterations = run_to_prioritized(p);
  // 200 bootstrap + 3 batches of 100 reaches the 500 cap.
  ASSERT_EQ(iterations.size(), 4u);
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    EXPECT_EQ(iterations[i].index, static_cast<int>(i));
    EXPECT_EQ(iterations[i].model_version, static_cast<int>(i) + 1);
    EXPECT_EQ(iterations[i].training_size, 200 + 100 * i);
    EXPECT_TRUE(iterations[i].validation_f1.has_value());
  }
  EXPECT_FALSE(iterations[0].rank_similarity);
  EXPECT_TRUE(iterations[1].rank_similarity);
  EXPECT_TRUE(iterations.back().stopped);
  EXPECT_TRUE(iterations.back().sampled_ids.empty());

  const auto state = p.state();
  EXPECT_EQ(state.phase, Phase::kPrioritizedScreening);
  EXPECT_EQ(state.prioritized_start, 500u);
  EXPECT_EQ(state.issued_batches.size(), 4u);

  // Sampled batches never repeat screened documents.
  std::set<std::string> seen;
  for (const auto& b : state.issued_batches) {
    for (const auto& id : b) EXPECT_TRUE(seen.insert(id).second) << id;
  }

  const auto queue = p.prioritized_queue();
  EXPECT_EQ(queue.size(), 700u);
  const auto snap = p.snapshot();
  for (std::size_t i = 1; i < queue.size(); ++i) {
    EXPECT_GE(snap->find(queue[i - 1])->priority_score, snap->find(queue[i])->priority_score);
  }
  label_all(p, queue, snap->model_version);
  EXPECT_EQ(p.state().phase, Phase::kDone);

  const auto rates = batch_history(p.state());
  ASSERT_EQ(rates.size(), 4u + 7u);
  EXPECT_EQ(rates[0].phase, Phase::kBootstrapping);
  EXPECT_EQ(rates[4].phase, Phase::kPrioritizedScreening);
  EXPECT_TRUE(std::all_of(rates.begin(), rates.end(), [](const BatchRate& r) { return r.complete; }));
  // The model should front-load inclusions in prioritized screening.
  EXPECT_GT(rates[4].rate(), rates[10].rate());
}

TEST(Project, SameSeedSameRun) {
  Project a("a", small_config(), small_oracle().data);
  Project b("b", small_config(), small_oracle().data);
  const auto ra = run_to_prioritized(a);
  const auto rb = run_to_prioritized(b);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(a.prioritized_queue(), b.prioritized_queue());
}

TEST(Project, ReplayReproducesState) {
  Project p("p", small_config(), small_oracle().data);
  run_to_prioritized(p);
  const auto queue = p.prioritized_queue();
  label_all(p, {queue.begin(), queue.begin() + 37});
  p.record_label(label(queue.front(), false));
  const auto replayed = replay("p", p.config(), p.data()->ids, p.ledger(), p.history());
  EXPECT_EQ(replayed, p.state());
}

TEST(Project, AddDocumentsOnlyBeforeFirstBatch) {
  Project p("p", small_config(), nullptr);
  Corpus docs;
  docs.add(Document{.id = "a", .title = "T", .abstract = "Text one."});
  docs.add(Document{.id = "b", .title = "U", .abstract = "Text two."});
  EXPECT_EQ(p.add_documents(docs), 2u);
  EXPECT_EQ(p.add_documents(docs), 0u);
  p.bootstrap(1);
  try {
    p.add_documents(docs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kWrongPhase);
  }
}

TEST(Project, SingleClassBootstrapFailsTraining) {
  Project p("p", small_config(), small_oracle().data);
  for (const auto& id : p.bootstrap().ids) p.record_label(label(id, false));
  try {
    p.run_iteration();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingleClass);
  }
  EXPECT_FALSE(p.training_in_flight());
  EXPECT_EQ(p.state().model_version, 0);
}

TEST(Project, ConcurrentRetrainConflicts) {
  Project p("p", small_config(), small_oracle().data);
  label_all(p, p.bootstrap().ids);
  std::atomic<int> ok = 0, conflicts = 0;
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&] {
      try {
        p.run_iteration();
        ++ok;
      } catch (const Error& e) {
        // A finished job leaves a pending batch, so later callers see that instead.
        if (e.code() == ErrorCode::kConflict || e.code() == ErrorCode::kPendingLabels) ++conflicts;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok, 1);
  EXPECT_EQ(conflicts, 3);
  EXPECT_EQ(p.state().model_version, 1);
}

TEST(Journal, RecoverAfterRestart) {
  TempDir dir;
  ProjectState before;
  std::vector<std::string> queue;
  {
    Project p("p", small_config(), small_oracle().data,
              std::make_unique<ProjectJournal>(dir / "p"));
    run_to_prioritized(p);
    queue = p.prioritized_queue();
    label_all(p, {queue.begin(), queue.begin() + 10});
    before = p.state();
  }
  auto r = Project::recover("p", dir / "p");
  EXPECT_EQ(r->state(), before);
  ASSERT_TRUE(r->snapshot());
  EXPECT_EQ(r->snapshot()->model_version, before.model_version);
  EXPECT_EQ(r->prioritized_queue(), std::vector<std::string>(queue.begin() + 10, queue.end()));
}

TEST(Journal, TornFinalLineIsDropped) {
  TempDir dir;
  {
    Project p("p", small_config(), small_oracle().data,
              std::make_unique<ProjectJournal>(dir / "p"));
    const auto ids = p.bootstrap().ids;
    label_all(p, {ids.begin(), ids.begin() + 5});
  }
  {
    std::ofstream out(dir / "p" / "ledger.jsonl", std::ios::app);
    out << "{\"doc_id\":\"S0";
  }
  auto r = Project::recover("p", dir / "p");
  EXPECT_EQ(r->state().screened.size(), 5u);
}

TEST(Rng, StreamsAreIndependentAndStable) {
  auto a = make_rng(1, 2, 3);
  auto b = make_rng(1, 2, 3);
  auto c = make_rng(1, 3, 3);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
}
