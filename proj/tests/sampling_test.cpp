#include <gtest/gtest.h>

#include <map>
#include <set>

#include "triage/error.hpp"
#include "triage/sampling.hpp"

using namespace triage;

namespace {

Prediction with_ps(const std::string& id, double ps) {
  Prediction p;
  p.doc_id = id;
  p.priority_score = ps;
  p.uncertainty = std::min(ps, 1.0 - ps);
  return p;
}

std::vector<Prediction> pool() {
  return {with_ps("a", 0.9), with_ps("b", 0.2), with_ps("c", 0.75), with_ps("d", 0.5),
          with_ps("e", 0.25)};
}

}  // namespace

TEST(Sampling, ParseNames) {
  EXPECT_EQ(parse_strategy("random"), StrategyKind::kRandom);
  EXPECT_EQ(parse_strategy("lc"), StrategyKind::kLeastConfidence);
  EXPECT_EQ(parse_strategy("hp"), StrategyKind::kHighestPriority);
  EXPECT_THROW(parse_strategy("margin"), Error);
  for (auto k : {StrategyKind::kRandom, StrategyKind::kLeastConfidence,
                 StrategyKind::kHighestPriority}) {
    EXPECT_EQ(parse_strategy(strategy_name(k)), k);
  }
}

TEST(Sampling, HighestPriority) {
  Rng rng(1);
  EXPECT_EQ(sample(StrategyKind::kHighestPriority, pool(), 2, rng),
            (std::vector<std::string>{"a", "c"}));
}

TEST(Sampling, LeastConfidenceWithTies) {
  Rng rng(1);
  // d is exactly 0.5; c and e tie at 0.25 and break by id.
  EXPECT_EQ(sample(StrategyKind::kLeastConfidence, pool(), 3, rng),
            (std::vector<std::string>{"d", "c", "e"}));
}

TEST(Sampling, ClampsToPool) {
  Rng rng(1);
  EXPECT_EQ(sample(StrategyKind::kHighestPriority, pool(), 50, rng).size(), 5u);
  EXPECT_EQ(sample(StrategyKind::kRandom, pool(), 50, rng).size(), 5u);
  EXPECT_THROW(sample(StrategyKind::kRandom, pool(), 0, rng), Error);
  EXPECT_TRUE(sample(StrategyKind::kLeastConfidence, {}, 3, rng).empty());
}

TEST(Sampling, RankedResultIgnoresPoolOrder) {
  Rng rng(1);
  auto p = pool();
  std::reverse(p.begin(), p.end());
  EXPECT_EQ(sample(StrategyKind::kHighestPriority, p, 4, rng),
            sample(StrategyKind::kHighestPriority, pool(), 4, rng));
}

TEST(Sampling, RandomIsDistinctAndDeterministic) {
  std::vector<Prediction> big;
  for (int i = 0; i < 100; ++i) big.push_back(with_ps("x" + std::to_string(i), 0.5));
  Rng a(7), b(7);
  const auto s1 = sample(StrategyKind::kRandom, big, 30, a);
  const auto s2 = sample(StrategyKind::kRandom, big, 30, b);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(std::set<std::string>(s1.begin(), s1.end()).size(), 30u);
}

TEST(Sampling, RandomIsRoughlyUniform) {
  std::vector<std::string> ids{"a", "b", "c", "d"};
  std::map<std::string, int> hits;
  Rng rng(3);
  for (int i = 0; i < 8000; ++i) {
    for (const auto& id : sample_uniform(ids, 1, rng)) ++hits[id];
  }
  for (const auto& id : ids) EXPECT_NEAR(hits[id], 2000, 200) << id;
}

TEST(Sampling, RankByPriority) {
  EXPECT_EQ(rank_by_priority(pool()), (std::vector<std::string>{"a", "c", "d", "e", "b"}));
  auto tied = std::vector<Prediction>{with_ps("z", 0.3), with_ps("y", 0.3)};
  EXPECT_EQ(rank_by_priority(tied), (std::vector<std::string>{"y", "z"}));
}
