#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "triage/classifier.hpp"

namespace triage {

enum class StrategyKind { kRandom, kLeastConfidence, kHighestPriority };

/// Accepts "random", "lc" or "hp".
StrategyKind parse_strategy(std::string_view name);
std::string_view strategy_name(StrategyKind kind);

struct SamplingStrategy {
  StrategyKind kind = StrategyKind::kRandom;
  std::size_t batch_size = 1000;
};

/// Picks min(k, |pool|) distinct ids from the pool.
///
/// random: uniform without replacement.
/// least confidence: descending uncertainty.
/// highest priority: descending priority score.
/// Ties in the ranked strategies break by ascending doc_id, so the result does
/// not depend on pool order.
std::vector<std::string> sample(StrategyKind kind, const std::vector<Prediction>& pool,
                                std::size_t k, Rng& rng);

inline std::vector<std::string> sample(const SamplingStrategy& strategy,
                                       const std::vector<Prediction>& pool, Rng& rng) {
  return sample(strategy.kind, pool, strategy.batch_size, rng);
}

/// Uniform draw of min(k, |ids|) distinct ids without replacement.
std::vector<std::string> sample_uniform(const std::vector<std::string>& ids, std::size_t k,
                                        Rng& rng);

/// All pool ids by descending priority score, ties by ascending id.
std::vector<std::string> rank_by_priority(const std::vector<Prediction>& pool);

}  // namespace triage
