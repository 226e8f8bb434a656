#include "triage/sampling.hpp"

#include <algorithm>
#include <numeric>

#include "triage/error.hpp"

namespace triage {

StrategyKind parse_strategy(std::string_view name) {
  if (name == "random") return StrategyKind::kRandom;
  if (name == "lc") return StrategyKind::kLeastConfidence;
  if (name == "hp") return StrategyKind::kHighestPriority;
  throw Error(ErrorCode::kInvalidArgument, "unknown strategy: " + std::string(name));
}

std::string_view strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kRandom: return "random";
    case StrategyKind::kLeastConfidence: return "lc";
    case StrategyKind::kHighestPriority: return "hp";
  }
  return "random";
}

namespace {

template <typename Key>
std::vector<std::string> top_k(const std::vector<Prediction>& pool, std::size_t k, Key key) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) {
    const double ka = key(pool[a]);
    const double kb = key(pool[b]);
    if (ka != kb) return ka > kb;
    return pool[a].doc_id < pool[b].doc_id;
  };
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    before);
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool[order[i]].doc_id);
  return out;
}

}  // namespace

std::vector<std::string> sample(StrategyKind kind, const std::vector<Prediction>& pool,
                                std::size_t k, Rng& rng) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "sample size must be positive");
  switch (kind) {
    case StrategyKind::kLeastConfidence:
      return top_k(pool, k, [](const Prediction& p) { return p.uncertainty; });
    case StrategyKind::kHighestPriority:
      return top_k(pool, k, [](const Prediction& p) { return p.priority_score; });
    case StrategyKind::kRandom:
      break;
  }
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& p : pool) ids.push_back(p.doc_id);
  return sample_uniform(ids, k, rng);
}

std::vector<std::string> sample_uniform(const std::vector<std::string>& ids, std::size_t k,
                                        Rng& rng) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  // Partial Fisher-Yates: the first k slots are a uniform draw.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(ids[order[i]]);
  return out;
}

std::vector<std::string> rank_by_priority(const std::vector<Prediction>& pool) {
  if (pool.empty()) return {};
  return top_k(pool, pool.size(), [](const Prediction& p) { return p.priority_score; });
}

}  // namespace triage
