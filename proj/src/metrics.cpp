#include "triage/metrics.hpp"

#include <fstream>
#include <unordered_set>

#include "triage/error.hpp"

namespace triage {

double human_effort(std::size_t n_screened, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "corpus size must be positive");
  if (n_screened > n) {
    throw Error(ErrorCode::kInvalidArgument, "screened count exceeds corpus size");
  }
  return static_cast<double>(n_screened) / static_cast<double>(n);
}

double inclusion_rate(std::size_t n_identified, std::size_t n_included) {
  if (n_included == 0) {
    throw Error(ErrorCode::kInvalidArgument, "included count must be positive");
  }
  if (n_identified > n_included) {
    throw Error(ErrorCode::kInvalidArgument, "identified count exceeds included count");
  }
  return static_cast<double>(n_identified) / static_cast<double>(n_included);
}

ScreeningStats HeIrCurve::stats_at(std::size_t i) const {
  const auto& p = points.at(i);
  return {n, n_included, p.screened, p.identified};
}

HeIrCurve build_curve(const std::vector<std::string>& screening_order,
                      const std::unordered_map<std::string, bool>& included, std::size_t n,
                      std::size_t n_included) {
  if (screening_order.size() > n) {
    throw Error(ErrorCode::kInvalidArgument, "more screened documents than the corpus holds");
  }
  HeIrCurve curve;
  curve.n = n;
  curve.n_included = n_included;
  curve.points.reserve(screening_order.size() + 1);
  curve.points.push_back({0, 0, human_effort(0, n), inclusion_rate(0, n_included)});
  std::unordered_set<std::string_view> seen;
  seen.reserve(screening_order.size());
  std::size_t identified = 0;
  for (std::size_t i = 0; i < screening_order.size(); ++i) {
    const auto& id = screening_order[i];
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kInvalidArgument, "document screened twice: " + id);
    }
    auto it = included.find(id);
    if (it == included.end()) {
      throw Error(ErrorCode::kUnknownDocument, "no decision for screened document " + id);
    }
    if (it->second) ++identified;
    curve.points.push_back({i + 1, identified, human_effort(i + 1, n),
                            inclusion_rate(identified, n_included)});
  }
  return curve;
}

double he_at_target(const HeIrCurve& curve, double target_ir) {
  for (const auto& p : curve.points) {
    if (p.ir >= target_ir) return p.he;
  }
  throw Error(ErrorCode::kTargetUnreachable,
              "inclusion rate " + std::to_string(target_ir) + " never reached; max " +
                  std::to_string(curve.max_ir()));
}

EffortSaved effort_saved(double he_baseline, double he_new) {
  if (!(he_baseline > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "baseline effort must be positive");
  }
  const double abs = he_baseline - he_new;
  return {abs, abs / he_baseline};
}

double hours_saved(double he_baseline, double he_new, std::size_t n, double papers_per_hour) {
  if (!(papers_per_hour > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "screening rate must be positive");
  }
  return (he_baseline - he_new) * static_cast<double>(n) / papers_per_hour;
}

void write_curve_csv(const HeIrCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "screened,identified,he,ir\n";
  out.precision(10);
  for (const auto& p : curve.points) {
    out << p.screened << ',' << p.identified << ',' << p.he << ',' << p.ir << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

nlohmann::json to_json(const SummaryReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"he_at_80", opt(r.he_at_80)},
          {"effort_saved_abs", opt(r.effort_saved_abs)},
          {"effort_saved_rel", opt(r.effort_saved_rel)},
          {"hours_saved", opt(r.hours_saved)},
          {"f1", opt(r.f1)}};
}

}  // namespace triage
