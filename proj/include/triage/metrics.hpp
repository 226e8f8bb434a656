#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace triage {

/// Papers a screener gets through per hour, measured on a deployed map.
inline constexpr double kPapersPerHour = 38.6;

struct ScreeningStats {
  std::size_t n = 0;
  std::size_t n_included = 0;
  std::size_t n_screened = 0;
  std::size_t n_identified = 0;
};

/// HE = n_screened / n.
double human_effort(std::size_t n_screened, std::size_t n);

/// IR = n_identified / n_included.
double inclusion_rate(std::size_t n_identified, std::size_t n_included);

struct CurvePoint {
  std::size_t screened = 0;
  std::size_t identified = 0;
  double he = 0.0;
  double ir = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

/// Cumulative (HE, IR) trace. The first point is the origin.
struct HeIrCurve {
  std::size_t n = 0;
  std::size_t n_included = 0;
  std::vector<CurvePoint> points;

  double max_ir() const { return points.empty() ? 0.0 : points.back().ir; }
  ScreeningStats stats_at(std::size_t i) const;
};

/// One point per screened document, in screening order.
HeIrCurve build_curve(const std::vector<std::string>& screening_order,
                      const std::unordered_map<std::string, bool>& included, std::size_t n,
                      std::size_t n_included);

/// Smallest HE whose IR reaches the target (step lookup, no interpolation).
/// Throws Error(kTargetUnreachable) naming the highest IR reached.
double he_at_target(const HeIrCurve& curve, double target_ir = 0.8);

struct EffortSaved {
  double absolute = 0.0;
  double relative = 0.0;
};

EffortSaved effort_saved(double he_baseline, double he_new);

double hours_saved(double he_baseline, double he_new, std::size_t n,
                   double papers_per_hour = kPapersPerHour);

/// screened,identified,he,ir
void write_curve_csv(const HeIrCurve& curve, const std::filesystem::path& path);

struct SummaryReport {
  std::optional<double> he_at_80;
  std::optional<double> effort_saved_abs;
  std::optional<double> effort_saved_rel;
  std::optional<double> hours_saved;
  std::optional<double> f1;
};

nlohmann::json to_json(const SummaryReport& report);

}  // namespace triage
