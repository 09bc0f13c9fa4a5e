#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cisurv/engine.hpp"

namespace cisurv {

/// point +- z_{(1 + level) / 2} * se.
std::pair<double, double> pointwise_ci(const EstimateResult& r, double level);

/// Simultaneous band over the columns of an influence table.
struct UCBResult {
  std::vector<std::string> grid;  // one label per band point
  std::vector<double> point;
  std::vector<double> se;
  std::vector<double> lo;
  std::vector<double> hi;
  double critical = 0.0;
  double level = 0.95;
  int B = 0;
  /// Bootstrap suprema, in draw order.
  std::vector<double> suprema;
};

inline constexpr int kDefaultBootstrapDraws = 2000;

/// Rademacher multiplier bootstrap of the standardized sup over all columns of
/// `table`. The process is centred and scaled with the table's own estimates;
/// the band is drawn around `estimates` (one per column), which may come from
/// a split-robust fit.
UCBResult ucb_critical_value(const InfluenceTable& table, std::span<const EstimateResult> estimates, int B,
                             double level, std::uint64_t seed, int jobs = 1);

/// Critical value at another level from the same bootstrap draws.
double ucb_quantile(std::vector<double> suprema, double level);

enum class InterferenceDecision { reject, fail_to_reject };

std::string to_string(InterferenceDecision d);

/// Rejects no interference when no horizontal line fits inside the band
/// (closed-band convention).
InterferenceDecision interference_test(const UCBResult& ucb);

}  // namespace cisurv
