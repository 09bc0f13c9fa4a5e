#pragma once

#include <memory>
#include <variant>
#include <vector>

#include "cisurv/core_data.hpp"

namespace cisurv {

/// Discrete distribution on a time grid. hazard[k] is P(T = r_k | T >= r_k);
/// whatever survives the last grid point is treated as mass at +infinity.
struct StepSurvival {
  std::shared_ptr<const TimeGrid> grid;
  std::vector<double> hazard;
  std::vector<double> surv;  // S(r_k) = prod_{l <= k} (1 - h_l)

  static StepSurvival from_hazards(std::shared_ptr<const TimeGrid> grid, std::vector<double> hazard);

  /// S(r) = P(T > r), right-continuous.
  double survival(double r) const;
  /// S(r-) = P(T >= r).
  double survival_before(double r) const;
  double expected(const TransformSpec& t) const;
  /// E[R(T) 1(T > r)].
  double partial_expected(const TransformSpec& t, double r) const;
};

/// Gamma(shape, scale) event or censoring time.
struct GammaSurvival {
  double shape = 1.0;
  double scale = 1.0;

  double survival(double r) const;
  double survival_before(double r) const { return survival(r); }
  double density(double r) const;
  double expected(const TransformSpec& t) const;
  double partial_expected(const TransformSpec& t, double r) const;
};

using SurvivalCurve = std::variant<StepSurvival, GammaSurvival>;

double survival(const SurvivalCurve& c, double r);
double survival_before(const SurvivalCurve& c, double r);
double expected(const SurvivalCurve& c, const TransformSpec& t);
double partial_expected(const SurvivalCurve& c, const TransformSpec& t, double r);

}  // namespace cisurv
