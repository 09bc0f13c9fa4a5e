#include "cisurv/survival_curve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cisurv/error.hpp"
#include "cisurv/special.hpp"

namespace cisurv {

StepSurvival StepSurvival::from_hazards(std::shared_ptr<const TimeGrid> grid, std::vector<double> hazard) {
  if (!grid || hazard.size() != grid->size()) {
    throw Error(ErrorCode::length_mismatch, "one hazard per grid point is required");
  }
  StepSurvival s{std::move(grid), std::move(hazard), {}};
  s.surv.resize(s.hazard.size());
  double acc = 1.0;
  for (std::size_t k = 0; k < s.hazard.size(); ++k) {
    s.hazard[k] = std::clamp(s.hazard[k], 0.0, 1.0);
    acc *= 1.0 - s.hazard[k];
    s.surv[k] = acc;
  }
  return s;
}

double StepSurvival::survival(double r) const {
  const std::size_t c = grid->count_at_or_below(r);
  return c == 0 ? 1.0 : surv[c - 1];
}

double StepSurvival::survival_before(double r) const {
  const auto& pts = grid->points();
  const std::size_t c = static_cast<std::size_t>(std::lower_bound(pts.begin(), pts.end(), r) - pts.begin());
  return c == 0 ? 1.0 : surv[c - 1];
}

double StepSurvival::partial_expected(const TransformSpec& t, double r) const {
  const std::size_t start = grid->count_at_or_below(r);
  const std::size_t L = surv.size();
  if (L == 0) return t.tail_value(0.0);
  double total = 0.0;
  double prev = start == 0 ? 1.0 : surv[start - 1];
  for (std::size_t k = start; k < L; ++k) {
    const double mass = prev - surv[k];
    if (mass != 0.0) total += t((*grid)[k]) * mass;
    prev = surv[k];
  }
  return total + surv[L - 1] * t.tail_value(grid->back());
}

double StepSurvival::expected(const TransformSpec& t) const {
  return partial_expected(t, -std::numeric_limits<double>::infinity());
}

double GammaSurvival::survival(double r) const {
  return r <= 0.0 ? 1.0 : 1.0 - gamma_cdf(r, shape, scale);
}

double GammaSurvival::density(double r) const { return gamma_pdf(r, shape, scale); }

double GammaSurvival::partial_expected(const TransformSpec& t, double r) const {
  r = std::max(r, 0.0);
  const double mean = shape * scale;
  // E[T 1(r < T <= u)] = shape * scale * (P(shape + 1, u / scale) - P(shape + 1, r / scale))
  auto first_moment = [&](double lo, double hi) {
    return mean * (regularized_gamma_p(shape + 1.0, hi / scale) - regularized_gamma_p(shape + 1.0, lo / scale));
  };
  switch (t.kind) {
    case TransformKind::risk_at:
      return r >= t.horizon ? 0.0 : gamma_cdf(t.horizon, shape, scale) - gamma_cdf(r, shape, scale);
    case TransformKind::rmst: {
      const double h = t.horizon;
      if (r >= h) return h * survival(r);
      return first_moment(r, h) + h * survival(h);
    }
    case TransformKind::identity:
      return mean * (1.0 - regularized_gamma_p(shape + 1.0, r / scale));
  }
  return 0.0;
}

double GammaSurvival::expected(const TransformSpec& t) const { return partial_expected(t, 0.0); }

double survival(const SurvivalCurve& c, double r) {
  return std::visit([&](const auto& s) { return s.survival(r); }, c);
}
double survival_before(const SurvivalCurve& c, double r) {
  return std::visit([&](const auto& s) { return s.survival_before(r); }, c);
}
double expected(const SurvivalCurve& c, const TransformSpec& t) {
  return std::visit([&](const auto& s) { return s.expected(t); }, c);
}
double partial_expected(const SurvivalCurve& c, const TransformSpec& t, double r) {
  return std::visit([&](const auto& s) { return s.partial_expected(t, r); }, c);
}

}  // namespace cisurv
