#include "cisurv/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "cisurv/error.hpp"
#include "cisurv/special.hpp"

namespace cisurv {

namespace {

constexpr int kXc1 = 0, kXc2 = 1;
constexpr int kX1 = DgpConfig::kClusterCovariates;
constexpr int kX2 = kX1 + 1;
constexpr int kX6 = DgpConfig::kClusterCovariates + DgpConfig::kNormalCovariates;

double col(const ClusterObservation& c, int j, int k) { return c.x[static_cast<std::size_t>(j) * c.p + k]; }

}  // namespace

int ClusterSizeDistribution::draw(RngStream& rng, int n_max) const {
  switch (kind) {
    case Kind::uniform_range:
      return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    case Kind::fixed:
      return fixed;
    case Kind::negative_binomial:
      for (;;) {
        std::gamma_distribution<double> g(nb_size, (1.0 - nb_prob) / nb_prob);
        std::poisson_distribution<int> pois(g(rng));
        const int n = pois(rng);
        if (n >= 1 && n <= n_max) return n;
      }
  }
  return fixed;
}

void ClusterSizeDistribution::validate(int n_max) const {
  bool ok = true;
  switch (kind) {
    case Kind::uniform_range: ok = lo >= 1 && hi >= lo && hi <= n_max; break;
    case Kind::fixed: ok = fixed >= 1 && fixed <= n_max; break;
    case Kind::negative_binomial: ok = nb_size > 0.0 && nb_prob > 0.0 && nb_prob < 1.0; break;
  }
  if (!ok) throw Error(ErrorCode::invalid_argument, "cluster size distribution outside [1, n_max]");
}

double DgpConfig::b_sd() const { return sigma_b_is_variance ? std::sqrt(sigma_b) : sigma_b; }

void DgpConfig::validate() const {
  if (m < 1) throw Error(ErrorCode::invalid_argument, "m must be positive");
  if (!(sigma_b >= 0.0)) throw Error(ErrorCode::invalid_argument, "sigma_b must be nonnegative");
  if (!(event_scale > 0.0) || !(censor_scale > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "gamma scales must be positive");
  }
  if (n_max < 1 || n_max > 64) throw Error(ErrorCode::invalid_argument, "n_max must lie in [1, 64]");
  n_dist.validate(n_max);
}

std::string to_string(ExposureDenominator e) { return e == ExposureDenominator::others ? "others" : "cluster"; }

ExposureDenominator parse_exposure_denominator(const std::string& s) {
  if (s == "others") return ExposureDenominator::others;
  if (s == "cluster") return ExposureDenominator::cluster;
  throw Error(ErrorCode::invalid_argument, "exposure denominator must be 'others' or 'cluster'");
}

double dgp_exposure(const DgpConfig& cfg, int n, int k_others) {
  if (cfg.exposure == ExposureDenominator::cluster) return static_cast<double>(k_others) / n;
  return n > 1 ? static_cast<double>(k_others) / (n - 1) : 0.0;
}

double dgp_linear_predictor(const DgpConfig& cfg, const ClusterObservation& c, int j) {
  const auto& t = cfg.treatment;
  const double x1 = col(c, j, kX1), x2 = col(c, j, kX2), x6 = col(c, j, kX6);
  return t.intercept + t.x1 * x1 + t.x2sq * x2 * x2 + t.x1pos_x6 * (x1 > 0.0 ? x6 : 0.0) +
         t.xc1 * std::max(col(c, j, kXc1), t.xc1_cap);
}

double dgp_event_shape(const DgpConfig& cfg, const ClusterObservation& c, int j, int a_j, int k_others) {
  const auto& e = cfg.event;
  const double abar = dgp_exposure(cfg, c.size(), k_others);
  const double x1 = col(c, j, kX1), x2 = col(c, j, kX2);
  const double xc1 = col(c, j, kXc1), xc2 = col(c, j, kXc2);
  return e.base + e.a * a_j + e.sin_coef * std::sin(e.freq * abar) * x1 * x1 + e.a_abar * a_j * abar +
         e.x2sq * x2 * x2 * std::max(xc1, e.xc1_floor) + e.ind * (xc1 * xc2 < 0.5 ? 1.0 : 0.0);
}

double dgp_censor_shape(const DgpConfig& cfg, const ClusterObservation& c, int j, int a_j, int k_others) {
  const auto& s = cfg.censor;
  const double abar = dgp_exposure(cfg, c.size(), k_others);
  const double x1 = col(c, j, kX1), x2 = col(c, j, kX2);
  return s.base + s.a * a_j + s.abar_x2sq * abar * x2 * x2 + s.x1 * std::max(x1, s.x1_floor) +
         s.ind * (col(c, j, kXc2) < 0.5 ? 1.0 : 0.0);
}

double dgp_marginal_propensity(const DgpConfig& cfg, const ClusterObservation& c, int j) {
  const double sd = cfg.b_sd();
  return normal_cdf(dgp_linear_predictor(cfg, c, j) / std::sqrt(1.0 + sd * sd));
}

}  // namespace cisurv
