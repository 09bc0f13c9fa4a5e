#pragma once

#include <cstdint>
#include <string>

#include "cisurv/core_data.hpp"
#include "cisurv/rng.hpp"

namespace cisurv {

struct ClusterSizeDistribution {
  enum class Kind { uniform_range, negative_binomial, fixed };
  Kind kind = Kind::uniform_range;
  int lo = 5;
  int hi = 20;
  double nb_size = 1.79;
  double nb_prob = 0.0823;
  int fixed = 10;

  /// Negative binomial draws are truncated to [1, n_max] by rejection.
  int draw(RngStream& rng, int n_max) const;
  void validate(int n_max) const;
};

// pi = Phi(intercept + x1 * X1 + x2sq * X2^2 + x1pos_x6 * 1(X1 > 0) X6
//          + xc1 * max(Xc1, xc1_cap) + b)
struct TreatmentCoefficients {
  double intercept = -0.1;
  double x1 = -0.2;
  double x2sq = 0.2;
  double x1pos_x6 = 0.1;
  double xc1 = -0.3;
  double xc1_cap = 0.5;
};

// shape = base + a * A + sin_coef * sin(freq * Abar) X1^2 + a_abar * A Abar
//         + x2sq * X2^2 max(Xc1, xc1_floor) + ind * 1(Xc1 Xc2 < 0.5)
struct EventShapeCoefficients {
  double base = 0.1;
  double a = 0.3;
  double sin_coef = 0.3;
  double freq = 1.57;
  double a_abar = 0.1;
  double x2sq = 0.1;
  double xc1_floor = 0.1;
  double ind = 0.1;
};

// shape = base + a * A + abar_x2sq * Abar X2^2 + x1 * max(X1, x1_floor)
//         + ind * 1(Xc2 < 0.5)
struct CensorShapeCoefficients {
  double base = 0.2;
  double a = 0.5;
  double abar_x2sq = 0.5;
  double x1 = 0.1;
  double x1_floor = 0.1;
  double ind = 0.1;
};

/// How the co-treated share entering the outcome shapes is normalised: by the
/// number of other units (k / (N - 1)) or by the cluster size (k / N).
enum class ExposureDenominator { others, cluster };

/// The simulation design. Covariate columns: x1..x5 cluster-level normals
/// (repeated on every row), x6..x10 unit-level normals, x11..x15 unit-level
/// Bernoulli(0.5).
struct DgpConfig {
  int m = 200;
  ClusterSizeDistribution n_dist;
  double sigma_b = 0.5;
  /// Read sigma_b as a variance rather than a standard deviation.
  bool sigma_b_is_variance = false;
  ExposureDenominator exposure = ExposureDenominator::cluster;
  TreatmentCoefficients treatment;
  EventShapeCoefficients event;
  CensorShapeCoefficients censor;
  double event_scale = 2.0;
  double censor_scale = 2.0;
  int n_max = kDefaultMaxClusterSize;

  static constexpr int kClusterCovariates = 5;
  static constexpr int kNormalCovariates = 5;
  static constexpr int kBinaryCovariates = 5;
  static constexpr int kColumns = kClusterCovariates + kNormalCovariates + kBinaryCovariates;

  double b_sd() const;
  void validate() const;
};

std::string to_string(ExposureDenominator e);
ExposureDenominator parse_exposure_denominator(const std::string& s);

/// Treated share of the other units as it enters the shape maps.
double dgp_exposure(const DgpConfig& cfg, int n, int k_others);
/// Probit index without the random intercept.
double dgp_linear_predictor(const DgpConfig& cfg, const ClusterObservation& c, int j);
double dgp_event_shape(const DgpConfig& cfg, const ClusterObservation& c, int j, int a_j, int k_others);
double dgp_censor_shape(const DgpConfig& cfg, const ClusterObservation& c, int j, int a_j, int k_others);
/// P(A_j = 1 | X, N) with the random intercept integrated out.
double dgp_marginal_propensity(const DgpConfig& cfg, const ClusterObservation& c, int j);

}  // namespace cisurv
