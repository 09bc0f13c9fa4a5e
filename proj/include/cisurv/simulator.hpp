#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cisurv/core_data.hpp"
#include "cisurv/dgp.hpp"
#include "cisurv/engine.hpp"
#include "cisurv/nuisance.hpp"

namespace cisurv {

/// A simulated dataset with the latent quantities that generated it.
struct SimulatedData {
  Dataset data;
  std::vector<std::vector<double>> t;  // event times per cluster and unit
  std::vector<std::vector<double>> c;  // censoring times
  std::vector<double> b;               // random intercepts
};

/// Covariates and cluster size of one cluster; times and treatments are zero.
ClusterObservation draw_cluster_covariates(const DgpConfig& cfg, RngStream& rng, std::string id);

/// Clusters are numbered 1..m; cluster i uses its own keyed stream, so any
/// cluster can be regenerated independently of the others.
SimulatedData generate_dataset(const DgpConfig& cfg, std::uint64_t seed);

/// A Monte Carlo truth with its standard error.
struct TruthValue {
  double value = 0.0;
  double se = 0.0;
};

/// Type B truths via the binomial collapse over treated co-members. All
/// specs are evaluated on the same simulated clusters.
std::vector<TruthValue> true_values_typeb(const DgpConfig& cfg, std::span<const EstimandSpec> specs,
                                          int mc_clusters, std::uint64_t seed);
TruthValue true_value_typeb(const DgpConfig& cfg, const EstimandSpec& spec, int mc_clusters, std::uint64_t seed);

/// Truths for any policy. The factual allocation distribution integrates the
/// random intercept out with `mc_b` Gauss-Hermite nodes.
std::vector<TruthValue> true_values_mc(const DgpConfig& cfg, std::span<const EstimandSpec> specs, int mc_clusters,
                                       int mc_b, std::uint64_t seed);
TruthValue true_value_mc(const DgpConfig& cfg, const EstimandSpec& spec, int mc_clusters, int mc_b,
                         std::uint64_t seed);

/// Nuisance bundle holding the true propensity and gamma survival models.
NuisanceBundle oracle_bundle(const DgpConfig& cfg, LearnerConfig learners = {});

// ---------------------------------------------------------------- tiny worlds

/// A fully enumerable world: clusters of n <= 3 units, one binary cluster
/// covariate and one binary unit covariate, a two-component mixture for the
/// treatment allocation, and event and censoring hazards on the times 1..4
/// that depend on (x_c, x_j, a_j, treated co-members). Events at 4 are
/// certain for survivors; censoring may never happen.
struct TinyWorld {
  static constexpr int kTimes = 4;
  int n = 2;
  double p_xc = 0.5;                                // P(x_c = 1)
  double p_xu = 0.5;                                // P(x_j = 1)
  double mix_weight = 0.5;                          // weight of component 0
  double treat[2][2][2] = {};                       // [component][x_c][x_j]
  std::vector<double> event_hazard;                 // [((xc * 2 + xu) * 2 + a) * n + k] * 4 + t
  std::vector<double> censor_hazard;

  double hazard(const std::vector<double>& table, int xc, int xu, int a, int k, int t) const {
    return table[((((xc * 2 + xu) * 2 + a) * n + k) * kTimes) + t];
  }
};

TinyWorld random_tiny_world(int n, std::uint64_t seed);

struct BruteForceResult {
  double psi = 0.0;           // plug-in enumeration
  double expected_phi = 0.0;  // E[phi^P] under the same world with oracle nuisances
};

BruteForceResult brute_force_psi(const TinyWorld& world, const EstimandSpec& spec,
                                 EvalMode mode = EvalMode::exact());

}  // namespace cisurv
