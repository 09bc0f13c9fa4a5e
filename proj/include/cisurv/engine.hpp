#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cisurv/core_data.hpp"
#include "cisurv/nuisance.hpp"
#include "cisurv/policies.hpp"

namespace cisurv {

/// How the sum over all 2^N allocations in the outcome-regression term is
/// carried out.
///
///   exact_sum: full enumeration, clusters of at most 20 units
///   subsample: r allocations drawn from the fitted treatment distribution
///   exposure:  exact, collapsed over (own treatment, treated co-members); valid
///              because every outcome model here depends on the allocation
///              only through that pair
enum class SumMode { exact_sum, subsample, exposure };

inline constexpr int kExactSumMaxClusterSize = 20;

struct EvalMode {
  SumMode kind = SumMode::exact_sum;
  int r = 100;
  std::uint64_t seed = 0;

  static EvalMode exact() { return {SumMode::exact_sum, 0, 0}; }
  static EvalMode exposure() { return {SumMode::exposure, 0, 0}; }
  static EvalMode subsample(int r, std::uint64_t seed) { return {SumMode::subsample, r, seed}; }
};

std::string to_string(SumMode m);
SumMode parse_sum_mode(const std::string& s);

/// Censoring martingale increments of one unit on a step censoring model.
struct MartingaleIncrements {
  std::vector<double> dM;        // per grid index; zero beyond Y
  std::vector<double> surv;      // S^C(r_k)
  /// sum_k dM_k / S^C(r_k).
  double weighted_sum() const;
};

/// dM_k = 1(Y = r_k, delta = 0) - R^C_k h^C_k, where a unit is in the
/// censoring risk set at r_k when Y > r_k or it is censored at r_k. Then
/// sum_k dM_k / S^C(r_k) = 1 - delta / S^C(Y-).
MartingaleIncrements censoring_martingale(const StepSurvival& censor, double y, int delta);

/// G^R(r) = E[R(T) 1(T >= r)] under a step event model; G^R(0) = E[R(T)].
double g_function(const SurvivalCurve& event, const TransformSpec& t, double r);

/// The three pieces of phi^P for one component, one policy, one transform.
struct ComponentValue {
  double outcome_regression = 0.0;  // sum_a OR(a), or its subsampled estimate
  double correction = 0.0;          // IPCW-BC + AUG
  double weight_total = 0.0;        // w(A)^T 1 / H(A)

  double value() const { return outcome_regression + correction; }
};

/// Evaluates phi^P pieces for one cluster under one nuisance bundle. All
/// model predictions are cached, so asking for many components and policies
/// costs little more than asking for one.
class ClusterEvaluator {
 public:
  ClusterEvaluator(const ClusterObservation& obs, const NuisanceBundle& bundle,
                   std::vector<TransformSpec> transforms, EvalMode mode, std::uint64_t draw_key = 0);
  ~ClusterEvaluator();
  ClusterEvaluator(const ClusterEvaluator&) = delete;
  ClusterEvaluator& operator=(const ClusterEvaluator&) = delete;

  ComponentValue evaluate(Component component, const PolicySpec& policy, std::size_t transform_index);
  const std::vector<TransformSpec>& transforms() const;

 private:
  struct Impl;
  Impl* impl_;
};

/// phi^P(R; O, eta) for an estimand. `fold` is the fold label of obs; a
/// bundle trained for a different fold is rejected.
double cluster_influence(const ClusterObservation& obs, const NuisanceBundle& bundle, const EstimandSpec& spec,
                         EvalMode mode, int fold = 0);

struct CrossFitOptions {
  int K = 2;
  EvalMode mode = EvalMode::subsample(100, 0);
  bool bounded = false;
  std::uint64_t seed = 0;
  LearnerConfig learners;
  double level = 0.95;
  int jobs = 1;
  /// Use the dataset's own fold labels instead of drawing new ones.
  bool keep_folds = false;
};

struct EstimateResult {
  EstimandSpec spec;
  std::string estimand;
  double point = 0.0;
  double sigma = 0.0;  // sigma-hat; se = sigma / sqrt(m)
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.95;
  int m = 0;
  int K = 0;
  int S = 1;
  int r = 0;
  bool bounded = false;
  SumMode mode = SumMode::subsample;
};

/// Per-cluster estimating-function values, one column per estimand.
struct InfluenceTable {
  std::vector<EstimandSpec> specs;
  std::vector<std::vector<double>> values;  // [cluster][column]
  std::vector<int> folds;                   // 1..K per cluster
  int K = 0;
  /// Mean IPW weight per fold (row) and distinct (component, policy) pair.
  std::vector<std::vector<double>> hajek;

  std::size_t rows() const { return values.size(); }
  std::size_t columns() const { return specs.size(); }
  /// K^-1 sum_k (fold mean of column g).
  double point(std::size_t g) const;
  /// K^-1 sum_k fold mean of (phi - point)^2.
  double variance(std::size_t g) const;
};

struct CrossFitResult {
  InfluenceTable table;
  std::vector<EstimateResult> estimates;
};

CrossFitResult cross_fit(const Dataset& ds, std::span<const EstimandSpec> specs, const CrossFitOptions& opts);

struct SbsResult {
  std::vector<EstimateResult> estimates;
  /// Cross-fit results of every split.
  std::vector<CrossFitResult> splits;
};

/// Split-robust estimator: S cross-fits with fresh folds; medians of the
/// point and variance estimates.
SbsResult sbs_estimate(const Dataset& ds, std::span<const EstimandSpec> specs, const CrossFitOptions& opts, int S);

/// Median; the mean of the two central values for even sizes.
double median(std::vector<double> v);

}  // namespace cisurv
