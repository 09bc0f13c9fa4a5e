#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cisurv/core_data.hpp"
#include "cisurv/policy_spec.hpp"
#include "cisurv/rng.hpp"

namespace cisurv {

/// Bit j set means unit j is treated. Clusters are capped at 64 units.
using Allocation = std::uint64_t;

Allocation to_allocation(std::span<const int> a);
std::vector<int> from_allocation(Allocation a, int n);
inline int popcount(Allocation a) { return __builtin_popcountll(a); }
inline bool treated(Allocation a, int j) { return (a >> j) & 1U; }

inline constexpr double kDefaultPiFloor = 0.01;
inline constexpr double kDefaultTailFloor = 1e-6;

/// Joint treatment distribution of a cluster given (X, N): a finite mixture
/// of independent Bernoulli vectors. Fitted propensity models use a single
/// component; a random-intercept model is represented by quadrature nodes.
class TreatmentDistribution {
 public:
  TreatmentDistribution() = default;
  /// Probabilities are clipped into [floor, 1 - floor].
  static TreatmentDistribution independent(std::vector<double> pi, double floor = kDefaultPiFloor);
  static TreatmentDistribution mixture(std::vector<double> weights, std::vector<std::vector<double>> probs,
                                       double floor = kDefaultPiFloor);

  int size() const { return n_; }
  std::size_t components() const { return weights_.size(); }
  double weight(std::size_t q) const { return weights_[q]; }
  const std::vector<double>& probs(std::size_t q) const { return probs_[q]; }

  double prob(Allocation a) const;
  /// P(A_j = 1), the individual propensity.
  const std::vector<double>& marginal() const { return marginal_; }
  /// P(sum A = k), k = 0..n.
  std::vector<double> count_pmf() const;
  /// P(sum A >= k), k = 0..n.
  std::vector<double> count_tail() const;
  /// P(A_j = b, number of treated units other than j = k), k = 0..n-1.
  std::vector<double> exposure_pmf(int j, int b) const;

  Allocation sample(RngStream& rng) const;

 private:
  int n_ = 0;
  std::vector<double> weights_;
  std::vector<std::vector<double>> probs_;
  std::vector<double> marginal_;
};

/// pmf of a sum of independent Bernoulli(p_l), skipping index `skip`.
std::vector<double> poisson_binomial_pmf(std::span<const double> p, int skip = -1);

/// Everything a policy needs to know about one cluster's factual treatment
/// distribution.
struct ClusterPolicyContext {
  int n = 0;
  TreatmentDistribution h;
  std::vector<double> pi_hat;
  std::vector<double> count_tail;
  double h_floor = kDefaultTailFloor;

  explicit ClusterPolicyContext(TreatmentDistribution dist, double tail_floor = kDefaultTailFloor);
  ClusterPolicyContext() = default;
};

/// Smallest treated count k with k / n >= rho, with a guard against
/// rounding in rho * n.
int tpb_threshold(double rho, int n);

/// A policy bound to one cluster's context, with per-cluster constants
/// precomputed. All allocation arguments are bitmasks of length ctx.n.
class BoundPolicy {
 public:
  BoundPolicy(const PolicySpec& policy, const ClusterPolicyContext& ctx);

  const PolicySpec& spec() const { return policy_; }
  int size() const { return n_; }

  /// Q(a | X, N).
  double q(Allocation a) const;
  /// Q(a_{-j} | X, N); bit j of `a` is ignored.
  double q_minus_j(Allocation a, int j) const;
  /// phi_Q(A, X, N; a).
  double cif(Allocation observed, Allocation a) const;
  /// phi_Q(A, X, N; a_{-j}) = phi_Q(A; (1, a_{-j})) + phi_Q(A; (0, a_{-j})).
  double cif_minus_j(Allocation observed, Allocation a, int j) const;

  /// P_Q(A_j = b, K_{-j} = k), k = 0..n-1.
  std::vector<double> exposure_pmf(int j, int b) const;
  /// CIPS shifted propensities (empty for the other families).
  const std::vector<double>& shifted() const { return shifted_; }
  /// CIPS d pi_delta / d pi.
  const std::vector<double>& slope() const { return slope_; }
  const ClusterPolicyContext& context() const { return *ctx_; }
  /// TPB threshold count and tail probability.
  int threshold() const { return threshold_; }
  double tail() const { return tail_; }

 private:
  PolicySpec policy_;
  const ClusterPolicyContext* ctx_;
  int n_;
  std::vector<double> shifted_;    // cips: pi_delta
  std::vector<double> slope_;      // cips: delta / (delta pi + 1 - pi)^2
  int threshold_ = 0;              // tpb
  double tail_ = 1.0;              // tpb
};

double q_prob(const PolicySpec& policy, std::span<const int> a, const ClusterPolicyContext& ctx);
double q_marginal_minus_j(const PolicySpec& policy, std::span<const int> a_minus_j, int j,
                          const ClusterPolicyContext& ctx);
double cif_q(const PolicySpec& policy, std::span<const int> a_obs, std::span<const int> a,
             const ClusterPolicyContext& ctx);

/// The three building blocks every estimand is a linear combination of.
enum class Component { mu, mu1, mu0 };

struct ComponentTerm {
  Component component;
  PolicySpec policy;
  double coef;
};

/// mu -> mu(Q); DE -> mu1(Q) - mu0(Q); SE_b -> mu_b(Q) - mu_b(Q'); OE -> mu(Q) - mu(Q').
std::vector<ComponentTerm> decompose(const EstimandSpec& spec);

/// Weight vector w(a, X, N) of a component.
std::vector<double> component_weights(Component c, const BoundPolicy& q, Allocation a);
/// CIF vector Phi(A, X, N; a) of a component.
std::vector<double> component_cif(Component c, const BoundPolicy& q, Allocation observed, Allocation a);
/// w(A)^T 1, the numerator of the mean IPW weight.
double component_weight_total(Component c, const BoundPolicy& q, Allocation a);

std::vector<double> estimand_weights(const EstimandSpec& spec, std::span<const int> a,
                                     const ClusterPolicyContext& ctx);
std::vector<double> estimand_cif(const EstimandSpec& spec, std::span<const int> a_obs, std::span<const int> a,
                                 const ClusterPolicyContext& ctx);

}  // namespace cisurv
