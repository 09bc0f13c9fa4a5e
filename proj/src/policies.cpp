#include "cisurv/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "cisurv/error.hpp"

namespace cisurv {

Allocation to_allocation(std::span<const int> a) {
  if (a.size() > 64) throw Error(ErrorCode::invalid_argument, "allocations are limited to 64 units");
  Allocation out = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (a[j] != 0 && a[j] != 1) throw Error(ErrorCode::non_binary_field, "allocation entries must be 0 or 1");
    if (a[j]) out |= Allocation{1} << j;
  }
  return out;
}

std::vector<int> from_allocation(Allocation a, int n) {
  std::vector<int> out(n);
  for (int j = 0; j < n; ++j) out[j] = treated(a, j) ? 1 : 0;
  return out;
}

std::vector<double> poisson_binomial_pmf(std::span<const double> p, int skip) {
  std::vector<double> pmf(p.size() + 1, 0.0);
  pmf[0] = 1.0;
  std::size_t len = 1;
  for (std::size_t l = 0; l < p.size(); ++l) {
    if (static_cast<int>(l) == skip) continue;
    const double pl = p[l];
    for (std::size_t k = len; k > 0; --k) pmf[k] = pmf[k] * (1.0 - pl) + pmf[k - 1] * pl;
    pmf[0] *= 1.0 - pl;
    ++len;
  }
  pmf.resize(len);
  return pmf;
}

// ---------------------------------------------------------------- H

TreatmentDistribution TreatmentDistribution::independent(std::vector<double> pi, double floor) {
  return mixture({1.0}, {std::move(pi)}, floor);
}

TreatmentDistribution TreatmentDistribution::mixture(std::vector<double> weights,
                                                     std::vector<std::vector<double>> probs, double floor) {
  if (weights.empty() || weights.size() != probs.size()) {
    throw Error(ErrorCode::length_mismatch, "mixture weights and components differ in number");
  }
  TreatmentDistribution d;
  d.n_ = static_cast<int>(probs.front().size());
  if (d.n_ > 64) throw Error(ErrorCode::invalid_argument, "clusters are limited to 64 units");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw Error(ErrorCode::invalid_argument, "mixture weights must sum to a positive value");
  d.marginal_.assign(d.n_, 0.0);
  for (std::size_t q = 0; q < probs.size(); ++q) {
    if (static_cast<int>(probs[q].size()) != d.n_) {
      throw Error(ErrorCode::length_mismatch, "mixture components differ in length");
    }
    weights[q] /= total;
    for (int j = 0; j < d.n_; ++j) {
      double& p = probs[q][j];
      if (!std::isfinite(p)) throw Error(ErrorCode::invalid_argument, "non-finite propensity");
      p = std::clamp(p, floor, 1.0 - floor);
      d.marginal_[j] += weights[q] * p;
    }
  }
  d.weights_ = std::move(weights);
  d.probs_ = std::move(probs);
  return d;
}

double TreatmentDistribution::prob(Allocation a) const {
  double total = 0.0;
  for (std::size_t q = 0; q < weights_.size(); ++q) {
    double pr = weights_[q];
    const auto& p = probs_[q];
    for (int j = 0; j < n_; ++j) pr *= treated(a, j) ? p[j] : 1.0 - p[j];
    total += pr;
  }
  return total;
}

std::vector<double> TreatmentDistribution::count_pmf() const {
  std::vector<double> out(n_ + 1, 0.0);
  for (std::size_t q = 0; q < weights_.size(); ++q) {
    const auto pmf = poisson_binomial_pmf(probs_[q]);
    for (int k = 0; k <= n_; ++k) out[k] += weights_[q] * pmf[k];
  }
  return out;
}

std::vector<double> TreatmentDistribution::count_tail() const {
  auto pmf = count_pmf();
  std::vector<double> tail(n_ + 1, 0.0);
  double acc = 0.0;
  for (int k = n_; k >= 0; --k) {
    acc += pmf[k];
    tail[k] = acc;
  }
  tail[0] = 1.0;
  for (int k = 1; k <= n_; ++k) tail[k] = std::min(tail[k], tail[k - 1]);
  return tail;
}

std::vector<double> TreatmentDistribution::exposure_pmf(int j, int b) const {
  std::vector<double> out(n_, 0.0);
  for (std::size_t q = 0; q < weights_.size(); ++q) {
    const double own = b ? probs_[q][j] : 1.0 - probs_[q][j];
    const auto pmf = poisson_binomial_pmf(probs_[q], j);
    for (int k = 0; k < n_; ++k) out[k] += weights_[q] * own * pmf[k];
  }
  return out;
}

Allocation TreatmentDistribution::sample(RngStream& rng) const {
  std::size_t q = 0;
  if (weights_.size() > 1) {
    double u = rng.uniform();
    while (q + 1 < weights_.size() && u >= weights_[q]) u -= weights_[q++];
  }
  Allocation a = 0;
  for (int j = 0; j < n_; ++j) {
    if (rng.bernoulli(probs_[q][j])) a |= Allocation{1} << j;
  }
  return a;
}

ClusterPolicyContext::ClusterPolicyContext(TreatmentDistribution dist, double tail_floor)
    : n(dist.size()), h(std::move(dist)), h_floor(tail_floor) {
  pi_hat = h.marginal();
  count_tail = h.count_tail();
}

// ---------------------------------------------------------------- policies

int tpb_threshold(double rho, int n) {
  const double target = rho * n;
  int c = static_cast<int>(std::ceil(target));
  if (c > 0 && (c - 1) >= target * (1.0 - 1e-12)) --c;
  return std::clamp(c, 0, n + 1);
}

BoundPolicy::BoundPolicy(const PolicySpec& policy, const ClusterPolicyContext& ctx)
    : policy_(policy), ctx_(&ctx), n_(ctx.n) {
  policy_.validate();
  switch (policy_.family) {
    case PolicyFamily::type_b:
      break;
    case PolicyFamily::cips: {
      const double d = policy_.theta;
      shifted_.resize(n_);
      slope_.resize(n_);
      for (int j = 0; j < n_; ++j) {
        const double p = ctx.pi_hat[j];
        const double den = d * p + 1.0 - p;
        shifted_[j] = d * p / den;
        slope_[j] = d / (den * den);
      }
      break;
    }
    case PolicyFamily::tpb:
      threshold_ = tpb_threshold(policy_.theta, n_);
      tail_ = threshold_ > n_ ? 0.0 : ctx.count_tail[threshold_];
      if (tail_ < ctx.h_floor) {
        throw Error(ErrorCode::degenerate_tail,
                    fmt::format("P(treated share >= {}) = {:.3g} in a cluster of {}", policy_.theta, tail_, n_));
      }
      break;
  }
}

double BoundPolicy::q(Allocation a) const {
  switch (policy_.family) {
    case PolicyFamily::type_b: {
      const int k = popcount(a);
      return std::pow(policy_.theta, k) * std::pow(1.0 - policy_.theta, n_ - k);
    }
    case PolicyFamily::cips: {
      double pr = 1.0;
      for (int j = 0; j < n_; ++j) pr *= treated(a, j) ? shifted_[j] : 1.0 - shifted_[j];
      return pr;
    }
    case PolicyFamily::tpb:
      return popcount(a) >= threshold_ ? ctx_->h.prob(a) / tail_ : 0.0;
  }
  return 0.0;
}

double BoundPolicy::q_minus_j(Allocation a, int j) const {
  const Allocation bit = Allocation{1} << j;
  switch (policy_.family) {
    case PolicyFamily::type_b: {
      const int k = popcount(a & ~bit);
      return std::pow(policy_.theta, k) * std::pow(1.0 - policy_.theta, n_ - 1 - k);
    }
    case PolicyFamily::cips: {
      double pr = 1.0;
      for (int l = 0; l < n_; ++l) {
        if (l != j) pr *= treated(a, l) ? shifted_[l] : 1.0 - shifted_[l];
      }
      return pr;
    }
    case PolicyFamily::tpb:
      return q(a | bit) + q(a & ~bit);
  }
  return 0.0;
}

double BoundPolicy::cif(Allocation observed, Allocation a) const {
  switch (policy_.family) {
    case PolicyFamily::type_b:
      return 0.0;
    case PolicyFamily::cips: {
      double s = 0.0;
      for (int l = 0; l < n_; ++l) {
        const double resid = (treated(observed, l) ? 1.0 : 0.0) - ctx_->pi_hat[l];
        s += treated(a, l) ? slope_[l] * resid / shifted_[l] : -slope_[l] * resid / (1.0 - shifted_[l]);
      }
      return q(a) * s;
    }
    case PolicyFamily::tpb: {
      if (popcount(a) < threshold_) return 0.0;
      const double first = observed == a ? tail_ : 0.0;
      const double second = popcount(observed) >= threshold_ ? ctx_->h.prob(a) : 0.0;
      return (first - second) / (tail_ * tail_);
    }
  }
  return 0.0;
}

double BoundPolicy::cif_minus_j(Allocation observed, Allocation a, int j) const {
  if (policy_.family == PolicyFamily::type_b) return 0.0;
  const Allocation bit = Allocation{1} << j;
  return cif(observed, a | bit) + cif(observed, a & ~bit);
}

std::vector<double> BoundPolicy::exposure_pmf(int j, int b) const {
  std::vector<double> out;
  switch (policy_.family) {
    case PolicyFamily::type_b: {
      const double alpha = policy_.theta;
      std::vector<double> p(n_, alpha);
      out = poisson_binomial_pmf(p, j);
      const double own = b ? alpha : 1.0 - alpha;
      for (double& v : out) v *= own;
      break;
    }
    case PolicyFamily::cips: {
      out = poisson_binomial_pmf(shifted_, j);
      const double own = b ? shifted_[j] : 1.0 - shifted_[j];
      for (double& v : out) v *= own;
      break;
    }
    case PolicyFamily::tpb: {
      out = ctx_->h.exposure_pmf(j, b);
      for (int k = 0; k < n_; ++k) out[k] = (b + k >= threshold_) ? out[k] / tail_ : 0.0;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------- array API

namespace {

void check_length(std::size_t got, int n) {
  if (static_cast<int>(got) != n) {
    throw Error(ErrorCode::length_mismatch, fmt::format("allocation of length {} for a cluster of {}", got, n));
  }
}

Allocation reinsert(std::span<const int> a_minus_j, int j) {
  std::vector<int> full(a_minus_j.begin(), a_minus_j.end());
  full.insert(full.begin() + j, 0);
  return to_allocation(full);
}

}  // namespace

double q_prob(const PolicySpec& policy, std::span<const int> a, const ClusterPolicyContext& ctx) {
  check_length(a.size(), ctx.n);
  return BoundPolicy(policy, ctx).q(to_allocation(a));
}

double q_marginal_minus_j(const PolicySpec& policy, std::span<const int> a_minus_j, int j,
                          const ClusterPolicyContext& ctx) {
  check_length(a_minus_j.size() + 1, ctx.n);
  if (j < 0 || j >= ctx.n) throw Error(ErrorCode::invalid_argument, "unit index out of range");
  return BoundPolicy(policy, ctx).q_minus_j(reinsert(a_minus_j, j), j);
}

double cif_q(const PolicySpec& policy, std::span<const int> a_obs, std::span<const int> a,
             const ClusterPolicyContext& ctx) {
  check_length(a_obs.size(), ctx.n);
  check_length(a.size(), ctx.n);
  return BoundPolicy(policy, ctx).cif(to_allocation(a_obs), to_allocation(a));
}

// ---------------------------------------------------------------- estimands

std::vector<ComponentTerm> decompose(const EstimandSpec& spec) {
  spec.validate();
  const auto& q = spec.policy;
  switch (spec.kind) {
    case EstimandKind::mu: return {{Component::mu, q, 1.0}};
    case EstimandKind::mu1: return {{Component::mu1, q, 1.0}};
    case EstimandKind::mu0: return {{Component::mu0, q, 1.0}};
    case EstimandKind::de: return {{Component::mu1, q, 1.0}, {Component::mu0, q, -1.0}};
    case EstimandKind::se1: return {{Component::mu1, q, 1.0}, {Component::mu1, *spec.reference, -1.0}};
    case EstimandKind::se0: return {{Component::mu0, q, 1.0}, {Component::mu0, *spec.reference, -1.0}};
    case EstimandKind::oe: return {{Component::mu, q, 1.0}, {Component::mu, *spec.reference, -1.0}};
  }
  return {};
}

std::vector<double> component_weights(Component c, const BoundPolicy& q, Allocation a) {
  const int n = q.size();
  std::vector<double> w(n, 0.0);
  if (c == Component::mu) {
    std::fill(w.begin(), w.end(), q.q(a) / n);
    return w;
  }
  const bool want = c == Component::mu1;
  for (int j = 0; j < n; ++j) {
    if (treated(a, j) == want) w[j] = q.q_minus_j(a, j) / n;
  }
  return w;
}

std::vector<double> component_cif(Component c, const BoundPolicy& q, Allocation observed, Allocation a) {
  const int n = q.size();
  std::vector<double> phi(n, 0.0);
  if (q.spec().family == PolicyFamily::type_b) return phi;
  if (c == Component::mu) {
    std::fill(phi.begin(), phi.end(), q.cif(observed, a) / n);
    return phi;
  }
  const bool want = c == Component::mu1;
  for (int j = 0; j < n; ++j) {
    if (treated(a, j) == want) phi[j] = q.cif_minus_j(observed, a, j) / n;
  }
  return phi;
}

double component_weight_total(Component c, const BoundPolicy& q, Allocation a) {
  const auto w = component_weights(c, q, a);
  return std::accumulate(w.begin(), w.end(), 0.0);
}

std::vector<double> estimand_weights(const EstimandSpec& spec, std::span<const int> a,
                                     const ClusterPolicyContext& ctx) {
  check_length(a.size(), ctx.n);
  const Allocation mask = to_allocation(a);
  std::vector<double> out(ctx.n, 0.0);
  for (const auto& term : decompose(spec)) {
    const auto w = component_weights(term.component, BoundPolicy(term.policy, ctx), mask);
    for (int j = 0; j < ctx.n; ++j) out[j] += term.coef * w[j];
  }
  return out;
}

std::vector<double> estimand_cif(const EstimandSpec& spec, std::span<const int> a_obs, std::span<const int> a,
                                 const ClusterPolicyContext& ctx) {
  check_length(a_obs.size(), ctx.n);
  check_length(a.size(), ctx.n);
  const Allocation obs = to_allocation(a_obs), mask = to_allocation(a);
  std::vector<double> out(ctx.n, 0.0);
  for (const auto& term : decompose(spec)) {
    const auto phi = component_cif(term.component, BoundPolicy(term.policy, ctx), obs, mask);
    for (int j = 0; j < ctx.n; ++j) out[j] += term.coef * phi[j];
  }
  return out;
}

}  // namespace cisurv
