#include "cisurv/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/binomial.hpp>
#include <fmt/format.h>

#include "cisurv/error.hpp"
#include "cisurv/special.hpp"

namespace cisurv {

namespace {

constexpr std::uint64_t kClusterStream = 0x636c7573ULL;
constexpr std::uint64_t kTruthStream = 0x7472757468ULL;

struct Accumulator {
  double sum = 0.0, sum_sq = 0.0;
  long count = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  TruthValue result() const {
    const double mean = sum / count;
    const double var = count > 1 ? std::max(sum_sq / count - mean * mean, 0.0) * count / (count - 1) : 0.0;
    return {mean, std::sqrt(var / count)};
  }
};

struct ComponentKey {
  Component component;
  PolicySpec policy;
  std::size_t transform;
  bool operator==(const ComponentKey&) const = default;
};

// Distinct transforms and (component, policy, transform) triples of a spec list.
// A zero risk horizon is an empty window whose truth is exactly zero.
bool empty_window(const TransformSpec& t) { return t.kind == TransformKind::risk_at && t.horizon == 0.0; }

struct Plan {
  std::vector<TransformSpec> transforms;
  std::vector<ComponentKey> keys;
  std::vector<std::vector<std::pair<std::size_t, double>>> terms;  // per spec: (key, coef)

  explicit Plan(std::span<const EstimandSpec> specs) {
    for (const auto& spec : specs) {
      auto checked = spec;
      if (empty_window(spec.transform)) checked.transform = TransformSpec::risk_at(1.0);
      checked.validate();
      auto tit = std::find(transforms.begin(), transforms.end(), spec.transform);
      const std::size_t ti = tit - transforms.begin();
      if (tit == transforms.end()) transforms.push_back(spec.transform);
      std::vector<std::pair<std::size_t, double>> col;
      for (const auto& term : decompose(checked)) {
        const ComponentKey key{term.component, term.policy, ti};
        auto kit = std::find(keys.begin(), keys.end(), key);
        const std::size_t ki = kit - keys.begin();
        if (kit == keys.end()) keys.push_back(key);
        col.emplace_back(ki, term.coef);
      }
      terms.push_back(std::move(col));
    }
  }
};

// F[(j * 2 + b) * n + k] = E[R(T_j)] at exposure (b, k), one table per transform.
std::vector<std::vector<double>> outcome_tables(const DgpConfig& cfg, const ClusterObservation& c,
                                                const std::vector<TransformSpec>& transforms) {
  const int n = c.size();
  std::vector<std::vector<double>> F(transforms.size(), std::vector<double>(2 * n * n));
  for (int j = 0; j < n; ++j)
    for (int b = 0; b < 2; ++b)
      for (int k = 0; k < n; ++k) {
        const GammaSurvival curve{dgp_event_shape(cfg, c, j, b, k), cfg.event_scale};
        for (std::size_t t = 0; t < transforms.size(); ++t) F[t][(j * 2 + b) * n + k] = curve.expected(transforms[t]);
      }
  return F;
}

// Component value given P(A_j = b, K_{-j} = k) for every unit.
template <class Pmf>
double component_value(Component comp, int n, const std::vector<double>& F, Pmf&& pmf) {
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    const auto p0 = pmf(j, 0), p1 = pmf(j, 1);
    for (int k = 0; k < n; ++k) {
      const double f0 = F[(j * 2) * n + k], f1 = F[(j * 2 + 1) * n + k];
      switch (comp) {
        case Component::mu: total += p0[k] * f0 + p1[k] * f1; break;
        case Component::mu1: total += (p0[k] + p1[k]) * f1; break;
        case Component::mu0: total += (p0[k] + p1[k]) * f0; break;
      }
    }
  }
  return total / n;
}

void check_transforms(const std::vector<TransformSpec>& transforms) {
  for (const auto& t : transforms)
    if (!empty_window(t)) t.validate();
}

}  // namespace

ClusterObservation draw_cluster_covariates(const DgpConfig& cfg, RngStream& rng, std::string id) {
  const int n = cfg.n_dist.draw(rng, cfg.n_max);
  ClusterObservation c;
  c.cluster_id = std::move(id);
  c.p = DgpConfig::kColumns;
  c.y.assign(n, 0.0);
  c.delta.assign(n, 0);
  c.a.assign(n, 0);
  c.x.assign(static_cast<std::size_t>(n) * c.p, 0.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  double cluster_cov[DgpConfig::kClusterCovariates];
  for (double& v : cluster_cov) v = norm(rng);
  for (int j = 0; j < n; ++j) {
    double* row = c.x.data() + static_cast<std::size_t>(j) * c.p;
    int col = 0;
    for (double v : cluster_cov) row[col++] = v;
    for (int q = 0; q < DgpConfig::kNormalCovariates; ++q) row[col++] = norm(rng);
    for (int q = 0; q < DgpConfig::kBinaryCovariates; ++q) row[col++] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return c;
}

SimulatedData generate_dataset(const DgpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SimulatedData out;
  std::vector<ClusterObservation> clusters;
  clusters.reserve(cfg.m);
  const double sd = cfg.b_sd();
  for (int i = 0; i < cfg.m; ++i) {
    RngStream rng(seed, {kClusterStream, static_cast<std::uint64_t>(i)});
    auto c = draw_cluster_covariates(cfg, rng, std::to_string(i + 1));
    const int n = c.size();
    std::normal_distribution<double> norm(0.0, 1.0);
    const double b = sd * norm(rng);
    for (int j = 0; j < n; ++j) c.a[j] = rng.bernoulli(normal_cdf(dgp_linear_predictor(cfg, c, j) + b)) ? 1 : 0;
    const int k = c.treated_count();
    std::vector<double> t(n), cens(n);
    for (int j = 0; j < n; ++j) {
      const int others = k - c.a[j];
      std::gamma_distribution<double> ev(dgp_event_shape(cfg, c, j, c.a[j], others), cfg.event_scale);
      std::gamma_distribution<double> ce(dgp_censor_shape(cfg, c, j, c.a[j], others), cfg.censor_scale);
      t[j] = ev(rng);
      cens[j] = ce(rng);
      c.y[j] = std::min(t[j], cens[j]);
      c.delta[j] = t[j] <= cens[j] ? 1 : 0;
    }
    clusters.push_back(std::move(c));
    out.t.push_back(std::move(t));
    out.c.push_back(std::move(cens));
    out.b.push_back(b);
  }
  out.data = Dataset(std::move(clusters), cfg.n_max);
  return out;
}

std::vector<TruthValue> true_values_typeb(const DgpConfig& cfg, std::span<const EstimandSpec> specs,
                                          int mc_clusters, std::uint64_t seed) {
  cfg.validate();
  if (mc_clusters < 2) throw Error(ErrorCode::invalid_argument, "at least two Monte Carlo clusters are required");
  const Plan plan(specs);
  check_transforms(plan.transforms);
  for (const auto& key : plan.keys) {
    if (key.policy.family != PolicyFamily::type_b) {
      throw Error(ErrorCode::invalid_argument, "the binomial truth oracle handles Type B policies only");
    }
  }
  std::vector<Accumulator> acc(specs.size());
  std::vector<double> comp(plan.keys.size());
  for (int i = 0; i < mc_clusters; ++i) {
    RngStream rng(seed, {kTruthStream, static_cast<std::uint64_t>(i)});
    const auto c = draw_cluster_covariates(cfg, rng, {});
    const int n = c.size();
    const auto F = outcome_tables(cfg, c, plan.transforms);
    for (std::size_t q = 0; q < plan.keys.size(); ++q) {
      const double alpha = plan.keys[q].policy.theta;
      const boost::math::binomial_distribution<double> bin(n - 1, alpha);
      std::vector<double> co(n);
      for (int k = 0; k < n; ++k) co[k] = boost::math::pdf(bin, k);
      auto pmf = [&](int, int b) {
        std::vector<double> p = co;
        for (double& v : p) v *= b ? alpha : 1.0 - alpha;
        return p;
      };
      comp[q] = component_value(plan.keys[q].component, n, F[plan.keys[q].transform], pmf);
    }
    for (std::size_t s = 0; s < specs.size(); ++s) {
      double v = 0.0;
      for (const auto& [key, coef] : plan.terms[s]) v += coef * comp[key];
      acc[s].add(v);
    }
  }
  std::vector<TruthValue> out;
  for (const auto& a : acc) out.push_back(a.result());
  return out;
}

TruthValue true_value_typeb(const DgpConfig& cfg, const EstimandSpec& spec, int mc_clusters, std::uint64_t seed) {
  return true_values_typeb(cfg, std::span<const EstimandSpec>(&spec, 1), mc_clusters, seed).front();
}

std::vector<TruthValue> true_values_mc(const DgpConfig& cfg, std::span<const EstimandSpec> specs, int mc_clusters,
                                       int mc_b, std::uint64_t seed) {
  cfg.validate();
  if (mc_clusters < 2) throw Error(ErrorCode::invalid_argument, "at least two Monte Carlo clusters are required");
  if (mc_b < 1) throw Error(ErrorCode::invalid_argument, "at least one random-intercept node is required");
  const Plan plan(specs);
  check_transforms(plan.transforms);
  LearnerConfig lc;
  lc.propensity = PropensityLearner::oracle;
  lc.dgp = cfg;
  lc.oracle_b_nodes = mc_b;
  lc.pi_floor = 1e-12;
  const auto propensity = fit_propensity(Dataset{}, lc);

  std::vector<Accumulator> acc(specs.size());
  std::vector<double> comp(plan.keys.size());
  for (int i = 0; i < mc_clusters; ++i) {
    RngStream rng(seed, {kTruthStream, static_cast<std::uint64_t>(i)});
    const auto c = draw_cluster_covariates(cfg, rng, {});
    const int n = c.size();
    const auto F = outcome_tables(cfg, c, plan.transforms);
    const ClusterPolicyContext ctx(propensity->distribution(c), 0.0);
    for (std::size_t q = 0; q < plan.keys.size(); ++q) {
      const BoundPolicy bp(plan.keys[q].policy, ctx);
      auto pmf = [&](int j, int b) { return bp.exposure_pmf(j, b); };
      comp[q] = component_value(plan.keys[q].component, n, F[plan.keys[q].transform], pmf);
    }
    for (std::size_t s = 0; s < specs.size(); ++s) {
      double v = 0.0;
      for (const auto& [key, coef] : plan.terms[s]) v += coef * comp[key];
      acc[s].add(v);
    }
  }
  std::vector<TruthValue> out;
  for (const auto& a : acc) out.push_back(a.result());
  return out;
}

TruthValue true_value_mc(const DgpConfig& cfg, const EstimandSpec& spec, int mc_clusters, int mc_b,
                         std::uint64_t seed) {
  return true_values_mc(cfg, std::span<const EstimandSpec>(&spec, 1), mc_clusters, mc_b, seed).front();
}

NuisanceBundle oracle_bundle(const DgpConfig& cfg, LearnerConfig learners) {
  learners.propensity = PropensityLearner::oracle;
  learners.survival = SurvivalLearner::oracle;
  learners.dgp = cfg;
  return fit_nuisance(Dataset{}, learners, nullptr, 0, 0);
}

// ---------------------------------------------------------------- tiny worlds

TinyWorld random_tiny_world(int n, std::uint64_t seed) {
  if (n < 1 || n > 3) throw Error(ErrorCode::unsupported_world, "tiny worlds have one to three units");
  RngStream rng(seed, {0x74696e79ULL, static_cast<std::uint64_t>(n)});
  auto unif = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  TinyWorld w;
  w.n = n;
  w.p_xc = unif(0.2, 0.8);
  w.p_xu = unif(0.2, 0.8);
  w.mix_weight = unif(0.2, 0.8);
  for (auto& comp : w.treat)
    for (auto& row : comp)
      for (double& p : row) p = unif(0.1, 0.9);
  const std::size_t cells = static_cast<std::size_t>(2 * 2 * 2 * n);
  w.event_hazard.resize(cells * TinyWorld::kTimes);
  w.censor_hazard.resize(cells * TinyWorld::kTimes);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (int t = 0; t < TinyWorld::kTimes; ++t) {
      w.event_hazard[cell * TinyWorld::kTimes + t] = t + 1 == TinyWorld::kTimes ? 1.0 : unif(0.1, 0.6);
      w.censor_hazard[cell * TinyWorld::kTimes + t] = unif(0.05, 0.4);
    }
  }
  return w;
}

namespace {

// P(T = t) for t = 1..4, then P(T = +inf).
std::vector<double> step_masses(const TinyWorld& w, const std::vector<double>& table, int xc, int xu, int a, int k) {
  std::vector<double> out(TinyWorld::kTimes + 1);
  double alive = 1.0;
  for (int t = 0; t < TinyWorld::kTimes; ++t) {
    const double h = w.hazard(table, xc, xu, a, k, t);
    out[t] = alive * h;
    alive *= 1.0 - h;
  }
  out[TinyWorld::kTimes] = alive;
  return out;
}

struct TinyCluster {
  int xc;
  std::vector<int> xu;
};

double tiny_h(const TinyWorld& w, const TinyCluster& c, unsigned a) {
  double total = 0.0;
  for (int q = 0; q < 2; ++q) {
    double p = q == 0 ? w.mix_weight : 1.0 - w.mix_weight;
    for (int j = 0; j < w.n; ++j) {
      const double pj = w.treat[q][c.xc][c.xu[j]];
      p *= (a >> j) & 1U ? pj : 1.0 - pj;
    }
    total += p;
  }
  return total;
}

// Q(a) computed from scratch, without the policy module.
double tiny_q(const TinyWorld& w, const TinyCluster& c, const PolicySpec& pol, unsigned a) {
  const int n = w.n;
  const unsigned count = 1U << n;
  switch (pol.family) {
    case PolicyFamily::type_b: {
      double p = 1.0;
      for (int j = 0; j < n; ++j) p *= (a >> j) & 1U ? pol.theta : 1.0 - pol.theta;
      return p;
    }
    case PolicyFamily::cips: {
      double p = 1.0;
      for (int j = 0; j < n; ++j) {
        double pi = 0.0;
        for (unsigned b = 0; b < count; ++b)
          if ((b >> j) & 1U) pi += tiny_h(w, c, b);
        const double shifted = pol.theta * pi / (pol.theta * pi + 1.0 - pi);
        p *= (a >> j) & 1U ? shifted : 1.0 - shifted;
      }
      return p;
    }
    case PolicyFamily::tpb: {
      int threshold = 0;
      while (threshold < n && static_cast<double>(threshold) / n < pol.theta - 1e-12) ++threshold;
      if (static_cast<double>(threshold) / n < pol.theta - 1e-12) threshold = n + 1;
      double tail = 0.0;
      for (unsigned b = 0; b < count; ++b)
        if (__builtin_popcount(b) >= threshold) tail += tiny_h(w, c, b);
      return __builtin_popcount(a) >= threshold ? tiny_h(w, c, a) / tail : 0.0;
    }
  }
  return 0.0;
}

double tiny_component(const TinyWorld& w, const TinyCluster& c, Component comp, const PolicySpec& pol,
                      const TransformSpec& tr) {
  const int n = w.n;
  const unsigned count = 1U << n;
  double total = 0.0;
  for (unsigned a = 0; a < count; ++a) {
    const int k = __builtin_popcount(a);
    for (int j = 0; j < n; ++j) {
      const int aj = (a >> j) & 1U;
      double weight;
      if (comp == Component::mu) {
        weight = tiny_q(w, c, pol, a);
      } else {
        if (aj != (comp == Component::mu1 ? 1 : 0)) continue;
        weight = tiny_q(w, c, pol, a | (1U << j)) + tiny_q(w, c, pol, a & ~(1U << j));
      }
      const auto mass = step_masses(w, w.event_hazard, c.xc, c.xu[j], aj, k - aj);
      double mean = 0.0;
      for (int t = 0; t < TinyWorld::kTimes; ++t) mean += mass[t] * tr(t + 1.0);
      total += weight * mean / n;
    }
  }
  return total;
}

double tiny_estimand(const TinyWorld& w, const TinyCluster& c, const EstimandSpec& spec) {
  auto comp = [&](Component k, const PolicySpec& p) { return tiny_component(w, c, k, p, spec.transform); };
  switch (spec.kind) {
    case EstimandKind::mu: return comp(Component::mu, spec.policy);
    case EstimandKind::mu1: return comp(Component::mu1, spec.policy);
    case EstimandKind::mu0: return comp(Component::mu0, spec.policy);
    case EstimandKind::de: return comp(Component::mu1, spec.policy) - comp(Component::mu0, spec.policy);
    case EstimandKind::se1: return comp(Component::mu1, spec.policy) - comp(Component::mu1, *spec.reference);
    case EstimandKind::se0: return comp(Component::mu0, spec.policy) - comp(Component::mu0, *spec.reference);
    case EstimandKind::oe: return comp(Component::mu, spec.policy) - comp(Component::mu, *spec.reference);
  }
  return 0.0;
}

}  // namespace

BruteForceResult brute_force_psi(const TinyWorld& world, const EstimandSpec& spec, EvalMode mode) {
  const int n = world.n;
  if (n < 1 || n > 3) throw Error(ErrorCode::unsupported_world, "tiny worlds have one to three units");
  const std::size_t cells = static_cast<std::size_t>(8 * n) * TinyWorld::kTimes;
  if (world.event_hazard.size() != cells || world.censor_hazard.size() != cells) {
    throw Error(ErrorCode::unsupported_world, "hazard tables do not match the cluster size");
  }
  spec.validate();

  auto grid = std::make_shared<const TimeGrid>(std::vector<double>{1.0, 2.0, 3.0, 4.0});
  auto unit_x = [](const ClusterObservation& c, int j) {
    return std::pair<int, int>{static_cast<int>(c.x[0]), static_cast<int>(c.x[static_cast<std::size_t>(j) * 2 + 1])};
  };
  NuisanceBundle bundle;
  bundle.propensity = std::make_shared<FunctionPropensityModel>([&world, unit_x](const ClusterObservation& c) {
    std::vector<std::vector<double>> probs(2, std::vector<double>(c.size()));
    for (int q = 0; q < 2; ++q)
      for (int j = 0; j < c.size(); ++j) {
        const auto [xc, xu] = unit_x(c, j);
        probs[q][j] = world.treat[q][xc][xu];
      }
    return TreatmentDistribution::mixture({world.mix_weight, 1.0 - world.mix_weight}, std::move(probs), 1e-9);
  });
  auto model = [&world, grid, unit_x](SurvivalTarget target) {
    const auto* table = target == SurvivalTarget::event ? &world.event_hazard : &world.censor_hazard;
    return std::make_shared<FunctionSurvivalModel>(
        target, [&world, grid, unit_x, table](const ClusterObservation& c, int j, int a, int k) -> SurvivalCurve {
          const auto [xc, xu] = unit_x(c, j);
          std::vector<double> h(TinyWorld::kTimes);
          for (int t = 0; t < TinyWorld::kTimes; ++t) h[t] = world.hazard(*table, xc, xu, a, k, t);
          return StepSurvival::from_hazards(grid, std::move(h));
        });
  };
  bundle.event = model(SurvivalTarget::event);
  bundle.censor = model(SurvivalTarget::censoring);
  bundle.s_floor = 1e-12;
  bundle.tail_floor = 1e-12;

  BruteForceResult out;
  const unsigned xconfigs = 1U << (n + 1), allocations = 1U << n;
  for (unsigned xs = 0; xs < xconfigs; ++xs) {
    TinyCluster tc{static_cast<int>(xs & 1U), std::vector<int>(n)};
    double px = tc.xc ? world.p_xc : 1.0 - world.p_xc;
    for (int j = 0; j < n; ++j) {
      tc.xu[j] = (xs >> (j + 1)) & 1U;
      px *= tc.xu[j] ? world.p_xu : 1.0 - world.p_xu;
    }
    out.psi += px * tiny_estimand(world, tc, spec);

    ClusterObservation obs;
    obs.cluster_id = "tiny";
    obs.p = 2;
    obs.y.assign(n, 4.0);
    obs.delta.assign(n, 1);
    obs.a.assign(n, 0);
    obs.x.resize(static_cast<std::size_t>(n) * 2);
    for (int j = 0; j < n; ++j) {
      obs.x[j * 2] = tc.xc;
      obs.x[j * 2 + 1] = tc.xu[j];
    }
    for (unsigned a = 0; a < allocations; ++a) {
      for (int j = 0; j < n; ++j) obs.a[j] = (a >> j) & 1U;
      const double ha = tiny_h(world, tc, a);
      const int k = __builtin_popcount(a);
      const double base = cluster_influence(obs, bundle, spec, mode);
      double expected = base;
      for (int j = 0; j < n; ++j) {
        const int aj = obs.a[j];
        const auto tm = step_masses(world, world.event_hazard, tc.xc, tc.xu[j], aj, k - aj);
        const auto cm = step_masses(world, world.censor_hazard, tc.xc, tc.xu[j], aj, k - aj);
        for (int t = 0; t < TinyWorld::kTimes; ++t) {
          for (int c = 0; c <= TinyWorld::kTimes; ++c) {
            const double p = tm[t] * cm[c];
            if (p == 0.0) continue;
            const bool event = t <= c;
            ClusterObservation alt = obs;
            alt.y[j] = (event ? t : c) + 1.0;
            alt.delta[j] = event ? 1 : 0;
            expected += p * (cluster_influence(alt, bundle, spec, mode) - base);
          }
        }
      }
      out.expected_phi += px * ha * expected;
    }
  }
  return out;
}

}  // namespace cisurv
