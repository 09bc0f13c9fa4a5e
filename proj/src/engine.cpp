#include "cisurv/engine.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <mutex>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "cisurv/error.hpp"
#include "cisurv/rng.hpp"
#include "cisurv/special.hpp"

namespace cisurv {

std::string to_string(SumMode m) {
  switch (m) {
    case SumMode::exact_sum: return "exact_sum";
    case SumMode::subsample: return "subsample";
    case SumMode::exposure: return "exposure";
  }
  return "?";
}

SumMode parse_sum_mode(const std::string& s) {
  if (s == "exact_sum" || s == "exact") return SumMode::exact_sum;
  if (s == "subsample") return SumMode::subsample;
  if (s == "exposure") return SumMode::exposure;
  throw Error(ErrorCode::invalid_argument, "unknown sum mode '" + s + "'");
}

// ---------------------------------------------------------------- martingale

double MartingaleIncrements::weighted_sum() const {
  double s = 0.0;
  for (std::size_t k = 0; k < dM.size(); ++k)
    if (dM[k] != 0.0) s += dM[k] / surv[k];
  return s;
}

MartingaleIncrements censoring_martingale(const StepSurvival& censor, double y, int delta) {
  const auto& grid = *censor.grid;
  MartingaleIncrements out;
  out.dM.assign(grid.size(), 0.0);
  out.surv = censor.surv;
  const std::size_t upto = grid.count_at_or_below(y);
  for (std::size_t k = 0; k < upto; ++k) {
    const bool at_y = grid[k] == y;
    const bool at_risk = grid[k] < y || (at_y && delta == 0);
    out.dM[k] = (at_y && delta == 0 ? 1.0 : 0.0) - (at_risk ? censor.hazard[k] : 0.0);
  }
  return out;
}

double g_function(const SurvivalCurve& event, const TransformSpec& t, double r) {
  if (const auto* s = std::get_if<StepSurvival>(&event)) {
    const auto& pts = s->grid->points();
    const auto below = std::lower_bound(pts.begin(), pts.end(), r) - pts.begin();
    if (below == 0) return s->partial_expected(t, -std::numeric_limits<double>::infinity());
    return s->partial_expected(t, pts[below - 1]);
  }
  return partial_expected(event, t, r);
}

// ---------------------------------------------------------------- augmentation

namespace {

const QuadratureRule& legendre8() {
  static const QuadratureRule rule = gauss_legendre_unit(8);
  return rule;
}

// Breakpoints in t = (r / U)^shape, graded towards 0 where the event
// distribution may have a power-law cusp.
constexpr double kPanels[] = {0.0, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 1.0};


double aug_continuous(const GammaSurvival& cens, const SurvivalCurve& ev, const TransformSpec& t, double y,
                      int delta, double floor) {
  auto coef = [&](double r) {
    const double sc = std::max(cens.survival(r), floor);
    const double st = std::max(survival(ev, r), floor);
    return partial_expected(ev, t, r) / (sc * st);
  };
  const double upper = t.kind == TransformKind::risk_at ? std::min(y, t.horizon) : y;
  double jump = 0.0;
  if (delta == 0 && !(t.kind == TransformKind::risk_at && y >= t.horizon)) jump = coef(y);
  if (!(upper > 0.0)) return jump;
  const double s = cens.shape, theta = cens.scale;
  const double log_front = s * std::log(upper / theta) - std::lgamma(s + 1.0);
  const auto& rule = legendre8();
  double integral = 0.0;
  for (std::size_t p = 0; p + 1 < std::size(kPanels); ++p) {
    const double a = kPanels[p], b = kPanels[p + 1];
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double tt = a + (b - a) * rule.nodes[q];
      const double r = upper * std::pow(tt, 1.0 / s);
      if (!(r > 0.0)) continue;
      const double sc = cens.survival(r);
      if (!(sc > 0.0)) continue;
      // f^C(r) dr / dt = upper^s exp(-r / theta) / (Gamma(s + 1) theta^s)
      const double dens = std::exp(log_front - r / theta);
      integral += (b - a) * rule.weights[q] * coef(r) * dens / sc;
    }
  }
  return jump - integral;
}

double aug_step(const StepSurvival& cens, const SurvivalCurve& ev, const TransformSpec& t, double y, int delta,
                double floor) {
  const auto& grid = *cens.grid;
  const std::size_t upto = grid.count_at_or_below(y);
  if (upto == 0) return 0.0;
  const auto* ev_step = std::get_if<StepSurvival>(&ev);
  const bool aligned = ev_step && (ev_step->grid == cens.grid || ev_step->grid->points() == grid.points());

  std::vector<double> gplus;
  double s_tau = 0.0;
  if (aligned) {
    if (t.kind == TransformKind::risk_at) {
      s_tau = ev_step->survival(t.horizon);
    } else {
      const auto& S = ev_step->surv;
      const std::size_t L = S.size();
      gplus.assign(L, 0.0);
      double acc = S[L - 1] * t.tail_value(grid.back());
      for (std::size_t k = L; k-- > 0;) {
        gplus[k] = acc;  // E[R(T) 1(T > r_k)]
        const double mass = (k == 0 ? 1.0 : S[k - 1]) - S[k];
        acc += t(grid[k]) * mass;
      }
    }
  }

  double total = 0.0;
  for (std::size_t k = 0; k < upto; ++k) {
    const double rk = grid[k];
    const bool at_y = rk == y;
    const bool at_risk = rk < y || (at_y && delta == 0);
    const double dM = (at_y && delta == 0 ? 1.0 : 0.0) - (at_risk ? cens.hazard[k] : 0.0);
    if (dM == 0.0) continue;
    double g, st;
    if (aligned) {
      st = ev_step->surv[k];
      if (t.kind == TransformKind::risk_at) {
        g = rk < t.horizon ? std::max(st - s_tau, 0.0) : 0.0;
      } else {
        g = gplus[k];
      }
    } else {
      st = survival(ev, rk);
      g = partial_expected(ev, t, rk);
    }
    if (g == 0.0) continue;
    total += g / (std::max(cens.surv[k], floor) * std::max(st, floor)) * dM;
  }
  return total;
}

double augmentation(const SurvivalCurve& cens, const SurvivalCurve& ev, const TransformSpec& t, double y, int delta,
                    double floor) {
  if (const auto* g = std::get_if<GammaSurvival>(&cens)) return aug_continuous(*g, ev, t, y, delta, floor);
  return aug_step(std::get<StepSurvival>(cens), ev, t, y, delta, floor);
}

}  // namespace

// ---------------------------------------------------------------- evaluator

struct ClusterEvaluator::Impl {
  const ClusterObservation& obs;
  const NuisanceBundle& bundle;
  std::vector<TransformSpec> transforms;
  EvalMode mode;
  int n;
  Allocation A;
  int kA;
  ClusterPolicyContext ctx;
  double hA;
  std::size_t T;

  std::vector<double> gcache;  // [(j * 2 + b) * n + k] * T + t
  std::vector<char> have;
  std::vector<std::vector<double>> corr;  // [j][t]
  std::vector<Allocation> draws;
  std::vector<double> draw_h;

  struct Cached {
    Component component;
    PolicySpec policy;
    std::vector<ComponentValue> values;
  };
  std::vector<Cached> cache;
  std::vector<std::pair<PolicySpec, std::unique_ptr<BoundPolicy>>> policies;

  Impl(const ClusterObservation& o, const NuisanceBundle& b, std::vector<TransformSpec> tr, EvalMode m,
       std::uint64_t key)
      : obs(o), bundle(b), transforms(std::move(tr)), mode(m), n(o.size()), A(to_allocation(o.a)),
        kA(popcount(A)), ctx(b.propensity->distribution(o), b.tail_floor), T(transforms.size()) {
    if (mode.kind == SumMode::exact_sum && n > kExactSumMaxClusterSize) {
      throw Error(ErrorCode::cluster_too_large_for_exact_sum,
                  fmt::format("cluster '{}' has {} units; use subsample mode", o.cluster_id, n));
    }
    for (const auto& t : transforms) t.validate();
    hA = ctx.h.prob(A);
    gcache.assign(static_cast<std::size_t>(2 * n * n) * T, 0.0);
    have.assign(static_cast<std::size_t>(2 * n * n), 0);

    corr.assign(n, std::vector<double>(T, 0.0));
    for (int j = 0; j < n; ++j) {
      const int b = o.a[j], k = kA - b;
      const auto ev = bundle.event->curve(o, j, b, k);
      const auto cs = bundle.censor->curve(o, j, b, k);
      const double sc_before = std::max(survival_before(cs, o.y[j]), bundle.s_floor);
      for (std::size_t t = 0; t < T; ++t) {
        const double ipcw = o.delta[j] ? transforms[t](o.y[j]) / sc_before : 0.0;
        corr[j][t] = ipcw - g(j, b, k, t) + augmentation(cs, ev, transforms[t], o.y[j], o.delta[j], bundle.s_floor);
      }
    }

    if (mode.kind == SumMode::subsample) {
      if (mode.r < 1) throw Error(ErrorCode::invalid_argument, "subsample size must be positive");
      RngStream rng(mode.seed, {key});
      draws.resize(mode.r);
      draw_h.resize(mode.r);
      for (int q = 0; q < mode.r; ++q) {
        draws[q] = ctx.h.sample(rng);
        draw_h[q] = ctx.h.prob(draws[q]);
      }
    }
  }

  double g(int j, int b, int k, std::size_t t) {
    const std::size_t slot = static_cast<std::size_t>((j * 2 + b) * n + k);
    if (!have[slot]) {
      bundle.event->expected(obs, j, b, k, transforms, std::span<double>(gcache).subspan(slot * T, T));
      have[slot] = 1;
    }
    return gcache[slot * T + t];
  }

  const BoundPolicy& bound(const PolicySpec& p) {
    for (const auto& [spec, bp] : policies)
      if (spec == p) return *bp;
    policies.emplace_back(p, std::make_unique<BoundPolicy>(p, ctx));
    return *policies.back().second;
  }

  // sum_j (w_j(a) + Phi_j(A; a)) G_j(a), for all transforms
  void outcome_at(Component c, const BoundPolicy& bp, Allocation a, double scale, std::vector<double>& acc) {
    const auto w = component_weights(c, bp, a);
    const auto phi = component_cif(c, bp, A, a);
    const int ka = popcount(a);
    for (int j = 0; j < n; ++j) {
      const double coef = (w[j] + phi[j]) * scale;
      if (coef == 0.0) continue;
      const int b = treated(a, j) ? 1 : 0;
      for (std::size_t t = 0; t < T; ++t) acc[t] += coef * g(j, b, ka - b, t);
    }
  }

  std::vector<double> outcome_exposure(Component c, const BoundPolicy& bp) {
    std::vector<double> acc(T, 0.0);
    const double inv_n = 1.0 / n;
    const auto family = bp.spec().family;
    const int want = c == Component::mu1 ? 1 : 0;
    for (int j = 0; j < n; ++j) {
      const auto p0 = bp.exposure_pmf(j, 0);
      const auto p1 = bp.exposure_pmf(j, 1);
      const int bj = obs.a[j], kj = kA - bj;
      for (std::size_t t = 0; t < T; ++t) {
        double eg = 0.0;
        if (c == Component::mu) {
          for (int k = 0; k < n; ++k) eg += p0[k] * g(j, 0, k, t) + p1[k] * g(j, 1, k, t);
        } else {
          for (int k = 0; k < n; ++k) eg += (p0[k] + p1[k]) * g(j, want, k, t);
        }
        double cif = 0.0;
        if (family == PolicyFamily::tpb) {
          if (kA >= bp.threshold()) {
            const double at_obs = c == Component::mu ? g(j, bj, kj, t) : g(j, want, kj, t);
            cif = (at_obs - eg) / bp.tail();
          }
        } else if (family == PolicyFamily::cips) {
          cif = cips_cif_sum(c, bp, j, want, t);
        }
        acc[t] += inv_n * (eg + cif);
      }
    }
    return acc;
  }

  // sum_a phi_Q(A; a) g(a) for g(a) = G_j(a_j, k_{-j}(a)) (mu) or G_j(want, k_{-j}(a)) (mu_b)
  double cips_cif_sum(Component c, const BoundPolicy& bp, int j, int want, std::size_t t) {
    const auto& shifted = bp.shifted();
    const auto& slope = bp.slope();
    double total = 0.0;
    for (int l = 0; l < n; ++l) {
      const double resid = obs.a[l] - ctx.pi_hat[l];
      if (resid == 0.0) continue;
      double diff = 0.0;
      if (l == j) {
        if (c != Component::mu) continue;
        const auto pb = poisson_binomial_pmf(shifted, j);
        for (int k = 0; k < n; ++k) diff += pb[k] * (g(j, 1, k, t) - g(j, 0, k, t));
      } else {
        std::vector<double> rest;
        rest.reserve(n);
        for (int u = 0; u < n; ++u)
          if (u != j && u != l) rest.push_back(shifted[u]);
        const auto pb = poisson_binomial_pmf(rest);
        for (int b = 0; b < 2; ++b) {
          if (c != Component::mu && b != want) continue;
          const double pbj = c == Component::mu ? (b ? shifted[j] : 1.0 - shifted[j]) : 1.0;
          for (int k = 0; k + 1 < n; ++k) diff += pbj * pb[k] * (g(j, b, k + 1, t) - g(j, b, k, t));
        }
      }
      total += slope[l] * resid * diff;
    }
    return total;
  }

  const std::vector<ComponentValue>& values(Component c, const PolicySpec& p) {
    for (const auto& e : cache)
      if (e.component == c && e.policy == p) return e.values;
    const BoundPolicy& bp = bound(p);
    std::vector<double> orv(T, 0.0);
    switch (mode.kind) {
      case SumMode::exact_sum: {
        const Allocation count = Allocation{1} << n;
        for (Allocation a = 0; a < count; ++a) outcome_at(c, bp, a, 1.0, orv);
        break;
      }
      case SumMode::subsample:
        for (std::size_t q = 0; q < draws.size(); ++q) outcome_at(c, bp, draws[q], 1.0 / (draw_h[q] * draws.size()), orv);
        break;
      case SumMode::exposure:
        orv = outcome_exposure(c, bp);
        break;
    }
    const auto w = component_weights(c, bp, A);
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<ComponentValue> out(T);
    for (std::size_t t = 0; t < T; ++t) {
      double corr_t = 0.0;
      for (int j = 0; j < n; ++j) corr_t += w[j] * corr[j][t];
      out[t] = {orv[t], corr_t / hA, wsum / hA};
    }
    cache.push_back({c, p, std::move(out)});
    return cache.back().values;
  }
};

ClusterEvaluator::ClusterEvaluator(const ClusterObservation& obs, const NuisanceBundle& bundle,
                                   std::vector<TransformSpec> transforms, EvalMode mode, std::uint64_t draw_key)
    : impl_(new Impl(obs, bundle, std::move(transforms), mode, draw_key)) {}

ClusterEvaluator::~ClusterEvaluator() { delete impl_; }

ComponentValue ClusterEvaluator::evaluate(Component component, const PolicySpec& policy, std::size_t t) {
  return impl_->values(component, policy).at(t);
}

const std::vector<TransformSpec>& ClusterEvaluator::transforms() const { return impl_->transforms; }

double cluster_influence(const ClusterObservation& obs, const NuisanceBundle& bundle, const EstimandSpec& spec,
                         EvalMode mode, int fold) {
  if (bundle.fold != 0 && fold != 0 && bundle.fold != fold) {
    throw Error(ErrorCode::fold_violation,
                fmt::format("cluster '{}' in fold {} was used to train the bundle for fold {}", obs.cluster_id,
                            fold, bundle.fold));
  }
  ClusterEvaluator ev(obs, bundle, {spec.transform}, mode, stable_hash(obs.cluster_id));
  double total = 0.0;
  for (const auto& term : decompose(spec)) total += term.coef * ev.evaluate(term.component, term.policy, 0).value();
  return total;
}

// ---------------------------------------------------------------- cross-fitting

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::invalid_argument, "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double InfluenceTable::point(std::size_t g) const {
  std::vector<double> sum(K, 0.0);
  std::vector<int> cnt(K, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[folds[i] - 1] += values[i][g];
    ++cnt[folds[i] - 1];
  }
  double total = 0.0;
  for (int k = 0; k < K; ++k) total += sum[k] / cnt[k];
  return total / K;
}

double InfluenceTable::variance(std::size_t g) const {
  const double psi = point(g);
  std::vector<double> sum(K, 0.0);
  std::vector<int> cnt(K, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i][g] - psi;
    sum[folds[i] - 1] += d * d;
    ++cnt[folds[i] - 1];
  }
  double total = 0.0;
  for (int k = 0; k < K; ++k) total += sum[k] / cnt[k];
  return total / K;
}

namespace {

template <class F>
void parallel_for(std::size_t count, int jobs, F&& body) {
  if (jobs <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const int workers = std::min<int>(jobs, static_cast<int>(count));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct ComponentKey {
  Component component;
  PolicySpec policy;
  bool operator==(const ComponentKey&) const = default;
};

}  // namespace

CrossFitResult cross_fit(const Dataset& ds, std::span<const EstimandSpec> specs, const CrossFitOptions& opts) {
  if (opts.K < 2) throw Error(ErrorCode::invalid_argument, "K must be at least 2");
  if (ds.size() < static_cast<std::size_t>(opts.K)) {
    throw Error(ErrorCode::too_few_clusters, fmt::format("{} clusters for K = {}", ds.size(), opts.K));
  }
  if (specs.empty()) throw Error(ErrorCode::invalid_argument, "no estimands requested");
  const Dataset data = opts.keep_folds && ds.fold_count() == opts.K ? ds : assign_folds(ds, opts.K, opts.seed);
  const auto grid = std::make_shared<const TimeGrid>(build_time_grid(data));

  std::vector<TransformSpec> transforms;
  std::vector<ComponentKey> keys;
  struct Term {
    std::size_t key, transform;
    double coef;
  };
  std::vector<std::vector<Term>> columns;
  for (const auto& spec : specs) {
    auto tit = std::find(transforms.begin(), transforms.end(), spec.transform);
    const std::size_t ti = tit - transforms.begin();
    if (tit == transforms.end()) transforms.push_back(spec.transform);
    std::vector<Term> col;
    for (const auto& term : decompose(spec)) {
      const ComponentKey key{term.component, term.policy};
      auto kit = std::find(keys.begin(), keys.end(), key);
      const std::size_t ki = kit - keys.begin();
      if (kit == keys.end()) keys.push_back(key);
      col.push_back({ki, ti, term.coef});
    }
    columns.push_back(std::move(col));
  }

  const std::size_t m = data.size(), nk = keys.size(), nt = transforms.size();
  // [cluster][key][transform]
  std::vector<std::vector<std::vector<ComponentValue>>> comp(
      m, std::vector<std::vector<ComponentValue>>(nk, std::vector<ComponentValue>(nt)));

  for (int k = 1; k <= opts.K; ++k) {
    std::vector<std::size_t> train_idx, eval_idx;
    for (std::size_t i = 0; i < m; ++i) (data.folds()[i] == k ? eval_idx : train_idx).push_back(i);
    const Dataset train = data.subset(train_idx);
    const auto bundle = fit_nuisance(train, opts.learners, grid, splitmix64(opts.seed ^ splitmix64(k)), k);
    parallel_for(eval_idx.size(), opts.jobs, [&](std::size_t e) {
      const std::size_t i = eval_idx[e];
      const auto& obs = data[i];
      const std::uint64_t key = splitmix64(splitmix64(opts.seed) ^ stable_hash(obs.cluster_id)) ^ k;
      ClusterEvaluator ev(obs, bundle, transforms, opts.mode, key);
      for (std::size_t q = 0; q < nk; ++q)
        for (std::size_t t = 0; t < nt; ++t) comp[i][q][t] = ev.evaluate(keys[q].component, keys[q].policy, t);
    });
  }

  InfluenceTable table;
  table.specs.assign(specs.begin(), specs.end());
  table.folds = data.folds();
  table.K = opts.K;
  table.hajek.assign(opts.K, std::vector<double>(nk, 0.0));
  {
    std::vector<int> cnt(opts.K, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const int f = table.folds[i] - 1;
      ++cnt[f];
      for (std::size_t q = 0; q < nk; ++q) table.hajek[f][q] += comp[i][q][0].weight_total;
    }
    for (int f = 0; f < opts.K; ++f)
      for (auto& v : table.hajek[f]) v /= cnt[f];
  }
  table.values.assign(m, std::vector<double>(columns.size(), 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    const int f = table.folds[i] - 1;
    for (std::size_t g = 0; g < columns.size(); ++g) {
      double v = 0.0;
      for (const auto& term : columns[g]) {
        const auto& cv = comp[i][term.key][term.transform];
        double correction = cv.correction;
        if (opts.bounded) {
          const double V = table.hajek[f][term.key];
          correction = V > 0.0 ? correction / V : correction;
        }
        v += term.coef * (cv.outcome_regression + correction);
      }
      table.values[i][g] = v;
    }
  }

  CrossFitResult out;
  const double z = normal_quantile(0.5 + opts.level / 2.0);
  for (std::size_t g = 0; g < columns.size(); ++g) {
    EstimateResult r;
    r.spec = specs[g];
    r.estimand = specs[g].label();
    r.point = table.point(g);
    r.sigma = std::sqrt(std::max(table.variance(g), 0.0));
    r.m = static_cast<int>(m);
    r.se = r.sigma / std::sqrt(static_cast<double>(m));
    r.level = opts.level;
    r.ci_lo = r.point - z * r.se;
    r.ci_hi = r.point + z * r.se;
    r.K = opts.K;
    r.S = 1;
    r.r = opts.mode.kind == SumMode::subsample ? opts.mode.r : 0;
    r.bounded = opts.bounded;
    r.mode = opts.mode.kind;
    out.estimates.push_back(std::move(r));
  }
  out.table = std::move(table);
  return out;
}

SbsResult sbs_estimate(const Dataset& ds, std::span<const EstimandSpec> specs, const CrossFitOptions& opts, int S) {
  if (S < 1) throw Error(ErrorCode::invalid_argument, "S must be at least 1");
  SbsResult out;
  for (int s = 0; s < S; ++s) {
    CrossFitOptions o = opts;
    o.seed = s == 0 ? opts.seed : splitmix64(opts.seed ^ splitmix64(0x73706c6974ULL + s));
    if (s > 0) o.mode.seed = splitmix64(o.seed ^ 0x7375627361ULL);
    o.keep_folds = false;
    out.splits.push_back(cross_fit(ds, specs, o));
  }
  const double z = normal_quantile(0.5 + opts.level / 2.0);
  for (std::size_t g = 0; g < specs.size(); ++g) {
    std::vector<double> points, vars;
    for (const auto& sp : out.splits) {
      points.push_back(sp.estimates[g].point);
      vars.push_back(sp.estimates[g].sigma * sp.estimates[g].sigma);
    }
    EstimateResult r = out.splits.front().estimates[g];
    r.point = median(points);
    r.sigma = std::sqrt(median(vars));
    r.se = r.sigma / std::sqrt(static_cast<double>(r.m));
    r.ci_lo = r.point - z * r.se;
    r.ci_hi = r.point + z * r.se;
    r.S = S;
    out.estimates.push_back(std::move(r));
  }
  return out;
}

}  // namespace cisurv
