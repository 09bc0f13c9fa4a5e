// Acceptance suite. Prints one PASS/FAIL line per criterion; detail lines are
// indented. With arguments, runs only the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cisurv/engine.hpp"
#include "cisurv/inference.hpp"
#include "cisurv/nuisance.hpp"
#include "cisurv/policies.hpp"
#include "cisurv/simulator.hpp"
#include "cisurv/special.hpp"

using namespace cisurv;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void detail(const std::string& s) { std::printf("    %s\n", s.c_str()); }

EstimandSpec make(EstimandKind k, double tau, PolicySpec q, std::optional<PolicySpec> ref = std::nullopt) {
  return {k, TransformSpec::risk_at(tau), q, ref};
}

const EstimandKind kBasic[] = {EstimandKind::mu, EstimandKind::mu1, EstimandKind::mu0, EstimandKind::de};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- 1, 2: truths

constexpr int kTruthClusters = 200000;

std::vector<EstimandSpec> typeb_cells() {
  std::vector<EstimandSpec> s;
  for (double alpha : {0.3, 0.45})
    for (auto k : kBasic) s.push_back(make(k, 0.2, PolicySpec::type_b(alpha)));
  return s;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  const double published[] = {45.1, 25.2, 53.7, -28.5, 37.6, 22.5, 50.0, -27.6};
  const auto specs = typeb_cells();
  const auto truth = true_values_typeb(DgpConfig{}, specs, kTruthClusters, 2024);
  double worst = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double diff = 100 * truth[i].value - published[i];
    worst = std::max(worst, std::abs(diff));
    detail(fmt::format("{:<28} {:7.2f} (mcse {:.2f}) published {:6.1f} diff {:+.2f}", specs[i].label(),
                       100 * truth[i].value, 100 * truth[i].se, published[i], diff));
  }
  const double dt = seconds_since(t0);
  return {worst <= 0.6 && dt < 300,
          fmt::format("Type B truths within 0.6 of the published values (max |diff| {:.2f}, {:.0f} s)", worst, dt)};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  const double published[] = {38.2, 22.6, 50.3, -27.7};
  std::vector<EstimandSpec> specs;
  for (auto k : kBasic) specs.push_back(make(k, 0.2, PolicySpec::tpb(0.0)));
  const auto truth = true_values_mc(DgpConfig{}, specs, kTruthClusters, 20, 2025);
  double worst = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double diff = 100 * truth[i].value - published[i];
    worst = std::max(worst, std::abs(diff));
    detail(fmt::format("{:<28} {:7.2f} (mcse {:.2f}) published {:6.1f} diff {:+.2f}", specs[i].label(),
                       100 * truth[i].value, 100 * truth[i].se, published[i], diff));
  }
  const double dt = seconds_since(t0);
  return {worst <= 0.8 && dt < 900,
          fmt::format("TPB(0) truths within 0.8 of the published values (max |diff| {:.2f}, {:.0f} s)", worst, dt)};
}

// ---------------------------------------------------------------- 3: oracle unbiasedness

Outcome criterion3() {
  const auto t0 = Clock::now();
  DgpConfig cfg;
  auto specs_b = typeb_cells();
  std::vector<EstimandSpec> specs_t;
  for (auto k : kBasic) specs_t.push_back(make(k, 0.2, PolicySpec::tpb(0.0)));
  specs_t.push_back(make(EstimandKind::oe, 0.2, PolicySpec::tpb(0.25), PolicySpec::tpb(0.0)));
  specs_t.push_back(make(EstimandKind::se1, 0.2, PolicySpec::tpb(0.25), PolicySpec::tpb(0.0)));

  auto truth = true_values_typeb(cfg, specs_b, kTruthClusters, 31);
  const auto truth_t = true_values_mc(cfg, specs_t, 50000, 20, 32);
  truth.insert(truth.end(), truth_t.begin(), truth_t.end());
  std::vector<EstimandSpec> specs = specs_b;
  specs.insert(specs.end(), specs_t.begin(), specs_t.end());

  cfg.m = 20000;
  const auto sim = generate_dataset(cfg, 33);
  const auto bundle = oracle_bundle(cfg);
  std::vector<double> sum(specs.size(), 0.0), sum_sq(specs.size(), 0.0);
  for (const auto& c : sim.data.clusters()) {
    for (std::size_t g = 0; g < specs.size(); ++g) {
      const double phi = cluster_influence(c, bundle, specs[g], EvalMode::exposure());
      sum[g] += phi;
      sum_sq[g] += phi * phi;
    }
  }
  const double m = static_cast<double>(sim.data.size());
  int ok = 0;
  double worst = 0.0;
  for (std::size_t g = 0; g < specs.size(); ++g) {
    const double mu = sum[g] / m;
    const double se = std::sqrt(std::max(sum_sq[g] / m - mu * mu, 0.0) / m);
    const double z = (mu - truth[g].value) / std::hypot(se, truth[g].se);
    worst = std::max(worst, std::abs(z));
    ok += std::abs(z) <= 3.0;
    detail(fmt::format("{:<40} mean {:8.4f} (se {:.4f}) truth {:8.4f} z {:+.2f}", specs[g].label(), mu, se,
                       truth[g].value, z));
  }
  const double dt = seconds_since(t0);
  return {ok == static_cast<int>(specs.size()) && dt < 600,
          fmt::format("oracle influence means within 3 MC-SE of the truths in {}/{} cells (max |z| {:.2f}, {:.0f} s)",
                      ok, specs.size(), worst, dt)};
}

// ---------------------------------------------------------------- 4, 8: replication and bounding

struct Replication {
  std::vector<EstimandSpec> specs;
  std::vector<TruthValue> truth;
  std::vector<std::vector<double>> point, se;  // [spec][rep]
  std::vector<std::vector<int>> covered;
  double seconds = 0.0;
};

const Replication& replication() {
  static std::optional<Replication> cache;
  if (cache) return *cache;
  const auto t0 = Clock::now();
  Replication r;
  DgpConfig cfg;
  for (auto k : {EstimandKind::mu, EstimandKind::mu1, EstimandKind::mu0})
    r.specs.push_back(make(k, 0.2, PolicySpec::type_b(0.45)));
  r.truth = true_values_typeb(cfg, r.specs, kTruthClusters, 41);
  const std::size_t G = r.specs.size();
  r.point.resize(G);
  r.se.resize(G);
  r.covered.resize(G);
  constexpr int D = 200;
  for (int d = 0; d < D; ++d) {
    const std::uint64_t seed = splitmix64(4000 + d);
    const auto sim = generate_dataset(cfg, seed);
    CrossFitOptions o;
    o.K = 2;
    o.mode = EvalMode::subsample(100, splitmix64(seed ^ 1));
    o.bounded = true;
    o.seed = seed;
    const auto fit = sbs_estimate(sim.data, r.specs, o, 1);
    for (std::size_t g = 0; g < G; ++g) {
      const auto& e = fit.estimates[g];
      r.point[g].push_back(e.point);
      r.se[g].push_back(e.se);
      r.covered[g].push_back(e.ci_lo <= r.truth[g].value && r.truth[g].value <= e.ci_hi);
    }
  }
  r.seconds = seconds_since(t0);
  cache = std::move(r);
  return *cache;
}

Outcome criterion4() {
  const auto& r = replication();
  bool pass = true;
  for (std::size_t g = 0; g < r.specs.size(); ++g) {
    const double bias = 100 * (mean(r.point[g]) - r.truth[g].value);
    const double ese = 100 * sd(r.point[g]);
    const double ase = 100 * mean(r.se[g]);
    double cov = 0.0;
    for (int c : r.covered[g]) cov += c;
    cov = 100 * cov / static_cast<double>(r.covered[g].size());
    const bool ok = std::abs(bias) <= 1.5 && std::abs(ase / ese - 1.0) <= 0.3 && cov >= 90 && cov <= 98;
    pass = pass && ok;
    detail(fmt::format("{:<28} truth {:6.2f} bias {:+.2f} ase {:.2f} ese {:.2f} cov {:.1f} {}", r.specs[g].label(),
                       100 * r.truth[g].value, bias, ase, ese, cov, ok ? "ok" : "out of range"));
  }
  return {pass, fmt::format("D=200 replication at m=200: bias, ASE/ESE and coverage in range ({:.0f} s)", r.seconds)};
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  const auto& r = replication();
  int outside = 0, total = 0;
  for (const auto& col : r.point)
    for (double v : col) {
      ++total;
      outside += v < 0.0 || v > 1.0;
    }
  detail(fmt::format("bounded estimates outside [0, 1]: {} of {}", outside, total));

  // Bounded vs unbounded on oracle nuisances; folds and draws shared.
  DgpConfig cfg;
  const std::vector<EstimandSpec> specs = {make(EstimandKind::mu, 0.2, PolicySpec::type_b(0.45))};
  std::map<int, double> med;
  for (int m : {100, 400}) {
    cfg.m = m;
    std::vector<double> diff;
    for (int d = 0; d < 60; ++d) {
      const std::uint64_t seed = splitmix64(8000 + 97 * m + d);
      const auto sim = generate_dataset(cfg, seed);
      CrossFitOptions o;
      o.K = 2;
      o.mode = EvalMode::subsample(100, seed);
      o.seed = seed;
      o.learners.propensity = PropensityLearner::oracle;
      o.learners.survival = SurvivalLearner::oracle;
      o.learners.dgp = cfg;
      const double plain = cross_fit(sim.data, specs, o).estimates[0].point;
      o.bounded = true;
      const double bounded = cross_fit(sim.data, specs, o).estimates[0].point;
      diff.push_back(std::abs(bounded - plain));
    }
    med[m] = median(diff);
    detail(fmt::format("m={}: median |bounded - unbounded| = {:.5f}", m, med[m]));
  }
  const bool pass = outside == 0 && med[400] < med[100];
  return {pass, fmt::format("bounded estimates stay in [0, 1] and the bounded/unbounded gap shrinks with m "
                            "({:.0f} s beyond the replication runs)",
                            seconds_since(t0))};
}

// ---------------------------------------------------------------- 5: exact identities

TreatmentDistribution random_distribution(RngStream& rng, int n) {
  const int comps = 1 + static_cast<int>(rng.below(3));
  std::vector<double> w;
  std::vector<std::vector<double>> probs;
  double total = 0.0;
  for (int q = 0; q < comps; ++q) {
    w.push_back(0.2 + rng.uniform());
    total += w.back();
    std::vector<double> p;
    for (int j = 0; j < n; ++j) p.push_back(0.05 + 0.9 * rng.uniform());
    probs.push_back(p);
  }
  for (auto& x : w) x /= total;
  return TreatmentDistribution::mixture(w, probs);
}

std::vector<PolicySpec> random_policies(RngStream& rng) {
  return {PolicySpec::type_b(0.1 + 0.8 * rng.uniform()), PolicySpec::cips(0.2 + 3.0 * rng.uniform()),
          PolicySpec::tpb(0.6 * rng.uniform())};
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  RngStream rng(55);
  double mart = 0.0, norm = 0.0, cif = 0.0, wsum = 0.0;
  bool tpb_equal = true, typeb_zero = true;

  for (int rep = 0; rep < 1000; ++rep) {
    const int L = 1 + static_cast<int>(rng.below(12));
    std::vector<double> pts, haz;
    double t = 0.0;
    for (int k = 0; k < L; ++k) {
      t += 0.1 + rng.uniform();
      pts.push_back(t);
      haz.push_back(0.6 * rng.uniform());
    }
    const auto grid = std::make_shared<const TimeGrid>(pts);
    const auto curve = StepSurvival::from_hazards(grid, haz);
    const double y = pts[rng.below(L)];
    const int delta = rng.bernoulli(0.5);
    const double lhs = censoring_martingale(curve, y, delta).weighted_sum();
    mart = std::max(mart, std::abs(lhs - (1.0 - delta / curve.survival_before(y))));
  }
  detail(fmt::format("martingale identity, 1000 random censoring models: max error {:.2e}", mart));

  for (int n = 1; n <= 10; ++n) {
    for (int rep = 0; rep < 3; ++rep) {
      const ClusterPolicyContext ctx(random_distribution(rng, n));
      for (const auto& pol : random_policies(rng)) {
        const BoundPolicy q(pol, ctx);
        double s = 0.0;
        for (Allocation a = 0; a < (Allocation{1} << n); ++a) s += q.q(a);
        norm = std::max(norm, std::abs(s - 1.0));
      }
    }
  }
  detail(fmt::format("sum_a Q(a) = 1 for n <= 10: max error {:.2e}", norm));

  for (int n = 1; n <= 6; ++n) {
    for (int rep = 0; rep < 3; ++rep) {
      const ClusterPolicyContext ctx(random_distribution(rng, n));
      const Allocation all = Allocation{1} << n;
      for (const auto& pol : random_policies(rng)) {
        const BoundPolicy q(pol, ctx);
        for (Allocation a = 0; a < all; ++a) {
          for (auto comp : {Component::mu, Component::mu1, Component::mu0}) {
            std::vector<double> acc(n, 0.0);
            for (Allocation obs = 0; obs < all; ++obs) {
              const auto v = component_cif(comp, q, obs, a);
              for (int j = 0; j < n; ++j) acc[j] += v[j] * ctx.h.prob(obs);
              if (pol.family == PolicyFamily::type_b)
                for (double x : v) typeb_zero = typeb_zero && x == 0.0;
            }
            for (double x : acc) cif = std::max(cif, std::abs(x));
          }
        }
        // Weight sums over all allocations.
        for (auto comp : {Component::mu, Component::mu1, Component::mu0}) {
          std::vector<double> acc(n, 0.0);
          for (Allocation a = 0; a < all; ++a) {
            const auto w = component_weights(comp, q, a);
            for (int j = 0; j < n; ++j) acc[j] += w[j];
          }
          for (double x : acc) wsum = std::max(wsum, std::abs(x - 1.0 / n));
        }
      }
      // TPB(0) weights equal the weights under the factual distribution.
      const BoundPolicy tpb0(PolicySpec::tpb(0.0), ctx);
      for (Allocation a = 0; a < all; ++a) {
        const auto w = component_weights(Component::mu, tpb0, a);
        for (int j = 0; j < n; ++j) tpb_equal = tpb_equal && w[j] == ctx.h.prob(a) / n;
        const auto w1 = component_weights(Component::mu1, tpb0, a);
        for (int j = 0; j < n; ++j) {
          double marg = 0.0;
          for (Allocation b = 0; b < all; ++b)
            if (((b ^ a) & ~(Allocation{1} << j)) == 0) marg += ctx.h.prob(b);
          const double expect = treated(a, j) ? marg / n : 0.0;
          tpb_equal = tpb_equal && std::abs(w1[j] - expect) <= 1e-15;
        }
      }
    }
  }
  detail(fmt::format("E[CIF | X, N] = 0 for n <= 6, all families and components: max error {:.2e}", cif));
  detail(fmt::format("sum_a w(a) = 1/n for mu, mu1, mu0: max error {:.2e}", wsum));
  detail(fmt::format("TPB(0) weights equal factual weights: {}", tpb_equal ? "yes" : "no"));
  detail(fmt::format("Type B CIF identically zero: {}", typeb_zero ? "yes" : "no"));
  const double dt = seconds_since(t0);
  const bool pass =
      mart <= 1e-12 && norm <= 1e-10 && cif <= 1e-10 && wsum <= 1e-12 && tpb_equal && typeb_zero && dt < 60;
  return {pass, fmt::format("exact identities hold ({:.1f} s)", dt)};
}

// ---------------------------------------------------------------- 6: brute force

Outcome criterion6() {
  const auto t0 = Clock::now();
  int worlds = 0;
  double worst = 0.0;
  for (int n = 1; n <= 3; ++n) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const auto world = random_tiny_world(n, 600 + seed);
      ++worlds;
      for (const auto& pol : {PolicySpec::type_b(0.35), PolicySpec::cips(1.8), PolicySpec::tpb(0.5)})
        for (auto k : kBasic) {
          const EstimandSpec spec{k, TransformSpec::risk_at(2.5), pol, std::nullopt};
          const auto r = brute_force_psi(world, spec);
          worst = std::max(worst, std::abs(r.psi - r.expected_phi));
        }
    }
  }
  detail(fmt::format("{} worlds x 3 families x 4 estimands: max |psi - E[phi]| {:.2e}", worlds, worst));
  return {worlds >= 20 && worst <= 1e-10,
          fmt::format("enumerated psi equals E[phi] on tiny worlds ({:.1f} s)", seconds_since(t0))};
}

// ---------------------------------------------------------------- 7: subsampling

Outcome criterion7() {
  const auto t0 = Clock::now();
  DgpConfig cfg;
  cfg.m = 40;
  cfg.n_dist.lo = 2;
  cfg.n_dist.hi = 8;
  const auto sim = generate_dataset(cfg, 77);
  const auto bundle = oracle_bundle(cfg);
  const auto spec = make(EstimandKind::mu, 0.2, PolicySpec::cips(1.5));
  auto psi = [&](EvalMode mode) {
    double s = 0.0;
    for (const auto& c : sim.data.clusters()) s += cluster_influence(c, bundle, spec, mode);
    return s / static_cast<double>(sim.data.size());
  };
  const double exact = psi(EvalMode::exact());
  const double sub = psi(EvalMode::subsample(5000, 7));
  detail(fmt::format("exact {:.5f} subsample(5000) {:.5f} diff {:.5f}", exact, sub, std::abs(sub - exact)));
  std::vector<double> sds;
  for (int r : {10, 100, 1000}) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 100; ++s) v.push_back(psi(EvalMode::subsample(r, 1000 + s)));
    sds.push_back(sd(v));
    detail(fmt::format("r={:<5} sd over 100 seeds {:.6f}", r, sds.back()));
  }
  const bool pass = std::abs(sub - exact) <= 0.005 && sds[1] <= sds[0] && sds[2] <= sds[1];
  return {pass, fmt::format("subsampling agrees with the exact sum and its spread falls with r ({:.0f} s)",
                            seconds_since(t0))};
}

// ---------------------------------------------------------------- 9: uniform bands

Outcome criterion9() {
  const auto t0 = Clock::now();
  // Single-point grid: standard normal influence values.
  InfluenceTable t;
  t.K = 2;
  t.specs = {make(EstimandKind::mu, 0.2, PolicySpec::type_b(0.5))};
  RngStream rng(99);
  std::normal_distribution<double> z;
  for (int i = 0; i < 2000; ++i) {
    t.values.push_back({z(rng)});
    t.folds.push_back(1 + i % 2);
  }
  EstimateResult e;
  e.point = t.point(0);
  e.sigma = std::sqrt(t.variance(0));
  e.se = e.sigma / std::sqrt(2000.0);
  const auto single = ucb_critical_value(t, std::span(&e, 1), 20000, 0.95, 5, 1);
  detail(fmt::format("single-point critical value {:.4f}", single.critical));

  DgpConfig cfg;
  std::vector<EstimandSpec> specs;
  for (auto k : kBasic)
    for (double alpha : {0.3, 0.45, 0.6}) specs.push_back(make(k, 0.2, PolicySpec::type_b(alpha)));
  const auto truth = true_values_typeb(cfg, specs, kTruthClusters, 91);
  constexpr int D = 200;
  std::vector<int> covered(4, 0);
  for (int d = 0; d < D; ++d) {
    const std::uint64_t seed = splitmix64(9000 + d);
    const auto sim = generate_dataset(cfg, seed);
    CrossFitOptions o;
    o.K = 2;
    o.mode = EvalMode::subsample(100, seed);
    o.bounded = true;
    o.seed = seed;
    o.learners.propensity = PropensityLearner::oracle;
    o.learners.survival = SurvivalLearner::oracle;
    o.learners.dgp = cfg;
    const auto fit = cross_fit(sim.data, specs, o);
    for (int k = 0; k < 4; ++k) {
      InfluenceTable sub;
      sub.K = fit.table.K;
      sub.folds = fit.table.folds;
      sub.specs.assign(specs.begin() + 3 * k, specs.begin() + 3 * k + 3);
      for (const auto& row : fit.table.values) sub.values.push_back({row[3 * k], row[3 * k + 1], row[3 * k + 2]});
      const std::vector<EstimateResult> est(fit.estimates.begin() + 3 * k, fit.estimates.begin() + 3 * k + 3);
      const auto band = ucb_critical_value(sub, est, 2000, 0.95, splitmix64(seed ^ k), 1);
      bool all = true;
      for (int q = 0; q < 3; ++q) all = all && band.lo[q] <= truth[3 * k + q].value && truth[3 * k + q].value <= band.hi[q];
      covered[k] += all;
    }
  }
  bool pass = std::abs(single.critical - 1.96) <= 0.05;
  for (int k = 0; k < 4; ++k) {
    const double cov = 100.0 * covered[k] / D;
    pass = pass && cov >= 88 && cov <= 98;
    detail(fmt::format("{:<4} band over alpha in {{0.3, 0.45, 0.6}}: coverage {:.1f}%", to_string(kBasic[k]), cov));
  }
  return {pass, fmt::format("critical value near 1.96 and band coverage in [88, 98] ({:.0f} s)", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> all = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}};
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, fn] : all) {
    if (!chosen.empty() && !chosen.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.summary.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
