#include <gtest/gtest.h>

#include <boost/math/distributions/gamma.hpp>
#include <cmath>

#include "cisurv/error.hpp"
#include "cisurv/nuisance.hpp"
#include "cisurv/simulator.hpp"
#include "cisurv/special.hpp"

using namespace cisurv;

namespace {

ClusterObservation blank(int n, int p = 1) {
  ClusterObservation c;
  c.cluster_id = "c";
  c.p = p;
  c.y.assign(n, 1.0);
  c.delta.assign(n, 1);
  c.a.assign(n, 0);
  c.x.assign(static_cast<std::size_t>(n) * p, 0.0);
  return c;
}

FunctionPropensityModel fixed(std::vector<double> pi) {
  return FunctionPropensityModel([pi](const ClusterObservation&) { return TreatmentDistribution::independent(pi, 0.0); });
}

Dataset constant_rate_data(int m, int n, double rate, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<ClusterObservation> cs;
  for (int i = 0; i < m; ++i) {
    auto c = blank(n, 2);
    c.cluster_id = std::to_string(i);
    for (int j = 0; j < n; ++j) {
      c.a[j] = rng.bernoulli(rate);
      c.x[2 * j] = rng.uniform();
      c.x[2 * j + 1] = rng.uniform() - 0.5;
      c.y[j] = 0.1 + rng.uniform();
    }
    cs.push_back(c);
  }
  return Dataset(cs);
}

}  // namespace

TEST(ClusterProb, Examples) {
  const auto c2 = blank(2);
  const auto m2 = fixed({0.5, 0.5});
  EXPECT_NEAR(cluster_prob(m2, std::vector<int>{1, 1}, c2), 0.25, 1e-15);
  const auto mp = fixed({0.37, 0.81});
  double s = 0.0;
  for (Allocation a = 0; a < 4; ++a) s += cluster_prob(mp, from_allocation(a, 2), c2);
  EXPECT_NEAR(s, 1.0, 1e-15);
  const auto c3 = blank(3);
  EXPECT_NEAR(cluster_prob(fixed({0.3, 0.6, 0.9}), std::vector<int>{1, 0, 1}, c3), 0.108, 1e-15);
}

TEST(TreatedCountTail, Examples) {
  const auto t2 = treated_count_tail(fixed({0.5, 0.5}), blank(2));
  ASSERT_EQ(t2.size(), 3u);
  EXPECT_NEAR(t2[0], 1.0, 1e-15);
  EXPECT_NEAR(t2[1], 0.75, 1e-15);
  EXPECT_NEAR(t2[2], 0.25, 1e-15);
  for (double v : treated_count_tail(fixed({1.0, 1.0, 1.0}), blank(3))) EXPECT_NEAR(v, 1.0, 1e-15);
  // P(all three treated) = 0.2 * 0.4 * 0.9.
  EXPECT_NEAR(treated_count_tail(fixed({0.2, 0.4, 0.9}), blank(3))[3], 0.072, 1e-15);
}

TEST(SurvivalAt, StepModelExamples) {
  const auto grid = std::make_shared<const TimeGrid>(std::vector<double>{1.0, 2.0});
  const auto curve = StepSurvival::from_hazards(grid, {0.1, 0.2});
  const FunctionSurvivalModel model(SurvivalTarget::event,
                                    [curve](const ClusterObservation&, int, int, int) { return SurvivalCurve(curve); });
  const auto c = blank(1);
  EXPECT_EQ(survival_at(model, c, 0, 0, 0, 0.5), 1.0);
  EXPECT_NEAR(survival_at(model, c, 0, 0, 0, 2.0), 0.72, 1e-15);
  EXPECT_NEAR(survival_at(model, c, 0, 0, 0, 1e9), 0.72, 1e-15);
  EXPECT_NEAR(survival_at(model, c, 0, 0, 0, 2.0, 0.8), 0.8, 1e-15);
  double prev = 1.0;
  for (double r = 0.0; r < 3.0; r += 0.25) {
    const double s = survival_at(model, c, 0, 0, 0, r);
    EXPECT_LE(s, prev);
    prev = s;
  }
}

TEST(Propensity, ConstantRateIsRecovered) {
  const auto train = constant_rate_data(500, 10, 0.4, 1);
  const auto test = constant_rate_data(50, 10, 0.4, 2);
  for (auto learner : {PropensityLearner::logistic_penalized, PropensityLearner::logistic_random_intercept}) {
    LearnerConfig cfg;
    cfg.propensity = learner;
    const auto model = fit_propensity(train, cfg, 1);
    double s = 0.0;
    int n = 0;
    for (const auto& c : test.clusters()) {
      const auto dist = model->distribution(c);
      for (double p : dist.marginal()) {
        s += p;
        ++n;
      }
    }
    EXPECT_NEAR(s / n, 0.4, 0.02) << to_string(learner);
  }
}

TEST(Propensity, SingleClusterTrainingFits) {
  const auto train = constant_rate_data(1, 6, 0.5, 3);
  LearnerConfig cfg;
  for (auto learner : {PropensityLearner::logistic_penalized, PropensityLearner::logistic_random_intercept}) {
    cfg.propensity = learner;
    const auto model = fit_propensity(train, cfg, 1);
    const auto dist = model->distribution(train[0]);
    for (double p : dist.marginal()) EXPECT_TRUE(p > 0.0 && p < 1.0);
  }
}

TEST(Propensity, OracleMatchesProbitFormula) {
  DgpConfig dgp;
  const auto sim = generate_dataset([] {
    DgpConfig d;
    d.m = 5;
    return d;
  }(), 4);
  LearnerConfig cfg;
  cfg.propensity = PropensityLearner::oracle;
  cfg.dgp = dgp;
  cfg.pi_floor = 0.0;
  const auto model = fit_propensity(sim.data, cfg);
  for (const auto& c : sim.data.clusters()) {
    const auto marg = model->distribution(c).marginal();
    // Integrating Phi(lin + b) over b ~ N(0, sd^2) gives Phi(lin / sqrt(1 + sd^2)).
    for (int j = 0; j < c.size(); ++j) EXPECT_NEAR(marg[j], dgp_marginal_propensity(dgp, c, j), 1e-6);
  }
}

TEST(Survival, NoCensoringGivesUnitCensoringSurvival) {
  auto train = constant_rate_data(30, 4, 0.5, 5);
  const auto grid = std::make_shared<const TimeGrid>(build_time_grid(train));
  for (auto learner : {SurvivalLearner::discrete_hazard_logistic, SurvivalLearner::survival_forest}) {
    LearnerConfig cfg;
    cfg.survival = learner;
    const auto model = fit_survival(train, SurvivalTarget::censoring, cfg, grid, 1);
    EXPECT_TRUE(model->no_events());
    for (double r : grid->points()) EXPECT_EQ(survival_at(*model, train[0], 0, 1, 2, r), 1.0);
  }
}

TEST(Survival, PooledLogisticRecoversFlatHazard) {
  RngStream rng(6);
  std::vector<ClusterObservation> cs;
  for (int i = 0; i < 400; ++i) {
    auto c = blank(10, 1);
    c.cluster_id = std::to_string(i);
    for (int j = 0; j < 10; ++j) {
      int t = 1;
      while (t < 8 && !rng.bernoulli(0.1)) ++t;
      c.y[j] = t;
      c.delta[j] = 1;
      c.a[j] = rng.bernoulli(0.5);
      c.x[j] = rng.uniform();
    }
    cs.push_back(c);
  }
  const Dataset ds(cs);
  const auto grid = std::make_shared<const TimeGrid>(build_time_grid(ds));
  LearnerConfig cfg;
  cfg.survival = SurvivalLearner::discrete_hazard_logistic;
  const auto model = fit_survival(ds, SurvivalTarget::event, cfg, grid, 1);
  const auto curve = std::get<StepSurvival>(model->curve(ds[0], 0, 0, 4));
  for (std::size_t k = 0; k + 1 < grid->size(); ++k) EXPECT_NEAR(curve.hazard[k], 0.1, 0.02) << "k=" << k;
}

TEST(Survival, OracleMatchesGammaCdf) {
  DgpConfig dgp;
  dgp.m = 10;
  const auto sim = generate_dataset(dgp, 7);
  const auto bundle = oracle_bundle(dgp);
  RngStream rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const auto& c = sim.data[rng.below(sim.data.size())];
    const int j = static_cast<int>(rng.below(c.size()));
    const int a = rng.bernoulli(0.5);
    const int k = static_cast<int>(rng.below(c.size()));
    const double r = 3.0 * rng.uniform();
    const double shape = dgp_event_shape(dgp, c, j, a, k);
    const boost::math::gamma_distribution<double> g(shape, 2.0);
    EXPECT_NEAR(1.0 - survival_at(*bundle.event, c, j, a, k, r), boost::math::cdf(g, r), 1e-9);
  }
}

TEST(Survival, ForestCurvesAreMonotone) {
  DgpConfig dgp;
  dgp.m = 60;
  const auto sim = generate_dataset(dgp, 9);
  const auto grid = std::make_shared<const TimeGrid>(build_time_grid(sim.data));
  LearnerConfig cfg;
  cfg.forest.trees = 20;
  const auto model = fit_survival(sim.data, SurvivalTarget::event, cfg, grid, 3);
  const auto& c = sim.data[0];
  double prev = 1.0;
  for (double r : grid->points()) {
    const double s = survival_at(*model, c, 0, 1, 1, r);
    EXPECT_LE(s, prev + 1e-15);
    EXPECT_GE(s, 0.0);
    prev = s;
  }
}

TEST(RiskRecord, CensoringLeavesBeforeTiedEvent) {
  const TimeGrid grid({1.0, 2.0, 3.0});
  const auto ev = risk_record(grid, 2.0, 1, SurvivalTarget::censoring);
  EXPECT_EQ(ev.exit, 0);
  EXPECT_FALSE(ev.event);
  const auto ce = risk_record(grid, 2.0, 0, SurvivalTarget::censoring);
  EXPECT_EQ(ce.exit, 1);
  EXPECT_TRUE(ce.event);
  const auto te = risk_record(grid, 2.0, 0, SurvivalTarget::event);
  EXPECT_FALSE(te.event);
}

TEST(Special, GammaCdfAgainstBoost) {
  for (double shape : {0.05, 0.3, 1.0, 2.5, 10.0})
    for (double x : {1e-6, 0.01, 0.2, 1.0, 5.0, 40.0}) {
      const boost::math::gamma_distribution<double> g(shape, 2.0);
      EXPECT_NEAR(gamma_cdf(x, shape, 2.0), boost::math::cdf(g, x), 1e-10);
    }
}

TEST(Special, NormalQuantile) {
  EXPECT_NEAR(normal_quantile(0.975), 1.959963985, 1e-8);
  EXPECT_NEAR(normal_quantile(0.95), 1.644853627, 1e-8);
}
