#include <gtest/gtest.h>

#include <cmath>

#include "cisurv/error.hpp"
#include "cisurv/simulator.hpp"

using namespace cisurv;

TEST(Simulator, TreatmentRateAndClusterSizes) {
  DgpConfig cfg;
  cfg.m = 9000;
  const auto sim = generate_dataset(cfg, 1);
  double treated = 0.0, expected = 0.0;
  for (const auto& c : sim.data.clusters()) {
    EXPECT_GE(c.size(), 5);
    EXPECT_LE(c.size(), 20);
    treated += c.treated_count();
    for (int j = 0; j < c.size(); ++j) expected += dgp_marginal_propensity(cfg, c, j);
  }
  const double units = static_cast<double>(sim.data.total_units());
  EXPECT_GT(units, 1e5);
  // Binomial noise plus the shared intercept keep the gap well below 0.01.
  EXPECT_NEAR(treated / units, expected / units, 0.01);
  EXPECT_GT(treated / units, 0.35);
  EXPECT_LT(treated / units, 0.5);
}

TEST(Simulator, NoInterceptMeansNoTreatmentCorrelation) {
  DgpConfig cfg;
  cfg.m = 8000;
  cfg.sigma_b = 0.0;
  const auto sim = generate_dataset(cfg, 2);
  // Pairwise correlation of treatment residuals within clusters, given the
  // known marginal propensities.
  double num = 0.0, den = 0.0;
  for (const auto& c : sim.data.clusters()) {
    std::vector<double> r(c.size());
    for (int j = 0; j < c.size(); ++j) {
      const double p = dgp_marginal_propensity(cfg, c, j);
      r[j] = (c.a[j] - p) / std::sqrt(p * (1 - p));
    }
    double s = 0.0, s2 = 0.0;
    for (double v : r) {
      s += v;
      s2 += v * v;
    }
    num += s * s - s2;
    den += static_cast<double>(c.size()) * (c.size() - 1);
  }
  EXPECT_LT(std::abs(num / den), 0.02);
}

TEST(Simulator, DeterministicPerSeedAndHiddenTruthConsistent) {
  DgpConfig cfg;
  cfg.m = 30;
  const auto a = generate_dataset(cfg, 3);
  const auto b = generate_dataset(cfg, 3);
  ASSERT_EQ(a.data.size(), b.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    EXPECT_EQ(a.data[i].y, b.data[i].y);
    EXPECT_EQ(a.data[i].a, b.data[i].a);
    for (int j = 0; j < a.data[i].size(); ++j) {
      EXPECT_EQ(a.data[i].y[j], std::min(a.t[i][j], a.c[i][j]));
      EXPECT_EQ(a.data[i].delta[j], a.t[i][j] <= a.c[i][j] ? 1 : 0);
    }
  }
  // Clusters are regenerated independently of m.
  cfg.m = 10;
  const auto c = generate_dataset(cfg, 3);
  EXPECT_EQ(c.data[4].y, a.data[4].y);
}

TEST(Simulator, ClusterLevelCovariatesAreShared) {
  DgpConfig cfg;
  cfg.m = 5;
  const auto sim = generate_dataset(cfg, 4);
  for (const auto& c : sim.data.clusters()) {
    ASSERT_EQ(c.p, DgpConfig::kColumns);
    for (int j = 1; j < c.size(); ++j)
      for (int k = 0; k < DgpConfig::kClusterCovariates; ++k) EXPECT_EQ(c.x_row(j)[k], c.x_row(0)[k]);
    for (int j = 0; j < c.size(); ++j)
      for (int k = 10; k < 15; ++k) EXPECT_TRUE(c.x_row(j)[k] == 0.0 || c.x_row(j)[k] == 1.0);
  }
}

TEST(Truth, ZeroHorizonIsZero) {
  DgpConfig cfg;
  const EstimandSpec s{EstimandKind::mu, TransformSpec::risk_at(0.0), PolicySpec::type_b(0.3), std::nullopt};
  EXPECT_EQ(true_value_typeb(cfg, s, 100, 1).value, 0.0);
}

TEST(Truth, TypeBRejectsOtherPolicies) {
  DgpConfig cfg;
  const EstimandSpec s{EstimandKind::mu, TransformSpec::risk_at(0.2), PolicySpec::tpb(0.3), std::nullopt};
  EXPECT_THROW(true_value_typeb(cfg, s, 100, 1), Error);
}

TEST(Truth, GeneralOracleAgreesWithTypeBOracle) {
  DgpConfig cfg;
  std::vector<EstimandSpec> specs;
  for (auto k : {EstimandKind::mu, EstimandKind::mu1, EstimandKind::mu0, EstimandKind::de})
    specs.push_back({k, TransformSpec::risk_at(0.2), PolicySpec::type_b(0.45), std::nullopt});
  const auto a = true_values_typeb(cfg, specs, 3000, 5);
  const auto b = true_values_mc(cfg, specs, 3000, 10, 5);
  for (std::size_t g = 0; g < specs.size(); ++g) EXPECT_NEAR(a[g].value, b[g].value, 1e-9);
}

TEST(Truth, ContrastsAreDifferencesOfComponents) {
  DgpConfig cfg;
  const auto q = PolicySpec::type_b(0.3), r = PolicySpec::type_b(0.45);
  const std::vector<EstimandSpec> specs = {
      {EstimandKind::mu, TransformSpec::risk_at(0.2), q, std::nullopt},
      {EstimandKind::mu, TransformSpec::risk_at(0.2), r, std::nullopt},
      {EstimandKind::oe, TransformSpec::risk_at(0.2), q, r}};
  const auto t = true_values_typeb(cfg, specs, 2000, 6);
  EXPECT_NEAR(t[2].value, t[0].value - t[1].value, 1e-12);
}

TEST(TinyWorld, BruteForceMatchesInfluenceMean) {
  for (int n = 1; n <= 3; ++n) {
    const auto w = random_tiny_world(n, 40 + n);
    for (const auto& pol : {PolicySpec::type_b(0.3), PolicySpec::cips(2.0), PolicySpec::tpb(0.5)})
      for (auto tr : {TransformSpec::risk_at(2.5), TransformSpec::rmst(3.0)}) {
        const EstimandSpec s{EstimandKind::de, tr, pol, std::nullopt};
        const auto r = brute_force_psi(w, s);
        EXPECT_NEAR(r.psi, r.expected_phi, 1e-10);
        EXPECT_NEAR(brute_force_psi(w, s, EvalMode::exposure()).expected_phi, r.psi, 1e-10);
      }
  }
}
