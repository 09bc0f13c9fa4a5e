#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cisurv/error.hpp"
#include "cisurv/inference.hpp"
#include "cisurv/rng.hpp"

using namespace cisurv;

namespace {

// m rows; column g equals a shared draw times `shared` plus noise.
InfluenceTable table(int m, int G, double shared, std::uint64_t seed) {
  InfluenceTable t;
  t.K = 2;
  for (int g = 0; g < G; ++g)
    t.specs.push_back({EstimandKind::mu, TransformSpec::risk_at(0.2), PolicySpec::type_b(0.1 + 0.1 * g), std::nullopt});
  RngStream rng(seed);
  std::normal_distribution<double> z;
  for (int i = 0; i < m; ++i) {
    const double s = z(rng);
    std::vector<double> row;
    for (int g = 0; g < G; ++g) row.push_back(shared * s + (1 - shared) * z(rng));
    t.values.push_back(row);
    t.folds.push_back(1 + i % 2);
  }
  return t;
}

std::vector<EstimateResult> estimates(const InfluenceTable& t) {
  std::vector<EstimateResult> out;
  for (std::size_t g = 0; g < t.columns(); ++g) {
    EstimateResult e;
    e.spec = t.specs[g];
    e.point = t.point(g);
    e.sigma = std::sqrt(t.variance(g));
    e.se = e.sigma / std::sqrt(static_cast<double>(t.rows()));
    out.push_back(e);
  }
  return out;
}

UCBResult band(std::vector<double> lo, std::vector<double> hi) {
  UCBResult u;
  u.lo = std::move(lo);
  u.hi = std::move(hi);
  return u;
}

}  // namespace

TEST(PointwiseCi, Examples) {
  EstimateResult e;
  e.point = 0.5;
  e.se = 0.1;
  const auto [lo, hi] = pointwise_ci(e, 0.95);
  EXPECT_NEAR(lo, 0.304, 5e-4);
  EXPECT_NEAR(hi, 0.696, 5e-4);
  e.se = 0.0;
  const auto [lo0, hi0] = pointwise_ci(e, 0.95);
  EXPECT_EQ(lo0, 0.5);
  EXPECT_EQ(hi0, 0.5);
  e.se = 1.0;
  e.point = 0.0;
  EXPECT_NEAR(pointwise_ci(e, 0.9).second, 1.644854, 1e-6);
}

TEST(Ucb, SinglePointIsTheNormalQuantile) {
  const auto t = table(3000, 1, 0.0, 1);
  const auto e = estimates(t);
  const auto u = ucb_critical_value(t, e, 20000, 0.95, 7);
  EXPECT_NEAR(u.critical, 1.96, 0.05);
  EXPECT_NEAR(u.lo[0], e[0].point - u.critical * e[0].se, 1e-15);
}

TEST(Ucb, IdenticalColumnsActLikeOne) {
  auto t = table(3000, 1, 0.0, 2);
  const auto single = ucb_critical_value(t, estimates(t), 5000, 0.95, 3).critical;
  InfluenceTable wide = t;
  wide.specs.assign(4, t.specs[0]);
  for (auto& row : wide.values) row.assign(4, row[0]);
  const auto multi = ucb_critical_value(wide, estimates(wide), 5000, 0.95, 3).critical;
  EXPECT_NEAR(multi, single, 0.05);
}

TEST(Ucb, DominatesPointwiseAndIsMonotoneInLevel) {
  const auto t = table(2000, 5, 0.5, 4);
  const auto e = estimates(t);
  const auto u = ucb_critical_value(t, e, 5000, 0.95, 9);
  EXPECT_GE(u.critical, 1.959964 - 0.03);
  double prev = 0.0;
  for (double level : {0.5, 0.8, 0.9, 0.95, 0.99}) {
    const double c = ucb_quantile(u.suprema, level);
    EXPECT_GE(c, prev);
    prev = c;
  }
  EXPECT_EQ(ucb_quantile(u.suprema, 0.95), u.critical);
}

TEST(Ucb, ReproducibleBitForBit) {
  const auto t = table(500, 3, 0.3, 5);
  const auto e = estimates(t);
  const auto a = ucb_critical_value(t, e, 1000, 0.95, 11, 1);
  const auto b = ucb_critical_value(t, e, 1000, 0.95, 11, 3);
  EXPECT_EQ(a.critical, b.critical);
  EXPECT_EQ(a.suprema, b.suprema);
}

TEST(Ucb, Errors) {
  auto t = table(100, 2, 0.0, 6);
  EXPECT_THROW(ucb_critical_value(t, estimates(t), 50, 0.95, 1), Error);
  for (auto& row : t.values) row[1] = 0.25;
  try {
    ucb_critical_value(t, estimates(t), 200, 0.95, 1);
    FAIL() << "expected zero variance";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::zero_variance);
  }
}

TEST(Interference, Examples) {
  EXPECT_EQ(interference_test(band({0.3, 0.3, 0.3}, {0.5, 0.5, 0.5})), InterferenceDecision::fail_to_reject);
  EXPECT_EQ(interference_test(band({0.4, 0.1}, {0.5, 0.2})), InterferenceDecision::reject);
  EXPECT_EQ(interference_test(band({0.2, 0.4}, {0.4, 0.6})), InterferenceDecision::fail_to_reject);
  EXPECT_EQ(to_string(InterferenceDecision::reject), "reject");
}
