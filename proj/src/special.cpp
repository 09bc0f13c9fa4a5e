#include "cisurv/special.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "cisurv/error.hpp"

namespace cisurv {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "normal quantile needs p in (0, 1)");
  }
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

namespace {

constexpr double kEps = 1e-15;
constexpr int kMaxIter = 10000;

double gamma_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper tail Q(a, x) by modified Lentz.
double gamma_continued_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0)) throw Error(ErrorCode::invalid_argument, "gamma shape must be positive");
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return gamma_series(a, x);
  return 1.0 - gamma_continued_fraction(a, x);
}

double gamma_cdf(double x, double shape, double scale) {
  return regularized_gamma_p(shape, x / scale);
}

double gamma_pdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  const double z = x / scale;
  return std::exp((shape - 1.0) * std::log(z) - z - std::lgamma(shape)) / scale;
}

QuadratureRule gauss_hermite_normal(int n) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "quadrature needs at least one node");
  // Golub–Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = solver.eigenvalues()(i);
    const double v = solver.eigenvectors()(0, i);
    rule.weights[i] = v * v;
  }
  return rule;
}

QuadratureRule gauss_legendre_unit(int n) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "quadrature needs at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double k = i;
    jacobi(i, i - 1) = jacobi(i - 1, i) = k / std::sqrt(4.0 * k * k - 1.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = 0.5 * (solver.eigenvalues()(i) + 1.0);
    const double v = solver.eigenvectors()(0, i);
    rule.weights[i] = v * v;  // 2 v^2 on [-1, 1], halved for [0, 1]
  }
  return rule;
}

}  // namespace cisurv
