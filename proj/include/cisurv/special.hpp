#pragma once

#include <vector>

namespace cisurv {

double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);

/// Regularized lower incomplete gamma P(a, x) = γ(a, x) / Γ(a).
///
/// Series expansion for x < a + 1, Lentz continued fraction for the upper
/// tail otherwise; both iterate to an absolute tolerance of 1e-15 so the
/// result is accurate to well under 1e-10.
double regularized_gamma_p(double a, double x);

double gamma_cdf(double x, double shape, double scale);
double gamma_pdf(double x, double shape, double scale);

// Nodes and weights for E[f(Z)], Z ~ N(0, 1).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

QuadratureRule gauss_hermite_normal(int n);

/// Gauss–Legendre rule on [0, 1].
QuadratureRule gauss_legendre_unit(int n);

}  // namespace cisurv
