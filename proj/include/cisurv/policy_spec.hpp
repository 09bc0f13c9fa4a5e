#pragma once

#include <string>

namespace cisurv {

enum class PolicyFamily { type_b, cips, tpb };

/// A counterfactual treatment allocation policy Q(.|X, N; theta).
///
///   type_b: units treated independently with probability alpha in (0, 1)
///   cips:   factual treatment odds multiplied by delta > 0
///   tpb:    factual allocation distribution restricted to treated share >= rho
struct PolicySpec {
  PolicyFamily family = PolicyFamily::type_b;
  double theta = 0.5;

  static PolicySpec type_b(double alpha);
  static PolicySpec cips(double delta);
  static PolicySpec tpb(double rho);

  /// Throws InvalidArgument when theta is outside the family's range.
  void validate() const;
  std::string label() const;

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

std::string to_string(PolicyFamily family);
PolicyFamily parse_policy_family(const std::string& name);

}  // namespace cisurv
