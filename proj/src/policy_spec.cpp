#include "cisurv/policy_spec.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cisurv/error.hpp"

namespace cisurv {

PolicySpec PolicySpec::type_b(double alpha) { return {PolicyFamily::type_b, alpha}; }
PolicySpec PolicySpec::cips(double delta) { return {PolicyFamily::cips, delta}; }
PolicySpec PolicySpec::tpb(double rho) { return {PolicyFamily::tpb, rho}; }

void PolicySpec::validate() const {
  const bool ok = [&] {
    switch (family) {
      case PolicyFamily::type_b: return theta > 0.0 && theta < 1.0;
      case PolicyFamily::cips: return theta > 0.0 && std::isfinite(theta);
      case PolicyFamily::tpb: return theta >= 0.0 && theta <= 1.0;
    }
    return false;
  }();
  if (!ok) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("policy parameter {} out of range for {}", theta, to_string(family)));
  }
}

std::string PolicySpec::label() const { return fmt::format("{}({:g})", to_string(family), theta); }

std::string to_string(PolicyFamily family) {
  switch (family) {
    case PolicyFamily::type_b: return "typeb";
    case PolicyFamily::cips: return "cips";
    case PolicyFamily::tpb: return "tpb";
  }
  return "?";
}

PolicyFamily parse_policy_family(const std::string& name) {
  if (name == "typeb" || name == "type_b") return PolicyFamily::type_b;
  if (name == "cips") return PolicyFamily::cips;
  if (name == "tpb") return PolicyFamily::tpb;
  throw Error(ErrorCode::invalid_argument, "unknown policy family '" + name + "'");
}

}  // namespace cisurv
