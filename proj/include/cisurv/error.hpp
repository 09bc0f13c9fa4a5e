#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cisurv {

enum class ErrorCode {
  missing_column,
  non_binary_field,
  negative_time,
  ragged_cluster,
  empty_dataset,
  too_few_clusters,
  invalid_argument,
  length_mismatch,
  degenerate_tail,
  separation_detected,
  no_events,
  cluster_too_large_for_exact_sum,
  fold_violation,
  zero_variance,
  unsupported_transform,
  unsupported_world,
  io_error,
};

std::string_view to_string(ErrorCode code);

// Every library failure is reported through this type; `code()` identifies
// the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cisurv
