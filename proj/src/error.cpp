#include "cisurv/error.hpp"

namespace cisurv {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_column: return "MissingColumn";
    case ErrorCode::non_binary_field: return "NonBinaryField";
    case ErrorCode::negative_time: return "NegativeTime";
    case ErrorCode::ragged_cluster: return "RaggedCluster";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::too_few_clusters: return "TooFewClusters";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::degenerate_tail: return "DegenerateTail";
    case ErrorCode::separation_detected: return "SeparationDetected";
    case ErrorCode::no_events: return "NoEvents";
    case ErrorCode::cluster_too_large_for_exact_sum: return "ClusterTooLargeForExactSum";
    case ErrorCode::fold_violation: return "FoldViolation";
    case ErrorCode::zero_variance: return "ZeroVariance";
    case ErrorCode::unsupported_transform: return "UnsupportedTransform";
    case ErrorCode::unsupported_world: return "UnsupportedWorld";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

}  // namespace cisurv
