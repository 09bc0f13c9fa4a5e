#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cisurv/policy_spec.hpp"

namespace cisurv {

inline constexpr int kDefaultMaxClusterSize = 64;

/// Observed data for one cluster: times, event indicators, treatments and a
/// row-major n x p covariate block.
struct ClusterObservation {
  std::string cluster_id;
  std::vector<double> y;
  std::vector<int> delta;
  std::vector<int> a;
  std::vector<double> x;
  int p = 0;

  int size() const { return static_cast<int>(y.size()); }
  std::span<const double> x_row(int j) const {
    return {x.data() + static_cast<std::size_t>(j) * p, static_cast<std::size_t>(p)};
  }
  int treated_count() const;

  /// Throws on ragged arrays, non-binary indicators or negative times.
  void validate(int n_max = kDefaultMaxClusterSize) const;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<ClusterObservation> clusters, int n_max = kDefaultMaxClusterSize);

  const std::vector<ClusterObservation>& clusters() const { return clusters_; }
  const ClusterObservation& operator[](std::size_t i) const { return clusters_[i]; }
  std::size_t size() const { return clusters_.size(); }
  bool empty() const { return clusters_.empty(); }
  int p() const { return p_; }
  std::size_t total_units() const;

  /// Fold labels in {1..K}, one per cluster; empty when unassigned.
  const std::vector<int>& folds() const { return folds_; }
  int fold_count() const;
  void set_folds(std::vector<int> folds);

  /// Clusters at the given positions, in that order; fold labels follow.
  Dataset subset(std::span<const std::size_t> positions) const;

 private:
  std::vector<ClusterObservation> clusters_;
  std::vector<int> folds_;
  int p_ = 0;
};

/// Sorted distinct observed times; the common support of every discrete
/// hazard, survival curve and martingale increment.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> points);

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t k) const { return points_[k]; }
  const std::vector<double>& points() const { return points_; }
  double back() const { return points_.back(); }

  std::optional<std::size_t> index_of(double t) const;
  /// Number of grid points <= r.
  std::size_t count_at_or_below(double r) const;
  bool contains(double t) const { return index_of(t).has_value(); }

 private:
  std::vector<double> points_;
};

enum class TransformKind { risk_at, rmst, identity };

/// Outcome transformation R: 1(T <= tau), min(T, h) or T.
struct TransformSpec {
  TransformKind kind = TransformKind::risk_at;
  double horizon = 1.0;

  static TransformSpec risk_at(double tau);
  static TransformSpec rmst(double h);
  static TransformSpec identity();

  void validate() const;
  double operator()(double t) const;
  /// Value assigned to probability mass beyond the last support point.
  double tail_value(double last_point) const;
  std::string label() const;

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

enum class EstimandKind { mu, mu1, mu0, de, se1, se0, oe };

std::string to_string(EstimandKind kind);
EstimandKind parse_estimand_kind(const std::string& name);
bool is_contrast_over_policies(EstimandKind kind);

struct EstimandSpec {
  EstimandKind kind = EstimandKind::mu;
  TransformSpec transform;
  PolicySpec policy;
  /// Reference policy Q' for SE and OE.
  std::optional<PolicySpec> reference;

  void validate() const;
  std::string label() const;
};

enum class DataFormat { csv, jsonl };

Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                     int n_max = kDefaultMaxClusterSize);
Dataset read_csv(std::istream& in, int n_max = kDefaultMaxClusterSize);
Dataset read_jsonl(std::istream& in, int n_max = kDefaultMaxClusterSize);
void write_csv(const Dataset& ds, std::ostream& out);
void write_jsonl(const Dataset& ds, std::ostream& out);
void save_dataset(const Dataset& ds, const std::filesystem::path& path, DataFormat format);

TimeGrid build_time_grid(const Dataset& ds);

/// Uniformly random balanced partition into K folds, labels 1..K.
Dataset assign_folds(const Dataset& ds, int K, std::uint64_t seed);

}  // namespace cisurv
