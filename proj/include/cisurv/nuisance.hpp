#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cisurv/core_data.hpp"
#include "cisurv/dgp.hpp"
#include "cisurv/policies.hpp"
#include "cisurv/survival_curve.hpp"

namespace cisurv {

/// Exposure-mapping features of unit j: (a_j, share of treated others,
/// x_j, mean covariates of the others, n).
class ExposureFeatures {
 public:
  explicit ExposureFeatures(const ClusterObservation& c);

  static int dimension(int p) { return 2 * p + 3; }
  int dimension() const { return dimension(c_->p); }
  void fill(int j, int a_j, int k_others, std::span<double> out) const;
  /// Mean of the other units' covariates, written into out (length p).
  void others_mean(int j, std::span<double> out) const;

 private:
  const ClusterObservation* c_;
  std::vector<double> column_sums_;
};

// ---------------------------------------------------------------- models

class PropensityModel {
 public:
  virtual ~PropensityModel() = default;
  /// Clipped joint treatment distribution H(. | X, N) of the cluster.
  virtual TreatmentDistribution distribution(const ClusterObservation& c) const = 0;
  virtual std::string name() const = 0;
  /// True when fitting fell back to a constant rate.
  bool degenerate() const { return degenerate_; }

 protected:
  bool degenerate_ = false;
};

enum class SurvivalTarget { event, censoring };

class SurvivalModel {
 public:
  explicit SurvivalModel(SurvivalTarget target) : target_(target) {}
  virtual ~SurvivalModel() = default;

  SurvivalTarget target() const { return target_; }
  /// True when the training data held no target events; hazards are then zero.
  bool no_events() const { return no_events_; }

  /// Distribution of the target time of unit j when it has treatment a_j and
  /// k_others treated co-members.
  virtual SurvivalCurve curve(const ClusterObservation& c, int j, int a_j, int k_others) const = 0;
  /// E[R(T)] for each transform; models may override with a faster path.
  virtual void expected(const ClusterObservation& c, int j, int a_j, int k_others,
                        std::span<const TransformSpec> transforms, std::span<double> out) const;
  virtual std::string name() const = 0;

 protected:
  SurvivalTarget target_;
  bool no_events_ = false;
};

/// Wraps user-supplied functions; used for tabulated oracles in tests.
class FunctionPropensityModel : public PropensityModel {
 public:
  using Fn = std::function<TreatmentDistribution(const ClusterObservation&)>;
  explicit FunctionPropensityModel(Fn fn, std::string name = "function") : fn_(std::move(fn)), name_(std::move(name)) {}
  TreatmentDistribution distribution(const ClusterObservation& c) const override { return fn_(c); }
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

class FunctionSurvivalModel : public SurvivalModel {
 public:
  using Fn = std::function<SurvivalCurve(const ClusterObservation&, int, int, int)>;
  FunctionSurvivalModel(SurvivalTarget target, Fn fn, std::string name = "function")
      : SurvivalModel(target), fn_(std::move(fn)), name_(std::move(name)) {}
  SurvivalCurve curve(const ClusterObservation& c, int j, int a_j, int k) const override { return fn_(c, j, a_j, k); }
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

// ---------------------------------------------------------------- learners

enum class PropensityLearner { logistic_penalized, logistic_random_intercept, oracle };
enum class SurvivalLearner { discrete_hazard_logistic, survival_forest, oracle };

std::string to_string(PropensityLearner l);
std::string to_string(SurvivalLearner l);
PropensityLearner parse_propensity_learner(const std::string& s);
SurvivalLearner parse_survival_learner(const std::string& s);

struct ForestParams {
  int trees = 100;
  int min_leaf = 15;
  int mtry = 0;  // 0: ceil(sqrt(dimension))
  int nsplit = 10;
};

struct LearnerConfig {
  PropensityLearner propensity = PropensityLearner::logistic_random_intercept;
  SurvivalLearner survival = SurvivalLearner::survival_forest;
  double ridge = 300.0;
  double hazard_ridge = 1e-2;
  int hazard_bins = 20;
  ForestParams forest;
  double pi_floor = kDefaultPiFloor;
  double tail_floor = kDefaultTailFloor;
  double s_floor = 0.05;
  int oracle_b_nodes = 40;
  /// Quadrature nodes of the random-intercept propensity learner.
  int random_intercept_nodes = 15;
  /// Required by the oracle learners.
  std::optional<DgpConfig> dgp;
};

std::shared_ptr<const PropensityModel> fit_propensity(const Dataset& train, const LearnerConfig& cfg,
                                                      std::uint64_t seed = 0);

std::shared_ptr<const SurvivalModel> fit_survival(const Dataset& train, SurvivalTarget target,
                                                  const LearnerConfig& cfg,
                                                  std::shared_ptr<const TimeGrid> grid, std::uint64_t seed = 0);

double cluster_prob(const PropensityModel& model, std::span<const int> a, const ClusterObservation& c);
std::vector<double> treated_count_tail(const PropensityModel& model, const ClusterObservation& c);
/// S(r) of unit j at exposure (a_j, k_others), clipped below at s_floor.
double survival_at(const SurvivalModel& model, const ClusterObservation& c, int j, int a_j, int k_others,
                   double r, double s_floor = 0.0);

/// Fitted nuisance functions for one fold. fold == 0 means the bundle was
/// trained on data that may include any cluster.
struct NuisanceBundle {
  std::shared_ptr<const PropensityModel> propensity;
  std::shared_ptr<const SurvivalModel> event;
  std::shared_ptr<const SurvivalModel> censor;
  int fold = 0;
  double s_floor = 0.05;
  double tail_floor = kDefaultTailFloor;
};

NuisanceBundle fit_nuisance(const Dataset& train, const LearnerConfig& cfg, std::shared_ptr<const TimeGrid> grid,
                            std::uint64_t seed, int fold = 0);

// ---------------------------------------------------------------- internals exposed for testing

/// Ridge-penalised binomial logistic regression by Newton-Raphson. `penalty`
/// holds one ridge weight per column.
std::vector<double> fit_binomial_logistic(const std::vector<std::vector<double>>& rows,
                                          const std::vector<double>& successes,
                                          const std::vector<double>& trials, const std::vector<double>& penalty,
                                          int max_iter = 100, double tol = 1e-10);

/// One unit's contribution to a discrete survival likelihood: at risk at grid
/// indices 0..exit, with a target event at `exit` when `event` is set.
struct RiskRecord {
  int exit;
  bool event;
};

/// Censoring records leave the risk set before a tied event.
RiskRecord risk_record(const TimeGrid& grid, double y, int delta, SurvivalTarget target);

}  // namespace cisurv
