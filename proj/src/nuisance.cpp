#include "cisurv/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cisurv/error.hpp"
#include "cisurv/rng.hpp"
#include "cisurv/special.hpp"

namespace cisurv {

// ---------------------------------------------------------------- features

ExposureFeatures::ExposureFeatures(const ClusterObservation& c) : c_(&c), column_sums_(c.p, 0.0) {
  for (int j = 0; j < c.size(); ++j) {
    auto row = c.x_row(j);
    for (int k = 0; k < c.p; ++k) column_sums_[k] += row[k];
  }
}

void ExposureFeatures::others_mean(int j, std::span<double> out) const {
  const int n = c_->size();
  auto row = c_->x_row(j);
  for (int k = 0; k < c_->p; ++k) out[k] = n > 1 ? (column_sums_[k] - row[k]) / (n - 1) : row[k];
}

void ExposureFeatures::fill(int j, int a_j, int k_others, std::span<double> out) const {
  const int n = c_->size(), p = c_->p;
  out[0] = a_j;
  out[1] = n > 1 ? static_cast<double>(k_others) / (n - 1) : 0.0;
  auto row = c_->x_row(j);
  std::copy(row.begin(), row.end(), out.begin() + 2);
  others_mean(j, out.subspan(2 + p, p));
  out[2 + 2 * p] = n;
}

// ---------------------------------------------------------------- shared helpers

void SurvivalModel::expected(const ClusterObservation& c, int j, int a_j, int k_others,
                             std::span<const TransformSpec> transforms, std::span<double> out) const {
  const auto cv = curve(c, j, a_j, k_others);
  for (std::size_t t = 0; t < transforms.size(); ++t) out[t] = cisurv::expected(cv, transforms[t]);
}

RiskRecord risk_record(const TimeGrid& grid, double y, int delta, SurvivalTarget target) {
  const auto idx = grid.index_of(y);
  int e;
  if (idx) {
    e = static_cast<int>(*idx);
  } else {
    e = static_cast<int>(grid.count_at_or_below(y)) - 1;  // off-grid: last grid point before y
    return {e, false};
  }
  if (target == SurvivalTarget::event) return {e, delta == 1};
  if (delta == 1) return {e - 1, false};
  return {e, true};
}

namespace {

double expit(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

struct Standardizer {
  std::vector<double> mean, sd;

  void fit(const std::vector<std::vector<double>>& rows) {
    const std::size_t d = rows.empty() ? 0 : rows.front().size();
    mean.assign(d, 0.0);
    sd.assign(d, 1.0);
    if (rows.empty()) return;
    for (const auto& r : rows)
      for (std::size_t k = 0; k < d; ++k) mean[k] += r[k];
    for (auto& v : mean) v /= rows.size();
    std::vector<double> ss(d, 0.0);
    for (const auto& r : rows)
      for (std::size_t k = 0; k < d; ++k) ss[k] += (r[k] - mean[k]) * (r[k] - mean[k]);
    for (std::size_t k = 0; k < d; ++k) {
      const double s = std::sqrt(ss[k] / rows.size());
      sd[k] = s > 1e-12 ? s : 0.0;
    }
  }

  // Constant columns map to 0.
  double apply(std::size_t k, double v) const { return sd[k] > 0.0 ? (v - mean[k]) / sd[k] : 0.0; }
};

}  // namespace

std::vector<double> fit_binomial_logistic(const std::vector<std::vector<double>>& rows,
                                          const std::vector<double>& successes, const std::vector<double>& trials,
                                          const std::vector<double>& penalty, int max_iter, double tol) {
  const std::size_t N = rows.size();
  const std::size_t d = penalty.size();
  if (successes.size() != N || trials.size() != N) throw Error(ErrorCode::length_mismatch, "logistic inputs");
  Eigen::MatrixXd X(N, d);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < d; ++k) X(i, k) = rows[i][k];
  const Eigen::Map<const Eigen::VectorXd> y(successes.data(), N), t(trials.data(), N);
  const Eigen::VectorXd P = Eigen::Map<const Eigen::VectorXd>(penalty.data(), d);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  const double rate = std::clamp(y.sum() / std::max(t.sum(), 1e-300), 1e-8, 1.0 - 1e-8);
  beta(0) = std::log(rate / (1.0 - rate));

  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = X * b;
    double ll = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      // log(1 + exp(eta)) computed stably
      const double e = eta(i);
      const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += y(i) * e - t(i) * log1pexp;
    }
    return -ll + 0.5 * (P.array() * b.array().square()).sum();
  };

  double obj = objective(beta);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd mu(N), w(N);
    for (std::size_t i = 0; i < N; ++i) {
      mu(i) = expit(eta(i));
      w(i) = t(i) * mu(i) * (1.0 - mu(i));
    }
    const Eigen::VectorXd grad = X.transpose() * (y - t.cwiseProduct(mu)) - P.cwiseProduct(beta);
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal() += P;
    H.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_obj = objective(next);
    while (next_obj > obj + 1e-12 * std::abs(obj) && scale > 1e-6) {
      scale *= 0.5;
      next = beta + scale * step;
      next_obj = objective(next);
    }
    const double change = std::abs(obj - next_obj);
    beta = next;
    obj = next_obj;
    if (change < tol * (std::abs(obj) + tol) || step.cwiseAbs().maxCoeff() * scale < 1e-9) break;
  }
  return {beta.data(), beta.data() + d};
}

// ---------------------------------------------------------------- propensity

namespace {

class ConstantPropensity : public PropensityModel {
 public:
  ConstantPropensity(double rate, double floor) : rate_(rate), floor_(floor) { degenerate_ = true; }
  TreatmentDistribution distribution(const ClusterObservation& c) const override {
    return TreatmentDistribution::independent(std::vector<double>(c.size(), rate_), floor_);
  }
  std::string name() const override { return "constant"; }

 private:
  double rate_, floor_;
};

// Per-unit propensity features: own covariates, the others' mean covariates,
// cluster size and squares of the non-binary covariates, standardized.
class PropensityDesign {
 public:
  explicit PropensityDesign(const Dataset& train) {
    const int p = train.p();
    for (int k = 0; k < p; ++k) {
      bool binary = true;
      for (const auto& c : train.clusters()) {
        for (int j = 0; j < c.size() && binary; ++j) {
          const double v = c.x_row(j)[k];
          binary = v == 0.0 || v == 1.0;
        }
        if (!binary) break;
      }
      if (!binary) squared_.push_back(k);
      // Columns constant within every cluster already equal their others' mean.
      bool cluster_level = true;
      for (const auto& c : train.clusters()) {
        for (int j = 1; j < c.size() && cluster_level; ++j) cluster_level = c.x_row(j)[k] == c.x_row(0)[k];
        if (!cluster_level) break;
      }
      if (!cluster_level) unit_level_.push_back(k);
    }
    std::vector<std::vector<double>> raw;
    for (const auto& c : train.clusters()) {
      ExposureFeatures ef(c);
      for (int j = 0; j < c.size(); ++j) raw.push_back(features(c, ef, j));
    }
    scaler_.fit(raw);
  }

  /// Design row with a leading intercept.
  std::vector<double> row(const ClusterObservation& c, const ExposureFeatures& ef, int j) const {
    const auto f = features(c, ef, j);
    std::vector<double> z(f.size() + 1);
    z[0] = 1.0;
    for (std::size_t k = 0; k < f.size(); ++k) z[k + 1] = scaler_.apply(k, f[k]);
    return z;
  }

  static double dot(const std::vector<double>& beta, const std::vector<double>& z) {
    double eta = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) eta += beta[k] * z[k];
    return eta;
  }

 private:
  std::vector<double> features(const ClusterObservation& c, const ExposureFeatures& ef, int j) const {
    const int p = c.p;
    std::vector<double> others(p);
    ef.others_mean(j, others);
    auto row = c.x_row(j);
    std::vector<double> f(row.begin(), row.end());
    for (int k : unit_level_) f.push_back(others[k]);
    f.push_back(c.size());
    for (int k : squared_) f.push_back(row[k] * row[k]);
    return f;
  }

  std::vector<int> squared_;
  std::vector<int> unit_level_;
  Standardizer scaler_;
};

class LogisticPropensity : public PropensityModel {
 public:
  LogisticPropensity(const Dataset& train, double ridge, double floor) : floor_(floor), design_(train) {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (const auto& c : train.clusters()) {
      ExposureFeatures ef(c);
      for (int j = 0; j < c.size(); ++j) {
        rows.push_back(design_.row(c, ef, j));
        y.push_back(c.a[j]);
      }
    }
    std::vector<double> trials(rows.size(), 1.0);
    std::vector<double> penalty(rows.front().size(), ridge);
    penalty[0] = 0.0;
    beta_ = fit_binomial_logistic(rows, y, trials, penalty);
  }

  TreatmentDistribution distribution(const ClusterObservation& c) const override {
    ExposureFeatures ef(c);
    std::vector<double> pi(c.size());
    for (int j = 0; j < c.size(); ++j) pi[j] = expit(PropensityDesign::dot(beta_, design_.row(c, ef, j)));
    return TreatmentDistribution::independent(std::move(pi), floor_);
  }

  std::string name() const override { return "logistic_penalized"; }

 private:
  double floor_;
  PropensityDesign design_;
  std::vector<double> beta_;
};

// logit P(A_ij = 1 | X, b_i) = z_ij' beta + sigma u_i, u_i ~ N(0, 1), fitted by
// EM over Gauss-Hermite nodes with one Newton step per M-step. Predictions
// integrate u out, so the allocation distribution is a mixture.
class RandomInterceptPropensity : public PropensityModel {
 public:
  RandomInterceptPropensity(const Dataset& train, double ridge, double floor, int nodes)
      : floor_(floor), design_(train), rule_(gauss_hermite_normal(nodes)) {
    struct Unit {
      std::vector<double> z;
      int a;
    };
    std::vector<std::vector<Unit>> clusters;
    for (const auto& c : train.clusters()) {
      ExposureFeatures ef(c);
      std::vector<Unit> units;
      for (int j = 0; j < c.size(); ++j) units.push_back({design_.row(c, ef, j), c.a[j]});
      clusters.push_back(std::move(units));
    }
    const std::size_t d = clusters.front().front().z.size();
    const std::size_t Q = rule_.nodes.size();

    // Start from the independent fit.
    {
      std::vector<std::vector<double>> rows;
      std::vector<double> y;
      for (const auto& units : clusters)
        for (const auto& u : units) {
          rows.push_back(u.z);
          y.push_back(u.a);
        }
      std::vector<double> penalty(d, ridge);
      penalty[0] = 0.0;
      beta_ = fit_binomial_logistic(rows, y, std::vector<double>(rows.size(), 1.0), penalty);
    }
    sigma_ = 0.5;

    auto log_lik = [&](const std::vector<double>& beta, double sigma, std::vector<std::vector<double>>* post) {
      double total = 0.0;
      std::vector<double> lq(Q);
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        std::vector<double> eta;
        for (const auto& u : clusters[i]) eta.push_back(PropensityDesign::dot(beta, u.z));
        for (std::size_t q = 0; q < Q; ++q) {
          double l = std::log(rule_.weights[q]);
          for (std::size_t j = 0; j < eta.size(); ++j) {
            const double e = eta[j] + sigma * rule_.nodes[q];
            // log expit(e) or log(1 - expit(e))
            const double s = clusters[i][j].a ? -e : e;
            l -= s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
          }
          lq[q] = l;
        }
        const double mx = *std::max_element(lq.begin(), lq.end());
        double sum = 0.0;
        for (double v : lq) sum += std::exp(v - mx);
        total += mx + std::log(sum);
        if (post) {
          (*post)[i].resize(Q);
          for (std::size_t q = 0; q < Q; ++q) (*post)[i][q] = std::exp(lq[q] - mx) / sum;
        }
      }
      double pen = 0.0;
      for (std::size_t k = 1; k < d; ++k) pen += beta[k] * beta[k];
      return total - 0.5 * ridge * pen;
    };

    std::vector<std::vector<double>> post(clusters.size());
    double obj = log_lik(beta_, sigma_, &post);
    for (int it = 0; it < 200; ++it) {
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d + 1, d + 1);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d + 1);
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        for (const auto& u : clusters[i]) {
          const double eta = PropensityDesign::dot(beta_, u.z);
          double r0 = 0.0, r1 = 0.0, s0 = 0.0, s1 = 0.0, s2 = 0.0;
          for (std::size_t q = 0; q < Q; ++q) {
            const double w = post[i][q], zq = rule_.nodes[q];
            const double pr = expit(eta + sigma_ * zq);
            const double v = w * pr * (1.0 - pr);
            r0 += w * (u.a - pr);
            r1 += w * (u.a - pr) * zq;
            s0 += v;
            s1 += v * zq;
            s2 += v * zq * zq;
          }
          const Eigen::Map<const Eigen::VectorXd> z(u.z.data(), d);
          g.head(d) += r0 * z;
          g(d) += r1;
          H.topLeftCorner(d, d).noalias() += s0 * z * z.transpose();
          H.col(d).head(d) += s1 * z;
          H(d, d) += s2;
        }
      }
      H.row(d).head(d) = H.col(d).head(d).transpose();
      for (std::size_t k = 1; k < d; ++k) {
        g(k) -= ridge * beta_[k];
        H(k, k) += ridge;
      }
      H.diagonal().array() += 1e-10;
      const Eigen::VectorXd step = H.ldlt().solve(g);
      double scale = 1.0;
      std::vector<double> beta(d);
      double sigma = sigma_, next = obj;
      for (; scale > 1e-4; scale *= 0.5) {
        for (std::size_t k = 0; k < d; ++k) beta[k] = beta_[k] + scale * step(k);
        sigma = std::abs(sigma_ + scale * step(d));
        next = log_lik(beta, sigma, nullptr);
        if (next >= obj - 1e-12 * std::abs(obj)) break;
      }
      if (scale <= 1e-4) break;
      beta_ = beta;
      sigma_ = sigma;
      const double change = next - obj;
      obj = log_lik(beta_, sigma_, &post);
      if (std::abs(change) < 1e-9 * (std::abs(obj) + 1.0)) break;
    }
  }

  TreatmentDistribution distribution(const ClusterObservation& c) const override {
    ExposureFeatures ef(c);
    std::vector<double> eta(c.size());
    for (int j = 0; j < c.size(); ++j) eta[j] = PropensityDesign::dot(beta_, design_.row(c, ef, j));
    if (sigma_ < 1e-8) {
      for (double& v : eta) v = expit(v);
      return TreatmentDistribution::independent(std::move(eta), floor_);
    }
    std::vector<std::vector<double>> probs(rule_.nodes.size(), std::vector<double>(c.size()));
    for (std::size_t q = 0; q < rule_.nodes.size(); ++q)
      for (int j = 0; j < c.size(); ++j) probs[q][j] = expit(eta[j] + sigma_ * rule_.nodes[q]);
    return TreatmentDistribution::mixture(rule_.weights, std::move(probs), floor_);
  }

  std::string name() const override { return "logistic_random_intercept"; }
  double sigma() const { return sigma_; }

 private:
  double floor_;
  PropensityDesign design_;
  QuadratureRule rule_;
  std::vector<double> beta_;
  double sigma_ = 0.0;
};

class OraclePropensity : public PropensityModel {
 public:
  OraclePropensity(DgpConfig cfg, int nodes, double floor) : cfg_(std::move(cfg)), floor_(floor) {
    if (cfg_.b_sd() > 0.0) rule_ = gauss_hermite_normal(nodes);
  }

  TreatmentDistribution distribution(const ClusterObservation& c) const override {
    std::vector<double> lin(c.size());
    for (int j = 0; j < c.size(); ++j) lin[j] = dgp_linear_predictor(cfg_, c, j);
    const double sd = cfg_.b_sd();
    if (sd == 0.0) {
      for (double& v : lin) v = normal_cdf(v);
      return TreatmentDistribution::independent(std::move(lin), floor_);
    }
    std::vector<std::vector<double>> probs(rule_.nodes.size(), std::vector<double>(c.size()));
    for (std::size_t q = 0; q < rule_.nodes.size(); ++q)
      for (int j = 0; j < c.size(); ++j) probs[q][j] = normal_cdf(lin[j] + sd * rule_.nodes[q]);
    return TreatmentDistribution::mixture(rule_.weights, std::move(probs), floor_);
  }

  std::string name() const override { return "oracle"; }

 private:
  DgpConfig cfg_;
  double floor_;
  QuadratureRule rule_;
};

// ---------------------------------------------------------------- survival models

class ZeroHazardModel : public SurvivalModel {
 public:
  ZeroHazardModel(SurvivalTarget target, std::shared_ptr<const TimeGrid> grid)
      : SurvivalModel(target), grid_(std::move(grid)) {
    no_events_ = true;
  }
  SurvivalCurve curve(const ClusterObservation&, int, int, int) const override {
    return StepSurvival::from_hazards(grid_, std::vector<double>(grid_->size(), 0.0));
  }
  std::string name() const override { return "zero_hazard"; }

 private:
  std::shared_ptr<const TimeGrid> grid_;
};

class OracleSurvival : public SurvivalModel {
 public:
  OracleSurvival(SurvivalTarget target, DgpConfig cfg) : SurvivalModel(target), cfg_(std::move(cfg)) {}
  SurvivalCurve curve(const ClusterObservation& c, int j, int a_j, int k) const override {
    if (target_ == SurvivalTarget::event) return GammaSurvival{dgp_event_shape(cfg_, c, j, a_j, k), cfg_.event_scale};
    return GammaSurvival{dgp_censor_shape(cfg_, c, j, a_j, k), cfg_.censor_scale};
  }
  std::string name() const override { return "oracle"; }

 private:
  DgpConfig cfg_;
};

struct TrainingRows {
  std::vector<std::vector<double>> features;
  std::vector<RiskRecord> records;
  int events = 0;
};

TrainingRows training_rows(const Dataset& train, const TimeGrid& grid, SurvivalTarget target) {
  TrainingRows out;
  for (const auto& c : train.clusters()) {
    ExposureFeatures ef(c);
    const int k_all = c.treated_count();
    for (int j = 0; j < c.size(); ++j) {
      std::vector<double> f(ef.dimension());
      ef.fill(j, c.a[j], k_all - c.a[j], f);
      out.features.push_back(std::move(f));
      const auto rec = risk_record(grid, c.y[j], c.delta[j], target);
      out.records.push_back(rec);
      out.events += rec.event ? 1 : 0;
    }
  }
  return out;
}

class PooledLogisticHazard : public SurvivalModel {
 public:
  PooledLogisticHazard(const Dataset& train, SurvivalTarget target, std::shared_ptr<const TimeGrid> grid,
                       int max_bins, double ridge)
      : SurvivalModel(target), grid_(std::move(grid)) {
    const auto tr = training_rows(train, *grid_, target);
    const int L = static_cast<int>(grid_->size());
    std::vector<int> event_idx;
    for (const auto& r : tr.records)
      if (r.event) event_idx.push_back(r.exit);
    std::sort(event_idx.begin(), event_idx.end());
    const int E = static_cast<int>(event_idx.size());
    starts_.push_back(0);
    const int bins = std::max(1, std::min(max_bins, E));
    for (int b = 1; b < bins; ++b) {
      const int cut = event_idx[static_cast<std::size_t>(static_cast<long>(b) * E / bins)];
      if (cut > starts_.back()) starts_.push_back(cut);
    }
    starts_.push_back(L);
    const int B = static_cast<int>(starts_.size()) - 1;
    bin_of_.resize(L);
    for (int b = 0; b < B; ++b)
      for (int k = starts_[b]; k < starts_[b + 1]; ++k) bin_of_[k] = b;

    scaler_.fit(tr.features);
    const std::size_t d = tr.features.front().size();
    std::vector<std::vector<double>> rows;
    std::vector<double> succ, trials;
    for (std::size_t i = 0; i < tr.records.size(); ++i) {
      const auto& rec = tr.records[i];
      if (rec.exit < 0) continue;
      std::vector<double> z(1 + (B - 1) + d, 0.0);
      z[0] = 1.0;
      for (std::size_t k = 0; k < d; ++k) z[B + k] = scaler_.apply(k, tr.features[i][k]);
      for (int b = 0; b < B && starts_[b] <= rec.exit; ++b) {
        const int last = std::min(rec.exit, starts_[b + 1] - 1);
        auto row = z;
        if (b > 0) row[b] = 1.0;
        rows.push_back(std::move(row));
        trials.push_back(last - starts_[b] + 1);
        succ.push_back(rec.event && rec.exit <= last ? 1.0 : 0.0);
      }
    }
    std::vector<double> penalty(1 + (B - 1) + d, ridge);
    penalty[0] = 0.0;
    beta_ = fit_binomial_logistic(rows, succ, trials, penalty);
  }

  SurvivalCurve curve(const ClusterObservation& c, int j, int a_j, int k) const override {
    const auto hb = bin_hazards(c, j, a_j, k);
    std::vector<double> h(grid_->size());
    for (std::size_t g = 0; g < h.size(); ++g) h[g] = hb[bin_of_[g]];
    return StepSurvival::from_hazards(grid_, std::move(h));
  }

  void expected(const ClusterObservation& c, int j, int a_j, int k, std::span<const TransformSpec> transforms,
                std::span<double> out) const override {
    std::optional<SurvivalCurve> full;
    const auto hb = bin_hazards(c, j, a_j, k);
    for (std::size_t t = 0; t < transforms.size(); ++t) {
      if (transforms[t].kind == TransformKind::risk_at) {
        const int idx = static_cast<int>(grid_->count_at_or_below(transforms[t].horizon));
        double log_s = 0.0;
        for (std::size_t b = 0; b + 1 < starts_.size(); ++b) {
          const int cnt = std::clamp(idx - starts_[b], 0, starts_[b + 1] - starts_[b]);
          log_s += cnt * std::log1p(-hb[b]);
        }
        out[t] = 1.0 - std::exp(log_s);
      } else {
        if (!full) full = curve(c, j, a_j, k);
        out[t] = cisurv::expected(*full, transforms[t]);
      }
    }
  }

  std::string name() const override { return "discrete_hazard_logistic"; }

 private:
  std::vector<double> bin_hazards(const ClusterObservation& c, int j, int a_j, int k) const {
    ExposureFeatures ef(c);
    std::vector<double> f(ef.dimension());
    ef.fill(j, a_j, k, f);
    const int B = static_cast<int>(starts_.size()) - 1;
    double lin = beta_[0];
    for (std::size_t q = 0; q < f.size(); ++q) lin += beta_[B + q] * scaler_.apply(q, f[q]);
    std::vector<double> hb(B);
    for (int b = 0; b < B; ++b) hb[b] = expit(lin + (b > 0 ? beta_[b] : 0.0));
    return hb;
  }

  std::shared_ptr<const TimeGrid> grid_;
  std::vector<int> starts_;
  std::vector<int> bin_of_;
  Standardizer scaler_;
  std::vector<double> beta_;
};

// ---------------------------------------------------------------- forest

struct Leaf {
  std::vector<int> index;     // grid indices with a target event in the leaf
  std::vector<double> chf;    // cumulative Nelson–Aalen at those indices
  double at(int k) const {
    auto it = std::upper_bound(index.begin(), index.end(), k);
    return it == index.begin() ? 0.0 : chf[static_cast<std::size_t>(it - index.begin()) - 1];
  }
};

struct Node {
  int feature = -1;
  double cut = 0.0;
  int left = -1, right = -1;
  int leaf = -1;
};

struct Tree {
  std::vector<Node> nodes;
  std::vector<Leaf> leaves;

  const Leaf& find(std::span<const double> f) const {
    int i = 0;
    while (nodes[i].leaf < 0) i = f[nodes[i].feature] <= nodes[i].cut ? nodes[i].left : nodes[i].right;
    return leaves[nodes[i].leaf];
  }
};

class TreeBuilder {
 public:
  TreeBuilder(const TrainingRows& rows, const ForestParams& params, int mtry, RngStream& rng)
      : rows_(rows), params_(params), mtry_(mtry), rng_(rng), dim_(static_cast<int>(rows.features.front().size())) {}

  Tree build(std::vector<int> sample) {
    Tree t;
    grow(t, std::move(sample));
    return t;
  }

 private:
  int grow(Tree& t, std::vector<int> sample) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    int events = 0;
    for (int i : sample) events += rows_.records[i].event;
    const int s = static_cast<int>(sample.size());
    if (s >= 2 * params_.min_leaf && events > 0) {
      std::sort(sample.begin(), sample.end(),
                [&](int l, int r) { return rows_.records[l].exit > rows_.records[r].exit; });
      int best_f = -1;
      double best_cut = 0.0, best_stat = -1.0;
      std::vector<int> feats(dim_);
      std::iota(feats.begin(), feats.end(), 0);
      std::vector<char> left(s);
      for (int m = 0; m < std::min(mtry_, dim_); ++m) {
        std::swap(feats[m], feats[m + rng_.below(dim_ - m)]);
        const int f = feats[m];
        double lo = rows_.features[sample[0]][f], hi = lo;
        for (int i : sample) {
          lo = std::min(lo, rows_.features[i][f]);
          hi = std::max(hi, rows_.features[i][f]);
        }
        if (!(hi > lo)) continue;
        for (int c = 0; c < params_.nsplit; ++c) {
          const double cut = rows_.features[sample[rng_.below(s)]][f];
          if (cut >= hi) continue;
          int nl = 0;
          for (int i = 0; i < s; ++i) {
            left[i] = rows_.features[sample[i]][f] <= cut;
            nl += left[i];
          }
          if (nl < params_.min_leaf || s - nl < params_.min_leaf) continue;
          const double stat = logrank(sample, left);
          if (stat > best_stat) {
            best_stat = stat;
            best_f = f;
            best_cut = cut;
          }
        }
      }
      if (best_f >= 0) {
        std::vector<int> l, r;
        for (int i : sample) (rows_.features[i][best_f] <= best_cut ? l : r).push_back(i);
        t.nodes[id].feature = best_f;
        t.nodes[id].cut = best_cut;
        const int li = grow(t, std::move(l));
        t.nodes[id].left = li;
        const int ri = grow(t, std::move(r));
        t.nodes[id].right = ri;
        return id;
      }
    }
    t.nodes[id].leaf = static_cast<int>(t.leaves.size());
    t.leaves.push_back(nelson_aalen(sample));
    return id;
  }

  // sample is sorted by exit index, descending.
  double logrank(const std::vector<int>& sample, const std::vector<char>& left) const {
    double num = 0.0, var = 0.0;
    double Y = 0.0, YL = 0.0;
    std::size_t i = 0;
    while (i < sample.size()) {
      const int k = rows_.records[sample[i]].exit;
      double d = 0.0, dL = 0.0;
      for (; i < sample.size() && rows_.records[sample[i]].exit == k; ++i) {
        Y += 1.0;
        YL += left[i];
        if (rows_.records[sample[i]].event) {
          d += 1.0;
          dL += left[i];
        }
      }
      if (d > 0.0 && Y > 1.0) {
        num += dL - YL * d / Y;
        var += YL / Y * (1.0 - YL / Y) * (Y - d) / (Y - 1.0) * d;
      }
    }
    return var > 0.0 ? std::abs(num) / std::sqrt(var) : 0.0;
  }

  Leaf nelson_aalen(const std::vector<int>& sample) const {
    std::vector<std::pair<int, int>> recs;  // (exit, event)
    for (int i : sample) recs.emplace_back(rows_.records[i].exit, rows_.records[i].event);
    std::sort(recs.begin(), recs.end());
    Leaf leaf;
    double cum = 0.0;
    std::size_t i = 0;
    const std::size_t n = recs.size();
    while (i < n) {
      const int k = recs[i].first;
      const double at_risk = static_cast<double>(n - i);
      int d = 0;
      for (; i < n && recs[i].first == k; ++i) d += recs[i].second;
      if (d > 0 && k >= 0) {
        cum += d / at_risk;
        leaf.index.push_back(k);
        leaf.chf.push_back(cum);
      }
    }
    return leaf;
  }

  const TrainingRows& rows_;
  const ForestParams& params_;
  int mtry_;
  RngStream& rng_;
  int dim_;
};

class SurvivalForest : public SurvivalModel {
 public:
  SurvivalForest(const Dataset& train, SurvivalTarget target, std::shared_ptr<const TimeGrid> grid,
                 const ForestParams& params, std::uint64_t seed)
      : SurvivalModel(target), grid_(std::move(grid)) {
    const auto rows = training_rows(train, *grid_, target);
    const int dim = static_cast<int>(rows.features.front().size());
    const int mtry = params.mtry > 0 ? params.mtry : static_cast<int>(std::ceil(std::sqrt(dim)));
    const int n = static_cast<int>(rows.records.size());
    trees_.reserve(params.trees);
    for (int b = 0; b < params.trees; ++b) {
      RngStream rng(seed, {stable_hash("forest"), static_cast<std::uint64_t>(target), static_cast<std::uint64_t>(b)});
      std::vector<int> sample(n);
      for (int& s : sample) s = static_cast<int>(rng.below(n));
      TreeBuilder builder(rows, params, mtry, rng);
      trees_.push_back(builder.build(std::move(sample)));
    }
  }

  SurvivalCurve curve(const ClusterObservation& c, int j, int a_j, int k) const override {
    const auto f = features(c, j, a_j, k);
    std::vector<double> dchf(grid_->size(), 0.0);
    for (const auto& t : trees_) {
      const Leaf& leaf = t.find(f);
      double prev = 0.0;
      for (std::size_t e = 0; e < leaf.index.size(); ++e) {
        dchf[leaf.index[e]] += leaf.chf[e] - prev;
        prev = leaf.chf[e];
      }
    }
    const double inv = 1.0 / trees_.size();
    for (double& v : dchf) v = -std::expm1(-v * inv);
    return StepSurvival::from_hazards(grid_, std::move(dchf));
  }

  void expected(const ClusterObservation& c, int j, int a_j, int k, std::span<const TransformSpec> transforms,
                std::span<double> out) const override {
    bool all_risk = true;
    for (const auto& t : transforms) all_risk = all_risk && t.kind == TransformKind::risk_at;
    if (!all_risk) {
      SurvivalModel::expected(c, j, a_j, k, transforms, out);
      return;
    }
    const auto f = features(c, j, a_j, k);
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : trees_) {
      const Leaf& leaf = t.find(f);
      for (std::size_t q = 0; q < transforms.size(); ++q) {
        const int idx = static_cast<int>(grid_->count_at_or_below(transforms[q].horizon)) - 1;
        out[q] += leaf.at(idx);
      }
    }
    // S(tau) = exp(-mean CHF(tau)) because each grid hazard is 1 - exp(-dCHF).
    for (double& v : out) v = -std::expm1(-v / trees_.size());
  }

  std::string name() const override { return "survival_forest"; }

 private:
  std::vector<double> features(const ClusterObservation& c, int j, int a_j, int k) const {
    ExposureFeatures ef(c);
    std::vector<double> f(ef.dimension());
    ef.fill(j, a_j, k, f);
    return f;
  }

  std::shared_ptr<const TimeGrid> grid_;
  std::vector<Tree> trees_;
};

}  // namespace

// ---------------------------------------------------------------- public API

std::string to_string(PropensityLearner l) {
  switch (l) {
    case PropensityLearner::logistic_penalized: return "logistic_penalized";
    case PropensityLearner::logistic_random_intercept: return "logistic_random_intercept";
    case PropensityLearner::oracle: return "oracle";
  }
  return "?";
}

std::string to_string(SurvivalLearner l) {
  switch (l) {
    case SurvivalLearner::discrete_hazard_logistic: return "discrete_hazard_logistic";
    case SurvivalLearner::survival_forest: return "survival_forest";
    case SurvivalLearner::oracle: return "oracle";
  }
  return "?";
}

PropensityLearner parse_propensity_learner(const std::string& s) {
  if (s == "logistic_penalized" || s == "logistic") return PropensityLearner::logistic_penalized;
  if (s == "logistic_random_intercept" || s == "random_intercept") return PropensityLearner::logistic_random_intercept;
  if (s == "oracle") return PropensityLearner::oracle;
  throw Error(ErrorCode::invalid_argument, "unknown propensity learner '" + s + "'");
}

SurvivalLearner parse_survival_learner(const std::string& s) {
  if (s == "discrete_hazard_logistic" || s == "pooled_logistic") return SurvivalLearner::discrete_hazard_logistic;
  if (s == "survival_forest" || s == "forest") return SurvivalLearner::survival_forest;
  if (s == "oracle") return SurvivalLearner::oracle;
  throw Error(ErrorCode::invalid_argument, "unknown survival learner '" + s + "'");
}

std::shared_ptr<const PropensityModel> fit_propensity(const Dataset& train, const LearnerConfig& cfg,
                                                      std::uint64_t) {
  if (cfg.propensity == PropensityLearner::oracle) {
    if (!cfg.dgp) throw Error(ErrorCode::invalid_argument, "the oracle learner needs a DGP configuration");
    return std::make_shared<OraclePropensity>(*cfg.dgp, cfg.oracle_b_nodes, cfg.pi_floor);
  }
  if (train.empty()) throw Error(ErrorCode::empty_dataset, "cannot fit a propensity model to no clusters");
  double treated = 0.0, total = 0.0;
  for (const auto& c : train.clusters()) {
    treated += c.treated_count();
    total += c.size();
  }
  if (treated == 0.0 || treated == total) {
    return std::make_shared<ConstantPropensity>(treated / total, cfg.pi_floor);
  }
  if (cfg.propensity == PropensityLearner::logistic_random_intercept) {
    return std::make_shared<RandomInterceptPropensity>(train, cfg.ridge, cfg.pi_floor, cfg.random_intercept_nodes);
  }
  return std::make_shared<LogisticPropensity>(train, cfg.ridge, cfg.pi_floor);
}

std::shared_ptr<const SurvivalModel> fit_survival(const Dataset& train, SurvivalTarget target,
                                                  const LearnerConfig& cfg, std::shared_ptr<const TimeGrid> grid,
                                                  std::uint64_t seed) {
  if (cfg.survival == SurvivalLearner::oracle) {
    if (!cfg.dgp) throw Error(ErrorCode::invalid_argument, "the oracle learner needs a DGP configuration");
    return std::make_shared<OracleSurvival>(target, *cfg.dgp);
  }
  if (train.empty()) throw Error(ErrorCode::empty_dataset, "cannot fit a survival model to no clusters");
  if (!grid || grid->size() == 0) throw Error(ErrorCode::invalid_argument, "survival learners need a time grid");
  bool any = false;
  for (const auto& c : train.clusters()) {
    for (int j = 0; j < c.size() && !any; ++j) any = risk_record(*grid, c.y[j], c.delta[j], target).event;
    if (any) break;
  }
  if (!any) return std::make_shared<ZeroHazardModel>(target, grid);
  if (cfg.survival == SurvivalLearner::discrete_hazard_logistic) {
    return std::make_shared<PooledLogisticHazard>(train, target, grid, cfg.hazard_bins, cfg.hazard_ridge);
  }
  return std::make_shared<SurvivalForest>(train, target, grid, cfg.forest, seed);
}

double cluster_prob(const PropensityModel& model, std::span<const int> a, const ClusterObservation& c) {
  if (static_cast<int>(a.size()) != c.size()) throw Error(ErrorCode::length_mismatch, "allocation length");
  return model.distribution(c).prob(to_allocation(a));
}

std::vector<double> treated_count_tail(const PropensityModel& model, const ClusterObservation& c) {
  return model.distribution(c).count_tail();
}

double survival_at(const SurvivalModel& model, const ClusterObservation& c, int j, int a_j, int k_others, double r,
                   double s_floor) {
  return std::max(survival(model.curve(c, j, a_j, k_others), r), s_floor);
}

NuisanceBundle fit_nuisance(const Dataset& train, const LearnerConfig& cfg, std::shared_ptr<const TimeGrid> grid,
                            std::uint64_t seed, int fold) {
  NuisanceBundle b;
  b.propensity = fit_propensity(train, cfg, seed);
  b.event = fit_survival(train, SurvivalTarget::event, cfg, grid, splitmix64(seed ^ 0x6576656e74ULL));
  b.censor = fit_survival(train, SurvivalTarget::censoring, cfg, grid, splitmix64(seed ^ 0x63656e736fULL));
  b.fold = fold;
  b.s_floor = cfg.s_floor;
  b.tail_floor = cfg.tail_floor;
  return b;
}

}  // namespace cisurv
