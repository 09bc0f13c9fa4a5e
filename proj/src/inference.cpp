#include "cisurv/inference.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "cisurv/error.hpp"
#include "cisurv/rng.hpp"
#include "cisurv/special.hpp"

namespace cisurv {

std::pair<double, double> pointwise_ci(const EstimateResult& r, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::invalid_argument, "level must lie in (0, 1)");
  const double z = normal_quantile(0.5 + level / 2.0);
  return {r.point - z * r.se, r.point + z * r.se};
}

double ucb_quantile(std::vector<double> suprema, double level) {
  if (suprema.empty()) throw Error(ErrorCode::invalid_argument, "no bootstrap draws");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::invalid_argument, "level must lie in (0, 1)");
  const std::size_t B = suprema.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(level * static_cast<double>(B) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, B);
  std::nth_element(suprema.begin(), suprema.begin() + (rank - 1), suprema.end());
  return suprema[rank - 1];
}

UCBResult ucb_critical_value(const InfluenceTable& table, std::span<const EstimateResult> estimates, int B,
                             double level, std::uint64_t seed, int jobs) {
  if (B < 100) throw Error(ErrorCode::invalid_argument, "at least 100 bootstrap draws are required");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::invalid_argument, "level must lie in (0, 1)");
  const std::size_t G = table.columns(), m = table.rows();
  if (estimates.size() != G) throw Error(ErrorCode::length_mismatch, "one estimate per table column is required");
  if (G == 0 || m == 0) throw Error(ErrorCode::invalid_argument, "empty influence table");

  std::vector<double> center(G), scale(G);
  for (std::size_t g = 0; g < G; ++g) {
    center[g] = table.point(g);
    const double sigma = std::sqrt(std::max(table.variance(g), 0.0));
    if (!(sigma > 0.0) || !(estimates[g].sigma > 0.0)) {
      throw Error(ErrorCode::zero_variance, fmt::format("zero variance for {}", table.specs[g].label()));
    }
    scale[g] = sigma / std::sqrt(static_cast<double>(m));
  }
  std::vector<double> fold_size(table.K, 0.0);
  for (int f : table.folds) fold_size[f - 1] += 1.0;
  // coefficient of xi_i: (phi_i - center) / (K m_k), per column
  std::vector<double> coef(m * G);
  for (std::size_t i = 0; i < m; ++i) {
    const double c = 1.0 / (table.K * fold_size[table.folds[i] - 1]);
    for (std::size_t g = 0; g < G; ++g) coef[i * G + g] = c * (table.values[i][g] - center[g]) / scale[g];
  }

  UCBResult out;
  out.B = B;
  out.level = level;
  out.suprema.assign(B, 0.0);
  auto draw = [&](int b) {
    RngStream rng(seed, {0x75636200ULL, static_cast<std::uint64_t>(b)});
    std::vector<double> acc(G, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double xi = (rng() >> 63) ? 1.0 : -1.0;
      const double* row = &coef[i * G];
      for (std::size_t g = 0; g < G; ++g) acc[g] += xi * row[g];
    }
    double sup = 0.0;
    for (double v : acc) sup = std::max(sup, std::abs(v));
    out.suprema[b] = sup;
  };
  const int workers = std::clamp(jobs, 1, B);
  if (workers == 1) {
    for (int b = 0; b < B; ++b) draw(b);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int b = w; b < B; b += workers) draw(b);
      });
    for (auto& t : pool) t.join();
  }
  out.critical = ucb_quantile(out.suprema, level);
  for (std::size_t g = 0; g < G; ++g) {
    const auto& e = estimates[g];
    out.grid.push_back(e.estimand);
    out.point.push_back(e.point);
    out.se.push_back(e.se);
    out.lo.push_back(e.point - out.critical * e.se);
    out.hi.push_back(e.point + out.critical * e.se);
  }
  return out;
}

std::string to_string(InterferenceDecision d) {
  return d == InterferenceDecision::reject ? "reject" : "fail_to_reject";
}

InterferenceDecision interference_test(const UCBResult& ucb) {
  if (ucb.lo.size() < 2) throw Error(ErrorCode::invalid_argument, "the interference test needs at least two grid points");
  const double max_lo = *std::max_element(ucb.lo.begin(), ucb.lo.end());
  const double min_hi = *std::min_element(ucb.hi.begin(), ucb.hi.end());
  return max_lo > min_hi ? InterferenceDecision::reject : InterferenceDecision::fail_to_reject;
}

}  // namespace cisurv
