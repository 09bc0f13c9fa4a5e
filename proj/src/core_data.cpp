#include "cisurv/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include "json.hpp"

#include "cisurv/error.hpp"
#include "cisurv/rng.hpp"

namespace cisurv {

// ---------------------------------------------------------------- transforms

TransformSpec TransformSpec::risk_at(double tau) { return {TransformKind::risk_at, tau}; }
TransformSpec TransformSpec::rmst(double h) { return {TransformKind::rmst, h}; }
TransformSpec TransformSpec::identity() { return {TransformKind::identity, 0.0}; }

void TransformSpec::validate() const {
  if (kind != TransformKind::identity && !(horizon > 0.0 && std::isfinite(horizon))) {
    throw Error(ErrorCode::invalid_argument, "transform horizon must be finite and positive");
  }
}

double TransformSpec::operator()(double t) const {
  switch (kind) {
    case TransformKind::risk_at: return t <= horizon ? 1.0 : 0.0;
    case TransformKind::rmst: return std::min(t, horizon);
    case TransformKind::identity: return t;
  }
  return 0.0;
}

double TransformSpec::tail_value(double last_point) const {
  switch (kind) {
    case TransformKind::risk_at: return 0.0;
    case TransformKind::rmst: return horizon;
    case TransformKind::identity: return last_point;
  }
  return 0.0;
}

std::string TransformSpec::label() const {
  switch (kind) {
    case TransformKind::risk_at: return fmt::format("risk({:g})", horizon);
    case TransformKind::rmst: return fmt::format("rmst({:g})", horizon);
    case TransformKind::identity: return "identity";
  }
  return "?";
}

// ---------------------------------------------------------------- estimands

std::string to_string(EstimandKind kind) {
  switch (kind) {
    case EstimandKind::mu: return "mu";
    case EstimandKind::mu1: return "mu1";
    case EstimandKind::mu0: return "mu0";
    case EstimandKind::de: return "de";
    case EstimandKind::se1: return "se1";
    case EstimandKind::se0: return "se0";
    case EstimandKind::oe: return "oe";
  }
  return "?";
}

EstimandKind parse_estimand_kind(const std::string& name) {
  static const std::map<std::string, EstimandKind> names = {
      {"mu", EstimandKind::mu},   {"mu1", EstimandKind::mu1}, {"mu0", EstimandKind::mu0},
      {"de", EstimandKind::de},   {"se1", EstimandKind::se1}, {"se0", EstimandKind::se0},
      {"oe", EstimandKind::oe}};
  auto it = names.find(name);
  if (it == names.end()) throw Error(ErrorCode::invalid_argument, "unknown estimand '" + name + "'");
  return it->second;
}

bool is_contrast_over_policies(EstimandKind kind) {
  return kind == EstimandKind::se1 || kind == EstimandKind::se0 || kind == EstimandKind::oe;
}

void EstimandSpec::validate() const {
  transform.validate();
  policy.validate();
  if (is_contrast_over_policies(kind)) {
    if (!reference) {
      throw Error(ErrorCode::invalid_argument, to_string(kind) + " needs a reference policy");
    }
    reference->validate();
    if (reference->family != policy.family) {
      throw Error(ErrorCode::invalid_argument, "policy contrasts must stay within one family");
    }
  }
}

std::string EstimandSpec::label() const {
  std::string s = fmt::format("{}[{}; {}", to_string(kind), transform.label(), policy.label());
  if (reference) s += fmt::format(" vs {}", reference->label());
  return s + "]";
}

// ---------------------------------------------------------------- clusters

int ClusterObservation::treated_count() const { return std::accumulate(a.begin(), a.end(), 0); }

void ClusterObservation::validate(int n_max) const {
  const std::size_t n = y.size();
  if (n == 0) throw Error(ErrorCode::empty_dataset, "cluster '" + cluster_id + "' has no units");
  if (delta.size() != n || a.size() != n || x.size() != n * static_cast<std::size_t>(p)) {
    throw Error(ErrorCode::ragged_cluster, "cluster '" + cluster_id + "' has ragged arrays");
  }
  if (static_cast<int>(n) > n_max) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("cluster '{}' has {} units, above the cap {}", cluster_id, n, n_max));
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(y[j]) || y[j] < 0.0) {
      throw Error(ErrorCode::negative_time, "cluster '" + cluster_id + "' has a negative or non-finite time");
    }
    if ((delta[j] != 0 && delta[j] != 1) || (a[j] != 0 && a[j] != 1)) {
      throw Error(ErrorCode::non_binary_field, "cluster '" + cluster_id + "' has a non-binary indicator");
    }
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "non-finite covariate");
  }
}

Dataset::Dataset(std::vector<ClusterObservation> clusters, int n_max) : clusters_(std::move(clusters)) {
  if (clusters_.empty()) throw Error(ErrorCode::empty_dataset, "no clusters");
  p_ = clusters_.front().p;
  std::unordered_set<std::string> ids;
  for (const auto& c : clusters_) {
    if (c.p != p_) throw Error(ErrorCode::ragged_cluster, "covariate dimension differs across clusters");
    c.validate(n_max);
    if (!ids.insert(c.cluster_id).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate cluster id '" + c.cluster_id + "'");
    }
  }
}

std::size_t Dataset::total_units() const {
  std::size_t total = 0;
  for (const auto& c : clusters_) total += c.y.size();
  return total;
}

int Dataset::fold_count() const {
  return folds_.empty() ? 0 : *std::max_element(folds_.begin(), folds_.end());
}

void Dataset::set_folds(std::vector<int> folds) {
  if (folds.size() != clusters_.size()) {
    throw Error(ErrorCode::length_mismatch, "one fold label per cluster is required");
  }
  for (int f : folds) {
    if (f < 1) throw Error(ErrorCode::invalid_argument, "fold labels start at 1");
  }
  folds_ = std::move(folds);
}

Dataset Dataset::subset(std::span<const std::size_t> positions) const {
  Dataset out;
  out.p_ = p_;
  out.clusters_.reserve(positions.size());
  for (auto i : positions) {
    out.clusters_.push_back(clusters_.at(i));
    if (!folds_.empty()) out.folds_.push_back(folds_[i]);
  }
  return out;
}

// ---------------------------------------------------------------- grid

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (!std::isfinite(points_[k]) || (k > 0 && !(points_[k] > points_[k - 1]))) {
      throw Error(ErrorCode::invalid_argument, "time grid must be finite and strictly increasing");
    }
  }
}

std::optional<std::size_t> TimeGrid::index_of(double t) const {
  auto it = std::lower_bound(points_.begin(), points_.end(), t);
  if (it == points_.end() || *it != t) return std::nullopt;
  return static_cast<std::size_t>(it - points_.begin());
}

std::size_t TimeGrid::count_at_or_below(double r) const {
  return static_cast<std::size_t>(std::upper_bound(points_.begin(), points_.end(), r) - points_.begin());
}

TimeGrid build_time_grid(const Dataset& ds) {
  if (ds.empty()) throw Error(ErrorCode::empty_dataset, "cannot build a grid from no clusters");
  std::vector<double> t;
  t.reserve(ds.total_units());
  for (const auto& c : ds.clusters()) t.insert(t.end(), c.y.begin(), c.y.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return TimeGrid(std::move(t));
}

Dataset assign_folds(const Dataset& ds, int K, std::uint64_t seed) {
  if (K < 2) throw Error(ErrorCode::invalid_argument, "need at least two folds");
  if (ds.size() < static_cast<std::size_t>(K)) {
    throw Error(ErrorCode::too_few_clusters, fmt::format("{} clusters for {} folds", ds.size(), K));
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed, {0x666f6c64ULL});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<int> folds(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) folds[order[i]] = static_cast<int>(i % K) + 1;
  Dataset out = ds;
  out.set_folds(std::move(folds));
  return out;
}

// ---------------------------------------------------------------- io

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    while (!cur.empty() && cur.front() == ' ') cur.erase(cur.begin());
    fields.push_back(cur);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("cannot parse {} '{}'", what, s));
  }
  return v;
}

int parse_binary(const std::string& s, const char* what) {
  const double v = parse_double(s, what);
  if (v != 0.0 && v != 1.0) {
    throw Error(ErrorCode::non_binary_field, fmt::format("{} must be 0 or 1, got '{}'", what, s));
  }
  return static_cast<int>(v);
}

struct PendingUnit {
  std::string unit_id;
  double y;
  int delta;
  int a;
  std::vector<double> x;
};

bool all_numeric(const std::vector<PendingUnit>& units) {
  for (const auto& u : units) {
    double v;
    auto [ptr, ec] = std::from_chars(u.unit_id.data(), u.unit_id.data() + u.unit_id.size(), v);
    if (ec != std::errc() || ptr != u.unit_id.data() + u.unit_id.size()) return false;
  }
  return true;
}

}  // namespace

Dataset read_csv(std::istream& in, int n_max) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::empty_dataset, "CSV has no header");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::missing_column, "CSV lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column("cluster_id"), c_unit = column("unit_id"), c_time = column("time"),
                    c_event = column("event"), c_trt = column("treatment");
  std::vector<std::pair<int, std::size_t>> covariates;  // (index in xN, column)
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h.size() > 1 && h[0] == 'x' && std::all_of(h.begin() + 1, h.end(), ::isdigit)) {
      covariates.emplace_back(std::stoi(h.substr(1)), c);
    }
  }
  std::sort(covariates.begin(), covariates.end());
  for (std::size_t i = 0; i < covariates.size(); ++i) {
    if (covariates[i].first != static_cast<int>(i) + 1) {
      throw Error(ErrorCode::missing_column, fmt::format("CSV lacks column 'x{}'", i + 1));
    }
  }
  const int p = static_cast<int>(covariates.size());

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<PendingUnit>> groups;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw Error(ErrorCode::ragged_cluster, fmt::format("line {} has {} fields, header has {}",
                                                         line_no, f.size(), header.size()));
    }
    PendingUnit u;
    u.unit_id = f[c_unit];
    u.y = parse_double(f[c_time], "time");
    if (!(u.y >= 0.0) || !std::isfinite(u.y)) {
      throw Error(ErrorCode::negative_time, fmt::format("line {} has time '{}'", line_no, f[c_time]));
    }
    u.delta = parse_binary(f[c_event], "event");
    u.a = parse_binary(f[c_trt], "treatment");
    u.x.reserve(p);
    for (const auto& [idx, c] : covariates) u.x.push_back(parse_double(f[c], "covariate"));
    auto [it, inserted] = groups.try_emplace(f[c_id]);
    if (inserted) order.push_back(f[c_id]);
    it->second.push_back(std::move(u));
  }
  if (order.empty()) throw Error(ErrorCode::empty_dataset, "CSV has no rows");

  std::vector<ClusterObservation> clusters;
  clusters.reserve(order.size());
  for (const auto& id : order) {
    auto& units = groups[id];
    if (all_numeric(units)) {
      std::stable_sort(units.begin(), units.end(), [](const auto& l, const auto& r) {
        return std::stod(l.unit_id) < std::stod(r.unit_id);
      });
    } else {
      std::stable_sort(units.begin(), units.end(),
                       [](const auto& l, const auto& r) { return l.unit_id < r.unit_id; });
    }
    ClusterObservation c;
    c.cluster_id = id;
    c.p = p;
    for (auto& u : units) {
      c.y.push_back(u.y);
      c.delta.push_back(u.delta);
      c.a.push_back(u.a);
      c.x.insert(c.x.end(), u.x.begin(), u.x.end());
    }
    clusters.push_back(std::move(c));
  }
  return Dataset(std::move(clusters), n_max);
}

Dataset read_jsonl(std::istream& in, int n_max) {
  std::vector<ClusterObservation> clusters;
  std::string line;
  int p = -1;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::io_error, std::string("malformed JSONL line: ") + e.what());
    }
    for (const char* key : {"cluster_id", "y", "delta", "a", "x"}) {
      if (!j.contains(key)) throw Error(ErrorCode::missing_column, std::string("JSONL object lacks '") + key + "'");
    }
    ClusterObservation c;
    c.cluster_id = j["cluster_id"].is_string() ? j["cluster_id"].get<std::string>() : j["cluster_id"].dump();
    c.y = j["y"].get<std::vector<double>>();
    for (double v : j["delta"].get<std::vector<double>>()) {
      if (v != 0.0 && v != 1.0) throw Error(ErrorCode::non_binary_field, "delta must be 0 or 1");
      c.delta.push_back(static_cast<int>(v));
    }
    for (double v : j["a"].get<std::vector<double>>()) {
      if (v != 0.0 && v != 1.0) throw Error(ErrorCode::non_binary_field, "a must be 0 or 1");
      c.a.push_back(static_cast<int>(v));
    }
    const auto rows = j["x"].get<std::vector<std::vector<double>>>();
    for (const auto& row : rows) {
      if (p < 0) p = static_cast<int>(row.size());
      if (static_cast<int>(row.size()) != p) {
        throw Error(ErrorCode::ragged_cluster, "covariate rows have inconsistent length");
      }
      c.x.insert(c.x.end(), row.begin(), row.end());
    }
    c.p = std::max(p, 0);
    if (rows.size() != c.y.size()) throw Error(ErrorCode::ragged_cluster, "x has the wrong number of rows");
    for (double v : c.y) {
      if (!(v >= 0.0)) throw Error(ErrorCode::negative_time, "negative time in cluster '" + c.cluster_id + "'");
    }
    clusters.push_back(std::move(c));
  }
  if (clusters.empty()) throw Error(ErrorCode::empty_dataset, "JSONL has no clusters");
  return Dataset(std::move(clusters), n_max);
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format, int n_max) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open data file '" + path.string() + "'");
  return format == DataFormat::csv ? read_csv(in, n_max) : read_jsonl(in, n_max);
}

void write_csv(const Dataset& ds, std::ostream& out) {
  out << "cluster_id,unit_id,time,event,treatment";
  for (int k = 1; k <= ds.p(); ++k) out << ",x" << k;
  out << '\n';
  for (const auto& c : ds.clusters()) {
    for (int j = 0; j < c.size(); ++j) {
      out << fmt::format("{},{},{:.17g},{},{}", c.cluster_id, j + 1, c.y[j], c.delta[j], c.a[j]);
      for (double v : c.x_row(j)) out << fmt::format(",{:.17g}", v);
      out << '\n';
    }
  }
}

void write_jsonl(const Dataset& ds, std::ostream& out) {
  for (const auto& c : ds.clusters()) {
    out << "{\"cluster_id\":" << nlohmann::json(c.cluster_id).dump() << ",\"y\":[";
    for (int j = 0; j < c.size(); ++j) out << (j ? "," : "") << fmt::format("{:.17g}", c.y[j]);
    out << "],\"delta\":[";
    for (int j = 0; j < c.size(); ++j) out << (j ? "," : "") << c.delta[j];
    out << "],\"a\":[";
    for (int j = 0; j < c.size(); ++j) out << (j ? "," : "") << c.a[j];
    out << "],\"x\":[";
    for (int j = 0; j < c.size(); ++j) {
      out << (j ? "," : "") << '[';
      auto row = c.x_row(j);
      for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << fmt::format("{:.17g}", row[k]);
      out << ']';
    }
    out << "]}\n";
  }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path, DataFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path.string() + "'");
  format == DataFormat::csv ? write_csv(ds, out) : write_jsonl(ds, out);
}

}  // namespace cisurv
