#include "cisurv/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "json.hpp"

#include "cisurv/error.hpp"
#include "cisurv/inference.hpp"
#include "cisurv/rng.hpp"
#include "cisurv/simulator.hpp"

namespace cisurv {

using nlohmann::json;

// ---------------------------------------------------------------- names

std::string to_string(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::fit: return "fit";
    case Command::ucb: return "ucb";
    case Command::reproduce: return "reproduce";
  }
  return "?";
}

Command parse_command(const std::string& s) {
  if (s == "simulate") return Command::simulate;
  if (s == "fit") return Command::fit;
  if (s == "ucb") return Command::ucb;
  if (s == "reproduce") return Command::reproduce;
  throw Error(ErrorCode::invalid_argument, "unknown command '" + s + "'");
}

std::string to_string(ReproduceTarget t) { return t == ReproduceTarget::table3 ? "table3" : "tableS1"; }

ReproduceTarget parse_reproduce_target(const std::string& s) {
  if (s == "table3") return ReproduceTarget::table3;
  if (s == "tableS1" || s == "tables1" || s == "table_s1") return ReproduceTarget::table_s1;
  throw Error(ErrorCode::invalid_argument, "unknown reproduce target '" + s + "'");
}

namespace {

std::string transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::risk_at: return "risk";
    case TransformKind::rmst: return "rmst";
    case TransformKind::identity: return "identity";
  }
  return "?";
}

TransformKind parse_transform(const std::string& s) {
  if (s == "risk" || s == "risk_at") return TransformKind::risk_at;
  if (s == "rmst") return TransformKind::rmst;
  if (s == "identity") return TransformKind::identity;
  throw Error(ErrorCode::invalid_argument, "unknown transform '" + s + "'");
}

std::string n_dist_name(ClusterSizeDistribution::Kind k) {
  switch (k) {
    case ClusterSizeDistribution::Kind::uniform_range: return "uniform";
    case ClusterSizeDistribution::Kind::negative_binomial: return "negative_binomial";
    case ClusterSizeDistribution::Kind::fixed: return "fixed";
  }
  return "?";
}

ClusterSizeDistribution::Kind parse_n_dist(const std::string& s) {
  if (s == "uniform") return ClusterSizeDistribution::Kind::uniform_range;
  if (s == "negative_binomial") return ClusterSizeDistribution::Kind::negative_binomial;
  if (s == "fixed") return ClusterSizeDistribution::Kind::fixed;
  throw Error(ErrorCode::invalid_argument, "unknown cluster size distribution '" + s + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_argument, msg); };
  if (K < 2) fail("K must be at least 2");
  if (S < 1) fail("S must be at least 1");
  if (r < 1) fail("r must be at least 1");
  if (B < 100) fail("B must be at least 100");
  if (!(level > 0.0 && level < 1.0)) fail("level must lie in (0, 1)");
  if (jobs < 1) fail("jobs must be at least 1");
  if (command == Command::fit || command == Command::ucb || command == Command::reproduce) {
    if (estimands.empty()) fail("the estimand list is empty");
    if (theta.empty()) fail("the policy grid is empty");
    if (transform != TransformKind::identity && tau.empty()) fail("the horizon grid is empty");
    for (const auto& e : estimands) parse_estimand_kind(e);
    for (double t : theta) PolicySpec{policy, t}.validate();
  }
  if (command == Command::reproduce && replications < 1) fail("replications must be at least 1");
  dgp.validate();
}

void apply_config_json(RunConfig& cfg, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  try {
    if (j.contains("command")) cfg.command = parse_command(j["command"].get<std::string>());
    if (j.contains("data")) cfg.data = j["data"].get<std::string>();
    if (j.contains("data_format")) cfg.data_format = j["data_format"] == "jsonl" ? DataFormat::jsonl : DataFormat::csv;
    read(j, "estimands", cfg.estimands);
    if (j.contains("policy")) cfg.policy = parse_policy_family(j["policy"].get<std::string>());
    read(j, "theta", cfg.theta);
    read(j, "reference", cfg.reference);
    if (j.contains("transform")) cfg.transform = parse_transform(j["transform"].get<std::string>());
    read(j, "tau", cfg.tau);
    read(j, "K", cfg.K);
    read(j, "S", cfg.S);
    read(j, "r", cfg.r);
    if (j.contains("mode")) cfg.mode = parse_sum_mode(j["mode"].get<std::string>());
    read(j, "bounded", cfg.bounded);
    read(j, "B", cfg.B);
    read(j, "level", cfg.level);
    read(j, "seed", cfg.seed);
    read(j, "jobs", cfg.jobs);
    if (j.contains("out")) cfg.out = j["out"].get<std::string>();
    if (j.contains("format")) cfg.format = j["format"] == "json" ? OutputFormat::json : OutputFormat::csv;
    if (j.contains("truth_out")) cfg.truth_out = j["truth_out"].get<std::string>();
    if (j.contains("reproduce")) {
      const auto& r = j["reproduce"];
      if (r.contains("target")) cfg.target = parse_reproduce_target(r["target"].get<std::string>());
      read(r, "D", cfg.replications);
      read(r, "truth_clusters", cfg.truth_clusters);
      read(r, "truth_b_nodes", cfg.truth_b_nodes);
    }
    if (j.contains("dgp")) {
      const auto& d = j["dgp"];
      read(d, "m", cfg.dgp.m);
      read(d, "sigma_b", cfg.dgp.sigma_b);
      read(d, "sigma_b_is_variance", cfg.dgp.sigma_b_is_variance);
      if (d.contains("exposure")) cfg.dgp.exposure = parse_exposure_denominator(d["exposure"].get<std::string>());
      read(d, "event_scale", cfg.dgp.event_scale);
      read(d, "censor_scale", cfg.dgp.censor_scale);
      read(d, "n_max", cfg.dgp.n_max);
      if (d.contains("n_dist")) {
        const auto& n = d["n_dist"];
        if (n.contains("kind")) cfg.dgp.n_dist.kind = parse_n_dist(n["kind"].get<std::string>());
        read(n, "lo", cfg.dgp.n_dist.lo);
        read(n, "hi", cfg.dgp.n_dist.hi);
        read(n, "size", cfg.dgp.n_dist.nb_size);
        read(n, "prob", cfg.dgp.n_dist.nb_prob);
        read(n, "n", cfg.dgp.n_dist.fixed);
      }
    }
    if (j.contains("learners")) {
      const auto& l = j["learners"];
      auto& c = cfg.learners;
      if (l.contains("propensity")) c.propensity = parse_propensity_learner(l["propensity"].get<std::string>());
      if (l.contains("survival")) c.survival = parse_survival_learner(l["survival"].get<std::string>());
      read(l, "ridge", c.ridge);
      read(l, "hazard_ridge", c.hazard_ridge);
      read(l, "hazard_bins", c.hazard_bins);
      read(l, "trees", c.forest.trees);
      read(l, "min_leaf", c.forest.min_leaf);
      read(l, "mtry", c.forest.mtry);
      read(l, "nsplit", c.forest.nsplit);
      read(l, "pi_floor", c.pi_floor);
      read(l, "tail_floor", c.tail_floor);
      read(l, "s_floor", c.s_floor);
      read(l, "random_intercept_nodes", c.random_intercept_nodes);
      read(l, "oracle_b_nodes", c.oracle_b_nodes);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("bad config value: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_json(base, ss.str());
  return base;
}

namespace {

json config_json(const RunConfig& c) {
  const auto& n = c.dgp.n_dist;
  json dgp = {{"m", c.dgp.m},
              {"sigma_b", c.dgp.sigma_b},
              {"sigma_b_is_variance", c.dgp.sigma_b_is_variance},
              {"exposure", to_string(c.dgp.exposure)},
              {"event_scale", c.dgp.event_scale},
              {"censor_scale", c.dgp.censor_scale},
              {"n_max", c.dgp.n_max},
              {"n_dist", {{"kind", n_dist_name(n.kind)}, {"lo", n.lo}, {"hi", n.hi}, {"size", n.nb_size},
                          {"prob", n.nb_prob}, {"n", n.fixed}}}};
  const auto& l = c.learners;
  json learners = {{"propensity", to_string(l.propensity)},
                   {"survival", to_string(l.survival)},
                   {"ridge", l.ridge},
                   {"hazard_ridge", l.hazard_ridge},
                   {"hazard_bins", l.hazard_bins},
                   {"trees", l.forest.trees},
                   {"min_leaf", l.forest.min_leaf},
                   {"mtry", l.forest.mtry},
                   {"nsplit", l.forest.nsplit},
                   {"pi_floor", l.pi_floor},
                   {"tail_floor", l.tail_floor},
                   {"s_floor", l.s_floor},
                   {"random_intercept_nodes", l.random_intercept_nodes},
                   {"oracle_b_nodes", l.oracle_b_nodes}};
  json j = {{"command", to_string(c.command)},
            {"data", c.data.string()},
            {"data_format", c.data_format == DataFormat::jsonl ? "jsonl" : "csv"},
            {"estimands", c.estimands},
            {"policy", to_string(c.policy)},
            {"theta", c.theta},
            {"reference", c.reference},
            {"transform", transform_name(c.transform)},
            {"tau", c.tau},
            {"K", c.K},
            {"S", c.S},
            {"r", c.r},
            {"mode", to_string(c.mode)},
            {"bounded", c.bounded},
            {"B", c.B},
            {"level", c.level},
            {"seed", c.seed},
            {"jobs", c.jobs},
            {"out", c.out.string()},
            {"format", c.format == OutputFormat::json ? "json" : "csv"},
            {"reproduce",
             {{"target", to_string(c.target)},
              {"D", c.replications},
              {"truth_clusters", c.truth_clusters},
              {"truth_b_nodes", c.truth_b_nodes}}},
            {"dgp", dgp},
            {"learners", learners}};
  if (c.truth_out) j["truth_out"] = c.truth_out->string();
  return j;
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return config_json(cfg).dump(); }

std::vector<EstimandSpec> build_specs(const RunConfig& cfg) {
  std::vector<TransformSpec> transforms;
  if (cfg.transform == TransformKind::identity) {
    transforms.push_back(TransformSpec::identity());
  } else {
    for (double t : cfg.tau) transforms.push_back({cfg.transform, t});
  }
  std::vector<EstimandSpec> out;
  for (const auto& tr : transforms) {
    for (double theta : cfg.theta) {
      for (const auto& name : cfg.estimands) {
        EstimandSpec s;
        s.kind = parse_estimand_kind(name);
        s.transform = tr;
        s.policy = {cfg.policy, theta};
        if (is_contrast_over_policies(s.kind)) {
          if (theta == cfg.reference) continue;
          s.reference = PolicySpec{cfg.policy, cfg.reference};
        }
        s.validate();
        out.push_back(s);
      }
    }
  }
  if (out.empty()) throw Error(ErrorCode::invalid_argument, "no estimands after expanding the grids");
  return out;
}

// ---------------------------------------------------------------- output

namespace {

const char* kFitColumns[] = {"estimand", "kind",  "transform", "tau",   "policy", "theta",  "reference",
                             "point",    "se",    "ci_lo",     "ci_hi", "level",  "m",      "K",
                             "S",        "r",     "bounded",   "mode",  "band",   "ucb_lo", "ucb_hi",
                             "critical"};

const char* kReportColumns[] = {"target",   "policy",     "theta",     "reference", "estimand",   "tau",
                                "truth",    "truth_mcse", "bias",      "bias_mcse", "ase",        "ese",
                                "cov",      "cov_mcse",   "ucov",      "ucov_mcse", "D",          "m",
                                "ref_truth", "ref_bias",  "ref_ase",   "ref_ese",   "ref_cov",    "ref_ucov"};

std::string num(double v) { return fmt::format("{:.10g}", v); }

using Row = std::vector<std::pair<std::string, json>>;

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return num(v.get<double>());
}

std::ostream& open_out(const std::filesystem::path& p, std::ofstream& file) {
  if (p == "-") return std::cout;
  file.open(p, std::ios::binary);
  if (!file) throw Error(ErrorCode::io_error, "cannot write " + p.string());
  return file;
}

void write_rows(const RunConfig& cfg, const std::vector<Row>& rows, const json& meta) {
  std::ofstream file;
  std::ostream& out = open_out(cfg.out, file);
  if (cfg.format == OutputFormat::json) {
    json doc = meta;
    json arr = json::array();
    for (const auto& row : rows) {
      json o = json::object();
      for (const auto& [k, v] : row) o[k] = v;
      arr.push_back(o);
    }
    doc["rows"] = arr;
    out << doc.dump(2) << "\n";
  } else {
    out << "# config: " << config_to_json(cfg) << "\n";
    if (!rows.empty()) {
      for (std::size_t i = 0; i < rows.front().size(); ++i) out << (i ? "," : "") << rows.front()[i].first;
      out << "\n";
      for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_cell(row[i].second);
        out << "\n";
      }
    }
    if (cfg.out != "-") {
      std::ofstream side(cfg.out.string() + ".json", std::ios::binary);
      if (!side) throw Error(ErrorCode::io_error, "cannot write " + cfg.out.string() + ".json");
      side << meta.dump(2) << "\n";
    }
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + cfg.out.string());
}

json null_or(double v, bool present) { return present ? json(v) : json(nullptr); }

Row estimate_row(const EstimateResult& e, const std::string& band, double lo, double hi, double crit,
                 bool has_band) {
  return {{"estimand", e.estimand},
          {"kind", to_string(e.spec.kind)},
          {"transform", transform_name(e.spec.transform.kind)},
          {"tau", e.spec.transform.kind == TransformKind::identity ? json(nullptr) : json(e.spec.transform.horizon)},
          {"policy", to_string(e.spec.policy.family)},
          {"theta", e.spec.policy.theta},
          {"reference", e.spec.reference ? json(e.spec.reference->theta) : json(nullptr)},
          {"point", e.point},
          {"se", e.se},
          {"ci_lo", e.ci_lo},
          {"ci_hi", e.ci_hi},
          {"level", e.level},
          {"m", e.m},
          {"K", e.K},
          {"S", e.S},
          {"r", e.r},
          {"bounded", e.bounded},
          {"mode", to_string(e.mode)},
          {"band", has_band ? json(band) : json(nullptr)},
          {"ucb_lo", null_or(lo, has_band)},
          {"ucb_hi", null_or(hi, has_band)},
          {"critical", null_or(crit, has_band)}};
}

CrossFitOptions fit_options(const RunConfig& cfg, std::uint64_t seed) {
  CrossFitOptions o;
  o.K = cfg.K;
  o.mode = {cfg.mode, cfg.r, splitmix64(seed ^ 0x7375627361ULL)};
  o.bounded = cfg.bounded;
  o.seed = seed;
  o.learners = cfg.learners;
  if (o.learners.propensity == PropensityLearner::oracle || o.learners.survival == SurvivalLearner::oracle) {
    o.learners.dgp = cfg.dgp;
  }
  o.level = cfg.level;
  o.jobs = cfg.jobs;
  return o;
}

// Columns of one band: same estimand kind and transform, varying policy index.
std::vector<std::vector<std::size_t>> band_groups(const std::vector<EstimandSpec>& specs) {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::pair<EstimandKind, TransformSpec>> keys;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::pair<EstimandKind, TransformSpec> key{specs[i].kind, specs[i].transform};
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      groups.push_back({i});
    } else {
      groups[it - keys.begin()].push_back(i);
    }
  }
  return groups;
}

std::string band_label(const EstimandSpec& s) { return fmt::format("{}[{}]", to_string(s.kind), s.transform.label()); }

InfluenceTable select_columns(const InfluenceTable& t, const std::vector<std::size_t>& cols) {
  InfluenceTable out;
  out.folds = t.folds;
  out.K = t.K;
  out.hajek = t.hajek;
  for (auto c : cols) out.specs.push_back(t.specs[c]);
  out.values.resize(t.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i)
    for (auto c : cols) out.values[i].push_back(t.values[i][c]);
  return out;
}

struct Bands {
  std::vector<std::string> label;
  std::vector<double> lo, hi, critical;
  std::vector<bool> present;
  std::vector<std::pair<std::string, InterferenceDecision>> tests;
};

Bands compute_bands(const std::vector<EstimandSpec>& specs, const SbsResult& fit, int B, double level,
                    std::uint64_t seed, int jobs) {
  Bands b;
  const std::size_t n = specs.size();
  b.label.assign(n, "");
  b.lo.assign(n, 0.0);
  b.hi.assign(n, 0.0);
  b.critical.assign(n, 0.0);
  b.present.assign(n, false);
  const auto& table = fit.splits.front().table;
  std::uint64_t g = 0;
  for (const auto& cols : band_groups(specs)) {
    ++g;
    const auto sub = select_columns(table, cols);
    std::vector<EstimateResult> est;
    for (auto c : cols) est.push_back(fit.estimates[c]);
    const auto ucb = ucb_critical_value(sub, est, B, level, splitmix64(seed ^ splitmix64(g)), jobs);
    for (std::size_t q = 0; q < cols.size(); ++q) {
      b.label[cols[q]] = band_label(specs[cols[q]]);
      b.lo[cols[q]] = ucb.lo[q];
      b.hi[cols[q]] = ucb.hi[q];
      b.critical[cols[q]] = ucb.critical;
      b.present[cols[q]] = true;
    }
    if (specs[cols.front()].kind == EstimandKind::mu0 && cols.size() >= 2) {
      b.tests.emplace_back(band_label(specs[cols.front()]), interference_test(ucb));
    }
  }
  return b;
}

Dataset load_input(const RunConfig& cfg) {
  if (cfg.data.empty()) throw Error(ErrorCode::io_error, "no data file given");
  if (!std::filesystem::exists(cfg.data)) throw Error(ErrorCode::io_error, "data file not found: " + cfg.data.string());
  return load_dataset(cfg.data, cfg.data_format);
}

void log_fit(const Dataset& ds, const SbsResult& fit, const RunConfig& cfg) {
  std::cerr << fmt::format("cisurv: {} clusters, {} units, seed {}, K {}, S {}\n", ds.size(), ds.total_units(),
                           cfg.seed, cfg.K, cfg.S);
  for (std::size_t s = 0; s < fit.splits.size(); ++s) {
    std::vector<int> sizes(cfg.K, 0);
    for (int f : fit.splits[s].table.folds) ++sizes[f - 1];
    std::cerr << fmt::format("cisurv: split {} fold sizes {}\n", s, fmt::join(sizes, " "));
  }
}

json fit_meta(const RunConfig& cfg, const Dataset& ds, const SbsResult& fit) {
  json meta = {{"config", config_json(cfg)}, {"clusters", ds.size()}, {"units", ds.total_units()}};
  json splits = json::array();
  for (const auto& sp : fit.splits) {
    std::vector<int> sizes(cfg.K, 0);
    for (int f : sp.table.folds) ++sizes[f - 1];
    splits.push_back({{"fold_sizes", sizes}});
  }
  meta["splits"] = splits;
  meta["columns"] = std::vector<std::string>(std::begin(kFitColumns), std::end(kFitColumns));
  return meta;
}

}  // namespace

const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols(std::begin(kFitColumns), std::end(kFitColumns));
  return cols;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols(std::begin(kReportColumns), std::end(kReportColumns));
  return cols;
}

// ---------------------------------------------------------------- commands

int run_simulate(const RunConfig& cfg) {
  cfg.dgp.validate();
  const auto sim = generate_dataset(cfg.dgp, cfg.seed);
  if (cfg.out == "-") {
    if (cfg.data_format == DataFormat::jsonl) {
      write_jsonl(sim.data, std::cout);
    } else {
      write_csv(sim.data, std::cout);
    }
  } else {
    save_dataset(sim.data, cfg.out, cfg.data_format);
  }
  if (cfg.truth_out) {
    std::ofstream t(*cfg.truth_out, std::ios::binary);
    if (!t) throw Error(ErrorCode::io_error, "cannot write " + cfg.truth_out->string());
    t << "cluster_id,unit_id,t,c,b\n";
    for (std::size_t i = 0; i < sim.data.size(); ++i)
      for (std::size_t j = 0; j < sim.t[i].size(); ++j)
        t << fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", sim.data[i].cluster_id, j + 1, sim.t[i][j], sim.c[i][j],
                         sim.b[i]);
  }
  std::cerr << fmt::format("cisurv: simulated {} clusters, {} units, seed {}\n", sim.data.size(),
                           sim.data.total_units(), cfg.seed);
  return 0;
}

int run_fit(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = load_input(cfg);
  const auto specs = build_specs(cfg);
  const auto fit = sbs_estimate(ds, specs, fit_options(cfg, cfg.seed), cfg.S);
  log_fit(ds, fit, cfg);
  std::vector<Row> rows;
  for (const auto& e : fit.estimates) rows.push_back(estimate_row(e, "", 0, 0, 0, false));
  write_rows(cfg, rows, fit_meta(cfg, ds, fit));
  return 0;
}

int run_ucb(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = load_input(cfg);
  const auto specs = build_specs(cfg);
  const auto fit = sbs_estimate(ds, specs, fit_options(cfg, cfg.seed), cfg.S);
  log_fit(ds, fit, cfg);
  const auto bands = compute_bands(specs, fit, cfg.B, cfg.level, splitmix64(cfg.seed ^ 0x756362ULL), cfg.jobs);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    rows.push_back(estimate_row(fit.estimates[i], bands.label[i], bands.lo[i], bands.hi[i], bands.critical[i],
                                bands.present[i]));
  }
  json meta = fit_meta(cfg, ds, fit);
  json tests = json::array();
  for (const auto& [label, d] : bands.tests) {
    tests.push_back({{"band", label}, {"decision", to_string(d)}});
    std::cerr << fmt::format("cisurv: interference test on {}: {}\n", label, to_string(d));
  }
  meta["interference_tests"] = tests;
  write_rows(cfg, rows, meta);
  return 0;
}

// ---------------------------------------------------------------- reproduce

namespace {

struct Reference {
  double v[6];  // truth, bias, ase, ese, cov, ucov
};

// Published simulation summaries keyed by (theta, estimand, tau). SE and OE
// rows are stored under the estimand whose value they hold.
const std::map<std::tuple<double, std::string, double>, Reference>& reference_table(ReproduceTarget t) {
  using Key = std::tuple<double, std::string, double>;
  static const std::map<Key, Reference> table3 = {
      {{0.3, "mu", 0.2}, {{45.1, 0.1, 2.0, 2.1, 94, 95}}},     {{0.3, "mu", 0.4}, {{55.5, -0.1, 2.1, 2.1, 95, 95}}},
      {{0.3, "mu1", 0.2}, {{25.2, -0.9, 2.8, 2.8, 93, 92}}},   {{0.3, "mu1", 0.4}, {{36.7, -1.1, 3.1, 3.2, 93, 91}}},
      {{0.3, "mu0", 0.2}, {{53.7, 0.3, 2.5, 2.6, 94, 93}}},    {{0.3, "mu0", 0.4}, {{63.6, 0.2, 2.5, 2.6, 95, 94}}},
      {{0.3, "de", 0.2}, {{-28.5, -1.2, 3.6, 3.6, 94, 90}}},   {{0.3, "de", 0.4}, {{-26.9, -1.3, 3.9, 4.0, 95, 90}}},
      {{0.3, "oe", 0.2}, {{7.5, 0.1, 1.5, 1.6, 95, 94}}},      {{0.3, "oe", 0.4}, {{7.5, 0.1, 1.5, 1.6, 96, 95}}},
      {{0.3, "se1", 0.2}, {{2.7, -0.1, 2.0, 2.0, 96, 96}}},    {{0.3, "se1", 0.4}, {{3.2, 0.0, 2.3, 2.3, 96, 95}}},
      {{0.3, "se0", 0.2}, {{3.7, -0.3, 1.8, 1.9, 94, 93}}},    {{0.3, "se0", 0.4}, {{3.6, -0.3, 1.9, 1.9, 95, 93}}},
      {{0.45, "mu", 0.2}, {{37.6, 0.0, 1.4, 1.5, 95, 95}}},    {{0.45, "mu", 0.4}, {{48.1, -0.2, 1.6, 1.6, 96, 95}}},
      {{0.45, "mu1", 0.2}, {{22.5, -0.8, 1.8, 1.9, 91, 92}}},  {{0.45, "mu1", 0.4}, {{33.5, -1.1, 2.1, 2.1, 92, 91}}},
      {{0.45, "mu0", 0.2}, {{50.0, 0.7, 2.1, 2.2, 93, 93}}},   {{0.45, "mu0", 0.4}, {{60.0, 0.5, 2.2, 2.2, 93, 94}}},
      {{0.45, "de", 0.2}, {{-27.6, -1.5, 2.7, 2.7, 91, 90}}},  {{0.45, "de", 0.4}, {{-26.5, -1.6, 2.9, 3.0, 91, 90}}},
      {{0.6, "mu", 0.2}, {{31.3, -0.2, 1.6, 1.6, 95, 95}}},    {{0.6, "mu", 0.4}, {{41.5, -0.4, 1.7, 1.8, 95, 95}}},
      {{0.6, "mu1", 0.2}, {{20.5, -0.7, 1.8, 1.8, 94, 92}}},   {{0.6, "mu1", 0.4}, {{31.0, -1.1, 2.1, 2.2, 93, 91}}},
      {{0.6, "mu0", 0.2}, {{47.4, 0.7, 2.7, 2.9, 93, 93}}},    {{0.6, "mu0", 0.4}, {{57.3, 0.6, 2.9, 3.1, 95, 94}}},
      {{0.6, "de", 0.2}, {{-27.0, -1.4, 3.1, 3.5, 91, 90}}},   {{0.6, "de", 0.4}, {{-26.3, -1.7, 3.5, 3.8, 90, 90}}},
      {{0.6, "oe", 0.2}, {{-6.4, -0.2, 1.2, 1.3, 95, 94}}},    {{0.6, "oe", 0.4}, {{-6.5, -0.3, 1.3, 1.4, 96, 95}}},
      {{0.6, "se1", 0.2}, {{-2.0, 0.0, 1.4, 1.4, 96, 96}}},    {{0.6, "se1", 0.4}, {{-2.5, 0.0, 1.7, 1.7, 95, 95}}},
      {{0.6, "se0", 0.2}, {{-2.6, 0.0, 2.0, 2.2, 95, 93}}},    {{0.6, "se0", 0.4}, {{-2.7, 0.1, 2.1, 2.4, 94, 93}}},
  };
  static const std::map<Key, Reference> table_s1 = {
      {{0.0, "mu", 0.2}, {{38.2, -0.4, 1.3, 1.4, 92, 92}}},    {{0.0, "mu", 0.4}, {{48.4, -0.6, 1.4, 1.5, 92, 92}}},
      {{0.0, "mu1", 0.2}, {{22.6, -0.7, 1.5, 1.6, 91, 92}}},   {{0.0, "mu1", 0.4}, {{33.5, -1.0, 1.7, 1.8, 91, 90}}},
      {{0.0, "mu0", 0.2}, {{50.3, 0.6, 1.8, 1.8, 93, 94}}},    {{0.0, "mu0", 0.4}, {{60.2, 0.5, 1.8, 1.9, 93, 93}}},
      {{0.0, "de", 0.2}, {{-27.7, -1.3, 2.2, 2.2, 91, 92}}},   {{0.0, "de", 0.4}, {{-26.6, -1.5, 2.4, 2.4, 91, 90}}},
      {{0.25, "mu", 0.2}, {{34.9, -0.5, 1.3, 1.4, 92, 92}}},   {{0.25, "mu", 0.4}, {{45.0, -0.7, 1.4, 1.5, 93, 92}}},
      {{0.25, "mu1", 0.2}, {{21.3, -0.7, 1.5, 1.5, 91, 92}}},  {{0.25, "mu1", 0.4}, {{32.1, -1.0, 1.7, 1.8, 90, 90}}},
      {{0.25, "mu0", 0.2}, {{48.6, 0.7, 2.0, 2.0, 93, 94}}},   {{0.25, "mu0", 0.4}, {{58.6, 0.7, 2.0, 2.0, 93, 93}}},
      {{0.25, "de", 0.2}, {{-27.3, -1.4, 2.4, 2.4, 90, 92}}},  {{0.25, "de", 0.4}, {{-26.5, -1.7, 2.6, 2.6, 90, 90}}},
      {{0.25, "oe", 0.2}, {{-3.4, -0.1, 0.8, 0.8, 94, 87}}},   {{0.25, "oe", 0.4}, {{-3.3, -0.1, 0.8, 0.8, 95, 87}}},
      {{0.25, "se1", 0.2}, {{-1.2, 0.0, 0.8, 0.9, 94, 94}}},   {{0.25, "se1", 0.4}, {{-1.4, 0.0, 0.9, 0.9, 95, 95}}},
      {{0.25, "se0", 0.2}, {{-1.6, 0.1, 0.8, 0.7, 94, 88}}},   {{0.25, "se0", 0.4}, {{-1.6, 0.2, 0.8, 0.8, 94, 89}}},
      {{0.5, "mu", 0.2}, {{29.6, -0.6, 1.7, 1.8, 94, 92}}},    {{0.5, "mu", 0.4}, {{39.7, -0.8, 1.9, 2.2, 93, 92}}},
      {{0.5, "mu1", 0.2}, {{19.7, -0.6, 1.8, 1.9, 95, 92}}},   {{0.5, "mu1", 0.4}, {{30.1, -0.9, 2.1, 2.5, 92, 90}}},
      {{0.5, "mu0", 0.2}, {{46.5, 0.8, 2.8, 4.1, 94, 94}}},    {{0.5, "mu0", 0.4}, {{56.4, 0.8, 3.0, 4.2, 93, 93}}},
      {{0.5, "de", 0.2}, {{-26.8, -1.5, 3.1, 3.2, 93, 92}}},   {{0.5, "de", 0.4}, {{-26.3, -1.9, 3.4, 3.4, 90, 90}}},
      {{0.5, "oe", 0.2}, {{-8.6, 0.0, 1.5, 3.6, 94, 87}}},     {{0.5, "oe", 0.4}, {{-8.7, -0.2, 1.6, 1.9, 94, 87}}},
      {{0.5, "se1", 0.2}, {{-2.9, 0.1, 1.6, 3.3, 95, 94}}},    {{0.5, "se1", 0.4}, {{-3.5, 0.1, 1.8, 2.2, 94, 95}}},
      {{0.5, "se0", 0.2}, {{-3.7, 0.2, 2.0, 3.5, 95, 88}}},    {{0.5, "se0", 0.4}, {{-3.7, 0.3, 2.0, 3.6, 94, 89}}},
  };
  return t == ReproduceTarget::table3 ? table3 : table_s1;
}

struct Replicate {
  std::vector<double> point, se;
  std::vector<bool> covered, band_covered;
};

}  // namespace

int run_reproduce(const RunConfig& base) {
  RunConfig cfg = base;
  if (cfg.target == ReproduceTarget::table3) {
    cfg.policy = PolicyFamily::type_b;
    if (cfg.theta == RunConfig{}.theta || cfg.theta.empty()) cfg.theta = {0.3, 0.45, 0.6};
    cfg.reference = 0.45;
  } else {
    cfg.policy = PolicyFamily::tpb;
    if (cfg.theta == RunConfig{}.theta || cfg.theta.empty()) cfg.theta = {0.0, 0.25, 0.5};
    cfg.reference = 0.0;
  }
  cfg.transform = TransformKind::risk_at;
  cfg.validate();
  const auto specs = build_specs(cfg);

  std::cerr << fmt::format("cisurv: computing truths for {} estimands\n", specs.size());
  const auto truths = cfg.policy == PolicyFamily::type_b
                          ? true_values_typeb(cfg.dgp, specs, cfg.truth_clusters, splitmix64(cfg.seed ^ 0x7472ULL))
                          : true_values_mc(cfg.dgp, specs, cfg.truth_clusters, cfg.truth_b_nodes,
                                           splitmix64(cfg.seed ^ 0x7472ULL));
  const auto groups = band_groups(specs);

  const int D = cfg.replications;
  std::vector<Replicate> reps(D);
  std::atomic<int> next{0}, done{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (int d = next++; d < D; d = next++) {
      try {
        const std::uint64_t seed = splitmix64(cfg.seed ^ splitmix64(0x726570ULL + static_cast<std::uint64_t>(d)));
        const auto sim = generate_dataset(cfg.dgp, seed);
        RunConfig inner = cfg;
        inner.jobs = 1;
        const auto fit = sbs_estimate(sim.data, specs, fit_options(inner, seed), cfg.S);
        const auto bands = compute_bands(specs, fit, cfg.B, cfg.level, splitmix64(seed ^ 0x756362ULL), 1);
        Replicate& r = reps[d];
        for (std::size_t i = 0; i < specs.size(); ++i) {
          const auto& e = fit.estimates[i];
          r.point.push_back(e.point);
          r.se.push_back(e.se);
          r.covered.push_back(e.ci_lo <= truths[i].value && truths[i].value <= e.ci_hi);
        }
        r.band_covered.assign(specs.size(), true);
        for (const auto& cols : groups) {
          bool all = true;
          for (auto c : cols) all = all && bands.lo[c] <= truths[c].value && truths[c].value <= bands.hi[c];
          for (auto c : cols) r.band_covered[c] = all;
        }
        std::lock_guard lock(log_mutex);
        std::cerr << fmt::format("cisurv: replication {}/{} done\n", ++done, D);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(cfg.jobs, D); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  const auto& ref = reference_table(cfg.target);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    double sum = 0.0, sum_sq = 0.0, ase = 0.0, cov = 0.0, ucov = 0.0;
    for (const auto& r : reps) {
      const double err = r.point[i] - truths[i].value;
      sum += err;
      sum_sq += err * err;
      ase += r.se[i];
      cov += r.covered[i];
      ucov += r.band_covered[i];
    }
    const double bias = sum / D;
    const double ese = D > 1 ? std::sqrt(std::max(sum_sq / D - bias * bias, 0.0) * D / (D - 1)) : 0.0;
    const double pc = cov / D, pu = ucov / D;
    const auto& s = specs[i];
    const std::string kind = to_string(s.kind);
    const auto it = ref.find({s.policy.theta, kind, s.transform.horizon});
    auto refv = [&](int k) { return it == ref.end() ? json(nullptr) : json(it->second.v[k]); };
    rows.push_back({{"target", to_string(cfg.target)},
                    {"policy", to_string(s.policy.family)},
                    {"theta", s.policy.theta},
                    {"reference", s.reference ? json(s.reference->theta) : json(nullptr)},
                    {"estimand", kind},
                    {"tau", s.transform.horizon},
                    {"truth", 100 * truths[i].value},
                    {"truth_mcse", 100 * truths[i].se},
                    {"bias", 100 * bias},
                    {"bias_mcse", 100 * ese / std::sqrt(static_cast<double>(D))},
                    {"ase", 100 * ase / D},
                    {"ese", 100 * ese},
                    {"cov", 100 * pc},
                    {"cov_mcse", 100 * std::sqrt(pc * (1 - pc) / D)},
                    {"ucov", 100 * pu},
                    {"ucov_mcse", 100 * std::sqrt(pu * (1 - pu) / D)},
                    {"D", D},
                    {"m", cfg.dgp.m},
                    {"ref_truth", refv(0)},
                    {"ref_bias", refv(1)},
                    {"ref_ase", refv(2)},
                    {"ref_ese", refv(3)},
                    {"ref_cov", refv(4)},
                    {"ref_ucov", refv(5)}});
  }
  json meta = {{"config", config_json(cfg)},
               {"columns", std::vector<std::string>(std::begin(kReportColumns), std::end(kReportColumns))}};
  write_rows(cfg, rows, meta);
  return 0;
}

int run(const RunConfig& cfg) {
  try {
    switch (cfg.command) {
      case Command::simulate: return run_simulate(cfg);
      case Command::fit: return run_fit(cfg);
      case Command::ucb: return run_ucb(cfg);
      case Command::reproduce: return run_reproduce(cfg);
    }
  } catch (const Error& e) {
    std::cerr << "cisurv: error: " << e.what() << "\n";
    return e.code() == ErrorCode::io_error ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cisurv: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cisurv
