#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cisurv/cli.hpp"
#include "cisurv/error.hpp"

namespace {

// Flag values; unset flags leave the config file (or the defaults) alone.
struct Flags {
  std::string config;
  std::optional<std::string> data, data_format, out, format, policy, learner, mode, truth_out, target;
  std::optional<std::vector<double>> theta, tau;
  std::optional<std::string> estimands;
  std::optional<int> K, S, r, B, jobs, m, D, truth_clusters;
  std::optional<double> level, reference;
  std::optional<std::uint64_t> seed;
  bool bounded = false, unbounded = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// "oracle" sets both learners; other names go to whichever family knows them.
void apply_learner(cisurv::LearnerConfig& l, const std::string& spec) {
  for (const auto& name : split_list(spec)) {
    bool used = false;
    try {
      l.propensity = cisurv::parse_propensity_learner(name);
      used = true;
    } catch (const cisurv::Error&) {
    }
    try {
      l.survival = cisurv::parse_survival_learner(name);
      used = true;
    } catch (const cisurv::Error&) {
    }
    if (!used) throw cisurv::Error(cisurv::ErrorCode::invalid_argument, "unknown learner '" + name + "'");
  }
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file; flags override it");
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--jobs", f.jobs, "worker threads");
  app->add_option("--out", f.out, "output path, '-' for standard output");
  app->add_option("--format", f.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

void add_estimation(CLI::App* app, Flags& f) {
  app->add_option("--K", f.K, "cross-fitting folds");
  app->add_option("--S", f.S, "sample splits (medians over splits)");
  app->add_option("--r", f.r, "subsample draws per cluster");
  app->add_option("--mode", f.mode, "exact, subsample or exposure");
  app->add_flag("--bounded", f.bounded, "normalise the correction by the mean weight (default)");
  app->add_flag("--unbounded", f.unbounded, "plain cross-fitted correction");
  app->add_option("--policy", f.policy, "type_b, cips or tpb");
  app->add_option("--theta,--theta-grid", f.theta, "policy indices")->delimiter(',');
  app->add_option("--reference", f.reference, "reference policy index for SE and OE");
  app->add_option("--tau,--tau-grid", f.tau, "horizons")->delimiter(',');
  app->add_option("--estimands", f.estimands, "comma list of mu,mu1,mu0,de,se1,se0,oe");
  app->add_option("--learner", f.learner, "learner names, e.g. random_intercept,forest or oracle");
  app->add_option("--B,--ucb-B", f.B, "bootstrap draws for bands");
  app->add_option("--level,--ucb-level", f.level, "confidence level");
}

cisurv::RunConfig build_config(cisurv::Command cmd, const Flags& f) {
  cisurv::RunConfig cfg;
  if (!f.config.empty()) cfg = cisurv::load_config(f.config, cfg);
  cfg.command = cmd;
  if (f.data) cfg.data = *f.data;
  if (f.data_format) cfg.data_format = *f.data_format == "jsonl" ? cisurv::DataFormat::jsonl : cisurv::DataFormat::csv;
  if (f.out) cfg.out = *f.out;
  if (f.format) cfg.format = *f.format == "json" ? cisurv::OutputFormat::json : cisurv::OutputFormat::csv;
  if (f.policy) cfg.policy = cisurv::parse_policy_family(*f.policy);
  if (f.learner) apply_learner(cfg.learners, *f.learner);
  if (f.mode) cfg.mode = cisurv::parse_sum_mode(*f.mode);
  if (f.truth_out) cfg.truth_out = *f.truth_out;
  if (f.target) cfg.target = cisurv::parse_reproduce_target(*f.target);
  if (f.theta) cfg.theta = *f.theta;
  if (f.tau) cfg.tau = *f.tau;
  if (f.estimands) cfg.estimands = split_list(*f.estimands);
  if (f.K) cfg.K = *f.K;
  if (f.S) cfg.S = *f.S;
  if (f.r) cfg.r = *f.r;
  if (f.B) cfg.B = *f.B;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.m) cfg.dgp.m = *f.m;
  if (f.D) cfg.replications = *f.D;
  if (f.truth_clusters) cfg.truth_clusters = *f.truth_clusters;
  if (f.level) cfg.level = *f.level;
  if (f.reference) cfg.reference = *f.reference;
  if (f.seed) cfg.seed = *f.seed;
  if (f.bounded) cfg.bounded = true;
  if (f.unbounded) cfg.bounded = false;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-fitted causal survival estimands under clustered interference"};
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "draw a dataset from the simulation design");
  add_common(sim, f);
  sim->add_option("--m", f.m, "number of clusters");
  sim->add_option("--truth-out", f.truth_out, "also write latent event, censoring and intercept values");
  sim->add_option("--data-format", f.data_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* fit = app.add_subcommand("fit", "cross-fitted estimates with pointwise intervals");
  add_common(fit, f);
  add_estimation(fit, f);
  fit->add_option("--data", f.data, "input dataset");
  fit->add_option("--data-format", f.data_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* ucb = app.add_subcommand("ucb", "estimates with uniform bands over the policy grid");
  add_common(ucb, f);
  add_estimation(ucb, f);
  ucb->add_option("--data", f.data, "input dataset");
  ucb->add_option("--data-format", f.data_format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* rep = app.add_subcommand("reproduce", "simulation study summary");
  add_common(rep, f);
  add_estimation(rep, f);
  rep->add_option("--target", f.target, "table3 or tableS1");
  rep->add_option("--D", f.D, "replications");
  rep->add_option("--m", f.m, "clusters per replication");
  rep->add_option("--truth-clusters", f.truth_clusters, "Monte Carlo clusters for the truths");

  CLI11_PARSE(app, argc, argv);

  cisurv::Command cmd = cisurv::Command::fit;
  if (sim->parsed()) cmd = cisurv::Command::simulate;
  if (ucb->parsed()) cmd = cisurv::Command::ucb;
  if (rep->parsed()) cmd = cisurv::Command::reproduce;

  cisurv::RunConfig cfg;
  try {
    cfg = build_config(cmd, f);
  } catch (const cisurv::Error& e) {
    std::cerr << "cisurv: error: " << e.what() << "\n";
    return e.code() == cisurv::ErrorCode::io_error ? 2 : 1;
  }
  return cisurv::run(cfg);
}
