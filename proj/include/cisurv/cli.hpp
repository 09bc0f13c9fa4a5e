#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cisurv/core_data.hpp"
#include "cisurv/dgp.hpp"
#include "cisurv/engine.hpp"
#include "cisurv/nuisance.hpp"

namespace cisurv {

enum class Command { simulate, fit, ucb, reproduce };
enum class OutputFormat { csv, json };
enum class ReproduceTarget { table3, table_s1 };

std::string to_string(Command c);
Command parse_command(const std::string& s);
std::string to_string(ReproduceTarget t);
ReproduceTarget parse_reproduce_target(const std::string& s);

/// Everything a run depends on. A run is fully determined by this and the
/// data file it names.
struct RunConfig {
  Command command = Command::fit;
  std::filesystem::path data;
  DataFormat data_format = DataFormat::csv;
  DgpConfig dgp;

  std::vector<std::string> estimands = {"mu", "mu1", "mu0", "de", "se1", "se0", "oe"};
  PolicyFamily policy = PolicyFamily::type_b;
  std::vector<double> theta = {0.3, 0.45, 0.6};
  /// Reference policy index for SE and OE.
  double reference = 0.45;
  TransformKind transform = TransformKind::risk_at;
  std::vector<double> tau = {0.2, 0.4};

  int K = 2;
  int S = 1;
  int r = 100;
  SumMode mode = SumMode::subsample;
  /// Hájek-normalised corrections, as in the split-robust estimator.
  bool bounded = true;
  int B = 2000;
  double level = 0.95;
  std::uint64_t seed = 1;
  int jobs = 1;
  LearnerConfig learners;

  std::filesystem::path out = "-";
  OutputFormat format = OutputFormat::csv;
  /// simulate: optional latent (T, C, b) file.
  std::optional<std::filesystem::path> truth_out;

  ReproduceTarget target = ReproduceTarget::table3;
  int replications = 200;
  int truth_clusters = 200000;
  int truth_b_nodes = 20;

  /// Throws InvalidArgument on empty grids, K < 2, r < 1, S < 1 and the like.
  void validate() const;
};

/// Reads a JSON config file; keys absent from the file keep their defaults.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Applies a JSON object to a config; used for files and tests alike.
void apply_config_json(RunConfig& cfg, const std::string& json_text);
/// The effective configuration as JSON, echoed into every output.
std::string config_to_json(const RunConfig& cfg);

/// One estimand per (transform horizon, policy index, estimand name), in that
/// nesting order. SE and OE use the reference policy and are skipped where
/// theta equals the reference.
std::vector<EstimandSpec> build_specs(const RunConfig& cfg);

int run_simulate(const RunConfig& cfg);
int run_fit(const RunConfig& cfg);
int run_ucb(const RunConfig& cfg);
int run_reproduce(const RunConfig& cfg);
/// Dispatches on cfg.command; maps library errors to exit codes (2 for I/O,
/// 1 otherwise) with a one-line diagnostic on standard error.
int run(const RunConfig& cfg);

/// Column order of the fit and ucb results files.
const std::vector<std::string>& result_columns();
/// Column order of the reproduce report.
const std::vector<std::string>& report_columns();

}  // namespace cisurv
