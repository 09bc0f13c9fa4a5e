#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cisurv/cli.hpp"
#include "cisurv/error.hpp"

using namespace cisurv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cisurv_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small simulated dataset shared by the tests below.
fs::path dataset() {
  static const fs::path p = [] {
    RunConfig cfg;
    cfg.command = Command::simulate;
    cfg.dgp.m = 40;
    cfg.seed = 5;
    cfg.out = scratch("data.csv");
    cfg.truth_out = scratch("truth.csv");
    EXPECT_EQ(run(cfg), 0);
    return cfg.out;
  }();
  return p;
}

RunConfig quick_fit() {
  RunConfig cfg;
  cfg.command = Command::fit;
  cfg.data = dataset();
  cfg.r = 10;
  cfg.learners.survival = SurvivalLearner::discrete_hazard_logistic;
  return cfg;
}

}  // namespace

TEST(Specs, GridExpansion) {
  RunConfig cfg;
  const auto specs = build_specs(cfg);
  // Two horizons x (7 + 4 + 7): SE and OE are skipped at the reference.
  EXPECT_EQ(specs.size(), 36u);
  EXPECT_EQ(specs.front().transform.horizon, 0.2);
  EXPECT_EQ(specs.back().transform.horizon, 0.4);
  for (const auto& s : specs)
    if (is_contrast_over_policies(s.kind)) EXPECT_EQ(s.reference->theta, 0.45);
}

TEST(Config, JsonOverridesDefaults) {
  RunConfig cfg;
  apply_config_json(cfg, R"({"K": 3, "theta": [0.2], "policy": "tpb", "reference": 0.0,
                             "dgp": {"m": 50, "sigma_b": 1.0},
                             "learners": {"propensity": "logistic", "trees": 7}})");
  EXPECT_EQ(cfg.K, 3);
  EXPECT_EQ(cfg.theta, std::vector<double>{0.2});
  EXPECT_EQ(cfg.policy, PolicyFamily::tpb);
  EXPECT_EQ(cfg.dgp.m, 50);
  EXPECT_EQ(cfg.dgp.sigma_b, 1.0);
  EXPECT_EQ(cfg.learners.propensity, PropensityLearner::logistic_penalized);
  EXPECT_EQ(cfg.learners.forest.trees, 7);
  EXPECT_EQ(cfg.r, 100);
  RunConfig again;
  apply_config_json(again, config_to_json(cfg));
  EXPECT_EQ(config_to_json(again), config_to_json(cfg));
}

TEST(Config, Validation) {
  RunConfig cfg;
  cfg.K = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = RunConfig{};
  cfg.theta.clear();
  EXPECT_THROW(cfg.validate(), Error);
  cfg = RunConfig{};
  cfg.r = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(apply_config_json(cfg, "{not json"), Error);
}

TEST(Cli, SimulateWritesDataAndTruth) {
  const auto data = lines(slurp(dataset()));
  EXPECT_EQ(data.front().rfind("cluster_id,unit_id,time,event,treatment,x1", 0), 0u);
  const auto truth = lines(slurp(scratch("truth.csv")));
  EXPECT_EQ(truth.front(), "cluster_id,unit_id,t,c,b");
  EXPECT_EQ(truth.size(), data.size());
}

TEST(Cli, FitIsDeterministicWithStableColumns) {
  auto cfg = quick_fit();
  cfg.out = scratch("fit.csv");
  ASSERT_EQ(run(cfg), 0);
  const auto first = slurp(cfg.out);
  ASSERT_EQ(run(cfg), 0);
  EXPECT_EQ(slurp(cfg.out), first);
  const auto rows = lines(first);
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("# config: ", 0), 0u);
  std::string header;
  for (const auto& c : result_columns()) header += (header.empty() ? "" : ",") + c;
  EXPECT_EQ(rows[1], header);
  EXPECT_EQ(rows.size(), 2 + build_specs(cfg).size());
  EXPECT_TRUE(fs::exists(cfg.out.string() + ".json"));
}

TEST(Cli, MissingDataExitsWithTwo) {
  auto cfg = quick_fit();
  cfg.data = scratch("does_not_exist.csv");
  EXPECT_EQ(run(cfg), 2);
  cfg = quick_fit();
  cfg.K = 1;
  EXPECT_EQ(run(cfg), 1);
}

TEST(Cli, UcbAddsBands) {
  auto cfg = quick_fit();
  cfg.command = Command::ucb;
  cfg.estimands = {"mu0"};
  cfg.tau = {0.2};
  cfg.B = 200;
  cfg.format = OutputFormat::json;
  cfg.out = scratch("ucb.json");
  ASSERT_EQ(run(cfg), 0);
  const auto text = slurp(cfg.out);
  EXPECT_NE(text.find("\"interference_tests\""), std::string::npos);
  EXPECT_NE(text.find("\"ucb_lo\""), std::string::npos);
}

TEST(Cli, ReproduceSmokeRun) {
  RunConfig cfg;
  cfg.command = Command::reproduce;
  cfg.replications = 1;
  cfg.dgp.m = 40;
  cfg.truth_clusters = 500;
  cfg.tau = {0.2};
  cfg.r = 10;
  cfg.B = 200;
  cfg.learners.survival = SurvivalLearner::discrete_hazard_logistic;
  cfg.out = scratch("report.csv");
  ASSERT_EQ(run(cfg), 0);
  const auto rows = lines(slurp(cfg.out));
  std::string header;
  for (const auto& c : report_columns()) header += (header.empty() ? "" : ",") + c;
  EXPECT_EQ(rows[1], header);
  EXPECT_EQ(rows.size(), 2 + 18u);
  // The alpha = 0.3 mu row carries the published reference truth.
  EXPECT_NE(rows[2].find(",45.1,"), std::string::npos);
}
