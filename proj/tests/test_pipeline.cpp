#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "reload/acceptance.hpp"
#include "reload/error.hpp"
#include "reload/pipeline.hpp"

using namespace reload;
using namespace reload::pipeline;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig cfg = PipelineConfig::preset(envs::EnvKind::point_reach);
  cfg.generator.n_episodes = 20;
  cfg.rnd_arch = rnd::RndArchitecture{16, {32}};
  cfg.rnd_train.iterations = 200;
  cfg.iql.train_steps = 2000;
  cfg.iql.batch_size = 64;
  cfg.iql.hidden_dims = {16};
  cfg.iql.log_every = 500;
  cfg.eval_episodes = 5;
  cfg.output_dir = out;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) {
    out.push_back(line);
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

SweepReport fake_sweep(const std::string& env, double base) {
  SweepReport r;
  r.axis = SweepAxis::data_fraction;
  r.env_name = env;
  r.config_hash = "00000000deadbeef";
  for (const std::string& v : axis_values(SweepAxis::data_fraction)) {
    for (Arm arm : {Arm::reload, Arm::iql_true_reward}) {
      r.summary.push_back({v, ArmSummary{arm, 3, base + 0.1, 0.25, base / 3.0, 1.0 / 7.0}});
      base += 1.0;
    }
  }
  return r;
}

}  // namespace

TEST(Pipeline, SmokeRunWritesCheckpointsPerSeed) {
  const fs::path out = scratch("reload_pipeline_smoke");
  PipelineConfig cfg = tiny(out);
  cfg.seeds = {1, 2, 3};
  const auto t0 = std::chrono::steady_clock::now();
  const RunReport report = run_pipeline(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);
  EXPECT_EQ(report.runs.size(), 6u);
  for (int s = 1; s <= 3; ++s) {
    const fs::path seed_dir = out / ("seed_" + std::to_string(s));
    EXPECT_TRUE(fs::exists(seed_dir / "rnd")) << s;
    EXPECT_TRUE(fs::exists(seed_dir / "policies" / "reload" / "metrics.csv")) << s;
    EXPECT_TRUE(fs::exists(seed_dir / "policies" / "iql_true_reward" / "eval.json")) << s;
  }
  EXPECT_TRUE(fs::exists(out / "report.json"));
  for (const auto& r : report.runs) {
    EXPECT_TRUE(std::isfinite(r.score));
  }
  const auto back = run_report_from_json(to_json(report));
  EXPECT_EQ(back.config_hash, report.config_hash);
  EXPECT_EQ(back.runs.size(), report.runs.size());
  fs::remove_all(out);
}

TEST(Pipeline, SameConfigGivesByteIdenticalAnnotations) {
  const fs::path a = scratch("reload_pipeline_det_a");
  const fs::path b = scratch("reload_pipeline_det_b");
  PipelineConfig cfg = tiny(a);
  cfg.arms = {Arm::reload};
  cfg.iql.train_steps = 100;
  run_pipeline(cfg);
  cfg.output_dir = b;
  run_pipeline(cfg);
  const std::string fa = slurp(a / "seed_1" / "annotated_reload.jsonl");
  EXPECT_FALSE(fa.empty());
  EXPECT_EQ(fa, slurp(b / "seed_1" / "annotated_reload.jsonl"));
  EXPECT_EQ(slurp(a / "seed_1" / "policies" / "reload" / "metrics.csv"),
            slurp(b / "seed_1" / "policies" / "reload" / "metrics.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Config, OverridesParseJsonValuesAndCreatePaths) {
  nlohmann::json doc = to_json(PipelineConfig::preset(envs::EnvKind::point_reach));
  apply_override(doc, "iql.batch_size", "64");
  apply_override(doc, "reward.squash", "false");
  apply_override(doc, "note.who", "someone");
  EXPECT_EQ(doc["iql"]["batch_size"], 64);
  EXPECT_EQ(doc["reward"]["squash"], false);
  EXPECT_EQ(doc["note"]["who"], "someone");
  EXPECT_THROW(apply_override(doc, "iql.batch_size.x", "1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "", "1"), ConfigError);
}

TEST(Config, HashIgnoresOutputDirButTracksContent) {
  PipelineConfig a = tiny("x");
  PipelineConfig b = tiny("y");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.k_expert = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, JsonRoundTripKeepsHash) {
  const PipelineConfig cfg = tiny("z");
  EXPECT_EQ(config_hash(pipeline_config_from_json(to_json(cfg))), config_hash(cfg));
}

TEST(Config, InvalidValuesAreConfigErrors) {
  nlohmann::json doc = to_json(PipelineConfig::preset(envs::EnvKind::point_reach));
  doc["k_expert"] = 0;
  EXPECT_THROW(pipeline_config_from_json(doc), ConfigError);
  doc = to_json(PipelineConfig::preset(envs::EnvKind::point_reach));
  doc["data_fraction"] = 1.5;
  EXPECT_THROW(pipeline_config_from_json(doc), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_THROW(arm_from_string("dqn"), ConfigError);
  EXPECT_THROW(axis_from_string("gamma"), ConfigError);
}

TEST(PlotData, EmptyReportGivesHeaderOnly) {
  const fs::path dir = scratch("reload_plot_empty");
  SweepReport empty;
  empty.env_name = "point_reach_dense";
  const auto files = emit_plot_data({empty}, dir);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(lines_of(files[0]).size(), 1u);
  fs::remove_all(dir);
}

TEST(PlotData, OneFilePerEnvironmentWithExactValues) {
  const fs::path dir = scratch("reload_plot_three");
  const std::vector<SweepReport> reports{fake_sweep("a", 0.0), fake_sweep("b", 10.0), fake_sweep("c", -5.0)};
  const auto files = emit_plot_data(reports, dir);
  ASSERT_EQ(files.size(), 3u);
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto lines = lines_of(files[i]);
    ASSERT_EQ(lines.size(), 9u);  // header + 4 axis values x 2 arms
    EXPECT_EQ(lines[0], "axis_value,arm,mean_return,std_return,mean_score,config_hash");
    // Values are written with round-trip precision.
    std::stringstream row(lines[1]);
    std::string value, arm, ret, sd, score;
    std::getline(row, value, ',');
    std::getline(row, arm, ',');
    std::getline(row, ret, ',');
    std::getline(row, sd, ',');
    std::getline(row, score, ',');
    EXPECT_EQ(std::stod(ret), reports[i].summary[0].stats.mean_return);
    EXPECT_EQ(std::stod(score), reports[i].summary[0].stats.mean_score);
  }
  fs::remove_all(dir);
}

TEST(SweepCsv, SummaryRoundTrip) {
  const fs::path dir = scratch("reload_sweep_csv");
  fs::create_directories(dir);
  const SweepReport r = fake_sweep("gridworld_sparse", 1.0 / 3.0);
  write_sweep_summary_csv(r, dir / "s.csv");
  const SweepReport back = read_sweep_summary_csv(dir / "s.csv");
  EXPECT_EQ(back.env_name, r.env_name);
  EXPECT_EQ(back.config_hash, r.config_hash);
  ASSERT_EQ(back.summary.size(), r.summary.size());
  for (std::size_t i = 0; i < r.summary.size(); ++i) {
    EXPECT_EQ(back.summary[i].axis_value, r.summary[i].axis_value);
    EXPECT_EQ(back.summary[i].stats.arm, r.summary[i].stats.arm);
    EXPECT_EQ(back.summary[i].stats.mean_return, r.summary[i].stats.mean_return);
    EXPECT_EQ(back.summary[i].stats.std_score, r.summary[i].stats.std_score);
  }
  std::ofstream(dir / "bad.csv") << "header\nonly,three,cells\n";
  EXPECT_THROW(read_sweep_summary_csv(dir / "bad.csv"), ParseError);
  EXPECT_THROW(read_sweep_summary_csv(dir / "missing.csv"), IoError);
  fs::remove_all(dir);
}

TEST(Stats, AucOracle) {
  EXPECT_DOUBLE_EQ(acceptance::auc({3.0, 4.0}, {1.0, 2.0}), 1.0);
  EXPECT_DOUBLE_EQ(acceptance::auc({1.0}, {1.0}), 0.5);
  // Pairs (2>1), (2<3), (4>1), (4>3): 3 of 4.
  EXPECT_DOUBLE_EQ(acceptance::auc({2.0, 4.0}, {1.0, 3.0}), 0.75);
}

TEST(Stats, SpearmanOracle) {
  EXPECT_DOUBLE_EQ(acceptance::spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(acceptance::spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // Monotone but nonlinear still ranks perfectly.
  EXPECT_NEAR(acceptance::spearman({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}), 1.0, 1e-15);
}
