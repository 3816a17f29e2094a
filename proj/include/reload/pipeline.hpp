#pragma once

// End-to-end orchestration: generate -> select expert -> train RND -> annotate
// -> train policy -> evaluate, per seed, plus parameter sweeps and plot data.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reload/envs.hpp"
#include "reload/iql.hpp"
#include "reload/rnd.hpp"
#include "reload/sinkhorn.hpp"

namespace reload::pipeline {

enum class Arm : std::uint8_t { reload, iql_true_reward, bc, reload_otr };

std::string to_string(Arm arm);
Arm arm_from_string(const std::string& name);

struct PipelineConfig {
  envs::EnvSpec env;
  envs::GeneratorSpec generator;
  std::size_t k_expert = 1;
  // Share of the unlabeled data (whole episodes) kept for annotation and training.
  double data_fraction = 1.0;
  rnd::RndArchitecture rnd_arch;
  rnd::RndTrainConfig rnd_train;
  bool standardize_inputs = true;
  rnd::RewardConfig reward;
  // Added to environment rewards for the true-reward arm.
  double true_reward_bias = 0.0;
  iql::IqlConfig iql;
  ot::SinkhornConfig sinkhorn;
  std::size_t ot_window = 1000;
  std::vector<Arm> arms{Arm::reload, Arm::iql_true_reward};
  std::vector<std::uint64_t> seeds{1};
  std::size_t eval_episodes = 50;
  std::uint64_t eval_seed = 12345;
  std::filesystem::path output_dir = "runs";

  // Defaults tuned per environment kind.
  static PipelineConfig preset(envs::EnvKind kind);

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
// Missing fields fall back to the preset of the document's env kind.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Sets a dotted path ("iql.batch_size") in a config document. The value is
// parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& dotted_path, const std::string& value);

// 16 hex digits; FNV-1a over the canonical config dump.
std::string config_hash(const PipelineConfig& cfg);

struct RunResult {
  Arm arm = Arm::reload;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double score = 0.0;
};

struct ArmSummary {
  Arm arm = Arm::reload;
  std::size_t runs = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_score = 0.0;
  double std_score = 0.0;
};

struct RunReport {
  std::string config_hash;
  std::string env_name;
  iql::ReferenceReturns reference;
  std::vector<RunResult> runs;
  std::vector<ArmSummary> summary;

  const ArmSummary& arm(Arm a) const;
};

nlohmann::json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& j);

// Runs every seed (in parallel up to worker_threads()) and writes artifacts
// under cfg.output_dir/seed_<s>/ plus cfg.output_dir/report.json.
RunReport run_pipeline(const PipelineConfig& cfg);

enum class SweepAxis : std::uint8_t { k_expert, data_fraction, reward_params };

std::string to_string(SweepAxis axis);
SweepAxis axis_from_string(const std::string& name);

struct SweepRow {
  std::string axis_value;
  std::uint64_t seed = 0;
  Arm arm = Arm::reload;
  double ret = 0.0;
  double score = 0.0;
};

struct SweepSummaryRow {
  std::string axis_value;
  ArmSummary stats;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::data_fraction;
  std::string env_name;
  std::string config_hash;
  std::vector<SweepRow> rows;
  std::vector<SweepSummaryRow> summary;
};

// Axis grids: k_expert {1, 5}; data_fraction {0.1, 0.25, 0.5, 1.0};
// reward_params {(alpha 5, beta 0.5), (alpha 10, beta 5)}.
std::vector<std::string> axis_values(SweepAxis axis);

// One run_pipeline per grid point under cfg.output_dir/<axis>/<value>/. Writes
// sweep_<axis>.csv (long format) and sweep_<axis>_summary.csv.
SweepReport run_sweep(const PipelineConfig& cfg, SweepAxis axis);

void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path);
void write_sweep_summary_csv(const SweepReport& report, const std::filesystem::path& path);
SweepReport read_sweep_summary_csv(const std::filesystem::path& path);

// One bar-chart CSV per report (environment): plot_<env>_<axis>.csv.
std::vector<std::filesystem::path> emit_plot_data(const std::vector<SweepReport>& reports,
                                                  const std::filesystem::path& dir);

// Worker cap from RELOAD_KIT_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_threads();

}  // namespace reload::pipeline
