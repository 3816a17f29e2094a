#pragma once

// Reward distillation: a frozen random target network and a predictor trained
// to imitate it on expert transitions. The predictor's residual on a transition
// (s, s') is the intrinsic reward for that transition.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "reload/dataset.hpp"
#include "reload/nn.hpp"

namespace reload::rnd {

struct RndArchitecture {
  std::size_t embedding_dim = 128;
  std::vector<std::size_t> hidden_dims{256, 256};
};

struct RndSeeds {
  std::uint64_t target = 1;
  std::uint64_t predictor = 2;
};

struct RndModel {
  std::size_t state_dim = 0;
  nn::MlpSpec target_spec;
  nn::MlpSpec predictor_spec;
  nn::ParamVector target_params;
  nn::ParamVector predictor_params;
  std::optional<data::NormStats> norm_stats;
  bool trained = false;

  std::size_t input_dim() const { return target_spec.input_dim; }
  std::size_t embedding_dim() const { return target_spec.output_dim; }

  // Network input for a transition: standardized (s, s') when stats are set.
  std::vector<double> transition_input(std::span<const double> s, std::span<const double> s_next) const;
  nn::Matrix transition_inputs(const data::TransitionDataset& ds) const;

  // Test hook: makes the predictor an exact copy of the target.
  void copy_target_into_predictor();
};

RndModel build_rnd(std::size_t state_dim, const RndArchitecture& arch, RndSeeds seeds,
                   std::optional<data::NormStats> norm_stats = std::nullopt);

struct RndTrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t iterations = 100;
  std::uint64_t seed = 0;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;

  // Hyperparameters used for locomotion and maze tasks.
  static RndTrainConfig mujoco() { return {}; }
  // Hyperparameters used for dexterous-manipulation tasks.
  static RndTrainConfig adroit() { return {3e-4, 16, 10, 0, nn::OptimizerKind::adam}; }

  void validate() const;
};

// Trains on rows of already-formed network inputs. Returns the per-iteration loss.
std::vector<double> train_predictor_on_inputs(RndModel& model, const nn::Matrix& inputs, const RndTrainConfig& cfg);

// Trains on an expert-tagged dataset; actions never reach the networks.
std::vector<double> train_predictor(RndModel& model, const data::TransitionDataset& expert,
                                    const RndTrainConfig& cfg);

// Squared L2 distance between target and predictor embeddings for each input row.
std::vector<double> prediction_errors(const RndModel& model, const nn::Matrix& inputs);

// Target minus predictor embeddings, one row per input row.
nn::Matrix embedding_discrepancy(const RndModel& model, const nn::Matrix& inputs);

// Negated prediction error; always <= 0.
double intrinsic_reward(const RndModel& model, std::span<const double> s, std::span<const double> s_next);

enum class ScaleMode : std::uint8_t { none, range_1000 };

struct RewardConfig {
  double alpha = 10.0;
  double beta = 5.0;
  bool squash = true;
  ScaleMode scale_mode = ScaleMode::none;
  double bias = 0.0;

  void validate() const;
};

nlohmann::json to_json(const RewardConfig& cfg);
RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig base = {});

// alpha * exp(beta * r) for r <= 0, landing in (0, alpha].
double squash_reward(double r, const RewardConfig& cfg);

struct ReturnRange {
  double min_return = 0.0;
  double max_return = 0.0;
};

double scale_factor(const RewardConfig& cfg, std::optional<ReturnRange> range);

// squash (when enabled), then scale, then add bias.
std::vector<double> finalize_rewards(std::span<const double> raw, const RewardConfig& cfg,
                                     std::optional<ReturnRange> range);

// Episode-return range of per-transition rewards laid out like `ds`.
ReturnRange return_range(const data::TransitionDataset& ds, std::span<const double> rewards);

// Applies the full reward pipeline to per-transition raw rewards and writes a
// labeled copy of `ds` tagged annotated. The scaling range, when requested, is
// taken from the squashed episode returns.
data::TransitionDataset apply_rewards(const data::TransitionDataset& ds, std::span<const double> raw,
                                      const RewardConfig& cfg, nlohmann::json provenance);

data::TransitionDataset annotate_dataset(const RndModel& model, const data::TransitionDataset& ds,
                                         const RewardConfig& cfg);

// One binary checkpoint per network plus a JSON sidecar holding the reward
// configuration and input statistics.
void save_model(const RndModel& model, const RewardConfig& reward, const std::filesystem::path& dir);
std::pair<RndModel, RewardConfig> load_model(const std::filesystem::path& dir);

}  // namespace reload::rnd
