#pragma once

// Deterministic goal-reaching environments and tiered dataset generators.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reload/dataset.hpp"
#include "reload/random.hpp"

namespace reload::envs {

enum class EnvKind : std::uint8_t { point_reach, gridworld_sparse };
enum class RewardKind : std::uint8_t { dense_negative_distance, sparse_goal };

struct EnvSpec {
  EnvKind kind = EnvKind::point_reach;
  std::size_t state_dim = 2;
  std::size_t action_dim = 2;
  std::size_t horizon = 50;
  std::vector<double> goal{1.0, 1.0};
  double action_bound = 0.1;
  RewardKind reward_kind = RewardKind::dense_negative_distance;
  // Initial states are uniform over [start_low, start_high].
  std::vector<double> start_low{-1.0, -1.0};
  std::vector<double> start_high{-0.8, -0.8};
  double goal_radius = 0.25;
  // Cells per side (gridworld only); positions are clamped to [0, grid_size - 1].
  std::size_t grid_size = 10;
  // Gridworld: a component moves one cell when |a_i| exceeds this fraction of action_bound.
  double move_threshold = 0.25;

  static EnvSpec point_reach(RewardKind reward = RewardKind::dense_negative_distance);
  static EnvSpec gridworld();

  void validate() const;
  std::string name() const;
};

nlohmann::json to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const nlohmann::json& j);

struct EnvState {
  std::vector<double> position;
  std::size_t t = 0;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
};

EnvState reset(const EnvSpec& spec, Rng& rng);
StepResult step(const EnvSpec& spec, const EnvState& state, std::span<const double> action);
bool at_goal(const EnvSpec& spec, std::span<const double> position);

// Proportional controller toward the goal, clipped to the action bound.
std::vector<double> expert_action(const EnvSpec& spec, std::span<const double> position);

enum class PolicyQuality : std::uint8_t { expert, medium, random, replay_mixture };

struct GeneratorSpec {
  PolicyQuality quality = PolicyQuality::medium;
  std::size_t n_episodes = 100;
  double noise_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
std::string to_string(PolicyQuality quality);
PolicyQuality quality_from_string(const std::string& name);

// Labeled rollouts tagged unlabeled_agent (true rewards are kept for reference).
data::TransitionDataset generate_dataset(const EnvSpec& env, const GeneratorSpec& gen);

}  // namespace reload::envs
