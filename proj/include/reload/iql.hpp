#pragma once

// Implicit Q-learning on annotated transitions and a behavior-cloning baseline.
//
// Value: expectile regression of V(s) toward the target critic Q̄(s, a).
// Critic: squared TD error against r + γ (1 - done) V(s').
// Policy: advantage-weighted regression of π(s) onto dataset actions with
// weights min(exp(temperature * (Q̄(s, a) - V(s))), advantage_clip).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reload/dataset.hpp"
#include "reload/envs.hpp"
#include "reload/nn.hpp"

namespace reload::iql {

struct IqlConfig {
  double expectile = 0.7;
  double temperature = 6.0;
  double discount = 0.99;
  double policy_lr = 3e-4;
  double critic_lr = 3e-4;
  double value_lr = 3e-4;
  std::size_t batch_size = 256;
  std::size_t train_steps = 50'000;
  double target_update_rate = 0.005;
  double advantage_clip = 100.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_dims{32, 32};
  // Metrics are recorded every `log_every` steps (and on the last step).
  std::size_t log_every = 500;

  static IqlConfig locomotion();
  static IqlConfig antmaze();
  static IqlConfig adroit();

  void validate() const;
};

nlohmann::json to_json(const IqlConfig& cfg);
IqlConfig iql_config_from_json(const nlohmann::json& j, IqlConfig base = {});

struct Network {
  nn::MlpSpec spec;
  nn::ParamVector params;
};

struct PolicyBundle {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  // Networks see standardized states; the policy head predicts standardized actions.
  std::vector<double> state_mean;
  std::vector<double> state_std;
  std::vector<double> action_mean;
  std::vector<double> action_std;
  std::optional<Network> value;
  std::optional<Network> q;
  std::optional<Network> target_q;
  Network policy;

  std::vector<double> normalize_state(std::span<const double> s) const;
  // Deterministic mean action.
  std::vector<double> act(std::span<const double> s) const;
};

struct StepMetrics {
  std::size_t step = 0;
  double v_loss = 0.0;
  double q_loss = 0.0;
  double pi_loss = 0.0;
  double mean_weight = 0.0;
};

struct TrainMetrics {
  std::vector<StepMetrics> rows;

  void write_csv(const std::filesystem::path& path) const;
};

double expectile_loss(double u, double tau);

// Loss pieces with exact parameter gradients. Batches hold one row per sample.
nn::LossGrad value_loss_and_grad(const Network& value, const nn::Matrix& states, std::span<const double> q_targets,
                                 double tau);
nn::LossGrad q_loss_and_grad(const Network& q, const nn::Matrix& state_actions, std::span<const double> td_targets);
nn::LossGrad policy_loss_and_grad(const Network& policy, const nn::Matrix& states, const nn::Matrix& actions,
                                  std::span<const double> weights);

double advantage_weight(double advantage, double temperature, double clip);

// target <- (1 - rate) * target + rate * online, componentwise.
void polyak_update(nn::ParamVector& target, const nn::ParamVector& online, double rate);

struct TrainResult {
  PolicyBundle bundle;
  TrainMetrics metrics;
};

TrainResult iql_train(const data::TransitionDataset& ds, const IqlConfig& cfg);
TrainResult bc_train(const data::TransitionDataset& ds, const IqlConfig& cfg);

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> returns;
};

using ActionFn = std::function<std::vector<double>(std::span<const double>)>;

EvalResult evaluate(const ActionFn& policy, const envs::EnvSpec& env, std::size_t episodes, std::uint64_t seed);
EvalResult evaluate_policy(const PolicyBundle& bundle, const envs::EnvSpec& env, std::size_t episodes,
                           std::uint64_t seed);

// Reference returns for normalized scores: uniform-random and expert controllers.
struct ReferenceReturns {
  double random = 0.0;
  double expert = 0.0;
};

ReferenceReturns reference_returns(const envs::EnvSpec& env, std::size_t episodes, std::uint64_t seed);
// 100 * (R - R_random) / (R_expert - R_random).
double normalized_score(double ret, const ReferenceReturns& ref);

// Policy checkpoints: one binary file per network plus policy.json for the
// input statistics.
void save_policy(const PolicyBundle& bundle, const std::filesystem::path& dir);
PolicyBundle load_policy(const std::filesystem::path& dir);

}  // namespace reload::iql
