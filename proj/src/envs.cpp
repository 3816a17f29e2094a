#include "reload/envs.hpp"

#include <algorithm>
#include <cmath>

#include "reload/error.hpp"

namespace reload::envs {

namespace {

double clip(double v, double bound) {
  if (std::isnan(v)) {
    return 0.0;
  }
  return std::min(bound, std::max(-bound, v));
}

double distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

const char* kind_name(EnvKind kind) { return kind == EnvKind::point_reach ? "point_reach" : "gridworld_sparse"; }

const char* reward_name(RewardKind kind) {
  return kind == RewardKind::dense_negative_distance ? "dense_negative_distance" : "sparse_goal";
}

constexpr std::size_t kReplaySnapshots = 5;

}  // namespace

EnvSpec EnvSpec::point_reach(RewardKind reward) {
  EnvSpec spec;
  spec.reward_kind = reward;
  return spec;
}

EnvSpec EnvSpec::gridworld() {
  EnvSpec spec;
  spec.kind = EnvKind::gridworld_sparse;
  spec.horizon = 40;
  spec.goal = {9.0, 9.0};
  spec.action_bound = 1.0;
  spec.reward_kind = RewardKind::sparse_goal;
  spec.start_low = {0.0, 0.0};
  spec.start_high = {2.0, 2.0};
  spec.goal_radius = 0.5;
  spec.grid_size = 10;
  return spec;
}

void EnvSpec::validate() const {
  if (state_dim == 0 || action_dim == 0 || horizon == 0) {
    throw ConfigError("EnvSpec: state_dim, action_dim and horizon must be >= 1");
  }
  if (action_dim != state_dim) {
    throw ConfigError("EnvSpec: actions displace the state, so action_dim must equal state_dim");
  }
  if (goal.size() != state_dim || start_low.size() != state_dim || start_high.size() != state_dim) {
    throw ConfigError("EnvSpec: goal and start box must have state_dim components");
  }
  for (std::size_t i = 0; i < state_dim; ++i) {
    if (start_low[i] > start_high[i]) {
      throw ConfigError("EnvSpec: start box lower corner exceeds upper corner");
    }
  }
  if (!(action_bound > 0.0) || !(goal_radius > 0.0)) {
    throw ConfigError("EnvSpec: action_bound and goal_radius must be positive");
  }
  if (kind == EnvKind::gridworld_sparse && grid_size < 2) {
    throw ConfigError("EnvSpec: grid needs at least 2 cells per side");
  }
  if (!(move_threshold > 0.0 && move_threshold < 1.0)) {
    throw ConfigError("EnvSpec: move_threshold must lie in (0, 1)");
  }
}

std::string EnvSpec::name() const {
  std::string n = kind_name(kind);
  if (kind == EnvKind::point_reach) {
    n += reward_kind == RewardKind::dense_negative_distance ? "_dense" : "_sparse";
  }
  return n;
}

nlohmann::json to_json(const EnvSpec& spec) {
  return {{"kind", kind_name(spec.kind)},
          {"state_dim", spec.state_dim},
          {"action_dim", spec.action_dim},
          {"horizon", spec.horizon},
          {"goal", spec.goal},
          {"action_bound", spec.action_bound},
          {"reward_kind", reward_name(spec.reward_kind)},
          {"start_low", spec.start_low},
          {"start_high", spec.start_high},
          {"goal_radius", spec.goal_radius},
          {"grid_size", spec.grid_size},
          {"move_threshold", spec.move_threshold}};
}

EnvSpec env_spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", std::string("point_reach"));
  EnvSpec spec;
  if (kind == "point_reach") {
    spec = EnvSpec::point_reach();
  } else if (kind == "gridworld_sparse") {
    spec = EnvSpec::gridworld();
  } else {
    throw ConfigError("unknown env kind \"" + kind + "\"");
  }
  spec.state_dim = j.value("state_dim", spec.state_dim);
  spec.action_dim = j.value("action_dim", spec.action_dim);
  spec.horizon = j.value("horizon", spec.horizon);
  spec.goal = j.value("goal", spec.goal);
  spec.action_bound = j.value("action_bound", spec.action_bound);
  spec.start_low = j.value("start_low", spec.start_low);
  spec.start_high = j.value("start_high", spec.start_high);
  spec.goal_radius = j.value("goal_radius", spec.goal_radius);
  spec.grid_size = j.value("grid_size", spec.grid_size);
  spec.move_threshold = j.value("move_threshold", spec.move_threshold);
  if (j.contains("reward_kind")) {
    const std::string reward = j.at("reward_kind").get<std::string>();
    if (reward == "dense_negative_distance") {
      spec.reward_kind = RewardKind::dense_negative_distance;
    } else if (reward == "sparse_goal") {
      spec.reward_kind = RewardKind::sparse_goal;
    } else {
      throw ConfigError("unknown reward_kind \"" + reward + "\"");
    }
  }
  spec.validate();
  return spec;
}

EnvState reset(const EnvSpec& spec, Rng& rng) {
  EnvState state;
  state.position.resize(spec.state_dim);
  for (std::size_t i = 0; i < spec.state_dim; ++i) {
    double v = rng.uniform(spec.start_low[i], spec.start_high[i]);
    if (spec.kind == EnvKind::gridworld_sparse) {
      v = std::round(v);
    }
    state.position[i] = v;
  }
  return state;
}

bool at_goal(const EnvSpec& spec, std::span<const double> position) {
  return distance(position, spec.goal) < spec.goal_radius;
}

StepResult step(const EnvSpec& spec, const EnvState& state, std::span<const double> action) {
  if (action.size() != spec.action_dim) {
    throw ShapeError("step: action has " + std::to_string(action.size()) + " components, env expects " +
                     std::to_string(spec.action_dim));
  }
  StepResult result;
  result.next.position = state.position;
  result.next.t = state.t + 1;
  for (std::size_t i = 0; i < spec.state_dim; ++i) {
    const double a = clip(action[i], spec.action_bound);
    if (spec.kind == EnvKind::gridworld_sparse) {
      const double t = spec.move_threshold * spec.action_bound;
      const double cell = state.position[i] + (a > t ? 1.0 : 0.0) - (a < -t ? 1.0 : 0.0);
      result.next.position[i] = std::min(static_cast<double>(spec.grid_size - 1), std::max(0.0, cell));
    } else {
      result.next.position[i] = state.position[i] + a;
    }
  }
  const double dist = distance(result.next.position, spec.goal);
  const bool reached = dist < spec.goal_radius;
  result.reward = spec.reward_kind == RewardKind::dense_negative_distance ? -dist : (reached ? 1.0 : 0.0);
  result.done = reached || result.next.t >= spec.horizon;
  return result;
}

std::vector<double> expert_action(const EnvSpec& spec, std::span<const double> position) {
  std::vector<double> a(spec.action_dim);
  for (std::size_t i = 0; i < spec.action_dim; ++i) {
    a[i] = clip(spec.goal[i] - position[i], spec.action_bound);
  }
  return a;
}

void GeneratorSpec::validate() const {
  if (n_episodes == 0) {
    throw ConfigError("GeneratorSpec: n_episodes must be >= 1");
  }
  if (!(noise_scale >= 0.0)) {
    throw ConfigError("GeneratorSpec: noise_scale must be non-negative");
  }
}

std::string to_string(PolicyQuality quality) {
  switch (quality) {
    case PolicyQuality::expert:
      return "expert";
    case PolicyQuality::medium:
      return "medium";
    case PolicyQuality::random:
      return "random";
    case PolicyQuality::replay_mixture:
      return "replay_mixture";
  }
  return "unknown";
}

PolicyQuality quality_from_string(const std::string& name) {
  for (auto q : {PolicyQuality::expert, PolicyQuality::medium, PolicyQuality::random, PolicyQuality::replay_mixture}) {
    if (to_string(q) == name) {
      return q;
    }
  }
  throw ConfigError("unknown policy quality \"" + name + "\"");
}

nlohmann::json to_json(const GeneratorSpec& spec) {
  return {{"policy_quality", to_string(spec.quality)},
          {"n_episodes", spec.n_episodes},
          {"noise_scale", spec.noise_scale},
          {"seed", spec.seed}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  GeneratorSpec spec;
  if (j.contains("policy_quality")) {
    spec.quality = quality_from_string(j.at("policy_quality").get<std::string>());
  }
  spec.n_episodes = j.value("n_episodes", spec.n_episodes);
  spec.noise_scale = j.value("noise_scale", spec.noise_scale);
  spec.seed = j.value("seed", spec.seed);
  spec.validate();
  return spec;
}

data::TransitionDataset generate_dataset(const EnvSpec& env, const GeneratorSpec& gen) {
  env.validate();
  gen.validate();
  Rng rng(gen.seed);
  data::TransitionDataset ds;
  ds.state_dim = env.state_dim;
  ds.action_dim = env.action_dim;
  ds.tag = data::DatasetTag::unlabeled_agent;

  std::vector<data::Transition> episode;
  std::vector<double> action(env.action_dim);
  for (std::size_t e = 0; e < gen.n_episodes; ++e) {
    // Replay snapshots improve from near-random to the expert controller.
    const std::size_t snapshot = e * kReplaySnapshots / gen.n_episodes;
    const double skill = static_cast<double>(snapshot) / static_cast<double>(kReplaySnapshots - 1);

    episode.clear();
    EnvState state = reset(env, rng);
    bool done = false;
    while (!done) {
      const std::vector<double> expert = expert_action(env, state.position);
      for (std::size_t i = 0; i < env.action_dim; ++i) {
        switch (gen.quality) {
          case PolicyQuality::expert:
            action[i] = expert[i];
            break;
          case PolicyQuality::medium:
            action[i] = expert[i] + gen.noise_scale * rng.normal();
            break;
          case PolicyQuality::random:
            action[i] = rng.uniform(-env.action_bound, env.action_bound);
            break;
          case PolicyQuality::replay_mixture:
            action[i] = skill * expert[i] + (1.0 - skill) * rng.uniform(-env.action_bound, env.action_bound) +
                        gen.noise_scale * rng.normal();
            break;
        }
        action[i] = clip(action[i], env.action_bound);
      }
      StepResult next = step(env, state, action);
      data::Transition t;
      t.s = state.position;
      t.a = action;
      t.s_next = next.next.position;
      t.r = next.reward;
      t.done = next.done;
      episode.push_back(std::move(t));
      done = next.done;
      state = std::move(next.next);
    }
    ds.append_episode(episode);
  }
  return ds;
}

}  // namespace reload::envs
