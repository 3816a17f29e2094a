#include "reload/iql.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::iql {

namespace {

constexpr double kStdFloor = 1e-6;

Network make_network(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, std::uint64_t seed) {
  Network net;
  net.spec = nn::MlpSpec{in, hidden, out, nn::Activation::relu, seed};
  net.params = nn::init_mlp(net.spec);
  return net;
}

void column_stats(const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& sd) {
  const std::size_t dim = rows.front().size();
  mean.assign(dim, 0.0);
  sd.assign(dim, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < dim; ++i) {
      mean[i] += r[i];
    }
  }
  for (double& m : mean) {
    m /= static_cast<double>(rows.size());
  }
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = r[i] - mean[i];
      sd[i] += d * d;
    }
  }
  for (double& s : sd) {
    s = std::max(std::sqrt(s / static_cast<double>(rows.size())), kStdFloor);
  }
}

// Standardized copies of the dataset columns used by both learners.
struct PreparedData {
  nn::Matrix states;
  nn::Matrix next_states;
  nn::Matrix actions;
  std::vector<double> rewards;
  std::vector<double> done;
};

PreparedData prepare(const data::TransitionDataset& ds, PolicyBundle& bundle, bool need_rewards) {
  if (ds.empty()) {
    throw ArgumentError("training dataset is empty");
  }
  for (const auto& t : ds.transitions) {
    if (!t.a) {
      throw ArgumentError("training dataset must provide actions");
    }
    if (need_rewards && !t.r) {
      throw ArgumentError("training dataset must be labeled with rewards");
    }
  }
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  states.reserve(ds.size());
  actions.reserve(ds.size());
  for (const auto& t : ds.transitions) {
    states.push_back(t.s);
    actions.push_back(*t.a);
  }
  bundle.state_dim = ds.state_dim;
  bundle.action_dim = ds.action_dim;
  column_stats(states, bundle.state_mean, bundle.state_std);
  column_stats(actions, bundle.action_mean, bundle.action_std);

  PreparedData p;
  p.states = nn::Matrix(ds.size(), ds.state_dim);
  p.next_states = nn::Matrix(ds.size(), ds.state_dim);
  p.actions = nn::Matrix(ds.size(), ds.action_dim);
  p.rewards.resize(ds.size());
  p.done.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& t = ds.transitions[i];
    const auto s = bundle.normalize_state(t.s);
    const auto s2 = bundle.normalize_state(t.s_next);
    std::copy(s.begin(), s.end(), p.states.row(i).begin());
    std::copy(s2.begin(), s2.end(), p.next_states.row(i).begin());
    for (std::size_t j = 0; j < ds.action_dim; ++j) {
      p.actions(i, j) = ((*t.a)[j] - bundle.action_mean[j]) / bundle.action_std[j];
    }
    p.rewards[i] = t.r.value_or(0.0);
    p.done[i] = t.done ? 1.0 : 0.0;
  }
  return p;
}

void gather(const nn::Matrix& src, std::span<const std::size_t> idx, nn::Matrix& dst) {
  dst = nn::Matrix(idx.size(), src.cols);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto row = src.row(idx[b]);
    std::copy(row.begin(), row.end(), dst.row(b).begin());
  }
}

nn::Matrix concat_columns(const nn::Matrix& a, const nn::Matrix& b) {
  nn::Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(a.cols));
  }
  return out;
}

void check_finite(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + " became non-finite at step " + std::to_string(step));
  }
}

void write_network(const Network& net, const std::filesystem::path& path) {
  nn::save_checkpoint(path, net.spec, net.params);
}

Network read_network(const std::filesystem::path& path) {
  auto [spec, params] = nn::load_checkpoint(path);
  return Network{std::move(spec), std::move(params)};
}

}  // namespace

IqlConfig IqlConfig::locomotion() { return {}; }

IqlConfig IqlConfig::antmaze() {
  IqlConfig cfg;
  cfg.expectile = 0.9;
  cfg.temperature = 10.0;
  return cfg;
}

IqlConfig IqlConfig::adroit() {
  IqlConfig cfg;
  cfg.expectile = 0.8;
  cfg.temperature = 0.5;
  return cfg;
}

void IqlConfig::validate() const {
  if (!(expectile > 0.0 && expectile < 1.0)) {
    throw ConfigError("IqlConfig: expectile must lie in (0, 1)");
  }
  if (!(temperature > 0.0)) {
    throw ConfigError("IqlConfig: temperature must be positive");
  }
  if (!(discount > 0.0 && discount <= 1.0)) {
    throw ConfigError("IqlConfig: discount must lie in (0, 1]");
  }
  if (!(policy_lr > 0.0 && critic_lr > 0.0 && value_lr > 0.0)) {
    throw ConfigError("IqlConfig: learning rates must be positive");
  }
  if (batch_size == 0 || train_steps == 0 || log_every == 0) {
    throw ConfigError("IqlConfig: batch_size, train_steps and log_every must be positive");
  }
  if (!(target_update_rate > 0.0 && target_update_rate <= 1.0)) {
    throw ConfigError("IqlConfig: target_update_rate must lie in (0, 1]");
  }
  if (!(advantage_clip > 0.0)) {
    throw ConfigError("IqlConfig: advantage_clip must be positive");
  }
  if (hidden_dims.empty()) {
    throw ConfigError("IqlConfig: networks need at least one hidden layer");
  }
}

nlohmann::json to_json(const IqlConfig& cfg) {
  return {{"expectile", cfg.expectile},
          {"temperature", cfg.temperature},
          {"discount", cfg.discount},
          {"policy_lr", cfg.policy_lr},
          {"critic_lr", cfg.critic_lr},
          {"value_lr", cfg.value_lr},
          {"batch_size", cfg.batch_size},
          {"train_steps", cfg.train_steps},
          {"target_update_rate", cfg.target_update_rate},
          {"advantage_clip", cfg.advantage_clip},
          {"seed", cfg.seed},
          {"hidden_dims", cfg.hidden_dims},
          {"log_every", cfg.log_every}};
}

IqlConfig iql_config_from_json(const nlohmann::json& j, IqlConfig base) {
  IqlConfig cfg = std::move(base);
  cfg.expectile = j.value("expectile", cfg.expectile);
  cfg.temperature = j.value("temperature", cfg.temperature);
  cfg.discount = j.value("discount", cfg.discount);
  cfg.policy_lr = j.value("policy_lr", cfg.policy_lr);
  cfg.critic_lr = j.value("critic_lr", cfg.critic_lr);
  cfg.value_lr = j.value("value_lr", cfg.value_lr);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.train_steps = j.value("train_steps", cfg.train_steps);
  cfg.target_update_rate = j.value("target_update_rate", cfg.target_update_rate);
  cfg.advantage_clip = j.value("advantage_clip", cfg.advantage_clip);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.hidden_dims = j.value("hidden_dims", cfg.hidden_dims);
  cfg.log_every = j.value("log_every", cfg.log_every);
  cfg.validate();
  return cfg;
}

std::vector<double> PolicyBundle::normalize_state(std::span<const double> s) const {
  if (s.size() != state_dim) {
    throw ShapeError("policy: state has " + std::to_string(s.size()) + " components, expected " +
                     std::to_string(state_dim));
  }
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = (s[i] - state_mean[i]) / state_std[i];
  }
  return out;
}

std::vector<double> PolicyBundle::act(std::span<const double> s) const {
  const auto x = normalize_state(s);
  auto out = nn::forward(policy.params, policy.spec, x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = action_mean[i] + action_std[i] * out[i];
  }
  return out;
}

void TrainMetrics::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) {
    throw IoError("cannot write " + path.string());
  }
  os << "step,v_loss,q_loss,pi_loss,mean_weight\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", r.step, r.v_loss, r.q_loss, r.pi_loss,
                  r.mean_weight);
    os << buf;
  }
}

double expectile_loss(double u, double tau) {
  const double weight = u < 0.0 ? 1.0 - tau : tau;
  return weight * u * u;
}

double advantage_weight(double advantage, double temperature, double clip) {
  return std::min(std::exp(temperature * advantage), clip);
}

nn::LossGrad value_loss_and_grad(const Network& value, const nn::Matrix& states, std::span<const double> q_targets,
                                 double tau) {
  if (states.rows == 0 || q_targets.size() != states.rows) {
    throw ShapeError("value loss: one Q target per state is required");
  }
  const nn::ForwardTrace trace = nn::forward_trace(value.params, value.spec, states);
  const double scale = 1.0 / static_cast<double>(states.rows);
  nn::Matrix dout(states.rows, 1);
  double loss = 0.0;
  for (std::size_t b = 0; b < states.rows; ++b) {
    const double u = q_targets[b] - trace.output()(b, 0);
    const double weight = u < 0.0 ? 1.0 - tau : tau;
    loss += weight * u * u;
    dout(b, 0) = -2.0 * weight * u * scale;
  }
  nn::LossGrad lg{loss * scale, nn::ParamVector(value.spec)};
  nn::backward(value.params, value.spec, trace, dout, lg.grad);
  return lg;
}

nn::LossGrad q_loss_and_grad(const Network& q, const nn::Matrix& state_actions, std::span<const double> td_targets) {
  if (state_actions.rows == 0 || td_targets.size() != state_actions.rows) {
    throw ShapeError("Q loss: one TD target per sample is required");
  }
  nn::Matrix targets(state_actions.rows, 1);
  std::copy(td_targets.begin(), td_targets.end(), targets.data.begin());
  return nn::mse_and_grad(q.params, q.spec, state_actions, targets);
}

nn::LossGrad policy_loss_and_grad(const Network& policy, const nn::Matrix& states, const nn::Matrix& actions,
                                  std::span<const double> weights) {
  if (states.rows == 0 || actions.rows != states.rows || weights.size() != states.rows) {
    throw ShapeError("policy loss: states, actions and weights must align");
  }
  const nn::ForwardTrace trace = nn::forward_trace(policy.params, policy.spec, states);
  const nn::Matrix& out = trace.output();
  if (actions.cols != out.cols) {
    throw ShapeError("policy loss: action width does not match the policy head");
  }
  const double scale = 1.0 / static_cast<double>(states.rows);
  nn::Matrix dout(out.rows, out.cols);
  double loss = 0.0;
  for (std::size_t b = 0; b < out.rows; ++b) {
    for (std::size_t j = 0; j < out.cols; ++j) {
      const double diff = out(b, j) - actions(b, j);
      loss += weights[b] * diff * diff;
      dout(b, j) = 2.0 * weights[b] * diff * scale;
    }
  }
  nn::LossGrad lg{loss * scale, nn::ParamVector(policy.spec)};
  nn::backward(policy.params, policy.spec, trace, dout, lg.grad);
  return lg;
}

void polyak_update(nn::ParamVector& target, const nn::ParamVector& online, double rate) {
  if (target.size() != online.size()) {
    throw ShapeError("polyak_update: parameter lengths differ");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] = (1.0 - rate) * target[i] + rate * online[i];
  }
}

TrainResult iql_train(const data::TransitionDataset& ds, const IqlConfig& cfg) {
  cfg.validate();
  TrainResult result;
  PolicyBundle& bundle = result.bundle;
  const PreparedData data = prepare(ds, bundle, true);
  const std::size_t sd = ds.state_dim;
  const std::size_t ad = ds.action_dim;

  Network value = make_network(sd, cfg.hidden_dims, 1, mix_seed(cfg.seed, 1));
  Network q = make_network(sd + ad, cfg.hidden_dims, 1, mix_seed(cfg.seed, 2));
  Network target_q = q;
  Network policy = make_network(sd, cfg.hidden_dims, ad, mix_seed(cfg.seed, 3));

  nn::OptimizerState value_opt = nn::OptimizerState::adam(cfg.value_lr, value.params.size());
  nn::OptimizerState q_opt = nn::OptimizerState::adam(cfg.critic_lr, q.params.size());
  nn::OptimizerState policy_opt = nn::OptimizerState::adam(cfg.policy_lr, policy.params.size());

  Rng rng(mix_seed(cfg.seed, 4));
  std::vector<std::size_t> idx(cfg.batch_size);
  nn::Matrix s;
  nn::Matrix s2;
  nn::Matrix a;
  std::vector<double> q_targets(cfg.batch_size);
  std::vector<double> td_targets(cfg.batch_size);
  std::vector<double> weights(cfg.batch_size);

  for (std::size_t step = 1; step <= cfg.train_steps; ++step) {
    for (auto& i : idx) {
      i = rng.index(ds.size());
    }
    gather(data.states, idx, s);
    gather(data.next_states, idx, s2);
    gather(data.actions, idx, a);
    const nn::Matrix sa = concat_columns(s, a);

    // (i) value expectile regression toward the target critic
    const nn::Matrix q_bar = nn::forward_batch(target_q.params, target_q.spec, sa);
    std::copy(q_bar.data.begin(), q_bar.data.end(), q_targets.begin());
    const nn::LossGrad v_lg = value_loss_and_grad(value, s, q_targets, cfg.expectile);
    check_finite(v_lg.loss, "value loss", step);
    nn::optimizer_step(value_opt, value.params, v_lg.grad);

    // (ii) critic regression onto r + γ (1 - done) V(s')
    const nn::Matrix v_next = nn::forward_batch(value.params, value.spec, s2);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      td_targets[b] = data.rewards[idx[b]] + cfg.discount * (1.0 - data.done[idx[b]]) * v_next(b, 0);
    }
    const nn::LossGrad q_lg = q_loss_and_grad(q, sa, td_targets);
    check_finite(q_lg.loss, "critic loss", step);
    nn::optimizer_step(q_opt, q.params, q_lg.grad);

    // (iii) advantage-weighted regression onto dataset actions
    const nn::Matrix v_now = nn::forward_batch(value.params, value.spec, s);
    double weight_sum = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      weights[b] = advantage_weight(q_bar(b, 0) - v_now(b, 0), cfg.temperature, cfg.advantage_clip);
      weight_sum += weights[b];
    }
    const nn::LossGrad pi_lg = policy_loss_and_grad(policy, s, a, weights);
    check_finite(pi_lg.loss, "policy loss", step);
    nn::optimizer_step(policy_opt, policy.params, pi_lg.grad);

    polyak_update(target_q.params, q.params, cfg.target_update_rate);

    if (step % cfg.log_every == 0 || step == cfg.train_steps) {
      result.metrics.rows.push_back(
          {step, v_lg.loss, q_lg.loss, pi_lg.loss, weight_sum / static_cast<double>(idx.size())});
    }
  }

  bundle.value = std::move(value);
  bundle.q = std::move(q);
  bundle.target_q = std::move(target_q);
  bundle.policy = std::move(policy);
  return result;
}

TrainResult bc_train(const data::TransitionDataset& ds, const IqlConfig& cfg) {
  cfg.validate();
  TrainResult result;
  PolicyBundle& bundle = result.bundle;
  const PreparedData data = prepare(ds, bundle, false);
  Network policy = make_network(ds.state_dim, cfg.hidden_dims, ds.action_dim, mix_seed(cfg.seed, 3));
  nn::OptimizerState opt = nn::OptimizerState::adam(cfg.policy_lr, policy.params.size());

  Rng rng(mix_seed(cfg.seed, 4));
  std::vector<std::size_t> idx(cfg.batch_size);
  const std::vector<double> weights(cfg.batch_size, 1.0);
  nn::Matrix s;
  nn::Matrix a;
  for (std::size_t step = 1; step <= cfg.train_steps; ++step) {
    for (auto& i : idx) {
      i = rng.index(ds.size());
    }
    gather(data.states, idx, s);
    gather(data.actions, idx, a);
    const nn::LossGrad lg = policy_loss_and_grad(policy, s, a, weights);
    check_finite(lg.loss, "policy loss", step);
    nn::optimizer_step(opt, policy.params, lg.grad);
    if (step % cfg.log_every == 0 || step == cfg.train_steps) {
      result.metrics.rows.push_back({step, 0.0, 0.0, lg.loss, 1.0});
    }
  }
  bundle.policy = std::move(policy);
  return result;
}

EvalResult evaluate(const ActionFn& policy, const envs::EnvSpec& env, std::size_t episodes, std::uint64_t seed) {
  env.validate();
  if (episodes == 0) {
    throw ArgumentError("evaluate: episodes must be >= 1");
  }
  Rng rng(seed);
  EvalResult result;
  for (std::size_t e = 0; e < episodes; ++e) {
    envs::EnvState state = envs::reset(env, rng);
    double total = 0.0;
    bool done = false;
    while (!done) {
      const auto action = policy(state.position);
      envs::StepResult next = envs::step(env, state, action);
      total += next.reward;
      done = next.done;
      state = std::move(next.next);
    }
    result.returns.push_back(total);
  }
  double mean = 0.0;
  for (double r : result.returns) {
    mean += r;
  }
  mean /= static_cast<double>(episodes);
  double var = 0.0;
  for (double r : result.returns) {
    var += (r - mean) * (r - mean);
  }
  result.mean_return = mean;
  result.std_return = std::sqrt(var / static_cast<double>(episodes));
  return result;
}

EvalResult evaluate_policy(const PolicyBundle& bundle, const envs::EnvSpec& env, std::size_t episodes,
                           std::uint64_t seed) {
  if (bundle.state_dim != env.state_dim || bundle.action_dim != env.action_dim) {
    throw ShapeError("evaluate_policy: policy and environment dimensions differ");
  }
  return evaluate([&](std::span<const double> s) { return bundle.act(s); }, env, episodes, seed);
}

ReferenceReturns reference_returns(const envs::EnvSpec& env, std::size_t episodes, std::uint64_t seed) {
  Rng action_rng(mix_seed(seed, 99));
  const auto random_policy = [&](std::span<const double>) {
    std::vector<double> a(env.action_dim);
    for (double& v : a) {
      v = action_rng.uniform(-env.action_bound, env.action_bound);
    }
    return a;
  };
  const auto expert_policy = [&](std::span<const double> s) { return envs::expert_action(env, s); };
  return {evaluate(random_policy, env, episodes, seed).mean_return,
          evaluate(expert_policy, env, episodes, seed).mean_return};
}

double normalized_score(double ret, const ReferenceReturns& ref) {
  if (!(ref.expert != ref.random)) {
    throw ArgumentError("normalized_score: expert and random references coincide");
  }
  return 100.0 * (ret - ref.random) / (ref.expert - ref.random);
}

void save_policy(const PolicyBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_network(bundle.policy, dir / "policy.bin");
  if (bundle.value) {
    write_network(*bundle.value, dir / "value.bin");
  }
  if (bundle.q) {
    write_network(*bundle.q, dir / "q.bin");
  }
  if (bundle.target_q) {
    write_network(*bundle.target_q, dir / "target_q.bin");
  }
  const nlohmann::json meta = {{"state_dim", bundle.state_dim},   {"action_dim", bundle.action_dim},
                               {"state_mean", bundle.state_mean}, {"state_std", bundle.state_std},
                               {"action_mean", bundle.action_mean}, {"action_std", bundle.action_std},
                               {"has_critics", bundle.q.has_value()}};
  std::ofstream os(dir / "policy.json");
  if (!os) {
    throw IoError("cannot write " + (dir / "policy.json").string());
  }
  os << meta.dump(2) << '\n';
}

PolicyBundle load_policy(const std::filesystem::path& dir) {
  std::ifstream is(dir / "policy.json");
  if (!is) {
    throw IoError("cannot open " + (dir / "policy.json").string());
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("policy.json: ") + e.what());
  }
  PolicyBundle bundle;
  bundle.state_dim = meta.at("state_dim").get<std::size_t>();
  bundle.action_dim = meta.at("action_dim").get<std::size_t>();
  bundle.state_mean = meta.at("state_mean").get<std::vector<double>>();
  bundle.state_std = meta.at("state_std").get<std::vector<double>>();
  bundle.action_mean = meta.at("action_mean").get<std::vector<double>>();
  bundle.action_std = meta.at("action_std").get<std::vector<double>>();
  bundle.policy = read_network(dir / "policy.bin");
  if (meta.value("has_critics", false)) {
    bundle.value = read_network(dir / "value.bin");
    bundle.q = read_network(dir / "q.bin");
    bundle.target_q = read_network(dir / "target_q.bin");
  }
  if (bundle.policy.spec.input_dim != bundle.state_dim || bundle.policy.spec.output_dim != bundle.action_dim) {
    throw SchemaError("policy checkpoint does not match policy.json dimensions");
  }
  return bundle;
}

}  // namespace reload::iql
