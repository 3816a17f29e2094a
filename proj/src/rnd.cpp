#include "reload/rnd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::rnd {

namespace {

constexpr std::size_t kChunkRows = 512;

nn::Matrix rows_of(const nn::Matrix& m, std::size_t begin, std::size_t end) {
  nn::Matrix out(end - begin, m.cols);
  std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols),
            m.data.begin() + static_cast<std::ptrdiff_t>(end * m.cols), out.data.begin());
  return out;
}

std::string scale_mode_name(ScaleMode mode) { return mode == ScaleMode::none ? "none" : "range_1000"; }

}  // namespace

std::vector<double> RndModel::transition_input(std::span<const double> s, std::span<const double> s_next) const {
  if (s.size() != state_dim || s_next.size() != state_dim) {
    throw ShapeError("transition has state dimension " + std::to_string(s.size()) + "/" +
                     std::to_string(s_next.size()) + ", model expects " + std::to_string(state_dim));
  }
  std::vector<double> x(s.begin(), s.end());
  x.insert(x.end(), s_next.begin(), s_next.end());
  if (norm_stats) {
    return data::standardize(x, *norm_stats);
  }
  return x;
}

nn::Matrix RndModel::transition_inputs(const data::TransitionDataset& ds) const {
  nn::Matrix inputs(ds.size(), input_dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = transition_input(ds.transitions[i].s, ds.transitions[i].s_next);
    std::copy(x.begin(), x.end(), inputs.row(i).begin());
  }
  return inputs;
}

void RndModel::copy_target_into_predictor() {
  predictor_params = target_params;
}

RndModel build_rnd(std::size_t state_dim, const RndArchitecture& arch, RndSeeds seeds,
                   std::optional<data::NormStats> norm_stats) {
  if (state_dim == 0) {
    throw ConfigError("build_rnd: state_dim must be >= 1");
  }
  if (arch.embedding_dim == 0) {
    throw ConfigError("build_rnd: embedding dimension must be >= 1");
  }
  if (seeds.target == seeds.predictor) {
    throw ConfigError("build_rnd: target and predictor seeds must differ");
  }
  if (norm_stats && norm_stats->mean.size() != 2 * state_dim) {
    throw ConfigError("build_rnd: norm stats must cover 2*state_dim components");
  }
  RndModel model;
  model.state_dim = state_dim;
  model.target_spec = nn::MlpSpec{2 * state_dim, arch.hidden_dims, arch.embedding_dim, nn::Activation::relu,
                                  seeds.target};
  model.predictor_spec = model.target_spec;
  model.predictor_spec.seed = seeds.predictor;
  model.target_params = nn::init_mlp(model.target_spec);
  model.predictor_params = nn::init_mlp(model.predictor_spec);
  model.norm_stats = std::move(norm_stats);
  return model;
}

void RndTrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0 || iterations == 0) {
    throw ConfigError("RndTrainConfig: learning rate, batch size and iterations must be positive");
  }
}

std::vector<double> train_predictor_on_inputs(RndModel& model, const nn::Matrix& inputs,
                                              const RndTrainConfig& cfg) {
  cfg.validate();
  if (inputs.rows == 0) {
    throw ArgumentError("train_predictor: empty expert set");
  }
  if (inputs.cols != model.input_dim()) {
    throw ShapeError("train_predictor: input width does not match the model");
  }
  Rng rng(cfg.seed);
  nn::OptimizerState opt = cfg.optimizer == nn::OptimizerKind::adam
                               ? nn::OptimizerState::adam(cfg.learning_rate, model.predictor_params.size())
                               : nn::OptimizerState::sgd(cfg.learning_rate, model.predictor_params.size());
  std::vector<double> losses;
  losses.reserve(cfg.iterations);
  nn::Matrix batch(cfg.batch_size, inputs.cols);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto src = inputs.row(rng.index(inputs.rows));
      std::copy(src.begin(), src.end(), batch.row(b).begin());
    }
    // The target only supplies regression labels; no gradient reaches it.
    const nn::Matrix labels = nn::forward_batch(model.target_params, model.target_spec, batch);
    nn::LossGrad lg = nn::mse_and_grad(model.predictor_params, model.predictor_spec, batch, labels);
    if (!std::isfinite(lg.loss)) {
      throw NumericError("train_predictor: non-finite loss at iteration " + std::to_string(it));
    }
    losses.push_back(lg.loss);
    nn::optimizer_step(opt, model.predictor_params, lg.grad);
  }
  model.trained = true;
  return losses;
}

std::vector<double> train_predictor(RndModel& model, const data::TransitionDataset& expert,
                                    const RndTrainConfig& cfg) {
  if (expert.empty()) {
    throw ArgumentError("train_predictor: empty expert set");
  }
  if (expert.tag != data::DatasetTag::expert || expert.has_actions()) {
    throw ArgumentError("train_predictor: expects an action-free expert dataset");
  }
  return train_predictor_on_inputs(model, model.transition_inputs(expert), cfg);
}

nn::Matrix embedding_discrepancy(const RndModel& model, const nn::Matrix& inputs) {
  if (inputs.cols != model.input_dim()) {
    throw ShapeError("embedding_discrepancy: input width does not match the model");
  }
  nn::Matrix out(inputs.rows, model.embedding_dim());
  for (std::size_t begin = 0; begin < inputs.rows; begin += kChunkRows) {
    const std::size_t end = std::min(inputs.rows, begin + kChunkRows);
    const nn::Matrix chunk = rows_of(inputs, begin, end);
    const nn::Matrix f = nn::forward_batch(model.target_params, model.target_spec, chunk);
    const nn::Matrix g = nn::forward_batch(model.predictor_params, model.predictor_spec, chunk);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      out.data[begin * out.cols + i] = f.data[i] - g.data[i];
    }
  }
  return out;
}

std::vector<double> prediction_errors(const RndModel& model, const nn::Matrix& inputs) {
  const nn::Matrix d = embedding_discrepancy(model, inputs);
  std::vector<double> errors(d.rows, 0.0);
  for (std::size_t r = 0; r < d.rows; ++r) {
    double sum = 0.0;
    for (double v : d.row(r)) {
      sum += v * v;
    }
    errors[r] = sum;
  }
  return errors;
}

double intrinsic_reward(const RndModel& model, std::span<const double> s, std::span<const double> s_next) {
  if (!model.trained) {
    throw StateError("intrinsic_reward: predictor has not been trained");
  }
  const auto x = model.transition_input(s, s_next);
  nn::Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data.begin());
  return -prediction_errors(model, in).front();
}

void RewardConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ConfigError("RewardConfig: alpha and beta must be positive");
  }
  if (!std::isfinite(bias)) {
    throw ConfigError("RewardConfig: bias must be finite");
  }
}

nlohmann::json to_json(const RewardConfig& cfg) {
  return {{"alpha", cfg.alpha},
          {"beta", cfg.beta},
          {"squash", cfg.squash},
          {"scale_mode", scale_mode_name(cfg.scale_mode)},
          {"bias", cfg.bias}};
}

RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig base) {
  RewardConfig cfg = base;
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.beta = j.value("beta", cfg.beta);
  cfg.squash = j.value("squash", cfg.squash);
  cfg.bias = j.value("bias", cfg.bias);
  const std::string mode = j.value("scale_mode", scale_mode_name(cfg.scale_mode));
  if (mode == "none") {
    cfg.scale_mode = ScaleMode::none;
  } else if (mode == "range_1000") {
    cfg.scale_mode = ScaleMode::range_1000;
  } else {
    throw ConfigError("unknown scale_mode \"" + mode + "\"");
  }
  cfg.validate();
  return cfg;
}

double squash_reward(double r, const RewardConfig& cfg) {
  if (!(r <= 0.0)) {
    throw ContractError("squash_reward: raw reward must be <= 0, got " + std::to_string(r));
  }
  return cfg.alpha * std::exp(cfg.beta * r);
}

double scale_factor(const RewardConfig& cfg, std::optional<ReturnRange> range) {
  if (cfg.scale_mode == ScaleMode::none) {
    return 1.0;
  }
  if (!range) {
    throw ScalingError("range_1000 scaling needs the episode return range");
  }
  if (!(range->max_return > range->min_return)) {
    throw ScalingError("degenerate return range (max == min); use scale_mode none");
  }
  return 1000.0 / (range->max_return - range->min_return);
}

std::vector<double> finalize_rewards(std::span<const double> raw, const RewardConfig& cfg,
                                     std::optional<ReturnRange> range) {
  cfg.validate();
  const double factor = scale_factor(cfg, range);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double r = cfg.squash ? squash_reward(raw[i], cfg) : raw[i];
    out[i] = r * factor + cfg.bias;
  }
  return out;
}

ReturnRange return_range(const data::TransitionDataset& ds, std::span<const double> rewards) {
  if (rewards.size() != ds.size() || ds.episode_count() == 0) {
    throw ShapeError("return_range: rewards must align with a nonempty dataset");
  }
  ReturnRange range{INFINITY, -INFINITY};
  for (std::size_t e = 0; e < ds.episode_count(); ++e) {
    const auto [begin, end] = ds.episode_range(e);
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      total += rewards[i];
    }
    range.min_return = std::min(range.min_return, total);
    range.max_return = std::max(range.max_return, total);
  }
  return range;
}

data::TransitionDataset apply_rewards(const data::TransitionDataset& ds, std::span<const double> raw,
                                      const RewardConfig& cfg, nlohmann::json provenance) {
  cfg.validate();
  if (raw.size() != ds.size()) {
    throw ShapeError("apply_rewards: one raw reward per transition is required");
  }
  std::optional<ReturnRange> range;
  if (cfg.scale_mode == ScaleMode::range_1000) {
    std::vector<double> squashed(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      squashed[i] = cfg.squash ? squash_reward(raw[i], cfg) : raw[i];
    }
    range = return_range(ds, squashed);
  }
  const std::vector<double> rewards = finalize_rewards(raw, cfg, range);

  data::TransitionDataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.transitions[i].r = rewards[i];
  }
  out.tag = data::DatasetTag::annotated;
  provenance["alpha"] = cfg.alpha;
  provenance["beta"] = cfg.beta;
  provenance["squash"] = cfg.squash;
  provenance["scale"] = scale_factor(cfg, range);
  provenance["bias"] = cfg.bias;
  if (!out.header_extra.is_object()) {
    out.header_extra = nlohmann::json::object();
  }
  out.header_extra.update(provenance);
  return out;
}

data::TransitionDataset annotate_dataset(const RndModel& model, const data::TransitionDataset& ds,
                                         const RewardConfig& cfg) {
  if (!model.trained) {
    throw StateError("annotate_dataset: predictor has not been trained");
  }
  if (ds.state_dim != model.state_dim) {
    throw ShapeError("annotate_dataset: dataset state_dim does not match the model");
  }
  std::vector<double> raw = prediction_errors(model, model.transition_inputs(ds));
  for (double& r : raw) {
    r = -r;
  }
  return apply_rewards(ds, raw, cfg, {{"reward_source", "reload"}});
}

void save_model(const RndModel& model, const RewardConfig& reward, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir / "target.bin", model.target_spec, model.target_params);
  nn::save_checkpoint(dir / "predictor.bin", model.predictor_spec, model.predictor_params);
  nlohmann::json sidecar = {{"state_dim", model.state_dim},
                            {"trained", model.trained},
                            {"reward", to_json(reward)},
                            {"norm_stats", model.norm_stats ? data::to_json(*model.norm_stats) : nlohmann::json()}};
  std::ofstream os(dir / "rnd.json");
  if (!os) {
    throw IoError("cannot write " + (dir / "rnd.json").string());
  }
  os << sidecar.dump(2) << '\n';
}

std::pair<RndModel, RewardConfig> load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "rnd.json");
  if (!is) {
    throw IoError("cannot open " + (dir / "rnd.json").string());
  }
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("rnd.json: ") + e.what());
  }
  RndModel model;
  model.state_dim = sidecar.at("state_dim").get<std::size_t>();
  model.trained = sidecar.at("trained").get<bool>();
  std::tie(model.target_spec, model.target_params) = nn::load_checkpoint(dir / "target.bin");
  std::tie(model.predictor_spec, model.predictor_params) = nn::load_checkpoint(dir / "predictor.bin");
  if (model.target_spec.input_dim != 2 * model.state_dim || model.predictor_spec.input_dim != 2 * model.state_dim ||
      model.target_spec.output_dim != model.predictor_spec.output_dim ||
      model.target_spec.hidden_dims != model.predictor_spec.hidden_dims) {
    throw SchemaError("RND checkpoints disagree with each other or with rnd.json");
  }
  if (!sidecar.at("norm_stats").is_null()) {
    model.norm_stats = data::norm_stats_from_json(sidecar.at("norm_stats"));
  }
  return {std::move(model), reward_config_from_json(sidecar.at("reward"))};
}

}  // namespace reload::rnd
