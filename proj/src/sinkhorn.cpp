#include "reload/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::ot {

namespace {

nn::Matrix cost_matrix(const nn::Matrix& x, const nn::Matrix& y) {
  nn::Matrix c(x.rows, y.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < y.rows; ++j) {
      const auto yj = y.row(j);
      double sum = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double d = xi[k] - yj[k];
        sum += d * d;
      }
      c(i, j) = sum;
    }
  }
  return c;
}

// out_i = -eps * log sum_j exp(log_w + (pot_j - C_ij) / eps), C indexed (i, j)
// when `transpose` is false and (j, i) otherwise.
void softmin(const nn::Matrix& c, bool transpose, double eps, double log_w, const std::vector<double>& pot,
             std::vector<double>& out, std::vector<double>& scratch) {
  const std::size_t n = transpose ? c.cols : c.rows;
  const std::size_t m = pot.size();
  out.resize(n);
  scratch.resize(m);
  for (std::size_t i = 0; i < n; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double cij = transpose ? c(j, i) : c(i, j);
      scratch[j] = (pot[j] - cij) / eps;
      hi = std::max(hi, scratch[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      sum += std::exp(scratch[j] - hi);
    }
    out[i] = -eps * (log_w + hi + std::log(sum));
  }
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

void check_points(const nn::Matrix& m, const char* name) {
  if (m.rows == 0) {
    throw ArgumentError(std::string("sinkhorn: point set ") + name + " is empty");
  }
  for (double v : m.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("sinkhorn: point set ") + name + " has non-finite coordinates");
    }
  }
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) {
    throw ConfigError("SinkhornConfig: epsilon must be positive");
  }
  if (max_iters < 1) {
    throw ConfigError("SinkhornConfig: max_iters must be >= 1");
  }
  if (!(convergence_tol > 0.0)) {
    throw ConfigError("SinkhornConfig: convergence_tol must be positive");
  }
  if (expert_batch < 1) {
    throw ConfigError("SinkhornConfig: expert_batch must be >= 1");
  }
}

nlohmann::json to_json(const SinkhornConfig& cfg) {
  return {{"epsilon", cfg.epsilon},
          {"max_iters", cfg.max_iters},
          {"convergence_tol", cfg.convergence_tol},
          {"cost", "squared_euclidean"},
          {"expert_batch", cfg.expert_batch},
          {"seed", cfg.seed}};
}

SinkhornConfig sinkhorn_config_from_json(const nlohmann::json& j, SinkhornConfig base) {
  base.epsilon = j.value("epsilon", base.epsilon);
  base.max_iters = j.value("max_iters", base.max_iters);
  base.convergence_tol = j.value("convergence_tol", base.convergence_tol);
  base.expert_batch = j.value("expert_batch", base.expert_batch);
  base.seed = j.value("seed", base.seed);
  if (j.contains("cost") && j.at("cost") != "squared_euclidean") {
    throw ConfigError("SinkhornConfig: only squared_euclidean cost is supported");
  }
  base.validate();
  return base;
}

OtResult entropic_ot(const nn::Matrix& x, const nn::Matrix& y, const SinkhornConfig& cfg) {
  cfg.validate();
  check_points(x, "x");
  check_points(y, "y");
  if (x.cols != y.cols) {
    throw ShapeError("sinkhorn: point sets live in different dimensions");
  }
  const nn::Matrix c = cost_matrix(x, y);
  const double log_a = -std::log(static_cast<double>(x.rows));
  const double log_b = -std::log(static_cast<double>(y.rows));

  // Epsilon annealing from the cost diameter down to the target value.
  const double c_max = *std::max_element(c.data.begin(), c.data.end());
  std::vector<double> schedule;
  for (double e = c_max; e > cfg.epsilon; e *= 0.5) {
    schedule.push_back(e);
  }
  schedule.push_back(cfg.epsilon);

  std::vector<double> f(x.rows, 0.0), g(y.rows, 0.0), f_new, g_new, scratch;
  softmin(c, false, schedule.front(), log_b, g, f, scratch);
  softmin(c, true, schedule.front(), log_a, std::vector<double>(x.rows, 0.0), g, scratch);

  auto averaged_update = [&](double eps) {
    softmin(c, false, eps, log_b, g, f_new, scratch);
    softmin(c, true, eps, log_a, f, g_new, scratch);
    double change = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double next = 0.5 * (f[i] + f_new[i]);
      change = std::max(change, std::abs(next - f[i]));
      f[i] = next;
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double next = 0.5 * (g[j] + g_new[j]);
      change = std::max(change, std::abs(next - g[j]));
      g[j] = next;
    }
    return change;
  };

  for (std::size_t k = 0; k + 1 < schedule.size(); ++k) {
    averaged_update(schedule[k]);
  }
  OtResult result;
  while (result.iterations < cfg.max_iters) {
    ++result.iterations;
    if (averaged_update(cfg.epsilon) <= cfg.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  // Final full (non-averaged) update.
  softmin(c, false, cfg.epsilon, log_b, g, f_new, scratch);
  softmin(c, true, cfg.epsilon, log_a, f, g_new, scratch);
  result.value = mean(f_new) + mean(g_new);
  return result;
}

OtResult sinkhorn_divergence(const nn::Matrix& a, const nn::Matrix& b, const SinkhornConfig& cfg) {
  const OtResult ab = entropic_ot(a, b, cfg);
  const OtResult aa = entropic_ot(a, a, cfg);
  const OtResult bb = entropic_ot(b, b, cfg);
  OtResult out;
  out.value = std::max(0.0, ab.value - 0.5 * (aa.value + bb.value));
  out.converged = ab.converged && aa.converged && bb.converged;
  out.iterations = std::max({ab.iterations, aa.iterations, bb.iterations});
  return out;
}

std::vector<double> hybrid_raw_rewards(const rnd::RndModel& model, const data::TransitionDataset& expert,
                                       const data::TransitionDataset& ds, const SinkhornConfig& cfg,
                                       std::size_t window, HybridStats* stats) {
  cfg.validate();
  if (!model.trained) {
    throw StateError("hybrid_annotate: predictor has not been trained");
  }
  if (window < 1) {
    throw ArgumentError("hybrid_annotate: window must be >= 1");
  }
  if (expert.empty()) {
    throw ArgumentError("hybrid_annotate: expert set is empty");
  }
  if (expert.state_dim != model.state_dim || ds.state_dim != model.state_dim) {
    throw ShapeError("hybrid_annotate: dataset state_dim does not match the model");
  }
  HybridStats local;
  HybridStats& st = stats ? *stats : local;

  // Expert batch: a seeded subset without replacement, kept in dataset order.
  std::vector<std::size_t> picks(expert.size());
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  if (cfg.expert_batch < picks.size()) {
    Rng rng(cfg.seed);
    rng.shuffle(std::span<std::size_t>(picks));
    picks.resize(cfg.expert_batch);
    std::sort(picks.begin(), picks.end());
  }
  const nn::Matrix expert_inputs = model.transition_inputs(expert);
  nn::Matrix batch_inputs(picks.size(), expert_inputs.cols);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    std::copy_n(expert_inputs.row(picks[r]).begin(), expert_inputs.cols, batch_inputs.row(r).begin());
  }
  nn::Matrix expert_d = rnd::embedding_discrepancy(model, batch_inputs);

  // Discrepancies are expressed in units of the target embedding's RMS over
  // the expert batch so that epsilon has a fixed meaning across models.
  const nn::Matrix target_emb = nn::forward_batch(model.target_params, model.target_spec, batch_inputs);
  double sq = 0.0;
  for (double v : target_emb.data) {
    sq += v * v;
  }
  const double rms = std::sqrt(sq / static_cast<double>(target_emb.data.size()));
  const double inv = rms > 0.0 ? 1.0 / rms : 1.0;
  for (double& v : expert_d.data) {
    v *= inv;
  }
  nn::Matrix agent_d = rnd::embedding_discrepancy(model, model.transition_inputs(ds));
  for (double& v : agent_d.data) {
    v *= inv;
  }

  const OtResult expert_self = entropic_ot(expert_d, expert_d, cfg);
  std::vector<double> raw(ds.size(), 0.0);
  for (std::size_t e = 0; e < ds.episode_count(); ++e) {
    const auto [begin, end] = ds.episode_range(e);
    const std::size_t len = end - begin;
    const std::size_t w = std::min(window, len);
    // Windows repeat near episode edges; solve each distinct one once.
    std::map<std::size_t, double> cache;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t centre = i - begin;
      std::size_t lo = centre >= w / 2 ? centre - w / 2 : 0;
      lo = std::min(lo, len - w);
      auto it = cache.find(lo);
      if (it == cache.end()) {
        nn::Matrix pts(w, agent_d.cols);
        std::copy_n(agent_d.row(begin + lo).begin(), w * agent_d.cols, pts.data.begin());
        const OtResult cross = entropic_ot(pts, expert_d, cfg);
        const OtResult self = entropic_ot(pts, pts, cfg);
        const double s = std::max(0.0, cross.value - 0.5 * (self.value + expert_self.value));
        ++st.solves;
        if (!(cross.converged && self.converged && expert_self.converged)) {
          ++st.unconverged;
        }
        if (!std::isfinite(s)) {
          throw NumericError("hybrid_annotate: non-finite divergence in episode " + std::to_string(e));
        }
        it = cache.emplace(lo, -s).first;
      }
      raw[i] = it->second;
    }
  }
  return raw;
}

data::TransitionDataset hybrid_annotate(const rnd::RndModel& model, const data::TransitionDataset& expert,
                                        const data::TransitionDataset& ds, const SinkhornConfig& cfg,
                                        std::size_t window, const rnd::RewardConfig& reward, HybridStats* stats) {
  HybridStats local;
  HybridStats& st = stats ? *stats : local;
  const std::vector<double> raw = hybrid_raw_rewards(model, expert, ds, cfg, window, &st);
  return rnd::apply_rewards(ds, raw, reward,
                            {{"reward_source", "reload+otr"},
                             {"epsilon", cfg.epsilon},
                             {"window", window},
                             {"sinkhorn_unconverged", st.unconverged}});
}

}  // namespace reload::ot
