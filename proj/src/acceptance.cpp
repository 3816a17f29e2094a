#include "reload/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "reload/dataset.hpp"
#include "reload/envs.hpp"
#include "reload/error.hpp"
#include "reload/iql.hpp"
#include "reload/nn.hpp"
#include "reload/pipeline.hpp"
#include "reload/random.hpp"
#include "reload/rnd.hpp"
#include "reload/sinkhorn.hpp"
#include "reload/theorem.hpp"

namespace reload::acceptance {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

nn::Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  nn::Matrix m(rows, cols);
  for (double& v : m.data) {
    v = scale * rng.normal();
  }
  return m;
}

// Central differences carry roundoff of order eps_mach * |loss| / h, so
// components below 1e-6 * max(1, |loss|) are compared on that absolute scale.
double max_rel_error(const nn::LossGrad& analytic, const nn::ParamVector& numeric) {
  const double floor = 1e-6 * std::max(1.0, std::abs(analytic.loss));
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.grad.size(); ++i) {
    const double a = analytic.grad[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

// ---- C1 -------------------------------------------------------------------

CriterionResult gradient_oracle() {
  CriterionResult r{1, "gradient oracle", false, "", 0.0};
  constexpr double kH = 1e-5;
  constexpr double kTol = 1e-4;
  constexpr std::size_t kBatch = 6;
  Rng rng(2024);
  double worst[4] = {0.0, 0.0, 0.0, 0.0};
  for (int instance = 0; instance < 20; ++instance) {
    const std::size_t hidden_layers = 1 + rng.index(2);
    std::vector<std::size_t> hidden;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      hidden.push_back(1 + rng.index(64));
    }
    const std::size_t in = 1 + rng.index(8);
    const std::size_t out = 1 + rng.index(8);
    const auto act = rng.index(2) == 0 ? nn::Activation::relu : nn::Activation::tanh;
    const nn::MlpSpec spec{in, hidden, out, act, rng.bits()};
    const nn::ParamVector params = nn::init_mlp(spec);
    const nn::Matrix x = random_matrix(kBatch, in, rng);

    // Distillation loss against a random target batch.
    {
      const nn::Matrix y = random_matrix(kBatch, out, rng);
      const nn::LossGrad lg = nn::mse_and_grad(params, spec, x, y);
      const auto numeric = nn::fd_gradient(
          [&](const nn::ParamVector& p) {
            const nn::Matrix o = nn::forward_batch(p, spec, x);
            double loss = 0.0;
            for (std::size_t i = 0; i < o.data.size(); ++i) {
              loss += (o.data[i] - y.data[i]) * (o.data[i] - y.data[i]);
            }
            return loss / static_cast<double>(kBatch);
          },
          params, kH);
      worst[0] = std::max(worst[0], max_rel_error(lg, numeric));
    }

    // Scalar-output heads for the value and critic losses.
    const nn::MlpSpec scalar_spec{in, hidden, 1, act, spec.seed + 1};
    const iql::Network scalar{scalar_spec, nn::init_mlp(scalar_spec)};
    std::vector<double> targets(kBatch);
    for (double& t : targets) {
      t = rng.normal();
    }
    {
      const double tau = 0.7;
      const nn::LossGrad lg = iql::value_loss_and_grad(scalar, x, targets, tau);
      const auto numeric = nn::fd_gradient(
          [&](const nn::ParamVector& p) {
            const nn::Matrix v = nn::forward_batch(p, scalar_spec, x);
            double loss = 0.0;
            for (std::size_t b = 0; b < kBatch; ++b) {
              const double u = targets[b] - v(b, 0);
              loss += (u < 0.0 ? 1.0 - tau : tau) * u * u;
            }
            return loss / static_cast<double>(kBatch);
          },
          scalar.params, kH);
      worst[1] = std::max(worst[1], max_rel_error(lg, numeric));
    }
    {
      const nn::LossGrad lg = iql::q_loss_and_grad(scalar, x, targets);
      const auto numeric = nn::fd_gradient(
          [&](const nn::ParamVector& p) {
            const nn::Matrix q = nn::forward_batch(p, scalar_spec, x);
            double loss = 0.0;
            for (std::size_t b = 0; b < kBatch; ++b) {
              loss += (q(b, 0) - targets[b]) * (q(b, 0) - targets[b]);
            }
            return loss / static_cast<double>(kBatch);
          },
          scalar.params, kH);
      worst[2] = std::max(worst[2], max_rel_error(lg, numeric));
    }
    {
      const iql::Network policy{spec, params};
      const nn::Matrix actions = random_matrix(kBatch, out, rng);
      std::vector<double> weights(kBatch);
      for (double& w : weights) {
        w = std::min(std::exp(3.0 * rng.normal()), 100.0);
      }
      const nn::LossGrad lg = iql::policy_loss_and_grad(policy, x, actions, weights);
      const auto numeric = nn::fd_gradient(
          [&](const nn::ParamVector& p) {
            const nn::Matrix o = nn::forward_batch(p, spec, x);
            double loss = 0.0;
            for (std::size_t b = 0; b < kBatch; ++b) {
              for (std::size_t j = 0; j < out; ++j) {
                loss += weights[b] * (o(b, j) - actions(b, j)) * (o(b, j) - actions(b, j));
              }
            }
            return loss / static_cast<double>(kBatch);
          },
          params, kH);
      worst[3] = std::max(worst[3], max_rel_error(lg, numeric));
    }
  }
  const double overall = *std::max_element(std::begin(worst), std::end(worst));
  r.passed = overall <= kTol;
  r.detail = "max rel err rnd " + sci(worst[0]) + ", expectile " + sci(worst[1]) + ", q " + sci(worst[2]) +
             ", policy " + sci(worst[3]) + " (tol 1e-4)";
  return r;
}

// ---- C2 -------------------------------------------------------------------

rnd::RndModel trained_point_reach_model(std::uint64_t seed, std::size_t k_expert, data::TransitionDataset* unlabeled,
                                        bool standardize = true) {
  const envs::EnvSpec env = envs::EnvSpec::point_reach();
  envs::GeneratorSpec gen;
  gen.quality = envs::PolicyQuality::replay_mixture;
  gen.seed = mix_seed(7, seed);
  data::TransitionDataset ds = envs::generate_dataset(env, gen);
  const data::TransitionDataset expert = data::select_expert_trajectories(ds, k_expert);
  rnd::RndModel model =
      rnd::build_rnd(env.state_dim, {}, {mix_seed(seed, 31), mix_seed(seed, 32)},
                     standardize ? std::optional<data::NormStats>(data::compute_norm_stats(ds)) : std::nullopt);
  rnd::RndTrainConfig tc = rnd::RndTrainConfig::mujoco();
  tc.seed = mix_seed(seed, 33);
  rnd::train_predictor(model, expert, tc);
  if (unlabeled) {
    *unlabeled = std::move(ds);
  }
  return model;
}

CriterionResult reward_bounds() {
  CriterionResult r{2, "reward bounds", false, "", 0.0};
  const rnd::RndModel model = trained_point_reach_model(1, 1, nullptr);
  const rnd::RewardConfig cfg;
  Rng rng(99);
  std::vector<double> raw(10'000);
  std::vector<double> squashed(raw.size());
  std::size_t raw_violations = 0;
  std::size_t range_violations = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double s[2] = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const double s2[2] = {s[0] + rng.uniform(-0.1, 0.1), s[1] + rng.uniform(-0.1, 0.1)};
    raw[i] = rnd::intrinsic_reward(model, s, s2);
    if (!(raw[i] <= 0.0)) {
      ++raw_violations;
      continue;
    }
    squashed[i] = rnd::squash_reward(raw[i], cfg);
    if (!(squashed[i] > 0.0 && squashed[i] <= cfg.alpha)) {
      ++range_violations;
    }
  }
  const double rho = raw_violations == 0 ? spearman(raw, squashed) : 0.0;
  r.passed = raw_violations == 0 && range_violations == 0 && rho == 1.0;
  r.detail = std::to_string(raw_violations) + " raw > 0, " + std::to_string(range_violations) +
             " squashed outside (0, alpha], spearman " + sci(rho) + " over 10000 transitions";
  return r;
}

// ---- C3 -------------------------------------------------------------------

CriterionResult theorem_check() {
  CriterionResult r{3, "support separation", false, "", 0.0};
  const auto t0 = Clock::now();
  int mean_ok = 0;
  int ratio_ok = 0;
  int identity_ok = 0;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    theorem::DistributionPairSpec spec;
    spec.seed = seed;
    const theorem::TheoremReport rep = theorem::verify_theorem(spec, theorem::TheoremConfig{});
    mean_ok += rep.held_out && rep.mu_e < rep.overall_mean ? 1 : 0;
    ratio_ok += rep.ratio >= 2.0 ? 1 : 0;
    identity_ok += rep.decomposition_rel_error <= 1e-10 ? 1 : 0;
    min_ratio = std::min(min_ratio, rep.ratio);
  }
  const double elapsed = seconds_since(t0);
  r.passed = mean_ok == 10 && ratio_ok >= 9 && identity_ok == 10 && elapsed < 120.0;
  r.detail = "mu_E < overall in " + std::to_string(mean_ok) + "/10, ratio >= 2 in " + std::to_string(ratio_ok) +
             "/10 (min " + sci(min_ratio) + "), identity in " + std::to_string(identity_ok) + "/10";
  return r;
}

// ---- C4 -------------------------------------------------------------------

CriterionResult expert_discrimination() {
  CriterionResult r{4, "expert discrimination", false, "", 0.0};
  const auto t0 = Clock::now();
  const envs::EnvSpec env = envs::EnvSpec::point_reach();
  const rnd::RewardConfig cfg;
  // Mean AUC over seeds 1..5; the unstandardized variant is reported only.
  auto mean_auc = [&](bool standardize, std::string& per_seed) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const rnd::RndModel model = trained_point_reach_model(seed, 1, nullptr, standardize);
      auto rewards = [&](envs::PolicyQuality quality, std::uint64_t stream) {
        envs::GeneratorSpec gen;
        gen.quality = quality;
        gen.n_episodes = 20;
        gen.seed = mix_seed(seed, stream);
        const data::TransitionDataset ds = envs::generate_dataset(env, gen);
        std::vector<double> out;
        for (const auto& t : ds.transitions) {
          out.push_back(rnd::squash_reward(rnd::intrinsic_reward(model, t.s, t.s_next), cfg));
        }
        return out;
      };
      const double a = auc(rewards(envs::PolicyQuality::expert, 41), rewards(envs::PolicyQuality::random, 42));
      total += a;
      per_seed += (per_seed.empty() ? "" : " ") + sci(a);
    }
    return total / 5.0;
  };
  std::string per_seed;
  const double mean = mean_auc(true, per_seed);
  const double elapsed = seconds_since(t0);
  std::string raw_seeds;
  const double raw_mean = mean_auc(false, raw_seeds);
  r.passed = mean >= 0.9 && elapsed < 120.0;
  r.detail = "mean AUC " + sci(mean) + " (seeds: " + per_seed + "); without input standardization " + sci(raw_mean);
  return r;
}

// ---- C5/C6 ----------------------------------------------------------------

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  std::iota(s.begin(), s.end(), std::uint64_t{1});
  return s;
}

CriterionResult end_to_end(const fs::path& dir) {
  CriterionResult r{5, "reload vs true-reward iql", false, "", 0.0};
  const auto t0 = Clock::now();
  bool ok = true;
  for (auto kind : {envs::EnvKind::point_reach, envs::EnvKind::gridworld_sparse}) {
    pipeline::PipelineConfig cfg = pipeline::PipelineConfig::preset(kind);
    cfg.arms = {pipeline::Arm::reload, pipeline::Arm::iql_true_reward};
    cfg.seeds = seed_range(5);
    cfg.output_dir = dir / cfg.env.name();
    const pipeline::RunReport rep = pipeline::run_pipeline(cfg);
    const double reload = rep.arm(pipeline::Arm::reload).mean_score;
    const double truth = rep.arm(pipeline::Arm::iql_true_reward).mean_score;
    ok = ok && reload >= 0.8 * truth;
    r.detail += (r.detail.empty() ? "" : "; ") + rep.env_name + " score reload " + sci(reload) + " vs true " +
                sci(truth);
  }
  const double elapsed = seconds_since(t0);
  r.passed = ok && elapsed < 900.0;
  return r;
}

CriterionResult bc_comparison(const fs::path& dir) {
  CriterionResult r{6, "reload vs bc", false, "", 0.0};
  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::preset(envs::EnvKind::point_reach);
  cfg.generator.quality = envs::PolicyQuality::medium;
  cfg.arms = {pipeline::Arm::reload, pipeline::Arm::bc};
  cfg.seeds = seed_range(5);
  cfg.output_dir = dir;
  const pipeline::RunReport rep = pipeline::run_pipeline(cfg);
  const double reload = rep.arm(pipeline::Arm::reload).mean_return;
  const double bc = rep.arm(pipeline::Arm::bc).mean_return;
  r.passed = reload >= bc;
  r.detail = "medium tier mean return reload " + sci(reload) + " vs bc " + sci(bc);
  return r;
}

// ---- C7/C10 ---------------------------------------------------------------

std::size_t count_lines(const fs::path& path) {
  std::ifstream is(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(is, line)) {
    n += line.empty() ? 0 : 1;
  }
  return n;
}

const pipeline::ArmSummary* find_summary(const pipeline::SweepReport& rep, const std::string& value,
                                         pipeline::Arm arm) {
  for (const auto& row : rep.summary) {
    if (row.axis_value == value && row.stats.arm == arm) {
      return &row.stats;
    }
  }
  return nullptr;
}

CriterionResult fraction_trend(const fs::path& dir) {
  CriterionResult r{7, "data-fraction trend", false, "", 0.0};
  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::preset(envs::EnvKind::point_reach);
  cfg.arms = {pipeline::Arm::iql_true_reward, pipeline::Arm::reload};
  cfg.seeds = seed_range(3);
  cfg.output_dir = dir;
  const pipeline::SweepReport rep = pipeline::run_sweep(cfg, pipeline::SweepAxis::data_fraction);

  bool structure = rep.summary.size() == 8;
  for (const auto& value : pipeline::axis_values(pipeline::SweepAxis::data_fraction)) {
    for (auto arm : cfg.arms) {
      structure = structure && find_summary(rep, value, arm) != nullptr;
    }
  }
  const std::size_t csv_rows = count_lines(dir / "sweep_data_fraction.csv");
  const std::size_t summary_rows = count_lines(dir / "sweep_data_fraction_summary.csv");
  structure = structure && csv_rows == 1 + 4 * 2 * cfg.seeds.size() && summary_rows == 1 + 8;

  const auto* quarter = find_summary(rep, "0.25", pipeline::Arm::reload);
  const auto* full = find_summary(rep, "1.0", pipeline::Arm::reload);
  const bool trend = quarter && full && quarter->mean_score >= 0.9 * full->mean_score;
  r.passed = structure && trend;
  r.detail = std::string("structure ") + (structure ? "ok" : "BAD") + " (" + std::to_string(csv_rows - 1) +
             " long rows); reload score at 0.25 " + (quarter ? sci(quarter->mean_score) : "n/a") + " vs 1.0 " +
             (full ? sci(full->mean_score) : "n/a");
  return r;
}

CriterionResult squashing_ablation(const fs::path& dir) {
  CriterionResult r{10, "squashing ablation", false, "", 0.0};
  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::preset(envs::EnvKind::point_reach);
  cfg.arms = {pipeline::Arm::reload};
  cfg.seeds = seed_range(3);
  cfg.output_dir = dir;
  const pipeline::SweepReport rep = pipeline::run_sweep(cfg, pipeline::SweepAxis::reward_params);
  const bool two_rows = rep.summary.size() == 2 && count_lines(dir / "sweep_reward_params_summary.csv") == 3;
  bool close = false;
  if (rep.summary.size() == 2) {
    const double a = rep.summary[0].stats.mean_score;
    const double b = rep.summary[1].stats.mean_score;
    close = std::abs(a - b) <= 0.3 * std::max(std::abs(a), std::abs(b));
    r.detail = "score (a5,b0.5) " + sci(a) + " vs (a10,b5) " + sci(b);
  }
  r.passed = two_rows && close;
  r.detail += two_rows ? ", two summary rows" : ", summary rows missing";
  return r;
}

// ---- C8 -------------------------------------------------------------------

CriterionResult sinkhorn_correctness() {
  CriterionResult r{8, "sinkhorn correctness", false, "", 0.0};
  Rng rng(8);
  ot::SinkhornConfig cfg;

  double worst_self = 0.0;
  for (std::size_t n : {1u, 10u, 50u, 200u}) {
    for (std::size_t dim : {2u, 8u}) {
      const nn::Matrix a = random_matrix(n, dim, rng);
      worst_self = std::max(worst_self, ot::sinkhorn_divergence(a, a, cfg).value);
    }
  }

  ot::SinkhornConfig fine = cfg;
  fine.epsilon = 1e-3;
  double worst_singleton = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const nn::Matrix a = random_matrix(1, 3, rng);
    const nn::Matrix b = random_matrix(1, 3, rng);
    double exact = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      exact += (a.data[k] - b.data[k]) * (a.data[k] - b.data[k]);
    }
    const double s = ot::sinkhorn_divergence(a, b, fine).value;
    worst_singleton = std::max(worst_singleton, std::abs(s - exact) / exact);
  }

  ot::SinkhornConfig mid = cfg;
  mid.epsilon = 0.01;
  double worst_assign = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    constexpr std::size_t n = 50;
    const nn::Matrix a = random_matrix(n, 2, rng);
    nn::Matrix b = random_matrix(n, 2, rng);
    for (std::size_t i = 0; i < n; ++i) {
      b(i, 0) += 1.5;
    }
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dx = a(i, 0) - b(j, 0);
        const double dy = a(i, 1) - b(j, 1);
        cost[i * n + j] = dx * dx + dy * dy;
      }
    }
    const double exact = assignment_cost(cost, n) / static_cast<double>(n);
    const double s = ot::sinkhorn_divergence(a, b, mid).value;
    worst_assign = std::max(worst_assign, std::abs(s - exact) / exact);
  }
  r.passed = worst_self <= 1e-6 && worst_singleton <= 0.01 && worst_assign <= 0.05;
  r.detail = "self " + sci(worst_self) + " (<= 1e-6), singleton rel " + sci(worst_singleton) +
             " (<= 0.01), assignment rel " + sci(worst_assign) + " (<= 0.05)";
  return r;
}

// ---- C9 -------------------------------------------------------------------

std::string file_digest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (is.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CriterionResult determinism(const fs::path& dir) {
  CriterionResult r{9, "annotation determinism and runtime", false, "", 0.0};
  fs::create_directories(dir);
  constexpr std::size_t kTransitions = 100'000;
  const envs::EnvSpec env = envs::EnvSpec::point_reach();
  envs::GeneratorSpec gen;
  gen.quality = envs::PolicyQuality::replay_mixture;
  gen.n_episodes = 2600;
  gen.seed = 9;
  const data::TransitionDataset generated = envs::generate_dataset(env, gen);
  if (generated.size() < kTransitions) {
    throw StateError("determinism check: generator produced too few transitions");
  }
  data::TransitionDataset ds;
  ds.state_dim = generated.state_dim;
  ds.action_dim = generated.action_dim;
  for (std::size_t e = 0; e < generated.episode_count() && ds.size() < kTransitions; ++e) {
    const auto [b, end] = generated.episode_range(e);
    const std::size_t take = std::min(end - b, kTransitions - ds.size());
    ds.append_episode(std::span<const data::Transition>(generated.transitions.data() + b, take));
  }

  double worst = 0.0;
  std::vector<std::string> digests;
  for (int run = 0; run < 2; ++run) {
    const auto t0 = Clock::now();
    const data::TransitionDataset expert = data::select_expert_trajectories(ds, 1);
    rnd::RndModel model = rnd::build_rnd(env.state_dim, {}, {31, 32}, data::compute_norm_stats(ds));
    rnd::RndTrainConfig tc = rnd::RndTrainConfig::mujoco();
    tc.seed = 33;
    rnd::train_predictor(model, expert, tc);
    const data::TransitionDataset annotated = rnd::annotate_dataset(model, ds, rnd::RewardConfig{});
    const fs::path out = dir / ("annotated_run" + std::to_string(run) + ".jsonl");
    data::save_dataset(annotated, out);
    worst = std::max(worst, seconds_since(t0));
    digests.push_back(file_digest(out));
  }
  r.passed = ds.size() == kTransitions && digests[0] == digests[1] && worst < 60.0;
  r.detail = std::to_string(ds.size()) + " transitions, slowest run " + sci(worst) + " s, digests " + digests[0] +
             (digests[0] == digests[1] ? " == " : " != ") + digests[1];
  return r;
}

}  // namespace

double assignment_cost(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) {
    throw ShapeError("assignment_cost: cost must be n x n");
  }
  // Shortest augmenting path with row/column potentials; 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) {
          continue;
        }
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) {
    total += cost[(match[j] - 1) * n + (j - 1)];
  }
  return total;
}

double auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) {
    throw ArgumentError("auc: both classes need samples");
  }
  std::vector<double> neg = negatives;
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) {
      ++j;
    }
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = rank;
    }
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("spearman: need two equal-length samples of size >= 2");
  }
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) {
    return 0.0;
  }
  // Identical rankings give exactly 1.
  if (rx == ry) {
    return 1.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

CriterionResult run_criterion(int id, const fs::path& work_dir) {
  const auto t0 = Clock::now();
  const fs::path dir = work_dir / ("c" + std::to_string(id));
  CriterionResult r;
  switch (id) {
    case 1:
      r = gradient_oracle();
      break;
    case 2:
      r = reward_bounds();
      break;
    case 3:
      r = theorem_check();
      break;
    case 4:
      r = expert_discrimination();
      break;
    case 5:
      r = end_to_end(dir);
      break;
    case 6:
      r = bc_comparison(dir);
      break;
    case 7:
      r = fraction_trend(dir);
      break;
    case 8:
      r = sinkhorn_correctness();
      break;
    case 9:
      r = determinism(dir);
      break;
    case 10:
      r = squashing_ablation(dir);
      break;
    default:
      throw ArgumentError("unknown acceptance criterion " + std::to_string(id));
  }
  r.seconds = seconds_since(t0);
  if (id == 1 && r.seconds >= 30.0) {
    r.passed = false;
    r.detail += "; exceeded 30 s";
  }
  return r;
}

std::string format_line(const CriterionResult& r) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.1f", r.seconds);
  return std::string(r.passed ? "[PASS]" : "[FAIL]") + " C" + std::to_string(r.id) + " " + r.name + ": " + r.detail +
         " (" + secs + " s)";
}

}  // namespace reload::acceptance
