#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "reload/dataset.hpp"
#include "reload/envs.hpp"
#include "reload/error.hpp"
#include "reload/iql.hpp"
#include "reload/random.hpp"

using namespace reload;
using namespace reload::iql;

namespace {

data::TransitionDataset repeated(const std::vector<double>& s, const std::vector<double>& a, double r,
                                 std::size_t n) {
  data::TransitionDataset ds;
  ds.state_dim = s.size();
  ds.action_dim = a.size();
  std::vector<data::Transition> ep(n, data::Transition{s, a, s, r, false});
  ds.append_episode(ep);
  return ds;
}

IqlConfig fast_config(std::size_t steps) {
  IqlConfig cfg;
  cfg.train_steps = steps;
  cfg.batch_size = 32;
  cfg.log_every = steps;
  return cfg;
}

nn::Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  nn::Matrix m(rows, cols);
  for (double& v : m.data) {
    v = rng.normal();
  }
  return m;
}

double max_rel(const nn::LossGrad& lg, const nn::ParamVector& fd) {
  const double floor = 1e-6 * std::max(1.0, std::abs(lg.loss));
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double denom = std::max({std::abs(lg.grad[i]), std::abs(fd[i]), floor});
    worst = std::max(worst, std::abs(lg.grad[i] - fd[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST(Expectile, DirectEvaluation) {
  EXPECT_DOUBLE_EQ(expectile_loss(2.0, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(expectile_loss(1.0, 0.7), 0.7);
  EXPECT_DOUBLE_EQ(expectile_loss(-1.0, 0.7), 0.3);
}

TEST(Expectile, NonNegativeZeroOnlyAtOriginAndMirrorSymmetric) {
  Rng rng(3);
  EXPECT_EQ(expectile_loss(0.0, 0.8), 0.0);
  for (int i = 0; i < 200; ++i) {
    const double u = rng.uniform(-5.0, 5.0);
    const double tau = rng.uniform(0.01, 0.99);
    EXPECT_GT(expectile_loss(u, tau), 0.0);
    // 1 - (1 - tau) need not round back to tau.
    EXPECT_NEAR(expectile_loss(u, tau), expectile_loss(-u, 1.0 - tau), 1e-14 * u * u);
  }
}

TEST(Expectile, ValueHeadLearnsSampleExpectile) {
  // Grid-search oracle for the 0.9-expectile of {0, 10}.
  const std::vector<double> sample{0.0, 10.0};
  double best_m = 0.0;
  double best = 1e300;
  for (int k = 0; k <= 1'000'000; ++k) {
    const double m = 10.0 * k / 1'000'000.0;
    const double l = expectile_loss(sample[0] - m, 0.9) + expectile_loss(sample[1] - m, 0.9);
    if (l < best) {
      best = l;
      best_m = m;
    }
  }
  EXPECT_NEAR(best_m, 9.0, 1e-3);

  // A value network fed a constant input and trained on the same targets.
  const nn::MlpSpec spec{1, {4}, 1, nn::Activation::relu, 5};
  Network v{spec, nn::init_mlp(spec)};
  nn::OptimizerState opt = nn::OptimizerState::adam(0.05, v.params.size());
  const nn::Matrix states(2, 1, 1.0);
  for (int step = 0; step < 4000; ++step) {
    const nn::LossGrad lg = value_loss_and_grad(v, states, sample, 0.9);
    nn::optimizer_step(opt, v.params, lg.grad);
  }
  EXPECT_NEAR(nn::forward(v.params, spec, std::vector<double>{1.0})[0], best_m, 1e-3);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const auto act = trial % 2 ? nn::Activation::tanh : nn::Activation::relu;
    const nn::MlpSpec scalar{3, {7, 5}, 1, act, rng.bits()};
    const nn::MlpSpec head{3, {6}, 2, act, rng.bits()};
    const Network v{scalar, nn::init_mlp(scalar)};
    const Network pi{head, nn::init_mlp(head)};
    const nn::Matrix x = random_matrix(5, 3, rng);
    const nn::Matrix acts = random_matrix(5, 2, rng);
    std::vector<double> targets(5), weights(5);
    for (std::size_t b = 0; b < 5; ++b) {
      targets[b] = rng.normal();
      weights[b] = advantage_weight(rng.normal(), 3.0, 100.0);
    }
    const auto vl = value_loss_and_grad(v, x, targets, 0.8);
    const auto v_fd = nn::fd_gradient(
        [&](const nn::ParamVector& p) { return value_loss_and_grad(Network{scalar, p}, x, targets, 0.8).loss; },
        v.params, 1e-5);
    EXPECT_LE(max_rel(vl, v_fd), 1e-4);
    const auto ql = q_loss_and_grad(v, x, targets);
    const auto q_fd = nn::fd_gradient(
        [&](const nn::ParamVector& p) { return q_loss_and_grad(Network{scalar, p}, x, targets).loss; }, v.params,
        1e-5);
    EXPECT_LE(max_rel(ql, q_fd), 1e-4);
    const auto pl = policy_loss_and_grad(pi, x, acts, weights);
    const auto p_fd = nn::fd_gradient(
        [&](const nn::ParamVector& p) { return policy_loss_and_grad(Network{head, p}, x, acts, weights).loss; },
        pi.params, 1e-5);
    EXPECT_LE(max_rel(pl, p_fd), 1e-4);
  }
}

TEST(AdvantageWeight, BoundedAndFlatAtZeroTemperature) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const double w = advantage_weight(rng.uniform(-50.0, 50.0), 6.0, 100.0);
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, 100.0);
  }
  // As temperature vanishes every sample gets weight 1 and the policy loss is plain BC.
  EXPECT_NEAR(advantage_weight(3.0, 1e-12, 100.0), 1.0, 1e-10);
  EXPECT_NEAR(advantage_weight(-3.0, 1e-12, 100.0), 1.0, 1e-10);
}

TEST(Polyak, ConvexCombinationAndShrinkingGap) {
  const nn::MlpSpec spec{2, {3}, 1, nn::Activation::relu, 1};
  const nn::ParamVector online = nn::init_mlp(spec);
  nn::ParamVector target = nn::init_mlp(nn::MlpSpec{2, {3}, 1, nn::Activation::relu, 2});
  const nn::ParamVector start = target;
  polyak_update(target, online, 0.25);
  for (std::size_t i = 0; i < target.size(); ++i) {
    EXPECT_DOUBLE_EQ(target[i], 0.75 * start[i] + 0.25 * online[i]);
  }
  double gap = 1e300;
  for (int k = 0; k < 50; ++k) {
    double g = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      g = std::max(g, std::abs(target[i] - online[i]));
    }
    EXPECT_LE(g, gap);
    gap = g;
    polyak_update(target, online, 0.005);
  }
  EXPECT_THROW(polyak_update(target, nn::ParamVector(nn::MlpSpec{2, {4}, 1}), 0.1), ShapeError);
}

TEST(IqlTrain, ConstantRewardWithNegligibleDiscountGivesQEqualReward) {
  IqlConfig cfg = fast_config(3000);
  cfg.discount = 1e-9;
  cfg.critic_lr = 1e-2;
  cfg.value_lr = 1e-2;
  const TrainResult r = iql_train(repeated({0.3, -0.2}, {0.05, 0.05}, 2.0, 64), cfg);
  ASSERT_TRUE(r.bundle.q.has_value());
  const Network& q = *r.bundle.q;
  // State and action have zero spread, so both standardize to zero.
  const double q_val = nn::forward(q.params, q.spec, std::vector<double>(4, 0.0))[0];
  EXPECT_NEAR(q_val, 2.0, 1e-2);
  EXPECT_FALSE(r.metrics.rows.empty());
}

TEST(IqlTrain, DeterministicInSeed) {
  envs::GeneratorSpec gen;
  gen.quality = envs::PolicyQuality::medium;
  gen.n_episodes = 10;
  gen.seed = 2;
  const auto ds = envs::generate_dataset(envs::EnvSpec::point_reach(), gen);
  const IqlConfig cfg = fast_config(200);
  const TrainResult a = iql_train(ds, cfg);
  const TrainResult b = iql_train(ds, cfg);
  EXPECT_EQ(a.bundle.policy.params, b.bundle.policy.params);
  EXPECT_EQ(a.bundle.q->params, b.bundle.q->params);
}

TEST(IqlTrain, UnlabeledDataIsRejected) {
  data::TransitionDataset ds = repeated({0.0}, {0.0}, 1.0, 4);
  for (auto& t : ds.transitions) {
    t.r.reset();
  }
  EXPECT_THROW(iql_train(ds, fast_config(10)), ArgumentError);
}

TEST(BcTrain, OverfitsRepeatedPair) {
  IqlConfig cfg = fast_config(2000);
  const TrainResult r = bc_train(repeated({0.4, 0.9}, {0.07, -0.03}, 0.0, 16), cfg);
  const auto a = r.bundle.act(std::vector<double>{0.4, 0.9});
  EXPECT_NEAR(a[0], 0.07, 1e-3);
  EXPECT_NEAR(a[1], -0.03, 1e-3);
}

TEST(BcTrain, RecoversLinearMap) {
  // a = W s + c with W = [[0.5, -0.2], [0.1, 0.3]], c = [0.05, -0.1].
  data::TransitionDataset ds;
  ds.state_dim = 2;
  ds.action_dim = 2;
  Rng rng(7);
  std::vector<data::Transition> ep;
  for (int i = 0; i < 400; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    ep.push_back({{x, y}, std::vector<double>{0.5 * x - 0.2 * y + 0.05, 0.1 * x + 0.3 * y - 0.1}, {x, y}, 0.0,
                  false});
  }
  ds.append_episode(ep);
  IqlConfig cfg = fast_config(6000);
  cfg.policy_lr = 1e-3;
  const TrainResult r = bc_train(ds, cfg);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-0.9, 0.9);
    const double y = rng.uniform(-0.9, 0.9);
    const auto a = r.bundle.act(std::vector<double>{x, y});
    worst = std::max(worst, std::abs(a[0] - (0.5 * x - 0.2 * y + 0.05)));
    worst = std::max(worst, std::abs(a[1] - (0.1 * x + 0.3 * y - 0.1)));
  }
  EXPECT_LT(worst, 1e-2);
}

TEST(Evaluate, ZeroPolicyFromFixedStart) {
  envs::EnvSpec env = envs::EnvSpec::point_reach();
  env.start_low = {0.0, 0.0};
  env.start_high = {0.0, 0.0};
  env.horizon = 5;
  const ActionFn zero = [](std::span<const double>) { return std::vector<double>{0.0, 0.0}; };
  const EvalResult r = evaluate(zero, env, 3, 1);
  EXPECT_NEAR(r.mean_return, -5.0 * std::sqrt(2.0), 1e-12);
  EXPECT_EQ(r.std_return, 0.0);
  EXPECT_EQ(evaluate(zero, env, 1, 9).std_return, 0.0);
}

TEST(Evaluate, SameSeedSameStatistics) {
  const envs::EnvSpec env = envs::EnvSpec::point_reach();
  const ActionFn expert = [&](std::span<const double> s) { return envs::expert_action(env, s); };
  const EvalResult a = evaluate(expert, env, 10, 42);
  const EvalResult b = evaluate(expert, env, 10, 42);
  EXPECT_EQ(a.returns, b.returns);
}

TEST(Evaluate, NormalizedScoreEndpoints) {
  const ReferenceReturns ref{-100.0, -20.0};
  EXPECT_DOUBLE_EQ(normalized_score(-100.0, ref), 0.0);
  EXPECT_DOUBLE_EQ(normalized_score(-20.0, ref), 100.0);
  EXPECT_THROW(normalized_score(1.0, ReferenceReturns{5.0, 5.0}), ArgumentError);
}

TEST(PolicyIo, RoundTripPreservesActions) {
  envs::GeneratorSpec gen;
  gen.n_episodes = 5;
  const auto ds = envs::generate_dataset(envs::EnvSpec::point_reach(), gen);
  const TrainResult r = iql_train(ds, fast_config(50));
  const auto dir = std::filesystem::temp_directory_path() / "reload_policy_io";
  save_policy(r.bundle, dir);
  const PolicyBundle back = load_policy(dir);
  const std::vector<double> s{0.2, -0.6};
  EXPECT_EQ(back.act(s), r.bundle.act(s));
  EXPECT_EQ(back.q->params, r.bundle.q->params);
  std::filesystem::remove_all(dir);
}

TEST(IqlConfigJson, RoundTripAndValidation) {
  IqlConfig cfg = IqlConfig::antmaze();
  cfg.hidden_dims = {8};
  const IqlConfig back = iql_config_from_json(to_json(cfg));
  EXPECT_EQ(back.expectile, cfg.expectile);
  EXPECT_EQ(back.temperature, cfg.temperature);
  EXPECT_EQ(back.hidden_dims, cfg.hidden_dims);
  EXPECT_THROW(iql_config_from_json({{"expectile", 1.0}}), ConfigError);
  EXPECT_THROW(iql_config_from_json({{"discount", 0.0}}), ConfigError);
}
