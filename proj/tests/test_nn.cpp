#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "reload/error.hpp"
#include "reload/nn.hpp"
#include "reload/random.hpp"

using namespace reload;
using namespace reload::nn;

namespace {

// Nested-loop forward pass written against the documented layout: per layer,
// `in` rows of `out` weights, then `out` biases.
std::vector<double> naive_forward(const std::vector<double>& p, const MlpSpec& spec, std::vector<double> x) {
  std::size_t offset = 0;
  std::vector<std::size_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = p[offset + in * out + o];
      for (std::size_t i = 0; i < in; ++i) {
        acc += x[i] * p[offset + i * out + o];
      }
      const bool hidden = l + 2 < dims.size();
      if (hidden) {
        acc = spec.activation == Activation::relu ? std::max(0.0, acc) : std::tanh(acc);
      }
      y[o] = acc;
    }
    offset += in * out + out;
    x = y;
  }
  return x;
}

Matrix random_batch(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) {
    v = rng.normal();
  }
  return m;
}

double max_rel(const ParamVector& a, const ParamVector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST(MlpSpec, ParamCountOfRndDefaultLayout) {
  const MlpSpec spec{2, {256, 256}, 128, Activation::relu, 0};
  // Sum of layer shape products: (2*256 + 256) + (256*256 + 256) + (256*128 + 128).
  const std::size_t expected = 2 * 256 + 256 + 256 * 256 + 256 + 256 * 128 + 128;
  EXPECT_EQ(expected, 99'456u);
  EXPECT_EQ(spec.param_count(), expected);
  EXPECT_EQ(init_mlp(spec).size(), expected);
}

TEST(MlpSpec, RejectsZeroDimensions) {
  EXPECT_THROW((MlpSpec{0, {4}, 1}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{2, {}, 1}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{2, {0}, 1}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{2, {4}, 0}.validate()), ConfigError);
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
  for (auto act : {Activation::relu, Activation::tanh}) {
    const MlpSpec spec{3, {5, 4}, 2, act, 0};
    const ParamVector p(spec);
    const std::vector<double> x{0.3, -2.0, 7.0};
    for (double v : forward(p, spec, x)) {
      EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Forward, SingleAffineNeuron) {
  // One hidden unit feeding an identity output: relu(2*3 + 1) = 7, then 1*7 + 0.
  const MlpSpec spec{1, {1}, 1, Activation::relu, 0};
  const ParamVector p = ParamVector::unflatten(spec, {2.0, 1.0, 1.0, 0.0});
  EXPECT_DOUBLE_EQ(forward(p, spec, std::vector<double>{3.0})[0], 7.0);
}

TEST(Forward, MatchesNaiveOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpSpec spec{1 + rng.index(6), {1 + rng.index(20), 1 + rng.index(20)}, 1 + rng.index(5),
                       trial % 2 ? Activation::tanh : Activation::relu, rng.bits()};
    const ParamVector p = init_mlp(spec);
    std::vector<double> x(spec.input_dim);
    for (double& v : x) {
      v = rng.normal();
    }
    const auto got = forward(p, spec, x);
    const auto want = naive_forward(p.flatten(), spec, x);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], want[i], 1e-12);
    }
  }
}

TEST(Forward, BatchMatchesRowwise) {
  Rng rng(5);
  const MlpSpec spec{4, {16}, 3, Activation::relu, 9};
  const ParamVector p = init_mlp(spec);
  const Matrix x = random_batch(7, 4, rng);
  const Matrix y = forward_batch(p, spec, x);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto row = forward(p, spec, x.row(r));
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(y(r, c), row[c], 1e-12);
    }
  }
}

TEST(Forward, WrongInputSizeIsShapeError) {
  const MlpSpec spec{3, {4}, 1, Activation::relu, 0};
  const ParamVector p = init_mlp(spec);
  EXPECT_THROW(forward(p, spec, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(Forward, BiasFreeLinearLayerIsHomogeneous) {
  // relu is positively homogeneous, so with zero biases doubling the input doubles the output.
  const MlpSpec spec{2, {3}, 2, Activation::relu, 4};
  ParamVector p = init_mlp(spec);
  for (const auto& layer : p.layout()) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      p[layer.bias_offset + o] = 0.0;
    }
  }
  const std::vector<double> x{0.4, -1.3};
  const std::vector<double> x2{0.8, -2.6};
  const auto a = forward(p, spec, x);
  const auto b = forward(p, spec, x2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(b[i], 2.0 * a[i]);
  }
}

TEST(Init, UniformWithinFanInBound) {
  const MlpSpec spec{9, {16}, 4, Activation::relu, 3};
  const ParamVector p = init_mlp(spec);
  for (const auto& layer : p.layout()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = layer.weight_offset; i < layer.bias_offset + layer.out; ++i) {
      EXPECT_LE(std::abs(p[i]), bound);
    }
  }
  EXPECT_EQ(init_mlp(spec), p);
  EXPECT_FALSE(init_mlp(MlpSpec{9, {16}, 4, Activation::relu, 4}) == p);
}

TEST(MseAndGrad, PerfectFitHasZeroLossAndGradient) {
  Rng rng(8);
  const MlpSpec spec{3, {8}, 2, Activation::tanh, 1};
  const ParamVector p = init_mlp(spec);
  const Matrix x = random_batch(5, 3, rng);
  const LossGrad lg = mse_and_grad(p, spec, x, forward_batch(p, spec, x));
  EXPECT_EQ(lg.loss, 0.0);
  for (double g : lg.grad.values()) {
    EXPECT_EQ(g, 0.0);
  }
}

TEST(MseAndGrad, HandDerivedLinearCase) {
  // f(x) = v * relu(w x + b) + c with w=2, b=1, v=3, c=0.5 on x=1, y=4.
  // h = 3, f = 9.5, e = 5.5, L = 30.25.
  // dL/dc = 2e = 11, dL/dv = 2e h = 33, dL/dw = 2e v x = 33, dL/db = 2e v = 33.
  const MlpSpec spec{1, {1}, 1, Activation::relu, 0};
  const ParamVector p = ParamVector::unflatten(spec, {2.0, 1.0, 3.0, 0.5});
  const LossGrad lg = mse_and_grad(p, spec, Matrix::from_rows({{1.0}}), Matrix::from_rows({{4.0}}));
  EXPECT_DOUBLE_EQ(lg.loss, 30.25);
  EXPECT_DOUBLE_EQ(lg.grad[0], 33.0);
  EXPECT_DOUBLE_EQ(lg.grad[1], 33.0);
  EXPECT_DOUBLE_EQ(lg.grad[2], 33.0);
  EXPECT_DOUBLE_EQ(lg.grad[3], 11.0);
}

TEST(MseAndGrad, EmptyBatchIsArgumentError) {
  const MlpSpec spec{2, {2}, 1, Activation::relu, 0};
  EXPECT_THROW(mse_and_grad(init_mlp(spec), spec, Matrix(0, 2), Matrix(0, 1)), ArgumentError);
}

TEST(MseAndGrad, MatchesFiniteDifferencesOnRandomInstances) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const MlpSpec spec{1 + rng.index(5), {1 + rng.index(12), 1 + rng.index(12)}, 1 + rng.index(4),
                       trial % 2 ? Activation::tanh : Activation::relu, rng.bits()};
    const ParamVector p = init_mlp(spec);
    const Matrix x = random_batch(4, spec.input_dim, rng);
    const Matrix y = random_batch(4, spec.output_dim, rng);
    const LossGrad lg = mse_and_grad(p, spec, x, y);
    EXPECT_LE(max_rel(lg.grad, fd_gradient(p, spec, x, y, 1e-5)), 1e-4) << "trial " << trial;
  }
}

TEST(FdGradient, QuadraticIsExactToTruncation) {
  // L(p) = 3 p^2 - 2 p; central differences are exact for quadratics up to roundoff.
  const MlpSpec spec{1, {1}, 1, Activation::relu, 0};
  ParamVector p(spec);
  p[0] = 1.7;
  const auto g = fd_gradient([](const ParamVector& q) { return 3.0 * q[0] * q[0] - 2.0 * q[0]; }, p, 1e-4);
  EXPECT_NEAR(g[0], 6.0 * 1.7 - 2.0, 1e-8);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
}

TEST(FdGradient, ZeroGradientPoint) {
  Rng rng(2);
  const MlpSpec spec{2, {4}, 1, Activation::tanh, 6};
  const ParamVector p = init_mlp(spec);
  const Matrix x = random_batch(3, 2, rng);
  const ParamVector g = fd_gradient(p, spec, x, forward_batch(p, spec, x), 1e-5);
  for (double v : g.values()) {
    EXPECT_LE(std::abs(v), 1e-8);
  }
}

TEST(Optimizer, SgdStepIsExact) {
  const MlpSpec spec{1, {1}, 1, Activation::relu, 0};
  ParamVector p(spec);
  ParamVector g(spec);
  p[0] = 1.0;
  g[0] = 2.0;
  OptimizerState st = OptimizerState::sgd(0.5, p.size());
  optimizer_step(st, p, g);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Optimizer, ZeroGradientLeavesParamsUnchanged) {
  const MlpSpec spec{2, {3}, 1, Activation::relu, 7};
  const ParamVector start = init_mlp(spec);
  for (auto st : {OptimizerState::sgd(0.1, start.size()), OptimizerState::adam(0.1, start.size())}) {
    ParamVector p = start;
    optimizer_step(st, p, ParamVector(spec));
    EXPECT_EQ(p, start);
  }
}

TEST(Optimizer, LengthMismatchIsShapeError) {
  const MlpSpec a{2, {3}, 1, Activation::relu, 0};
  const MlpSpec b{2, {4}, 1, Activation::relu, 0};
  ParamVector p(a);
  OptimizerState st = OptimizerState::adam(0.1, p.size());
  EXPECT_THROW(optimizer_step(st, p, ParamVector(b)), ShapeError);
}

TEST(Optimizer, AdamMatchesScalarRecurrenceOnQuadratic) {
  // Minimize (p - 3)^2 from p = 0; compare with an independent Adam recurrence.
  const MlpSpec spec{1, {1}, 1, Activation::relu, 0};
  ParamVector p(spec);
  OptimizerState st = OptimizerState::adam(0.05, p.size());
  double q = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    ParamVector g(spec);
    g[0] = 2.0 * (p[0] - 3.0);
    optimizer_step(st, p, g);
    const double gq = 2.0 * (q - 3.0);
    m = 0.9 * m + 0.1 * gq;
    v = 0.999 * v + 0.001 * gq * gq;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    q -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p[0], q, 1e-9);
  EXPECT_LT(std::abs(p[0] - 3.0), 1e-3);
}

TEST(Optimizer, SgdFitsOneHiddenUnitRegression) {
  // y = 2x + 1 on x in [0, 1]; relu unit with positive init stays active.
  const MlpSpec spec{1, {1}, 1, Activation::relu, 0};
  ParamVector p = ParamVector::unflatten(spec, {0.5, 0.5, 0.5, 0.0});
  Matrix x(8, 1), y(8, 1);
  for (std::size_t i = 0; i < 8; ++i) {
    x(i, 0) = static_cast<double>(i) / 7.0;
    y(i, 0) = 2.0 * x(i, 0) + 1.0;
  }
  const double initial = mse_loss(p, spec, x, y);
  OptimizerState st = OptimizerState::sgd(0.1, p.size());
  for (int i = 0; i < 500; ++i) {
    optimizer_step(st, p, mse_and_grad(p, spec, x, y).grad);
  }
  EXPECT_LE(mse_loss(p, spec, x, y), initial / 100.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const MlpSpec spec{5, {7, 3}, 2, Activation::tanh, 123};
  const ParamVector p = init_mlp(spec);
  const auto path = std::filesystem::temp_directory_path() / "reload_nn_ckpt.bin";
  save_checkpoint(path, spec, p);
  const auto [spec2, p2] = load_checkpoint(path);
  EXPECT_EQ(spec2, spec);
  EXPECT_EQ(p2, p);
  EXPECT_EQ(param_hash(p2), param_hash(p));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
  const auto path = std::filesystem::temp_directory_path() / "reload_nn_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a checkpoint", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}
