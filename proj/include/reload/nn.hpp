#pragma once

// Fixed-topology multilayer perceptrons with exact reverse-mode gradients.
//
// Weights of a layer mapping `in` inputs to `out` outputs are stored input-major
// (`in` rows of `out` weights) followed by the `out` biases. Hidden layers apply
// the configured activation; the output layer is affine.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace reload::nn {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims{1};
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  // Throws ConfigError on any zero dimension or empty hidden list.
  void validate() const;
  std::size_t layer_count() const { return hidden_dims.size() + 1; }
  std::size_t layer_input(std::size_t layer) const;
  std::size_t layer_output(std::size_t layer) const;
  std::size_t param_count() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerSlice {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

std::vector<LayerSlice> layer_layout(const MlpSpec& spec);

class ParamVector {
 public:
  ParamVector() = default;
  // Zero-filled parameters laid out for `spec`.
  explicit ParamVector(const MlpSpec& spec);

  static ParamVector unflatten(const MlpSpec& spec, std::vector<double> values);
  const std::vector<double>& flatten() const { return values_; }

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<LayerSlice>& layout() const { return layout_; }

  void fill(double value);

  friend bool operator==(const ParamVector& a, const ParamVector& b) { return a.values_ == b.values_; }

 private:
  std::vector<double> values_;
  std::vector<LayerSlice> layout_;
};

// Row-major dense matrix; one row per sample.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double value = 0.0) : rows(r), cols(c), data(r * c, value) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

ParamVector init_mlp(const MlpSpec& spec);

std::vector<double> forward(const ParamVector& params, const MlpSpec& spec, std::span<const double> x);
Matrix forward_batch(const ParamVector& params, const MlpSpec& spec, const Matrix& x);

// Layer activations kept for backpropagation; activations[0] is the input batch.
struct ForwardTrace {
  std::vector<Matrix> activations;
  const Matrix& output() const { return activations.back(); }
};

ForwardTrace forward_trace(const ParamVector& params, const MlpSpec& spec, const Matrix& x);

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
void backward(const ParamVector& params, const MlpSpec& spec, const ForwardTrace& trace,
              const Matrix& output_grad, ParamVector& grad);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean over the batch of the squared L2 distance between f(x) and y.
LossGrad mse_and_grad(const ParamVector& params, const MlpSpec& spec, const Matrix& batch_x,
                      const Matrix& batch_y);

double mse_loss(const ParamVector& params, const MlpSpec& spec, const Matrix& batch_x,
                const Matrix& batch_y);

// Central differences of an arbitrary scalar loss, one coordinate at a time.
ParamVector fd_gradient(const std::function<double(const ParamVector&)>& loss, const ParamVector& params,
                        double h);

ParamVector fd_gradient(const ParamVector& params, const MlpSpec& spec, const Matrix& batch_x,
                        const Matrix& batch_y, double h);

enum class OptimizerKind : std::uint8_t { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  static OptimizerState sgd(double learning_rate, std::size_t param_count);
  static OptimizerState adam(double learning_rate, std::size_t param_count);
};

void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad);

// Binary checkpoint: "RLDNN1", the spec fields, then the raw parameters, all little-endian.
void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params);
std::pair<MlpSpec, ParamVector> load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the parameter bytes.
std::uint64_t param_hash(const ParamVector& params);

}  // namespace reload::nn
