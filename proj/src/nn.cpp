#include "reload/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include <cblas.h>

#include "reload/error.hpp"
#include "reload/random.hpp"

namespace reload::nn {

namespace {

constexpr char kMagic[6] = {'R', 'L', 'D', 'N', 'N', '1'};

int blas_int(std::size_t n) {
  if (n > static_cast<std::size_t>(std::numeric_limits<int>::max())) {
    throw ShapeError("matrix dimension exceeds the BLAS index range");
  }
  return static_cast<int>(n);
}

void check_matrix(const Matrix& m, std::size_t cols, const char* what) {
  if (m.cols != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                     std::to_string(m.cols));
  }
}

void apply_activation(Activation act, Matrix& m) {
  if (act == Activation::relu) {
    for (double& v : m.data) {
      v = v > 0.0 ? v : 0.0;
    }
  } else {
    for (double& v : m.data) {
      v = std::tanh(v);
    }
  }
}

// y = x W + b for one layer.
void affine(std::span<const double> params, const LayerSlice& layer, const Matrix& x, Matrix& y) {
  y = Matrix(x.rows, layer.out);
  if (x.rows == 0) {
    return;
  }
  const double* w = params.data() + layer.weight_offset;
  const double* b = params.data() + layer.bias_offset;
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::copy(b, b + layer.out, y.data.data() + r * layer.out);
  }
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, blas_int(x.rows), blas_int(layer.out), blas_int(layer.in),
              1.0, x.data.data(), blas_int(layer.in), w, blas_int(layer.out), 1.0, y.data.data(),
              blas_int(layer.out));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) {
    bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) {
    throw IoError("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw ConfigError("MlpSpec: input and output dimensions must be >= 1");
  }
  if (hidden_dims.empty()) {
    throw ConfigError("MlpSpec: at least one hidden layer is required");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) {
      throw ConfigError("MlpSpec: hidden dimensions must be >= 1");
    }
  }
  if (activation != Activation::relu && activation != Activation::tanh) {
    throw ConfigError("MlpSpec: unknown activation");
  }
}

std::size_t MlpSpec::layer_input(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_dims[layer - 1];
}

std::size_t MlpSpec::layer_output(std::size_t layer) const {
  return layer == hidden_dims.size() ? output_dim : hidden_dims[layer];
}

std::size_t MlpSpec::param_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    total += (layer_input(l) + 1) * layer_output(l);
  }
  return total;
}

std::vector<LayerSlice> layer_layout(const MlpSpec& spec) {
  spec.validate();
  std::vector<LayerSlice> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    LayerSlice slice;
    slice.in = spec.layer_input(l);
    slice.out = spec.layer_output(l);
    slice.weight_offset = offset;
    slice.bias_offset = offset + slice.in * slice.out;
    offset = slice.bias_offset + slice.out;
    layout.push_back(slice);
  }
  return layout;
}

ParamVector::ParamVector(const MlpSpec& spec) : values_(spec.param_count(), 0.0), layout_(layer_layout(spec)) {}

ParamVector ParamVector::unflatten(const MlpSpec& spec, std::vector<double> values) {
  if (values.size() != spec.param_count()) {
    throw ShapeError("unflatten: expected " + std::to_string(spec.param_count()) + " values, got " +
                     std::to_string(values.size()));
  }
  ParamVector p;
  p.values_ = std::move(values);
  p.layout_ = layer_layout(spec);
  return p;
}

void ParamVector::fill(double value) {
  for (double& v : values_) {
    v = value;
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) {
    return {};
  }
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols) {
      throw ShapeError("Matrix::from_rows: ragged rows");
    }
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

ParamVector init_mlp(const MlpSpec& spec) {
  ParamVector params(spec);
  Rng rng(spec.seed);
  for (const LayerSlice& layer : params.layout()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
      params[layer.weight_offset + i] = rng.uniform(-bound, bound);
    }
    for (std::size_t o = 0; o < layer.out; ++o) {
      params[layer.bias_offset + o] = rng.uniform(-bound, bound);
    }
  }
  return params;
}

ForwardTrace forward_trace(const ParamVector& params, const MlpSpec& spec, const Matrix& x) {
  check_matrix(x, spec.input_dim, "forward");
  if (params.size() != spec.param_count()) {
    throw ShapeError("forward: parameter count does not match spec");
  }
  ForwardTrace trace;
  trace.activations.reserve(spec.layer_count() + 1);
  trace.activations.push_back(x);
  const auto& layout = params.layout();
  for (std::size_t l = 0; l < layout.size(); ++l) {
    Matrix y;
    affine(params.values(), layout[l], trace.activations.back(), y);
    if (l + 1 < layout.size()) {
      apply_activation(spec.activation, y);
    }
    trace.activations.push_back(std::move(y));
  }
  return trace;
}

Matrix forward_batch(const ParamVector& params, const MlpSpec& spec, const Matrix& x) {
  check_matrix(x, spec.input_dim, "forward");
  if (params.size() != spec.param_count()) {
    throw ShapeError("forward: parameter count does not match spec");
  }
  const auto& layout = params.layout();
  Matrix current = x;
  Matrix next;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    affine(params.values(), layout[l], current, next);
    if (l + 1 < layout.size()) {
      apply_activation(spec.activation, next);
    }
    std::swap(current, next);
  }
  return current;
}

std::vector<double> forward(const ParamVector& params, const MlpSpec& spec, std::span<const double> x) {
  if (x.size() != spec.input_dim) {
    throw ShapeError("forward: input has " + std::to_string(x.size()) + " components, spec expects " +
                     std::to_string(spec.input_dim));
  }
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data.begin());
  return forward_batch(params, spec, in).data;
}

void backward(const ParamVector& params, const MlpSpec& spec, const ForwardTrace& trace,
              const Matrix& output_grad, ParamVector& grad) {
  const auto& layout = params.layout();
  if (grad.size() != params.size()) {
    throw ShapeError("backward: gradient buffer does not match parameters");
  }
  check_matrix(output_grad, spec.output_dim, "backward");
  if (output_grad.rows != trace.output().rows) {
    throw ShapeError("backward: batch size mismatch");
  }

  Matrix delta = output_grad;
  for (std::size_t l = layout.size(); l-- > 0;) {
    const LayerSlice& layer = layout[l];
    const Matrix& input = trace.activations[l];
    double* gw = grad.values().data() + layer.weight_offset;
    double* gb = grad.values().data() + layer.bias_offset;
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* d = delta.data.data() + r * layer.out;
      for (std::size_t o = 0; o < layer.out; ++o) {
        gb[o] += d[o];
      }
    }
    const int rows = blas_int(delta.rows);
    const int in = blas_int(layer.in);
    const int out = blas_int(layer.out);
    // dW += x^T delta
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, in, out, rows, 1.0, input.data.data(), in,
                delta.data.data(), out, 1.0, gw, out);
    if (l == 0) {
      break;
    }

    // Propagate to the previous layer's post-activation, then through its activation.
    const double* w = params.values().data() + layer.weight_offset;
    Matrix prev(delta.rows, layer.in);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, rows, in, out, 1.0, delta.data.data(), out, w, out, 0.0,
                prev.data.data(), in);
    if (spec.activation == Activation::relu) {
      for (std::size_t i = 0; i < prev.data.size(); ++i) {
        prev.data[i] = input.data[i] > 0.0 ? prev.data[i] : 0.0;
      }
    } else {
      for (std::size_t i = 0; i < prev.data.size(); ++i) {
        prev.data[i] *= 1.0 - input.data[i] * input.data[i];
      }
    }
    delta = std::move(prev);
  }
}

LossGrad mse_and_grad(const ParamVector& params, const MlpSpec& spec, const Matrix& batch_x,
                      const Matrix& batch_y) {
  if (batch_x.rows == 0) {
    throw ArgumentError("mse_and_grad: empty batch");
  }
  if (batch_y.rows != batch_x.rows) {
    throw ShapeError("mse_and_grad: x and y batch sizes differ");
  }
  check_matrix(batch_y, spec.output_dim, "mse_and_grad targets");
  ForwardTrace trace = forward_trace(params, spec, batch_x);
  const Matrix& out = trace.output();
  const double scale = 1.0 / static_cast<double>(batch_x.rows);
  Matrix dout(out.rows, out.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double diff = out.data[i] - batch_y.data[i];
    loss += diff * diff;
    dout.data[i] = 2.0 * diff * scale;
  }
  LossGrad result{loss * scale, ParamVector(spec)};
  backward(params, spec, trace, dout, result.grad);
  return result;
}

double mse_loss(const ParamVector& params, const MlpSpec& spec, const Matrix& batch_x, const Matrix& batch_y) {
  if (batch_x.rows == 0) {
    throw ArgumentError("mse_loss: empty batch");
  }
  if (batch_y.rows != batch_x.rows) {
    throw ShapeError("mse_loss: x and y batch sizes differ");
  }
  check_matrix(batch_y, spec.output_dim, "mse_loss targets");
  const Matrix out = forward_batch(params, spec, batch_x);
  double loss = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double diff = out.data[i] - batch_y.data[i];
    loss += diff * diff;
  }
  return loss / static_cast<double>(batch_x.rows);
}

ParamVector fd_gradient(const std::function<double(const ParamVector&)>& loss, const ParamVector& params,
                        double h) {
  if (!(h > 0.0)) {
    throw ArgumentError("fd_gradient: step must be positive");
  }
  ParamVector probe = params;
  ParamVector grad = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = loss(probe);
    probe[i] = original - h;
    const double down = loss(probe);
    probe[i] = original;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

ParamVector fd_gradient(const ParamVector& params, const MlpSpec& spec, const Matrix& batch_x,
                        const Matrix& batch_y, double h) {
  return fd_gradient([&](const ParamVector& p) { return mse_loss(p, spec, batch_x, batch_y); }, params, h);
}

OptimizerState OptimizerState::sgd(double learning_rate, std::size_t param_count) {
  OptimizerState state;
  state.kind = OptimizerKind::sgd;
  state.learning_rate = learning_rate;
  state.first_moment.assign(param_count, 0.0);
  state.second_moment.assign(param_count, 0.0);
  return state;
}

OptimizerState OptimizerState::adam(double learning_rate, std::size_t param_count) {
  OptimizerState state = sgd(learning_rate, param_count);
  state.kind = OptimizerKind::adam;
  return state;
}

void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad) {
  if (params.size() != grad.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("optimizer_step: parameter, gradient and moment lengths differ");
  }
  if (!(state.learning_rate > 0.0)) {
    throw ConfigError("optimizer_step: learning rate must be positive");
  }
  ++state.step;
  const double lr = state.learning_rate;
  if (state.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= lr * grad[i];
    }
    return;
  }
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw ShapeError("save_checkpoint: parameter count does not match spec");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, spec.input_dim);
  write_u64(os, spec.hidden_dims.size());
  for (std::size_t h : spec.hidden_dims) {
    write_u64(os, h);
  }
  write_u64(os, spec.output_dim);
  const char act = static_cast<char>(spec.activation);
  os.write(&act, 1);
  write_u64(os, spec.seed);
  for (double v : params.values()) {
    write_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) {
    throw IoError("write failed for " + path.string());
  }
}

std::pair<MlpSpec, ParamVector> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("cannot open " + path.string());
  }
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw IoError(path.string() + " is not an RLDNN1 checkpoint");
  }
  MlpSpec spec;
  spec.input_dim = read_u64(is);
  const std::uint64_t hidden_count = read_u64(is);
  if (hidden_count > 1024) {
    throw IoError("checkpoint declares an implausible layer count");
  }
  spec.hidden_dims.resize(hidden_count);
  for (auto& h : spec.hidden_dims) {
    h = read_u64(is);
  }
  spec.output_dim = read_u64(is);
  char act = 0;
  if (!is.read(&act, 1)) {
    throw IoError("checkpoint truncated");
  }
  spec.activation = static_cast<Activation>(act);
  spec.seed = read_u64(is);
  spec.validate();
  std::vector<double> values(spec.param_count());
  for (double& v : values) {
    v = std::bit_cast<double>(read_u64(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw IoError("checkpoint has trailing bytes");
  }
  return {spec, ParamVector::unflatten(spec, std::move(values))};
}

std::uint64_t param_hash(const ParamVector& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : params.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace reload::nn
