#pragma once

// Small dense networks: the feed-forward approximator, the mean-pooled
// two-network cylinder baseline, reverse-mode gradients of the squared loss,
// ADAM, and a central-difference gradient checker.
//
// Batched tensors hold one example per row. Weight matrices are (out x in).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "distlearn/distgen.hpp"
#include "distlearn/errors.hpp"
#include "distlearn/random.hpp"

namespace distlearn {

template <class Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Matrix = MatrixT<double>;
using Vector = VectorT<double>;

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ParseError("unknown activation '" + std::string(s) + "'");
}

template <class Scalar>
struct BasicDenseLayer {
  MatrixT<Scalar> weight;
  VectorT<Scalar> bias;
};
using DenseLayer = BasicDenseLayer<double>;
template <class Scalar>
using BasicLayerStack = std::vector<BasicDenseLayer<Scalar>>;
using LayerStack = BasicLayerStack<double>;

/// Zero-valued stack with the same shapes.
template <class Scalar>
BasicLayerStack<Scalar> zeros_like(const BasicLayerStack<Scalar>& layers) {
  BasicLayerStack<Scalar> out;
  out.reserve(layers.size());
  for (const auto& l : layers)
    out.push_back({MatrixT<Scalar>::Zero(l.weight.rows(), l.weight.cols()), VectorT<Scalar>::Zero(l.bias.size())});
  return out;
}

template <class To>
BasicLayerStack<To> cast_layers(const LayerStack& layers) {
  BasicLayerStack<To> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back({l.weight.template cast<To>(), l.bias.template cast<To>()});
  return out;
}

/// Feed-forward network: affine layers with a hidden activation, linear
/// output layer.
class Mlp {
 public:
  Mlp(std::vector<std::size_t> layer_sizes, Activation activation)
      : sizes_(std::move(layer_sizes)), activation_(activation) {
    if (sizes_.size() < 3) throw std::invalid_argument("Mlp: needs input, at least one hidden layer, and output");
    for (auto s : sizes_)
      if (s == 0) throw std::invalid_argument("Mlp: zero-width layer");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes_[l]);
      const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
      layers_.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    }
  }

  [[nodiscard]] const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  [[nodiscard]] Activation activation() const noexcept { return activation_; }
  [[nodiscard]] std::size_t input_size() const noexcept { return sizes_.front(); }
  [[nodiscard]] std::size_t output_size() const noexcept { return sizes_.back(); }
  [[nodiscard]] LayerStack& layers() noexcept { return layers_; }
  [[nodiscard]] const LayerStack& layers() const noexcept { return layers_; }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.sizes_ != b.sizes_ || a.activation_ != b.activation_) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l)
      if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias) return false;
    return true;
  }

 private:
  std::vector<std::size_t> sizes_;
  Activation activation_;
  LayerStack layers_;
};

/// Mean-pooled two-network model: outer(mean_n inner(x_n)).
struct CylinderNet {
  Mlp inner;
  Mlp outer;

  CylinderNet(Mlp inner_net, Mlp outer_net) : inner(std::move(inner_net)), outer(std::move(outer_net)) {
    if (inner.output_size() != outer.input_size())
      throw DimensionMismatch("CylinderNet: inner output and outer input sizes differ");
  }
  friend bool operator==(const CylinderNet&, const CylinderNet&) = default;
};

using Model = std::variant<Mlp, CylinderNet>;

/// Layers of a model in optimizer order (inner before outer for cylinders).
inline std::vector<DenseLayer*> parameter_layers(Model& model) {
  std::vector<DenseLayer*> out;
  auto add = [&](Mlp& m) {
    for (auto& l : m.layers()) out.push_back(&l);
  };
  std::visit(
      [&](auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Mlp>) {
          add(m);
        } else {
          add(m.inner);
          add(m.outer);
        }
      },
      model);
  return out;
}

inline LayerStack parameters_of(const Model& model) {
  LayerStack out;
  auto add = [&](const Mlp& m) { out.insert(out.end(), m.layers().begin(), m.layers().end()); };
  if (const auto* mlp = std::get_if<Mlp>(&model)) {
    add(*mlp);
  } else {
    add(std::get<CylinderNet>(model).inner);
    add(std::get<CylinderNet>(model).outer);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization

struct ModelSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
};

/// Glorot-uniform weights, zero biases. Weights are drawn layer by layer in
/// row-major order.
template <class Stream>
Mlp init(const ModelSpec& spec, Stream& rng) {
  Mlp model(spec.layer_sizes, spec.activation);
  for (auto& layer : model.layers()) {
    const auto fan_in = static_cast<double>(layer.weight.cols());
    const auto fan_out = static_cast<double>(layer.weight.rows());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward and backward passes

template <class Scalar>
struct ForwardCache {
  std::vector<MatrixT<Scalar>> inputs;  // input of each layer
  std::vector<MatrixT<Scalar>> pre;     // pre-activation of each layer
  MatrixT<Scalar> output;
};

namespace detail {
template <class Scalar>
MatrixT<Scalar> affine(const BasicDenseLayer<Scalar>& layer, const MatrixT<Scalar>& x) {
  MatrixT<Scalar> z = x * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

template <class Scalar>
MatrixT<Scalar> activate(Activation a, const MatrixT<Scalar>& z) {
  if (a == Activation::relu) return z.cwiseMax(Scalar(0));
  return z.array().tanh().matrix();
}

/// Multiplies the upstream gradient by the activation derivative at z.
/// ReLU'(0) is taken as 0.
template <class Scalar>
void activation_backward(Activation a, const MatrixT<Scalar>& z, MatrixT<Scalar>& grad) {
  if (a == Activation::relu) {
    grad = (z.array() > Scalar(0)).select(grad, Scalar(0));
  } else {
    grad.array() *= Scalar(1) - z.array().tanh().square();
  }
}

inline void check_input(const Mlp& model, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != model.input_size())
    throw DimensionMismatch("Mlp: input has " + std::to_string(cols) + " features, expected " +
                            std::to_string(model.input_size()));
}
}  // namespace detail

template <class Scalar>
MatrixT<Scalar> forward_layers(const BasicLayerStack<Scalar>& layers, Activation act, MatrixT<Scalar> x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixT<Scalar> z = detail::affine(layers[l], x);
    x = l + 1 == layers.size() ? std::move(z) : detail::activate(act, z);
  }
  return x;
}

template <class Scalar>
ForwardCache<Scalar> forward_cached(const BasicLayerStack<Scalar>& layers, Activation act, MatrixT<Scalar> x) {
  ForwardCache<Scalar> cache;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixT<Scalar> z = detail::affine(layers[l], x);
    cache.inputs.push_back(std::move(x));
    if (l + 1 == layers.size()) {
      cache.output = z;
    } else {
      x = detail::activate(act, z);
    }
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

/// Accumulates parameter gradients into `grads` (must be shaped like the
/// layers) and returns the gradient with respect to the network input.
template <class Scalar>
MatrixT<Scalar> backward_layers(const BasicLayerStack<Scalar>& layers, Activation act, const ForwardCache<Scalar>& cache,
                                MatrixT<Scalar> grad_out, BasicLayerStack<Scalar>& grads) {
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 != layers.size()) detail::activation_backward(act, cache.pre[l], grad_out);
    grads[l].weight.noalias() += grad_out.transpose() * cache.inputs[l];
    grads[l].bias.noalias() += grad_out.colwise().sum().transpose();
    grad_out = grad_out * layers[l].weight;
  }
  return grad_out;
}

/// Batched forward pass; one example per row.
inline Matrix forward_batch(const Mlp& model, const Matrix& x) {
  detail::check_input(model, x.cols());
  return forward_layers(model.layers(), model.activation(), x);
}

inline std::vector<double> forward(const Mlp& model, std::span<const double> x) {
  detail::check_input(model, static_cast<Eigen::Index>(x.size()));
  const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const Matrix out = forward_layers(model.layers(), model.activation(), row);
  return {out.data(), out.data() + out.size()};
}

inline Matrix to_matrix(const SampleBatch& batch) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(batch.points().data(), static_cast<Eigen::Index>(batch.size()),
                                    static_cast<Eigen::Index>(batch.dim()));
}

namespace detail {
template <class Scalar>
MatrixT<Scalar> pooled(const BasicLayerStack<Scalar>& inner, Activation act, const MatrixT<Scalar>& x) {
  const MatrixT<Scalar> latent = forward_layers(inner, act, x);
  return latent.colwise().mean();
}
}  // namespace detail

inline std::vector<double> cylinder_forward(const CylinderNet& model, const Matrix& samples) {
  detail::check_input(model.inner, samples.cols());
  const Matrix p = detail::pooled(model.inner.layers(), model.inner.activation(), samples);
  const Matrix out = forward_layers(model.outer.layers(), model.outer.activation(), p);
  return {out.data(), out.data() + out.size()};
}

inline std::vector<double> cylinder_forward(const CylinderNet& model, const SampleBatch& batch) {
  return cylinder_forward(model, to_matrix(batch));
}

// ---------------------------------------------------------------------------
// Loss

/// Inputs for one loss evaluation: a matrix of feature rows for an Mlp, or
/// one sample matrix per distribution for a CylinderNet.
using ModelInputs = std::variant<Matrix, std::vector<Matrix>>;

struct LossAndGrad {
  double loss = 0.0;
  LayerStack grads;  // parameter_layers order
};

namespace detail {
template <class Scalar>
MatrixT<Scalar> residual_gradient(const MatrixT<Scalar>& out, const MatrixT<Scalar>& labels, Scalar& loss) {
  const MatrixT<Scalar> r = out - labels;
  const auto m = static_cast<Scalar>(out.rows());
  loss = r.squaredNorm() / m;
  return r * (Scalar(2) / m);
}

inline void check_labels(const Matrix& labels, Eigen::Index rows, std::size_t outputs) {
  if (labels.rows() != rows || static_cast<std::size_t>(labels.cols()) != outputs)
    throw DimensionMismatch("loss: label matrix shape does not match the model output");
  if (rows == 0) throw std::invalid_argument("loss: empty batch");
}

template <class Scalar>
Scalar cylinder_loss(const BasicLayerStack<Scalar>& inner, const BasicLayerStack<Scalar>& outer, Activation ai,
                     Activation ao, const std::vector<MatrixT<Scalar>>& batches, const MatrixT<Scalar>& labels) {
  MatrixT<Scalar> pooled_rows(static_cast<Eigen::Index>(batches.size()), inner.back().weight.rows());
  for (std::size_t m = 0; m < batches.size(); ++m)
    pooled_rows.row(static_cast<Eigen::Index>(m)) = pooled(inner, ai, batches[m]);
  const MatrixT<Scalar> out = forward_layers(outer, ao, pooled_rows);
  return (out - labels).squaredNorm() / static_cast<Scalar>(batches.size());
}
}  // namespace detail

/// (1/M) sum_m |y_m - model(x_m)|^2 and its gradient, one labels row per
/// example. Contributions are reduced in example order.
inline LossAndGrad loss_and_grad(const Mlp& model, const Matrix& inputs, const Matrix& labels) {
  detail::check_input(model, inputs.cols());
  detail::check_labels(labels, inputs.rows(), model.output_size());
  const auto cache = forward_cached(model.layers(), model.activation(), inputs);
  LossAndGrad out;
  const Matrix g = detail::residual_gradient(cache.output, labels, out.loss);
  out.grads = zeros_like(model.layers());
  backward_layers(model.layers(), model.activation(), cache, g, out.grads);
  return out;
}

/// Cylinder loss: each sample of a batch receives 1/N of the pooled gradient.
inline LossAndGrad loss_and_grad(const CylinderNet& model, const std::vector<Matrix>& batches, const Matrix& labels) {
  detail::check_labels(labels, static_cast<Eigen::Index>(batches.size()), model.outer.output_size());
  const auto& inner = model.inner.layers();
  const auto& outer = model.outer.layers();
  std::vector<ForwardCache<double>> caches;
  caches.reserve(batches.size());
  Matrix pooled_rows(static_cast<Eigen::Index>(batches.size()), static_cast<Eigen::Index>(model.inner.output_size()));
  for (std::size_t m = 0; m < batches.size(); ++m) {
    detail::check_input(model.inner, batches[m].cols());
    if (batches[m].rows() == 0) throw std::invalid_argument("cylinder: empty sample batch");
    caches.push_back(forward_cached(inner, model.inner.activation(), batches[m]));
    pooled_rows.row(static_cast<Eigen::Index>(m)) = caches.back().output.colwise().mean();
  }
  const auto outer_cache = forward_cached(outer, model.outer.activation(), pooled_rows);
  LossAndGrad out;
  const Matrix g = detail::residual_gradient(outer_cache.output, labels, out.loss);
  LayerStack inner_grads = zeros_like(inner);
  LayerStack outer_grads = zeros_like(outer);
  const Matrix g_pooled = backward_layers(outer, model.outer.activation(), outer_cache, g, outer_grads);
  for (std::size_t m = 0; m < batches.size(); ++m) {
    const auto n = batches[m].rows();
    const Matrix g_latent =
        Matrix::Ones(n, 1) * (g_pooled.row(static_cast<Eigen::Index>(m)) / static_cast<double>(n));
    backward_layers(inner, model.inner.activation(), caches[m], g_latent, inner_grads);
  }
  out.grads = std::move(inner_grads);
  for (auto& l : outer_grads) out.grads.push_back(std::move(l));
  return out;
}

inline LossAndGrad loss_and_grad(const Model& model, const ModelInputs& inputs, const Matrix& labels) {
  if (const auto* mlp = std::get_if<Mlp>(&model)) {
    const auto* x = std::get_if<Matrix>(&inputs);
    if (x == nullptr) throw std::invalid_argument("loss_and_grad: Mlp needs a feature matrix");
    return loss_and_grad(*mlp, *x, labels);
  }
  const auto* batches = std::get_if<std::vector<Matrix>>(&inputs);
  if (batches == nullptr) throw std::invalid_argument("loss_and_grad: CylinderNet needs sample matrices");
  return loss_and_grad(std::get<CylinderNet>(model), *batches, labels);
}

/// Model outputs, one row per example.
inline Matrix predict(const Model& model, const ModelInputs& inputs) {
  if (const auto* mlp = std::get_if<Mlp>(&model)) {
    const auto* x = std::get_if<Matrix>(&inputs);
    if (x == nullptr) throw std::invalid_argument("predict: Mlp needs a feature matrix");
    return forward_batch(*mlp, *x);
  }
  const auto& cyl = std::get<CylinderNet>(model);
  const auto* batches = std::get_if<std::vector<Matrix>>(&inputs);
  if (batches == nullptr) throw std::invalid_argument("predict: CylinderNet needs sample matrices");
  Matrix out(static_cast<Eigen::Index>(batches->size()), static_cast<Eigen::Index>(cyl.outer.output_size()));
  for (std::size_t m = 0; m < batches->size(); ++m) {
    const auto y = cylinder_forward(cyl, (*batches)[m]);
    for (std::size_t j = 0; j < y.size(); ++j) out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) = y[j];
  }
  return out;
}

/// Loss only, in arbitrary precision (used by the gradient checker).
template <class Scalar>
Scalar loss_value(const std::vector<BasicLayerStack<Scalar>>& parts, const Model& model, const ModelInputs& inputs,
                  const Matrix& labels) {
  const MatrixT<Scalar> y = labels.template cast<Scalar>();
  if (const auto* mlp = std::get_if<Mlp>(&model)) {
    const MatrixT<Scalar> x = std::get<Matrix>(inputs).template cast<Scalar>();
    const MatrixT<Scalar> out = forward_layers(parts[0], mlp->activation(), x);
    return (out - y).squaredNorm() / static_cast<Scalar>(x.rows());
  }
  const auto& cyl = std::get<CylinderNet>(model);
  std::vector<MatrixT<Scalar>> batches;
  for (const auto& b : std::get<std::vector<Matrix>>(inputs)) batches.push_back(b.template cast<Scalar>());
  return detail::cylinder_loss(parts[0], parts[1], cyl.inner.activation(), cyl.outer.activation(), batches, y);
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamState {
  LayerStack first;
  LayerStack second;
  std::uint64_t t = 0;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline AdamState make_adam(const LayerStack& shapes, double learning_rate = 5e-3) {
  AdamState s;
  s.first = zeros_like(shapes);
  s.second = zeros_like(shapes);
  s.learning_rate = learning_rate;
  return s;
}

inline AdamState make_adam(const Model& model, double learning_rate = 5e-3) {
  return make_adam(parameters_of(model), learning_rate);
}

/// One bias-corrected ADAM update of `params` (pointers in optimizer order).
inline void adam_step(AdamState& state, std::span<DenseLayer* const> params, const LayerStack& grads) {
  if (params.size() != grads.size() || params.size() != state.first.size())
    throw DimensionMismatch("adam_step: parameter, gradient and state layer counts differ");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    if (p.rows() != g.rows() || p.cols() != g.cols()) throw DimensionMismatch("adam_step: shape mismatch");
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    p.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (std::size_t l = 0; l < params.size(); ++l) {
    update(params[l]->weight, grads[l].weight, state.first[l].weight, state.second[l].weight);
    update(params[l]->bias, grads[l].bias, state.first[l].bias, state.second[l].bias);
  }
}

inline void adam_step(AdamState& state, LayerStack& params, const LayerStack& grads) {
  std::vector<DenseLayer*> ptrs;
  for (auto& l : params) ptrs.push_back(&l);
  adam_step(state, ptrs, grads);
}

inline void adam_step(AdamState& state, Model& model, const LayerStack& grads) {
  adam_step(state, parameter_layers(model), grads);
}

// ---------------------------------------------------------------------------
// Gradient check

/// Worst relative error between the analytic gradient and central
/// differences of the loss, over every parameter. The loss is re-evaluated
/// in extended precision so that roundoff in the differences stays far below
/// the gradients being checked. `grads` defaults to loss_and_grad's result.
inline double grad_check(const Model& model, const ModelInputs& inputs, const Matrix& labels, double eps,
                         const LayerStack* grads = nullptr) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  using Ext = long double;
  const LossAndGrad analytic = grads == nullptr ? loss_and_grad(model, inputs, labels) : LossAndGrad{0.0, *grads};

  std::vector<BasicLayerStack<Ext>> parts;
  if (const auto* mlp = std::get_if<Mlp>(&model)) {
    parts.push_back(cast_layers<Ext>(mlp->layers()));
  } else {
    const auto& cyl = std::get<CylinderNet>(model);
    parts.push_back(cast_layers<Ext>(cyl.inner.layers()));
    parts.push_back(cast_layers<Ext>(cyl.outer.layers()));
  }
  double worst = 0.0;
  std::size_t flat_layer = 0;
  auto probe = [&](Ext& slot, double a) {
    const Ext saved = slot;
    slot = saved + static_cast<Ext>(eps);
    const Ext up = loss_value(parts, model, inputs, labels);
    slot = saved - static_cast<Ext>(eps);
    const Ext down = loss_value(parts, model, inputs, labels);
    slot = saved;
    const auto b = static_cast<double>((up - down) / (2 * static_cast<Ext>(eps)));
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    worst = std::max(worst, std::abs(a - b) / denom);
  };
  for (auto& part : parts) {
    for (auto& layer : part) {
      const DenseLayer& g = analytic.grads.at(flat_layer++);
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) probe(layer.weight(r, c), g.weight(r, c));
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) probe(layer.bias(r), g.bias(r));
    }
  }
  return worst;
}

/// Smallest |pre-activation| over the hidden units for a batch of inputs;
/// used to keep gradient checks away from ReLU kinks.
inline double min_abs_preactivation(const Mlp& model, const Matrix& x) {
  const auto cache = forward_cached(model.layers(), model.activation(), x);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l) m = std::min(m, cache.pre[l].cwiseAbs().minCoeff());
  return m;
}

// ---------------------------------------------------------------------------
// Serialization: a header line "mlp <activation> <n> <size_0> ... <size_{n-1}>"
// followed by one line per tensor (weight row-major, then bias), values with
// 17 significant digits. A cylinder is the line "cylinder" followed by the
// inner and outer blocks.

namespace detail {
inline void write_values(std::ostream& os, const double* data, Eigen::Index count) {
  char buf[32];
  for (Eigen::Index i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data[i]);
    if (i) os << ' ';
    os << buf;
  }
  os << '\n';
}

inline void write_mlp(std::ostream& os, const Mlp& m) {
  os << "mlp " << to_string(m.activation()) << ' ' << m.layer_sizes().size();
  for (auto s : m.layer_sizes()) os << ' ' << s;
  os << '\n';
  for (const auto& l : m.layers()) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = l.weight;
    write_values(os, w.data(), w.size());
    write_values(os, l.bias.data(), l.bias.size());
  }
}

inline std::vector<double> read_values(std::istream& is, std::size_t expected) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("model file: truncated");
  std::vector<double> values;
  const char* p = line.c_str();
  char* end = nullptr;
  while (true) {
    while (*p == ' ') ++p;
    if (*p == '\0') break;
    values.push_back(std::strtod(p, &end));
    if (end == p) throw ParseError("model file: bad number in '" + line.substr(0, 40) + "'");
    p = end;
  }
  if (values.size() != expected)
    throw ParseError("model file: expected " + std::to_string(expected) + " values, got " +
                     std::to_string(values.size()));
  return values;
}

inline Mlp read_mlp(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("model file: missing mlp header");
  std::istringstream header(line);
  std::string tag, act;
  std::size_t n = 0;
  if (!(header >> tag >> act >> n) || tag != "mlp") throw ParseError("model file: bad mlp header '" + line + "'");
  std::vector<std::size_t> sizes(n);
  for (auto& s : sizes)
    if (!(header >> s)) throw ParseError("model file: bad layer sizes");
  Mlp m(sizes, parse_activation(act));
  for (auto& l : m.layers()) {
    const auto w = read_values(is, static_cast<std::size_t>(l.weight.size()));
    l.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.data(), l.weight.rows(), l.weight.cols());
    const auto b = read_values(is, static_cast<std::size_t>(l.bias.size()));
    l.bias = Eigen::Map<const Vector>(b.data(), l.bias.size());
  }
  return m;
}
}  // namespace detail

inline void save_model(std::ostream& os, const Model& model) {
  if (const auto* mlp = std::get_if<Mlp>(&model)) {
    detail::write_mlp(os, *mlp);
  } else {
    const auto& c = std::get<CylinderNet>(model);
    os << "cylinder\n";
    detail::write_mlp(os, c.inner);
    detail::write_mlp(os, c.outer);
  }
}

inline Model load_model(std::istream& is) {
  const auto start = is.tellg();
  std::string first;
  if (!std::getline(is, first)) throw ParseError("model file: empty");
  if (first == "cylinder") {
    Mlp inner = detail::read_mlp(is);
    Mlp outer = detail::read_mlp(is);
    return CylinderNet(std::move(inner), std::move(outer));
  }
  is.clear();
  is.seekg(start);
  return detail::read_mlp(is);
}

}  // namespace distlearn
