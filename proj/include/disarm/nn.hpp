#pragma once

// Dense-network engine: chained affine layers with fixed activations,
// batched forward, analytic backward, SGD updates, finite-difference
// gradient checks, and a binary checkpoint format.
//
// Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "disarm/errors.hpp"
#include "disarm/rng.hpp"

namespace disarm::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2, tanh = 3 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(int input_dim) : input_dim_(input_dim) {
    if (input_dim <= 0) throw InvalidInput("DenseNet: input_dim must be positive");
  }

  // Zero-initialized layers of the given widths. Hidden layers use `hidden`,
  // the last one `output`.
  static DenseNet mlp(int input_dim, std::span<const int> widths, Activation hidden,
                      Activation output) {
    DenseNet net(input_dim);
    int in = input_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const Activation act = (i + 1 == widths.size()) ? output : hidden;
      net.add_layer(Matrix::Zero(widths[i], in), Vector::Zero(widths[i]), act);
      in = widths[i];
    }
    return net;
  }
  static DenseNet mlp(int input_dim, std::initializer_list<int> widths, Activation hidden,
                      Activation output) {
    return mlp(input_dim, std::span<const int>(widths.begin(), widths.size()), hidden, output);
  }

  void add_layer(Matrix weight, Vector bias, Activation activation) {
    if (weight.rows() != bias.size())
      throw InvalidInput("DenseNet::add_layer: bias length does not match weight rows");
    if (weight.cols() != output_dim())
      throw InvalidInput("DenseNet::add_layer: layer input " + std::to_string(weight.cols()) +
                         " does not chain onto previous output " + std::to_string(output_dim()));
    layers_.push_back(Layer{std::move(weight), std::move(bias), activation});
  }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void init_uniform(Rng& rng) {
    for (auto& l : layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = u(rng);
    }
  }

  int input_dim() const { return input_dim_; }
  int output_dim() const { return layers_.empty() ? input_dim_ : layers_.back().out_dim(); }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    if (a.input_dim_ != b.input_dim_ || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }

 private:
  int input_dim_ = 0;
  std::vector<Layer> layers_;
};

// Per-parameter gradient accumulators plus the activations of the last
// forward pass that was recorded into this tape.
struct GradientTape {
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;
  std::vector<Matrix> activations;  // [0] = input batch, [l+1] = output of layer l
  Matrix input_grad;
  bool has_forward = false;
  // Set by forward_differences: activations[0] then holds the d x K input
  // columns and layer 0 ran on column differences.
  std::vector<int> pair_first, pair_second;

  GradientTape() = default;
  explicit GradientTape(const DenseNet& net) {
    for (const auto& l : net.layers()) {
      weight_grads.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      bias_grads.push_back(Vector::Zero(l.bias.size()));
    }
  }

  void reset() {
    for (auto& g : weight_grads) g.setZero();
    for (auto& g : bias_grads) g.setZero();
    input_grad.resize(0, 0);
  }

  bool matches(const DenseNet& net) const {
    if (weight_grads.size() != net.layer_count()) return false;
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      const auto& l = net.layers()[i];
      if (weight_grads[i].rows() != l.weight.rows() || weight_grads[i].cols() != l.weight.cols() ||
          bias_grads[i].size() != l.bias.size())
        return false;
    }
    return true;
  }

  // this += other (fixed-order reduction of per-scene tapes). A tape that
  // never saw a forward pass contributes nothing.
  void accumulate(const GradientTape& other) {
    if (other.weight_grads.empty()) return;
    if (other.weight_grads.size() != weight_grads.size())
      throw InvalidInput("GradientTape::accumulate: tapes belong to different nets");
    for (std::size_t i = 0; i < weight_grads.size(); ++i) {
      weight_grads[i] += other.weight_grads[i];
      bias_grads[i] += other.bias_grads[i];
    }
  }

  void scale(double s) {
    for (auto& g : weight_grads) g *= s;
    for (auto& g : bias_grads) g *= s;
  }

  bool all_zero() const {
    for (const auto& g : weight_grads)
      if (!g.isZero(0.0)) return false;
    for (const auto& g : bias_grads)
      if (!g.isZero(0.0)) return false;
    return true;
  }
};

namespace detail {
// When set, every relu layer appends its on/off pattern. Used by the gradient
// checker to detect finite-difference steps that cross a kink.
inline thread_local std::vector<std::uint8_t>* relu_trace = nullptr;

inline void apply_activation(Activation a, Matrix& z) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu:
      if (relu_trace) {
        for (Eigen::Index i = 0; i < z.size(); ++i) relu_trace->push_back(z.data()[i] > 0.0);
      }
      z = z.cwiseMax(0.0);
      break;
    case Activation::sigmoid: z = (1.0 + (-z.array()).exp()).inverse().matrix(); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
  }
}

// dL/dz from dL/dy, expressed through the activation output y.
inline Matrix activation_backward(Activation a, const Matrix& y, const Matrix& upstream) {
  switch (a) {
    case Activation::identity: return upstream;
    case Activation::relu: return (y.array() > 0.0).select(upstream, 0.0);
    case Activation::sigmoid: return (upstream.array() * y.array() * (1.0 - y.array())).matrix();
    case Activation::tanh: return (upstream.array() * (1.0 - y.array().square())).matrix();
  }
  return upstream;
}
}  // namespace detail

class ReluPatternRecorder {
 public:
  ReluPatternRecorder() : previous_(detail::relu_trace) { detail::relu_trace = &pattern_; }
  ~ReluPatternRecorder() { detail::relu_trace = previous_; }
  ReluPatternRecorder(const ReluPatternRecorder&) = delete;
  ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;
  const std::vector<std::uint8_t>& pattern() const { return pattern_; }

 private:
  std::vector<std::uint8_t> pattern_;
  std::vector<std::uint8_t>* previous_;
};

inline Matrix forward_batch(const DenseNet& net, const Matrix& x, GradientTape* tape = nullptr) {
  if (x.rows() != net.input_dim())
    throw InvalidInput("forward: input has " + std::to_string(x.rows()) + " rows, net expects " +
                       std::to_string(net.input_dim()));
  if (tape) {
    if (!tape->matches(net)) *tape = GradientTape(net);
    tape->activations.clear();
    tape->activations.push_back(x);
    tape->pair_first.clear();
    tape->pair_second.clear();
  }
  Matrix h = x;
  for (const auto& l : net.layers()) {
    Matrix z = l.weight * h;
    z.colwise() += l.bias;
    detail::apply_activation(l.activation, z);
    h = std::move(z);
    if (tape) tape->activations.push_back(h);
  }
  if (tape) tape->has_forward = true;
  return h;
}

inline Vector forward(const DenseNet& net, const Vector& x, GradientTape* tape = nullptr) {
  Matrix out = forward_batch(net, Matrix(x), tape);
  return out.col(0);
}

// Accumulates dL/dparams into the tape and returns dL/dinput (also stored in
// tape.input_grad). Requires a preceding forward recorded into the same tape.
inline const Matrix& backward(const DenseNet& net, GradientTape& tape, const Matrix& upstream) {
  if (!tape.has_forward || tape.activations.size() != net.layer_count() + 1)
    throw StateError("backward called before forward on this tape");
  if (!tape.pair_first.empty()) throw StateError("tape was recorded by forward_differences");
  const Matrix& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw InvalidInput("backward: upstream shape does not match the last forward output");
  Matrix g = upstream;
  for (std::size_t k = net.layer_count(); k-- > 0;) {
    const auto& l = net.layers()[k];
    Matrix dz = detail::activation_backward(l.activation, tape.activations[k + 1], g);
    tape.weight_grads[k].noalias() += dz * tape.activations[k].transpose();
    tape.bias_grads[k] += dz.rowwise().sum();
    g.noalias() = l.weight.transpose() * dz;
  }
  tape.input_grad = std::move(g);
  return tape.input_grad;
}

// net(x_a - x_b) for every pair (a, b) = (first[p], second[p]). The first
// layer is affine, so W (x_a - x_b) = W x_a - W x_b: the product is formed
// once per column and differenced, keeping its cost independent of the
// number of pairs. Results differ from forward_batch on explicit differences
// only by rounding.
inline Matrix forward_differences(const DenseNet& net, const Matrix& x, std::span<const int> first,
                                  std::span<const int> second, GradientTape* tape = nullptr) {
  if (x.rows() != net.input_dim())
    throw InvalidInput("forward: input has " + std::to_string(x.rows()) + " rows, net expects " +
                       std::to_string(net.input_dim()));
  if (first.size() != second.size()) throw InvalidInput("forward_differences: pair lists differ in length");
  if (net.layer_count() == 0) throw InvalidInput("forward_differences: net has no layers");
  const Eigen::Index P = static_cast<Eigen::Index>(first.size());
  for (Eigen::Index p = 0; p < P; ++p)
    if (first[p] < 0 || first[p] >= x.cols() || second[p] < 0 || second[p] >= x.cols())
      throw InvalidInput("forward_differences: pair index out of range");
  if (tape) {
    if (!tape->matches(net)) *tape = GradientTape(net);
    tape->activations.clear();
    tape->activations.push_back(x);
    tape->pair_first.assign(first.begin(), first.end());
    tape->pair_second.assign(second.begin(), second.end());
  }
  const auto& l0 = net.layers()[0];
  const Matrix a = l0.weight * x;
  Matrix h(l0.out_dim(), P);
  for (Eigen::Index p = 0; p < P; ++p) h.col(p) = (a.col(first[p]) - a.col(second[p])) + l0.bias;
  detail::apply_activation(l0.activation, h);
  if (tape) tape->activations.push_back(h);
  for (std::size_t k = 1; k < net.layer_count(); ++k) {
    const auto& l = net.layers()[k];
    Matrix z = l.weight * h;
    z.colwise() += l.bias;
    detail::apply_activation(l.activation, z);
    h = std::move(z);
    if (tape) tape->activations.push_back(h);
  }
  if (tape) tape->has_forward = true;
  return h;
}

// Backward of forward_differences; returns dL/dx for the d x K input columns.
inline const Matrix& backward_differences(const DenseNet& net, GradientTape& tape, const Matrix& upstream) {
  if (!tape.has_forward || tape.activations.size() != net.layer_count() + 1 || tape.pair_first.empty())
    throw StateError("backward_differences called before forward_differences on this tape");
  const Matrix& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw InvalidInput("backward: upstream shape does not match the last forward output");
  Matrix g = upstream;
  for (std::size_t k = net.layer_count(); k-- > 1;) {
    const auto& l = net.layers()[k];
    Matrix dz = detail::activation_backward(l.activation, tape.activations[k + 1], g);
    tape.weight_grads[k].noalias() += dz * tape.activations[k].transpose();
    tape.bias_grads[k] += dz.rowwise().sum();
    g.noalias() = l.weight.transpose() * dz;
  }
  const auto& l0 = net.layers()[0];
  const Matrix dz = detail::activation_backward(l0.activation, tape.activations[1], g);
  const Matrix& x = tape.activations[0];
  Matrix da = Matrix::Zero(l0.out_dim(), x.cols());
  for (Eigen::Index p = 0; p < dz.cols(); ++p) {
    da.col(tape.pair_first[static_cast<std::size_t>(p)]) += dz.col(p);
    da.col(tape.pair_second[static_cast<std::size_t>(p)]) -= dz.col(p);
  }
  tape.weight_grads[0].noalias() += da * x.transpose();
  tape.bias_grads[0] += dz.rowwise().sum();
  tape.input_grad.noalias() = l0.weight.transpose() * da;
  return tape.input_grad;
}

inline Vector backward(const DenseNet& net, GradientTape& tape, const Vector& upstream) {
  return backward(net, tape, Matrix(upstream)).col(0);
}

inline void check_finite_gradients(const DenseNet& net, const GradientTape& tape,
                                   std::string_view path) {
  if (!tape.matches(net))
    throw InvalidInput(std::string(path) + ": gradient tape shape does not match network");
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    const auto& gw = tape.weight_grads[k];
    for (Eigen::Index c = 0; c < gw.cols(); ++c)
      for (Eigen::Index r = 0; r < gw.rows(); ++r)
        if (!std::isfinite(gw(r, c)))
          throw NumericError("non-finite gradient", std::string(path) + ".layers[" +
                                                        std::to_string(k) + "].weight(" +
                                                        std::to_string(r) + "," +
                                                        std::to_string(c) + ")");
    const auto& gb = tape.bias_grads[k];
    for (Eigen::Index r = 0; r < gb.size(); ++r)
      if (!std::isfinite(gb(r)))
        throw NumericError("non-finite gradient", std::string(path) + ".layers[" +
                                                      std::to_string(k) + "].bias(" +
                                                      std::to_string(r) + ")");
  }
}

// Plain gradient descent. The whole step is rejected (net untouched) if any
// gradient is non-finite.
inline void sgd_step(DenseNet& net, const GradientTape& tape, double lr,
                     std::string_view path = "net") {
  if (!(lr >= 0.0)) throw InvalidInput("sgd_step: learning rate must be non-negative");
  check_finite_gradients(net, tape, path);
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    net.layers()[k].weight -= lr * tape.weight_grads[k];
    net.layers()[k].bias -= lr * tape.bias_grads[k];
  }
}

// SGD with heavy-ball momentum: v <- mu*v + g ; theta <- theta - lr*v.
class MomentumSgd {
 public:
  MomentumSgd() = default;
  MomentumSgd(const DenseNet& net, double momentum) : momentum_(momentum), velocity_(net) {}

  void step(DenseNet& net, const GradientTape& tape, double lr, std::string_view path = "net") {
    if (momentum_ == 0.0) {
      sgd_step(net, tape, lr, path);
      return;
    }
    check_finite_gradients(net, tape, path);
    if (!velocity_.matches(net)) velocity_ = GradientTape(net);
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
      velocity_.weight_grads[k] = momentum_ * velocity_.weight_grads[k] + tape.weight_grads[k];
      velocity_.bias_grads[k] = momentum_ * velocity_.bias_grads[k] + tape.bias_grads[k];
      net.layers()[k].weight -= lr * velocity_.weight_grads[k];
      net.layers()[k].bias -= lr * velocity_.bias_grads[k];
    }
  }

 private:
  double momentum_ = 0.0;
  GradientTape velocity_;
};

// Adam with bias correction. Not the default optimizer; used when plain
// momentum SGD is too slow for desk-scale schedules.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const DenseNet& net, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps), m_(net), v_(net) {}

  void step(DenseNet& net, const GradientTape& tape, double lr, std::string_view path = "net") {
    if (!(lr >= 0.0)) throw InvalidInput("adam: learning rate must be non-negative");
    check_finite_gradients(net, tape, path);
    if (!m_.matches(net)) {
      m_ = GradientTape(net);
      v_ = GradientTape(net);
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
      update(net.layers()[k].weight, m_.weight_grads[k], v_.weight_grads[k], tape.weight_grads[k]);
      update(net.layers()[k].bias, m_.bias_grads[k], v_.bias_grads[k], tape.bias_grads[k]);
    }
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  GradientTape m_, v_;
};

// ---------------------------------------------------------------------------
// Finite-difference checking

// A contiguous run of parameters together with their analytic gradient.
struct ParameterBlock {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

inline std::vector<ParameterBlock> parameter_blocks(DenseNet& net, const GradientTape& tape,
                                                    std::string_view prefix) {
  std::vector<ParameterBlock> out;
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    auto& l = net.layers()[k];
    const std::string base = std::string(prefix) + ".layers[" + std::to_string(k) + "]";
    out.push_back({base + ".weight",
                   std::span<double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())),
                   std::span<const double>(tape.weight_grads[k].data(),
                                           static_cast<std::size_t>(tape.weight_grads[k].size()))});
    out.push_back({base + ".bias",
                   std::span<double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())),
                   std::span<const double>(tape.bias_grads[k].data(),
                                           static_cast<std::size_t>(tape.bias_grads[k].size()))});
  }
  return out;
}

struct GradCheckOptions {
  double eps = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // near-zero gradients from turning roundoff into huge ratios.
  double denominator_floor = 1e-3;
  // 0 = every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
};

inline void merge(GradCheckReport& into, const GradCheckReport& r) {
  if (r.max_relative_error > into.max_relative_error ||
      (into.worst_parameter.empty() && !r.worst_parameter.empty())) {
    into.max_relative_error = std::max(into.max_relative_error, r.max_relative_error);
    into.worst_parameter = r.worst_parameter;
  }
  into.checked += r.checked;
  into.skipped_kinks += r.skipped_kinks;
}

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Central differences of `objective` against the analytic gradients in
// `blocks`. Coordinates whose +/- steps change any relu on/off pattern are
// skipped and counted: the function is not differentiable across them.
inline GradCheckReport finite_difference_check(std::span<ParameterBlock> blocks,
                                               const std::function<double()>& objective,
                                               const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t i = 0; i < blocks[b].values.size(); ++i) coords.emplace_back(b, i);
  if (opts.max_coordinates > 0 && coords.size() > opts.max_coordinates) {
    Rng rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }
  if (coords.empty()) return report;

  std::vector<std::uint8_t> base_pattern;
  {
    ReluPatternRecorder rec;
    objective();
    base_pattern = rec.pattern();
  }
  for (auto [b, i] : coords) {
    double& theta = blocks[b].values[i];
    const double saved = theta;
    double plus = 0.0;
    double minus = 0.0;
    bool kink = false;
    {
      ReluPatternRecorder rec;
      theta = saved + opts.eps;
      plus = objective();
      kink = rec.pattern() != base_pattern;
    }
    {
      ReluPatternRecorder rec;
      theta = saved - opts.eps;
      minus = objective();
      kink = kink || rec.pattern() != base_pattern;
    }
    theta = saved;
    if (kink) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * opts.eps);
    const double err = relative_error(blocks[b].analytic[i], numeric, opts.denominator_floor);
    ++report.checked;
    if (err > report.max_relative_error || report.worst_parameter.empty()) {
      report.max_relative_error = std::max(report.max_relative_error, err);
      report.worst_parameter = blocks[b].name + "[" + std::to_string(i) + "]";
    }
  }
  return report;
}

// Loss over a batch of network outputs: returns the value and dL/doutputs.
using OutputLoss = std::function<std::pair<double, Matrix>(const Matrix&)>;

inline OutputLoss squared_norm_loss() {
  return [](const Matrix& y) { return std::make_pair(0.5 * y.squaredNorm(), Matrix(y)); };
}

// Checks every parameter of `net` (or a random subset, per opts) under `loss`
// on `samples` standard-normal input columns.
inline GradCheckReport grad_check(const DenseNet& net, const OutputLoss& loss, int samples,
                                  const GradCheckOptions& opts = {}) {
  if (net.parameter_count() == 0 || samples <= 0) return {};
  DenseNet work = net;
  Rng rng(derive_seed(opts.seed, "grad_check.inputs"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(work.input_dim(), samples);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);

  GradientTape tape(work);
  const Matrix y = forward_batch(work, x, &tape);
  backward(work, tape, loss(y).second);
  auto blocks = parameter_blocks(work, tape, "net");
  return finite_difference_check(
      blocks, [&] { return loss(forward_batch(work, x)).first; }, opts);
}

// ---------------------------------------------------------------------------
// Checkpoint format: "DARM", u32 version, u32 layer count, then per layer
// u32 in, u32 out, u8 activation, row-major f64 weights, f64 biases.
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}
inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}
}  // namespace detail

inline void write_checkpoint(std::ostream& os, const DenseNet& net) {
  os.write("DARM", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(net.layer_count()));
  for (const auto& l : net.layers()) {
    detail::put_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    os.put(static_cast<char>(l.activation));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(os, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_f64(os, l.bias(r));
  }
}

inline DenseNet read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "DARM")
    throw DataError("checkpoint: bad magic");
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_u32(is);
  DenseNet net;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto in = static_cast<int>(detail::get_u32(is));
    const auto out = static_cast<int>(detail::get_u32(is));
    const int tag = is.get();
    if (tag < 0 || tag > 3) throw DataError("checkpoint: bad activation tag in layer " + std::to_string(k));
    if (in <= 0 || out <= 0) throw DataError("checkpoint: bad layer shape in layer " + std::to_string(k));
    if (k == 0) net = DenseNet(in);
    Matrix w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = detail::get_f64(is);
    Vector b(out);
    for (int r = 0; r < out; ++r) b(r) = detail::get_f64(is);
    try {
      net.add_layer(std::move(w), std::move(b), static_cast<Activation>(tag));
    } catch (const InvalidInput& e) {
      throw DataError(std::string("checkpoint: ") + e.what());
    }
  }
  return net;
}

inline void save_checkpoint(const std::string& path, const DenseNet& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_checkpoint(os, net);
  if (!os) throw DataError("write failed: " + path);
}

inline DenseNet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace disarm::nn
