#pragma once

// Minimal differentiable building blocks for MLP-shaped networks.
//
// Activations are column-batched: a batch of N feature vectors of width F is
// an F x N matrix. Every layer caches what its backward pass needs during
// forward; gradients accumulate into the layer's grad arrays until
// zero_grad(). All layers are templated on the scalar so training can run in
// float while gradient checks run the same code in double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "inrsynth/common.hpp"

namespace inrsynth::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Mode { kTrain, kEval };

enum class LayerKind { kLinear, kSine, kRelu, kSigmoid, kBatchNorm, kMaxPoolSet };

struct LayerSpec {
  LayerKind kind = LayerKind::kLinear;
  int fan_in = 1;
  int fan_out = 1;
  double omega0 = 30.0;  // sine only
};

inline void validate(const LayerSpec& s) {
  if (s.fan_in < 1 || s.fan_out < 1) throw InvalidArgument("LayerSpec: fan_in and fan_out must be >= 1");
  if (!(s.omega0 > 0)) throw InvalidArgument("LayerSpec: omega0 must be > 0");
}

/// Non-owning view of one trainable array and its gradient accumulator.
template <class S>
struct ParamRef {
  std::string name;
  Mat<S>* value;
  Mat<S>* grad;
};

template <class S>
void fill_uniform(Mat<S>& m, double bound, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = S(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// Layers

template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(int fan_in, int fan_out)
      : W(Mat<S>::Zero(fan_out, fan_in)),
        b(Mat<S>::Zero(fan_out, 1)),
        dW(Mat<S>::Zero(fan_out, fan_in)),
        db(Mat<S>::Zero(fan_out, 1)) {
    validate(LayerSpec{LayerKind::kLinear, fan_in, fan_out});
  }

  int fan_in() const { return int(W.cols()); }
  int fan_out() const { return int(W.rows()); }

  /// Default scheme: weights and biases uniform in +-1/sqrt(fan_in).
  void init_default(Rng& rng) {
    const double k = 1.0 / std::sqrt(double(fan_in()));
    fill_uniform(W, k, rng);
    fill_uniform(b, k, rng);
  }

  Mat<S> forward(const Mat<S>& x, Mode) {
    if (x.rows() != W.cols()) throw InvalidArgument("Linear: input width mismatch");
    x_ = x;
    cached_ = true;
    Mat<S> y = W * x;
    y.colwise() += b.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    if (!cached_) throw StateError("Linear: backward without forward cache");
    dW.noalias() += dy * x_.transpose();
    db += dy.rowwise().sum();
    return W.transpose() * dy;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + "W", &W, &dW});
    out.push_back({prefix + "b", &b, &db});
  }

  Mat<S> W, b, dW, db;

 private:
  Mat<S> x_;
  bool cached_ = false;
};

/// y = sin(omega0 * x). Preceded by a Linear, this is a SIREN layer.
template <class S>
class Sine {
 public:
  explicit Sine(double omega0 = 30.0) : omega0(S(omega0)) {
    if (!(omega0 > 0)) throw InvalidArgument("Sine: omega0 must be > 0");
  }

  Mat<S> forward(const Mat<S>& x, Mode) {
    x_ = x;
    cached_ = true;
    return (omega0 * x.array()).sin().matrix();
  }

  Mat<S> backward(const Mat<S>& dy) {
    if (!cached_) throw StateError("Sine: backward without forward cache");
    return (dy.array() * omega0 * (omega0 * x_.array()).cos()).matrix();
  }

  void collect(const std::string&, std::vector<ParamRef<S>>&) {}

  S omega0;

 private:
  Mat<S> x_;
  bool cached_ = false;
};

template <class S>
class Relu {
 public:
  Mat<S> forward(const Mat<S>& x, Mode) {
    y_ = x.cwiseMax(S(0));
    cached_ = true;
    return y_;
  }

  Mat<S> backward(const Mat<S>& dy) {
    if (!cached_) throw StateError("Relu: backward without forward cache");
    return (y_.array() > S(0)).select(dy, S(0));
  }

  void collect(const std::string&, std::vector<ParamRef<S>>&) {}

 private:
  Mat<S> y_;
  bool cached_ = false;
};

template <class S>
class Sigmoid {
 public:
  Mat<S> forward(const Mat<S>& x, Mode) {
    y_ = (S(1) / (S(1) + (-x.array()).exp())).matrix();
    cached_ = true;
    return y_;
  }

  Mat<S> backward(const Mat<S>& dy) {
    if (!cached_) throw StateError("Sigmoid: backward without forward cache");
    return (dy.array() * y_.array() * (S(1) - y_.array())).matrix();
  }

  void collect(const std::string&, std::vector<ParamRef<S>>&) {}

 private:
  Mat<S> y_;
  bool cached_ = false;
};

/// Per-feature normalization over the batch (columns). Train mode uses batch
/// statistics and updates the running estimates; eval mode is the frozen
/// affine map gamma * (x - running_mean) / sqrt(running_var + eps) + beta.
template <class S>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int features, double momentum = 0.1, double eps = 1e-5)
      : gamma(Mat<S>::Ones(features, 1)),
        beta(Mat<S>::Zero(features, 1)),
        dgamma(Mat<S>::Zero(features, 1)),
        dbeta(Mat<S>::Zero(features, 1)),
        running_mean(Mat<S>::Zero(features, 1)),
        running_var(Mat<S>::Ones(features, 1)),
        momentum(S(momentum)),
        eps(S(eps)) {
    if (features < 1) throw InvalidArgument("BatchNorm: features must be >= 1");
  }

  Mat<S> forward(const Mat<S>& x, Mode mode) {
    if (x.rows() != gamma.rows()) throw InvalidArgument("BatchNorm: feature count mismatch");
    const auto n = x.cols();
    mode_ = mode;
    if (mode == Mode::kTrain) {
      const Vec<S> mean = x.rowwise().mean();
      const Mat<S> centered = x.colwise() - mean;
      const Vec<S> var = centered.array().square().rowwise().mean();
      inv_std_ = (var.array() + eps).rsqrt();
      xhat_ = centered.array().colwise() * inv_std_.array();
      const S unbias = n > 1 ? S(n) / S(n - 1) : S(1);
      running_mean = (S(1) - momentum) * running_mean + momentum * mean;
      running_var = (S(1) - momentum) * running_var + momentum * unbias * var;
    } else {
      inv_std_ = (running_var.col(0).array() + eps).rsqrt();
      xhat_ = (x.colwise() - running_mean.col(0)).array().colwise() * inv_std_.array();
    }
    cached_ = true;
    Mat<S> y = xhat_.array().colwise() * gamma.col(0).array();
    y.colwise() += beta.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    if (!cached_) throw StateError("BatchNorm: backward without forward cache");
    dgamma += (dy.array() * xhat_.array()).rowwise().sum().matrix();
    dbeta += dy.rowwise().sum();
    const Mat<S> dxhat = dy.array().colwise() * gamma.col(0).array();
    if (mode_ == Mode::kEval) return dxhat.array().colwise() * inv_std_.array();
    const S n = S(dy.cols());
    const Vec<S> sum_dxhat = dxhat.rowwise().sum();
    const Vec<S> sum_dxhat_xhat = (dxhat.array() * xhat_.array()).rowwise().sum();
    Mat<S> dx = (n * dxhat.array()).matrix();
    dx.colwise() -= sum_dxhat;
    dx -= (xhat_.array().colwise() * sum_dxhat_xhat.array()).matrix();
    return (dx.array().colwise() * (inv_std_.array() / n)).matrix();
  }

  void collect(const std::string& prefix, std::vector<ParamRef<S>>& out) {
    out.push_back({prefix + "gamma", &gamma, &dgamma});
    out.push_back({prefix + "beta", &beta, &dbeta});
  }

  Mat<S> gamma, beta, dgamma, dbeta;
  Mat<S> running_mean, running_var;
  S momentum{0.1};
  S eps{1e-5};

 private:
  Mat<S> xhat_;
  Vec<S> inv_std_;
  Mode mode_ = Mode::kTrain;
  bool cached_ = false;
};

/// Elementwise maximum over the set of columns: F x N -> F x 1.
template <class S>
class MaxPoolSet {
 public:
  Mat<S> forward(const Mat<S>& x, Mode) {
    if (x.cols() < 1) throw InvalidArgument("MaxPoolSet: empty set");
    rows_in_ = x.cols();
    argmax_.resize(x.rows());
    Mat<S> y(x.rows(), 1);
    for (Eigen::Index f = 0; f < x.rows(); ++f) {
      Eigen::Index j;
      y(f, 0) = x.row(f).maxCoeff(&j);
      argmax_[f] = j;
    }
    cached_ = true;
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    if (!cached_) throw StateError("MaxPoolSet: backward without forward cache");
    Mat<S> dx = Mat<S>::Zero(dy.rows(), rows_in_);
    for (Eigen::Index f = 0; f < dy.rows(); ++f) dx(f, argmax_[f]) = dy(f, 0);
    return dx;
  }

  void collect(const std::string&, std::vector<ParamRef<S>>&) {}

 private:
  std::vector<Eigen::Index> argmax_;
  Eigen::Index rows_in_ = 0;
  bool cached_ = false;
};

template <class S>
using Layer = std::variant<Linear<S>, Sine<S>, Relu<S>, Sigmoid<S>, BatchNorm<S>, MaxPoolSet<S>>;

// ---------------------------------------------------------------------------
// Sequential container

template <class S>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer<S>> layers) : layers_(std::move(layers)) {}

  template <class L>
  L& add(L layer) {
    layers_.emplace_back(std::move(layer));
    return std::get<L>(layers_.back());
  }

  Mat<S> forward(Mat<S> x, Mode mode) {
    for (auto& l : layers_) x = std::visit([&](auto& layer) { return layer.forward(x, mode); }, l);
    return x;
  }

  /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
  Mat<S> backward(Mat<S> dy) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      dy = std::visit([&](auto& layer) { return layer.backward(dy); }, *it);
    return dy;
  }

  std::vector<ParamRef<S>> params(const std::string& prefix = "") {
    std::vector<ParamRef<S>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      std::visit([&](auto& layer) { layer.collect(prefix + "l" + std::to_string(i) + ".", out); }, layers_[i]);
    return out;
  }

  /// Non-trainable state (batchnorm running statistics); grad is null.
  std::vector<ParamRef<S>> buffers(const std::string& prefix = "") {
    std::vector<ParamRef<S>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (auto* bn = std::get_if<BatchNorm<S>>(&layers_[i])) {
        const std::string p = prefix + "l" + std::to_string(i) + ".";
        out.push_back({p + "running_mean", &bn->running_mean, nullptr});
        out.push_back({p + "running_var", &bn->running_var, nullptr});
      }
    return out;
  }

  /// Everything a checkpoint must hold: parameters then buffers.
  std::vector<ParamRef<S>> state(const std::string& prefix = "") {
    auto out = params(prefix);
    for (auto& b : buffers(prefix)) out.push_back(b);
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->setZero();
  }

  std::size_t num_params() {
    std::size_t n = 0;
    for (auto& p : params()) n += std::size_t(p.value->size());
    return n;
  }

  std::vector<Layer<S>>& layers() { return layers_; }
  const std::vector<Layer<S>>& layers() const { return layers_; }

  template <class L>
  L& layer(std::size_t i) { return std::get<L>(layers_.at(i)); }

  template <class T>
  Sequential<T> cast() const;

 private:
  std::vector<Layer<S>> layers_;
};

template <class T, class S>
Layer<T> cast_layer(const Layer<S>& l) {
  return std::visit(
      [](const auto& layer) -> Layer<T> {
        using L = std::decay_t<decltype(layer)>;
        if constexpr (std::is_same_v<L, Linear<S>>) {
          Linear<T> o(layer.fan_in(), layer.fan_out());
          o.W = layer.W.template cast<T>();
          o.b = layer.b.template cast<T>();
          return o;
        } else if constexpr (std::is_same_v<L, Sine<S>>) {
          return Sine<T>(double(layer.omega0));
        } else if constexpr (std::is_same_v<L, Relu<S>>) {
          return Relu<T>();
        } else if constexpr (std::is_same_v<L, Sigmoid<S>>) {
          return Sigmoid<T>();
        } else if constexpr (std::is_same_v<L, BatchNorm<S>>) {
          BatchNorm<T> o(int(layer.gamma.rows()), double(layer.momentum), double(layer.eps));
          o.gamma = layer.gamma.template cast<T>();
          o.beta = layer.beta.template cast<T>();
          o.running_mean = layer.running_mean.template cast<T>();
          o.running_var = layer.running_var.template cast<T>();
          return o;
        } else {
          return MaxPoolSet<T>();
        }
      },
      l);
}

template <class S>
template <class T>
Sequential<T> Sequential<S>::cast() const {
  std::vector<Layer<T>> out;
  for (const auto& l : layers_) out.push_back(cast_layer<T>(l));
  return Sequential<T>(std::move(out));
}

// ---------------------------------------------------------------------------
// Free-standing forms of single operations

/// sin(omega0 * (W x + b)).
template <class S>
Vec<S> sine_forward(const Vec<S>& x, const Mat<S>& W, const Vec<S>& b, S omega0) {
  if (W.cols() != x.size() || W.rows() != b.size())
    throw InvalidArgument("sine_forward: shape mismatch");
  return (omega0 * (W * x + b).array()).sin().matrix();
}

/// Elementwise maximum over the rows of `rows` (one set member per row).
template <class S>
Vec<S> maxpool_set(const Mat<S>& rows) {
  if (rows.rows() < 1) throw InvalidArgument("maxpool_set: empty set");
  return rows.colwise().maxCoeff().transpose();
}

// ---------------------------------------------------------------------------
// Losses. Each returns the loss and writes dL/dpred into `grad` when given.

inline constexpr double kBceEps = 1e-7;

/// Binary cross-entropy with p clamped to [eps, 1-eps].
template <class S>
S bce(S p, S y) {
  const S e = S(kBceEps);
  const S pc = std::clamp(p, e, S(1) - e);
  return -(y * std::log(pc) + (S(1) - y) * std::log(S(1) - pc));
}

/// 0.5 * sum of squared residuals.
template <class S>
S l2_loss(const Mat<S>& pred, const Mat<S>& target, Mat<S>* grad = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw InvalidArgument("l2_loss: shape mismatch");
  const Mat<S> r = pred - target;
  if (grad) *grad = r;
  return S(0.5) * r.squaredNorm();
}

/// Mean of squared residuals over all entries.
template <class S>
S mse_loss(const Mat<S>& pred, const Mat<S>& target, Mat<S>* grad = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw InvalidArgument("mse_loss: shape mismatch");
  const Mat<S> r = pred - target;
  const S n = S(r.size());
  if (grad) *grad = (S(2) / n) * r;
  return r.squaredNorm() / n;
}

/// Mean softmax cross-entropy over columns; `labels[j]` indexes a row.
template <class S>
S softmax_cross_entropy(const Mat<S>& logits, const std::vector<int>& labels, Mat<S>* grad = nullptr) {
  if (Eigen::Index(labels.size()) != logits.cols())
    throw InvalidArgument("softmax_cross_entropy: label count mismatch");
  const S n = S(logits.cols());
  S loss = 0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[std::size_t(j)];
    if (y < 0 || y >= logits.rows()) throw InvalidArgument("softmax_cross_entropy: label out of range");
    const S m = logits.col(j).maxCoeff();
    const Vec<S> e = (logits.col(j).array() - m).exp();
    const S z = e.sum();
    loss += std::log(z) + m - logits(y, j);
    if (grad) {
      grad->col(j) = e / z;
      (*grad)(y, j) -= S(1);
    }
  }
  if (grad) *grad /= n;
  return loss / n;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct OptState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
};

/// Bias-corrected adaptive-moment update, in place.
///
/// Entries whose gradient is exactly zero are skipped (moments and value
/// untouched), so a zero gradient is a fixed point in every state.
template <class S>
void adam_step(const std::vector<ParamRef<S>>& params, OptState<S>& st) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
      st.v.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (st.m.size() != params.size()) throw InvalidArgument("adam_step: optimizer state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& g = *params[k].grad;
    if (g.rows() != params[k].value->rows() || g.cols() != params[k].value->cols() ||
        st.m[k].rows() != g.rows() || st.m[k].cols() != g.cols())
      throw InvalidArgument("adam_step: shape mismatch for " + params[k].name);
    if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient in " + params[k].name);
  }
  ++st.step;
  const auto& c = st.config;
  const double bc1 = 1.0 - std::pow(c.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(st.step));
  const S b1 = S(c.beta1), b2 = S(c.beta2);
  const S step_size = S(c.lr / bc1);
  const S inv_sqrt_bc2 = S(1.0 / std::sqrt(bc2));
  const S eps = S(c.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = *params[k].value;
    const auto& g = *params[k].grad;
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const S gi = g.data()[i];
      if (gi == S(0)) continue;
      S& mi = m.data()[i];
      S& vi = v.data()[i];
      mi = b1 * mi + (S(1) - b1) * gi;
      vi = b2 * vi + (S(1) - b2) * gi * gi;
      w.data()[i] -= step_size * mi / (std::sqrt(vi) * inv_sqrt_bc2 + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check (double precision only)

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = true;
  std::vector<GradCheckEntry> params;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-6;
  /// Entries probed per array; larger arrays are probed on an even stride.
  std::size_t max_entries = 48;
};

/// `loss_and_grad()` must zero the gradients, run forward and backward, and
/// return the scalar loss. Every ParamRef (inputs included) is compared.
template <class Fn>
GradCheckReport grad_check(const std::vector<ParamRef<double>>& params, Fn&& loss_and_grad, double tol,
                           const GradCheckOptions& opt = {}) {
  const double base = loss_and_grad();
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");
  std::vector<Mat<double>> analytic;
  for (const auto& p : params) analytic.push_back(*p.grad);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = *params[k].value;
    GradCheckEntry e{params[k].name};
    const auto n = std::size_t(w.size());
    const std::size_t stride = n <= opt.max_entries ? 1 : (n + opt.max_entries - 1) / opt.max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = w.data()[i];
      const double saved = x;
      x = saved + opt.step;
      const double up = loss_and_grad();
      x = saved - opt.step;
      const double down = loss_and_grad();
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k].data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      e.max_rel_error = std::max(e.max_rel_error, rel);
    }
    e.pass = e.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.pass = report.pass && e.pass;
    report.params.push_back(std::move(e));
  }
  // Leave the analytic gradients in place for the caller.
  loss_and_grad();
  return report;
}

}  // namespace inrsynth::nn
