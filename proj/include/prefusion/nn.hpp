#ifndef PREFUSION_NN_HPP
#define PREFUSION_NN_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prefusion/errors.hpp"
#include "prefusion/rng.hpp"

/**
 * Minimal differentiable layer set.
 *
 * Activations are N x C matrices (one row per pixel). Every layer exposes a
 * forward pass and an analytic backward pass that accumulates parameter
 * gradients into a same-shaped gradient object and returns the input
 * gradient. All convolutions are 1x1, i.e. per-pixel affine maps.
 */
namespace prefusion::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Mode { kTrain, kEval };

/// Shape + flat row-major values; the serialized form of every parameter.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
};

inline Tensor to_tensor(const Matrix& m) {
  Tensor t{{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, {}};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

inline Tensor to_tensor(const Vector& v) {
  Tensor t{{static_cast<std::size_t>(v.size())}, {}};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape}, {"values", t.values}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("values"))
    throw ShapeMismatch("tensor JSON needs 'shape' and 'values'");
  Tensor t;
  try {
    t.shape = j.at("shape").get<std::vector<std::size_t>>();
    t.values = j.at("values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ShapeMismatch(std::string("malformed tensor: ") + e.what());
  }
  if (t.numel() != t.values.size()) throw ShapeMismatch("tensor values do not match shape");
  for (double x : t.values)
    if (!std::isfinite(x)) throw ShapeMismatch("tensor values must be finite");
  return t;
}

inline Matrix matrix_from_tensor(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (t.shape.size() != 2 || t.shape[0] != static_cast<std::size_t>(rows) ||
      t.shape[1] != static_cast<std::size_t>(cols))
    throw ShapeMismatch("expected a " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " tensor");
  Matrix m(rows, cols);
  std::copy(t.values.begin(), t.values.end(), m.data());
  return m;
}

inline Vector vector_from_tensor(const Tensor& t, Eigen::Index n) {
  if (t.shape.size() != 1 || t.shape[0] != static_cast<std::size_t>(n))
    throw ShapeMismatch("expected a vector of length " + std::to_string(n));
  Vector v(n);
  std::copy(t.values.begin(), t.values.end(), v.data());
  return v;
}

/// Named view of a parameter block, used for updates and gradient checks.
struct ParamRef {
  std::string name;
  std::span<double> values;
};

inline std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

inline Vector uniform_vector(Eigen::Index n, double scale, Rng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

// ---------------------------------------------------------------------------

struct Conv1x1 {
  Matrix weight;  // out x in
  Vector bias;    // out

  static Conv1x1 zeros(Eigen::Index in, Eigen::Index out) {
    return {Matrix::Zero(out, in), Vector::Zero(out)};
  }
  static Conv1x1 identity(Eigen::Index n) { return {Matrix::Identity(n, n), Vector::Zero(n)}; }
  static Conv1x1 random(Eigen::Index in, Eigen::Index out, Rng& rng, double scale = 0.1) {
    Conv1x1 c;
    c.weight = uniform_matrix(out, in, scale, rng);
    c.bias = uniform_vector(out, scale, rng);
    return c;
  }

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != in())
      throw ShapeMismatch("conv expects " + std::to_string(in()) + " channels, got " +
                          std::to_string(x.cols()));
    Matrix y = x * weight.transpose();
    y.rowwise() += bias.transpose();
    return y;
  }

  Matrix backward(const Matrix& x, const Matrix& dy, Conv1x1& grad) const {
    grad.weight.noalias() += dy.transpose() * x;
    grad.bias += dy.colwise().sum().transpose();
    return dy * weight;
  }

  Conv1x1 zeros_like() const { return zeros(in(), out()); }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", span_of(weight)});
    out.push_back({prefix + ".bias", span_of(bias)});
  }

  nlohmann::json to_json() const {
    return {{"weight", tensor_to_json(to_tensor(weight))}, {"bias", tensor_to_json(to_tensor(bias))}};
  }
  static Conv1x1 from_json(const nlohmann::json& j, Eigen::Index in, Eigen::Index out) {
    if (!j.is_object() || !j.contains("weight") || !j.contains("bias"))
      throw ShapeMismatch("conv JSON needs 'weight' and 'bias'");
    return {matrix_from_tensor(tensor_from_json(j.at("weight")), out, in),
            vector_from_tensor(tensor_from_json(j.at("bias")), out)};
  }
};

// ---------------------------------------------------------------------------

/**
 * @brief Per-channel batch normalization.
 *
 * Training mode normalizes with the biased batch variance; evaluation mode
 * uses the running statistics. Running statistics are updated separately
 * (update_running) with momentum 0.1 and the same biased variance, so a converged
 * running estimate reproduces the training-mode output exactly.
 */
struct BatchNorm {
  Vector gamma, beta, runningMean, runningVar;
  double momentum = 0.1;
  double eps = 1e-5;

  struct Cache {
    Matrix xhat;
    Vector invStd;
    Vector batchMean;
    Vector batchVar;  // biased
    Eigen::Index rows = 0;
  };

  static BatchNorm identity(Eigen::Index c) {
    return {Vector::Ones(c), Vector::Zero(c), Vector::Zero(c), Vector::Ones(c)};
  }

  Eigen::Index channels() const { return gamma.size(); }

  Matrix forward(const Matrix& x, Mode mode, Cache* cache = nullptr) const {
    if (x.cols() != channels()) throw ShapeMismatch("batch norm channel mismatch");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.rows = x.rows();
    if (mode == Mode::kTrain) {
      if (x.rows() == 0) throw ShapeMismatch("batch norm needs a non-empty batch");
      c.batchMean = x.colwise().mean().transpose();
      Matrix centered = x.rowwise() - c.batchMean.transpose();
      c.batchVar = centered.array().square().colwise().mean().transpose();
      c.invStd = (c.batchVar.array() + eps).rsqrt().matrix();
      c.xhat = centered.array().rowwise() * c.invStd.transpose().array();
    } else {
      c.batchMean = runningMean;
      c.batchVar = runningVar;
      c.invStd = (runningVar.array() + eps).rsqrt().matrix();
      c.xhat = (x.rowwise() - runningMean.transpose()).array().rowwise() *
               c.invStd.transpose().array();
    }
    Matrix y = c.xhat.array().rowwise() * gamma.transpose().array();
    y.rowwise() += beta.transpose();
    return y;
  }

  void update_running(const Cache& c) {
    runningMean = (1.0 - momentum) * runningMean + momentum * c.batchMean;
    runningVar = (1.0 - momentum) * runningVar + momentum * c.batchVar;
  }

  /// Replaces the running statistics by the statistics of one batch.
  void freeze(const Cache& c) {
    runningMean = c.batchMean;
    runningVar = c.batchVar;
  }

  Matrix backward(const Cache& c, const Matrix& dy, Mode mode, BatchNorm& grad) const {
    grad.gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix().transpose();
    grad.beta += dy.colwise().sum().transpose();
    const Matrix dxhat = dy.array().rowwise() * gamma.transpose().array();
    if (mode == Mode::kEval) return dxhat.array().rowwise() * c.invStd.transpose().array();
    const Vector mean_dxhat = dxhat.colwise().mean().transpose();
    const Vector mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().mean().transpose();
    Matrix dx = dxhat.rowwise() - mean_dxhat.transpose();
    dx.array() -= c.xhat.array().rowwise() * mean_dxhat_xhat.transpose().array();
    dx.array().rowwise() *= c.invStd.transpose().array();
    return dx;
  }

  BatchNorm zeros_like() const {
    const auto n = channels();
    return {Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), momentum, eps};
  }

  /// Only gamma and beta are trainable.
  void collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", span_of(gamma)});
    out.push_back({prefix + ".beta", span_of(beta)});
  }

  nlohmann::json to_json() const {
    return {{"gamma", tensor_to_json(to_tensor(gamma))},
            {"beta", tensor_to_json(to_tensor(beta))},
            {"runningMean", tensor_to_json(to_tensor(runningMean))},
            {"runningVar", tensor_to_json(to_tensor(runningVar))}};
  }
  static BatchNorm from_json(const nlohmann::json& j, Eigen::Index c) {
    for (const char* k : {"gamma", "beta", "runningMean", "runningVar"})
      if (!j.is_object() || !j.contains(k)) throw ShapeMismatch(std::string("batch norm JSON needs ") + k);
    BatchNorm bn{vector_from_tensor(tensor_from_json(j.at("gamma")), c),
                 vector_from_tensor(tensor_from_json(j.at("beta")), c),
                 vector_from_tensor(tensor_from_json(j.at("runningMean")), c),
                 vector_from_tensor(tensor_from_json(j.at("runningVar")), c)};
    if ((bn.runningVar.array() <= 0.0).any()) throw ShapeMismatch("runningVar must be > 0");
    return bn;
  }
};

// ---------------------------------------------------------------------------

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

/// `pre` is the ReLU input.
inline Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Matrix sigmoid(const Matrix& x) { return x.unaryExpr([](double z) { return sigmoid(z); }); }

/// `y` is the sigmoid output.
inline Matrix sigmoid_backward(const Matrix& y, const Matrix& dy) {
  return dy.array() * y.array() * (1.0 - y.array());
}

/// Row-wise softmax.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

/// Backward of row-wise softmax given its output p.
inline Matrix softmax_backward(const Matrix& p, const Matrix& dp) {
  const Vector dot = (p.array() * dp.array()).rowwise().sum();
  return p.array() * (dp.colwise() - dot).array();
}

// ---------------------------------------------------------------------------

/**
 * @brief Squeeze-and-excitation over the pixel batch.
 *
 * s = sigmoid(W2 relu(W1 mean_rows(x))), y = x * s per channel. No biases.
 */
struct SqueezeExcitation {
  Matrix w1;  // (C / r) x C
  Matrix w2;  // C x (C / r)

  struct Cache {
    Vector pooled, hiddenPre, hidden, scale;
  };

  static SqueezeExcitation random(Eigen::Index channels, Eigen::Index reduction, Rng& rng,
                                  double scale = 0.1) {
    if (reduction <= 0 || channels % reduction != 0)
      throw ShapeMismatch("SE channel count must be divisible by the reduction ratio");
    const Eigen::Index hidden = channels / reduction;
    return {uniform_matrix(hidden, channels, scale, rng),
            uniform_matrix(channels, hidden, scale, rng)};
  }

  Eigen::Index channels() const { return w1.cols(); }

  void check(Eigen::Index c) const {
    if (c != w1.cols() || w2.rows() != c || w2.cols() != w1.rows())
      throw ShapeMismatch("SE weights do not match " + std::to_string(c) + " channels");
  }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    check(x.cols());
    if (x.rows() == 0) throw ShapeMismatch("SE needs at least one pixel");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.pooled = x.colwise().mean().transpose();
    c.hiddenPre = w1 * c.pooled;
    c.hidden = c.hiddenPre.cwiseMax(0.0);
    c.scale = (w2 * c.hidden).unaryExpr([](double z) { return sigmoid(z); });
    return x.array().rowwise() * c.scale.transpose().array();
  }

  Matrix backward(const Matrix& x, const Cache& c, const Matrix& dy,
                  SqueezeExcitation& grad) const {
    Matrix dx = dy.array().rowwise() * c.scale.transpose().array();
    const Vector dscale = (dy.array() * x.array()).colwise().sum().transpose();
    const Vector dz = dscale.array() * c.scale.array() * (1.0 - c.scale.array());
    grad.w2.noalias() += dz * c.hidden.transpose();
    const Vector dhidden = (w2.transpose() * dz).array() * (c.hiddenPre.array() > 0.0).cast<double>();
    grad.w1.noalias() += dhidden * c.pooled.transpose();
    const Vector dpooled = w1.transpose() * dhidden / static_cast<double>(x.rows());
    dx.rowwise() += dpooled.transpose();
    return dx;
  }

  SqueezeExcitation zeros_like() const {
    return {Matrix::Zero(w1.rows(), w1.cols()), Matrix::Zero(w2.rows(), w2.cols())};
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w1", span_of(w1)});
    out.push_back({prefix + ".w2", span_of(w2)});
  }

  nlohmann::json to_json() const {
    return {{"w1", tensor_to_json(to_tensor(w1))}, {"w2", tensor_to_json(to_tensor(w2))}};
  }
  static SqueezeExcitation from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("w1") || !j.contains("w2"))
      throw ShapeMismatch("SE JSON needs 'w1' and 'w2'");
    const Tensor t1 = tensor_from_json(j.at("w1"));
    const Tensor t2 = tensor_from_json(j.at("w2"));
    if (t1.shape.size() != 2 || t2.shape.size() != 2) throw ShapeMismatch("SE weights must be 2D");
    SqueezeExcitation se{matrix_from_tensor(t1, t1.shape[0], t1.shape[1]),
                         matrix_from_tensor(t2, t2.shape[0], t2.shape[1])};
    se.check(se.w1.cols());
    return se;
  }
};

// ---------------------------------------------------------------------------

struct GradCheckResult {
  double maxRelError = 0.0;
  std::string worstParam;
  std::size_t worstIndex = 0;
};

/**
 * Central-difference check of analytic gradients.
 *
 * `loss` re-evaluates the scalar objective reading the current contents of
 * `params`; `analytic` lists gradients in the same order and shape.
 * Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps
 * exactly-zero gradients (a bias feeding a training-mode batch norm) from
 * being judged on finite-difference roundoff alone.
 */
inline GradCheckResult grad_check(const std::function<double()>& loss,
                                  const std::vector<ParamRef>& params,
                                  const std::vector<ParamRef>& analytic, double eps = 1e-4,
                                  double floor = 1e-6) {
  if (params.size() != analytic.size()) throw ShapeMismatch("gradient list mismatch");
  GradCheckResult result;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != analytic[b].values.size())
      throw ShapeMismatch("gradient block mismatch for " + params[b].name);
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      double& x = params[b].values[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss();
      x = saved - eps;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[b].values[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > result.maxRelError) {
        result.maxRelError = rel;
        result.worstParam = params[b].name;
        result.worstIndex = i;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  double lr = 0.1;
  int iterations = 200;
};

/**
 * @brief Plain full-batch gradient descent.
 *
 * `step(params, update_running)` returns (loss, gradient) where the gradient
 * is a Params value of the same shape; `refs(params)` lists the trainable
 * blocks in a fixed order. The trace holds the loss before each update plus
 * the loss after the last one, so it has iterations + 1 entries. Running
 * statistics are only advanced during the update iterations.
 */
template <class Params, class StepFn, class RefsFn>
std::vector<double> gradient_descent(Params& params, StepFn&& step, RefsFn&& refs,
                                     const TrainOptions& opts) {
  if (!(opts.lr >= 0.0)) throw OutOfRange("learning rate must be >= 0");
  if (opts.iterations < 0) throw OutOfRange("iterations must be >= 0");
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(opts.iterations) + 1);
  for (int it = 0; it <= opts.iterations; ++it) {
    const bool last = it == opts.iterations;
    auto [loss, grad] = step(params, !last);
    if (!std::isfinite(loss))
      throw DivergenceDetected("loss became non-finite at iteration " + std::to_string(it));
    trace.push_back(loss);
    if (last) break;
    const std::vector<ParamRef> p = refs(params);
    const std::vector<ParamRef> g = refs(grad);
    for (std::size_t b = 0; b < p.size(); ++b)
      for (std::size_t i = 0; i < p[b].values.size(); ++i) p[b].values[i] -= opts.lr * g[b].values[i];
  }
  return trace;
}

}  // namespace prefusion::nn

#endif  // PREFUSION_NN_HPP
