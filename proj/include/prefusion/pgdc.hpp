#ifndef PREFUSION_PGDC_HPP
#define PREFUSION_PGDC_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prefusion/classes.hpp"
#include "prefusion/errors.hpp"
#include "prefusion/feature_map.hpp"
#include "prefusion/geom.hpp"
#include "prefusion/kdtree.hpp"
#include "prefusion/nn.hpp"
#include "prefusion/simulate.hpp"

/**
 * Prior-guided depth calibration: depths inside each 2D box are re-estimated
 * from the point itself and its extreme-depth neighbours, and image features
 * inside boxes are amplified per class.
 */
namespace prefusion {

inline constexpr std::size_t kDefaultNeighborCount = 10;
inline constexpr std::size_t kMinBoxPoints = 5;
inline constexpr double kBnEps = 1e-5;

/// Two smallest and two largest values, ascending (stable on ties).
inline std::array<double, 4> critical_neighbors(std::span<const double> depths) {
  if (depths.size() < 4)
    throw TooFewNeighbors("need at least 4 neighbours, got " + std::to_string(depths.size()));
  std::vector<double> s(depths.begin(), depths.end());
  std::stable_sort(s.begin(), s.end());
  return {s[0], s[1], s[s.size() - 2], s[s.size() - 1]};
}

using PointFeatures = std::array<double, 5>;

/// Single-output 1x1 convolution over (depth, critical neighbours), batch norm, ReLU.
struct SmoothingHead {
  nn::Conv1x1 conv = nn::Conv1x1::zeros(5, 1);
  nn::BatchNorm bn = nn::BatchNorm::identity(1);

  /// w = (1, 0, 0, 0, 0) with a batch norm whose inference form is exactly the identity.
  static SmoothingHead identity() {
    SmoothingHead h;
    h.conv.weight(0, 0) = 1.0;
    h.bn.runningVar[0] = 1.0 - kBnEps;
    return h;
  }

  bool valid() const {
    return conv.weight.rows() == 1 && conv.weight.cols() == 5 && bn.channels() == 1 &&
           bn.runningVar[0] > 0.0;
  }

  double evaluate(const PointFeatures& f) const {
    double x = conv.bias[0];
    for (int i = 0; i < 5; ++i) x += conv.weight(0, i) * f[i];
    const double y =
        bn.gamma[0] * (x - bn.runningMean[0]) / std::sqrt(bn.runningVar[0] + bn.eps) + bn.beta[0];
    return std::max(0.0, y);
  }

  SmoothingHead zeros_like() const { return {conv.zeros_like(), bn.zeros_like()}; }

  std::vector<nn::ParamRef> refs() {
    std::vector<nn::ParamRef> out;
    conv.collect("conv", out);
    bn.collect("bn", out);
    return out;
  }

  nlohmann::json to_json() const {
    std::vector<double> w(conv.weight.data(), conv.weight.data() + 5);
    return {{"weights", w},           {"bias", conv.bias[0]},        {"bnGamma", bn.gamma[0]},
            {"bnBeta", bn.beta[0]},   {"bnMean", bn.runningMean[0]}, {"bnVar", bn.runningVar[0]}};
  }

  static SmoothingHead from_json(const nlohmann::json& j) {
    SmoothingHead h;
    try {
      const auto w = j.at("weights").get<std::vector<double>>();
      if (w.size() != 5) throw ShapeMismatch("smoothing head needs 5 weights");
      for (int i = 0; i < 5; ++i) h.conv.weight(0, i) = w[i];
      h.conv.bias[0] = j.at("bias").get<double>();
      h.bn.gamma[0] = j.at("bnGamma").get<double>();
      h.bn.beta[0] = j.at("bnBeta").get<double>();
      h.bn.runningMean[0] = j.at("bnMean").get<double>();
      h.bn.runningVar[0] = j.at("bnVar").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ShapeMismatch(std::string("malformed smoothing head: ") + e.what());
    }
    if (!(h.bn.runningVar[0] > 0.0)) throw ShapeMismatch("bnVar must be > 0");
    return h;
  }
};

inline double smooth_point(double depth, const std::array<double, 4>& critical,
                           const SmoothingHead& head) {
  return head.evaluate({depth, critical[0], critical[1], critical[2], critical[3]});
}

/// Integer pixel range covered by a box, clipped to the image.
struct PixelRange {
  int u0, v0, u1, v1;  // inclusive
};

inline PixelRange pixel_range(const BBox2D& b, int width, int height) {
  return {std::max(0, static_cast<int>(std::ceil(b.u_min))),
          std::max(0, static_cast<int>(std::ceil(b.v_min))),
          std::min(width - 1, static_cast<int>(std::floor(b.u_max))),
          std::min(height - 1, static_cast<int>(std::floor(b.v_max)))};
}

/// In-box measurement: pixel index and its feature vector.
struct BoxPoint {
  std::size_t pixel;
  PointFeatures features;
};

/**
 * Features for every measured pixel inside `box`, read from `depth`.
 * Empty when the box holds fewer than kMinBoxPoints measurements.
 */
inline std::vector<BoxPoint> box_point_features(const SparseDepthMap& depth, const BBox2D& box,
                                                std::size_t ks = kDefaultNeighborCount) {
  const PixelRange r = pixel_range(box, depth.width(), depth.height());
  std::vector<std::size_t> pixels;
  std::vector<Point2> coords;
  for (int v = r.v0; v <= r.v1; ++v)
    for (int u = r.u0; u <= r.u1; ++u)
      if (depth.at(u, v) != 0.0) {
        pixels.push_back(depth.index(u, v));
        coords.push_back({static_cast<double>(u), static_cast<double>(v)});
      }
  std::vector<BoxPoint> out;
  if (pixels.size() < kMinBoxPoints) return out;
  const KdTree2 tree(std::move(coords));
  out.reserve(pixels.size());
  std::vector<double> nd;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    nd.clear();
    for (std::size_t j : tree.knn_of(i, ks)) nd.push_back(depth[pixels[j]]);
    const auto c = critical_neighbors(nd);
    out.push_back({pixels[i], {depth[pixels[i]], c[0], c[1], c[2], c[3]}});
  }
  return out;
}

/**
 * @brief Smooths measured depths inside each box.
 *
 * Boxes are processed in list order; within a box all features are taken
 * from the depths as they were before that box, later boxes see earlier
 * updates. Results are clamped into [1, 60] so a measurement never turns
 * into an empty pixel.
 */
inline SparseDepthMap calibrate_view(const SparseDepthMap& raw, const std::vector<BBox2D>& boxes,
                                     const SmoothingHead& head,
                                     std::size_t ks = kDefaultNeighborCount) {
  if (!head.valid()) throw ShapeMismatch("invalid smoothing head");
  if (ks < 4) throw OutOfRange("neighbour count must be >= 4");
  SparseDepthMap out = raw;
  for (const BBox2D& box : boxes) {
    const std::vector<BoxPoint> pts = box_point_features(out, box, ks);
    std::vector<double> updated(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      updated[i] = std::clamp(head.evaluate(pts[i].features), kMinDepth, kMaxDepth);
    for (std::size_t i = 0; i < pts.size(); ++i) out[pts[i].pixel] = updated[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Per-class feature gains, all >= 1.
class AlphaTable {
 public:
  AlphaTable() = default;

  static AlphaTable defaults() {
    AlphaTable t;
    const std::map<std::string, double> d = {
        {"car", 1.2},        {"truck", 1.1},     {"construction_vehicle", 1.1},
        {"bus", 1.1},        {"trailer", 1.1},   {"barrier", 1.3},
        {"motorcycle", 1.3}, {"bicycle", 1.5},   {"pedestrian", 1.5},
        {"traffic_cone", 1.5}};
    for (const auto& [name, a] : d) t.set(*class_from_name(name), a);
    return t;
  }

  static AlphaTable uniform(double a) {
    AlphaTable t;
    for (int k = 0; k < kNumClasses; ++k) t.set(k, a);
    return t;
  }

  void set(int classId, double alpha) {
    if (!(alpha >= 1.0) || !std::isfinite(alpha)) throw OutOfRange("class gain must be >= 1");
    alphas_[classId] = alpha;
  }

  void erase(int classId) { alphas_.erase(classId); }

  double at(int classId) const {
    const auto it = alphas_.find(classId);
    if (it == alphas_.end()) throw UnknownClass("no gain for class " + std::to_string(classId));
    return it->second;
  }

  const std::map<int, double>& entries() const { return alphas_; }

  /// Overrides on top of the defaults; keys are class names.
  static AlphaTable from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("alphas must be an object of class name -> gain");
    AlphaTable t = defaults();
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = class_from_name(it.key());
      if (!id) throw ConfigError("unknown class '" + it.key() + "' in alphas");
      if (!it->is_number()) throw ConfigError("alpha for " + it.key() + " must be a number");
      const double a = it->get<double>();
      if (!(a >= 1.0)) throw ConfigError("alpha for " + it.key() + " must be >= 1");
      t.set(*id, a);
    }
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, a] : alphas_) j[class_name(k)] = a;
    return j;
  }

 private:
  std::map<int, double> alphas_;
};

/// Multiplies every channel of in-box pixels by the box's class gain; overlaps multiply.
inline FeatureMap enhance_features(const FeatureMap& f, const std::vector<BBox2D>& boxes,
                                   const AlphaTable& alphas) {
  FeatureMap out = f;
  for (const BBox2D& box : boxes) {
    const double a = alphas.at(box.classId);
    const PixelRange r = pixel_range(box, f.width, f.height);
    for (int v = r.v0; v <= r.v1; ++v)
      for (int u = r.u0; u <= r.u1; ++u)
        for (int c = 0; c < f.channels; ++c) out.at(u, v, c) *= a;
  }
  return out;
}

inline FeatureMap se_recalibrate(const FeatureMap& f, const nn::SqueezeExcitation& se) {
  se.check(f.channels);
  return feature_map_from_rows(se.forward(feature_rows(f)), f.width, f.height);
}

// ---------------------------------------------------------------------------

/// Supervision for the smoothing head: point features and target depths.
struct HeadDataset {
  nn::Matrix features;  // N x 5
  std::vector<double> targets;
};

struct HeadStep {
  double loss = 0.0;
  SmoothingHead grad;
};

/// Mean absolute error of the training-mode head output.
inline HeadStep head_step(SmoothingHead& h, const HeadDataset& data, bool updateRunning) {
  const auto n = data.features.rows();
  if (n == 0) throw EmptyInput("smoothing head dataset is empty");
  nn::BatchNorm::Cache cache;
  const nn::Matrix pre = h.conv.forward(data.features);
  const nn::Matrix bn = h.bn.forward(pre, nn::Mode::kTrain, &cache);
  const nn::Matrix out = nn::relu(bn);
  HeadStep s{0.0, h.zeros_like()};
  nn::Matrix dout(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = out(i, 0) - data.targets[i];
    s.loss += std::abs(e);
    dout(i, 0) = (e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0) / static_cast<double>(n);
  }
  s.loss /= static_cast<double>(n);
  const nn::Matrix dbn = nn::relu_backward(bn, dout);
  const nn::Matrix dpre = h.bn.backward(cache, dbn, nn::Mode::kTrain, s.grad.bn);
  h.conv.backward(data.features, dpre, s.grad.conv);
  if (updateRunning) h.bn.update_running(cache);
  return s;
}

/**
 * Identity head whose training-mode output is also the identity on `data`:
 * batch-norm scale and shift absorb the batch statistics, and the running
 * statistics start at them.
 */
inline SmoothingHead identity_head_for(const HeadDataset& data) {
  SmoothingHead h = SmoothingHead::identity();
  if (data.features.rows() == 0) return h;
  const Eigen::VectorXd d = data.features.col(0);
  const double mean = d.mean();
  const double var = (d.array() - mean).square().mean();
  h.bn.runningMean[0] = mean;
  h.bn.runningVar[0] = var;
  h.bn.gamma[0] = std::sqrt(var + h.bn.eps);
  h.bn.beta[0] = mean;
  return h;
}

/**
 * Full-batch gradient descent on the L1 error. After training the running
 * statistics are frozen at the statistics of the whole dataset, so the
 * inference form reproduces the training-mode output.
 */
inline std::vector<double> train_head(SmoothingHead& h, const HeadDataset& data,
                                      const nn::TrainOptions& opts) {
  std::vector<double> trace = nn::gradient_descent(
      h,
      [&](SmoothingHead& q, bool update) {
        HeadStep s = head_step(q, data, update);
        return std::pair<double, SmoothingHead>(s.loss, std::move(s.grad));
      },
      [](SmoothingHead& q) { return q.refs(); }, opts);
  if (opts.iterations > 0) {
    nn::BatchNorm::Cache cache;
    h.bn.forward(h.conv.forward(data.features), nn::Mode::kTrain, &cache);
    h.bn.freeze(cache);
  }
  return trace;
}

}  // namespace prefusion

#endif  // PREFUSION_PGDC_HPP
