#ifndef PREFUSION_SGDM_HPP
#define PREFUSION_SGDM_HPP

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prefusion/errors.hpp"
#include "prefusion/feature_map.hpp"
#include "prefusion/losses.hpp"
#include "prefusion/nn.hpp"
#include "prefusion/rng.hpp"

/**
 * Gated depth head: encodes camera features and the two-channel geometry
 * map in parallel, gates a fused feature stream with a per-pixel attention
 * value, adds the camera encoding back as a residual and classifies depth
 * bins.
 */
namespace prefusion {

struct SgdmParams {
  nn::Conv1x1 camConv;
  nn::BatchNorm camBn;
  nn::Conv1x1 geoConv;
  nn::BatchNorm geoBn;
  nn::Conv1x1 gateConv;  // 2H -> 1
  nn::Conv1x1 featConv;  // 2H -> H
  nn::Conv1x1 headConv;  // H -> bins

  Eigen::Index cam_channels() const { return camConv.in(); }
  Eigen::Index hidden() const { return camConv.out(); }
  Eigen::Index bins() const { return headConv.out(); }

  /// Convolutions uniform in [-0.1, 0.1]; batch norms start at unit scale.
  static SgdmParams init(Eigen::Index camChannels, Eigen::Index hidden, std::uint64_t seed,
                         Eigen::Index bins = kNumBins) {
    if (camChannels <= 0 || hidden <= 0 || bins <= 0) throw ShapeMismatch("SGDM sizes must be > 0");
    Rng rng(seed, Stream::kInit);
    SgdmParams p;
    p.camConv = nn::Conv1x1::random(camChannels, hidden, rng);
    p.camBn = nn::BatchNorm::identity(hidden);
    p.geoConv = nn::Conv1x1::random(2, hidden, rng);
    p.geoBn = nn::BatchNorm::identity(hidden);
    p.gateConv = nn::Conv1x1::random(2 * hidden, 1, rng);
    p.featConv = nn::Conv1x1::random(2 * hidden, hidden, rng);
    p.headConv = nn::Conv1x1::random(hidden, bins, rng);
    return p;
  }

  SgdmParams zeros_like() const {
    return {camConv.zeros_like(),  camBn.zeros_like(),    geoConv.zeros_like(),
            geoBn.zeros_like(),    gateConv.zeros_like(), featConv.zeros_like(),
            headConv.zeros_like()};
  }

  std::vector<nn::ParamRef> refs() {
    std::vector<nn::ParamRef> out;
    camConv.collect("cam.conv", out);
    camBn.collect("cam.bn", out);
    geoConv.collect("geo.conv", out);
    geoBn.collect("geo.bn", out);
    gateConv.collect("gate", out);
    featConv.collect("feat", out);
    headConv.collect("head", out);
    return out;
  }

  nlohmann::json to_json() const {
    return {{"camChannels", cam_channels()}, {"hidden", hidden()},  {"numBins", bins()},
            {"camConv", camConv.to_json()},  {"camBn", camBn.to_json()},
            {"geoConv", geoConv.to_json()},  {"geoBn", geoBn.to_json()},
            {"gateConv", gateConv.to_json()}, {"featConv", featConv.to_json()},
            {"headConv", headConv.to_json()}};
  }

  static SgdmParams from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ShapeMismatch("SGDM params must be a JSON object");
    Eigen::Index c = 0, h = 0, b = 0;
    try {
      c = j.at("camChannels").get<Eigen::Index>();
      h = j.at("hidden").get<Eigen::Index>();
      b = j.at("numBins").get<Eigen::Index>();
    } catch (const nlohmann::json::exception& e) {
      throw ShapeMismatch(std::string("SGDM params header: ") + e.what());
    }
    auto field = [&](const char* k) -> const nlohmann::json& {
      if (!j.contains(k)) throw ShapeMismatch(std::string("SGDM params missing ") + k);
      return j.at(k);
    };
    return {nn::Conv1x1::from_json(field("camConv"), c, h),
            nn::BatchNorm::from_json(field("camBn"), h),
            nn::Conv1x1::from_json(field("geoConv"), 2, h),
            nn::BatchNorm::from_json(field("geoBn"), h),
            nn::Conv1x1::from_json(field("gateConv"), 2 * h, 1),
            nn::Conv1x1::from_json(field("featConv"), 2 * h, h),
            nn::Conv1x1::from_json(field("headConv"), h, b)};
  }
};

/// Intermediate activations kept for the backward pass.
struct SgdmCache {
  nn::Matrix cam, geo;
  nn::BatchNorm::Cache camBn, geoBn;
  nn::Matrix camPre, geoPre;  // BN outputs (ReLU inputs)
  nn::Matrix c, z, gate, feat, fused;
};

/// Logits for N pixels: `cam` is N x C, `geo` is N x 2.
inline nn::Matrix sgdm_logits(const SgdmParams& p, const nn::Matrix& cam, const nn::Matrix& geo,
                              nn::Mode mode, SgdmCache* cache = nullptr) {
  if (cam.rows() != geo.rows()) throw ShapeMismatch("camera and geometry batches differ in size");
  if (geo.cols() != 2) throw ShapeMismatch("geometry features must have 2 channels");
  SgdmCache local;
  SgdmCache& k = cache ? *cache : local;
  k.cam = cam;
  k.geo = geo;
  k.camPre = p.camBn.forward(p.camConv.forward(cam), mode, &k.camBn);
  k.geoPre = p.geoBn.forward(p.geoConv.forward(geo), mode, &k.geoBn);
  k.c = nn::relu(k.camPre);
  const nn::Matrix g = nn::relu(k.geoPre);
  k.z.resize(cam.rows(), 2 * p.hidden());
  k.z << k.c, g;
  k.gate = nn::sigmoid(p.gateConv.forward(k.z));
  k.feat = p.featConv.forward(k.z);
  k.fused = k.feat.array().colwise() * k.gate.col(0).array();
  k.fused += k.c;
  return p.headConv.forward(k.fused);
}

/// Accumulates parameter gradients for upstream logits gradient `dlogits`.
inline void sgdm_backward(const SgdmParams& p, const SgdmCache& k, const nn::Matrix& dlogits,
                          nn::Mode mode, SgdmParams& grad) {
  const Eigen::Index h = p.hidden();
  const nn::Matrix dfused = p.headConv.backward(k.fused, dlogits, grad.headConv);
  const nn::Matrix dfeat = dfused.array().colwise() * k.gate.col(0).array();
  nn::Matrix dgate = (dfused.array() * k.feat.array()).rowwise().sum().matrix();
  dgate = nn::sigmoid_backward(k.gate, dgate);
  nn::Matrix dz = p.featConv.backward(k.z, dfeat, grad.featConv);
  dz += p.gateConv.backward(k.z, dgate, grad.gateConv);
  const nn::Matrix dc = dz.leftCols(h) + dfused;
  const nn::Matrix dg = dz.rightCols(h);
  const nn::Matrix dcam_pre = nn::relu_backward(k.camPre, dc);
  const nn::Matrix dgeo_pre = nn::relu_backward(k.geoPre, dg);
  const nn::Matrix dcam_conv = p.camBn.backward(k.camBn, dcam_pre, mode, grad.camBn);
  const nn::Matrix dgeo_conv = p.geoBn.backward(k.geoBn, dgeo_pre, mode, grad.geoBn);
  p.camConv.backward(k.cam, dcam_conv, grad.camConv);
  p.geoConv.backward(k.geo, dgeo_conv, grad.geoConv);
}

/// Per-pixel attention values in (0, 1), in evaluation mode.
inline std::vector<double> sgdm_attention(const SgdmParams& p, const nn::Matrix& cam,
                                          const nn::Matrix& geo) {
  SgdmCache k;
  sgdm_logits(p, cam, geo, nn::Mode::kEval, &k);
  return {k.gate.data(), k.gate.data() + k.gate.size()};
}

/// Depth distribution for a whole view using running BN statistics.
inline DepthDistribution sgdm_forward(const FeatureMap& enhanced, const FeatureMap& fa,
                                      const SgdmParams& p) {
  if (enhanced.width != fa.width || enhanced.height != fa.height)
    throw ShapeMismatch("camera and geometry maps differ in size");
  if (enhanced.channels != p.cam_channels())
    throw ShapeMismatch("camera feature channels do not match the model");
  const nn::Matrix probs = nn::softmax_rows(
      sgdm_logits(p, feature_rows(enhanced), feature_rows(fa), nn::Mode::kEval));
  DepthDistribution d{enhanced.width, enhanced.height, static_cast<int>(p.bins()), {}};
  d.probs.assign(probs.data(), probs.data() + probs.size());
  return d;
}

/// Supervised pixels gathered from one or more views.
struct SgdmBatch {
  nn::Matrix cam;               // N x C
  nn::Matrix geo;               // N x 2
  std::vector<int> bins;        // target bins
  std::vector<double> weights;  // edge weights
};

struct SgdmStep {
  double loss = 0.0;
  SgdmParams grad;
};

/// Loss and gradient on a batch in training mode; optionally advances BN running stats.
inline SgdmStep sgdm_step(SgdmParams& p, const SgdmBatch& batch, double gamma,
                          bool updateRunning) {
  SgdmCache k;
  const nn::Matrix logits = sgdm_logits(p, batch.cam, batch.geo, nn::Mode::kTrain, &k);
  const BatchLoss l = depth_loss_on_logits(logits, batch.bins, batch.weights, gamma);
  SgdmStep s{l.total(), p.zeros_like()};
  sgdm_backward(p, k, l.dlogits, nn::Mode::kTrain, s.grad);
  if (updateRunning) {
    p.camBn.update_running(k.camBn);
    p.geoBn.update_running(k.geoBn);
  }
  return s;
}

inline std::vector<double> train_sgdm(SgdmParams& p, const SgdmBatch& batch, double gamma,
                                      const nn::TrainOptions& opts) {
  return nn::gradient_descent(
      p,
      [&](SgdmParams& q, bool update) {
        SgdmStep s = sgdm_step(q, batch, gamma, update);
        return std::pair<double, SgdmParams>(s.loss, std::move(s.grad));
      },
      [](SgdmParams& q) { return q.refs(); }, opts);
}

}  // namespace prefusion

#endif  // PREFUSION_SGDM_HPP
