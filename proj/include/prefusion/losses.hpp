#ifndef PREFUSION_LOSSES_HPP
#define PREFUSION_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "prefusion/errors.hpp"
#include "prefusion/geom.hpp"
#include "prefusion/nn.hpp"

namespace prefusion {

inline constexpr double kBinWidth = 0.5;
inline constexpr int kNumBins = 118;  // (60 - 1) / 0.5
inline constexpr double kProbFloor = 1e-12;

/// Bin index for d in [1, 60).
inline int depth_to_bin(double d) {
  if (!(d >= kMinDepth && d < kMaxDepth)) throw OutOfRange("depth outside the binned range [1, 60)");
  return std::min(kNumBins - 1, static_cast<int>(std::floor((d - kMinDepth) / kBinWidth)));
}

/// Target depths are clamped into the binned range first.
inline int target_bin(double d) {
  return depth_to_bin(std::clamp(d, kMinDepth, std::nextafter(kMaxDepth, 0.0)));
}

inline double bin_center(int bin) { return kMinDepth + (bin + 0.5) * kBinWidth; }

/// Per-pixel probability vectors over depth bins, pixel-major.
struct DepthDistribution {
  int width = 0;
  int height = 0;
  int numBins = kNumBins;
  std::vector<double> probs;

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::span<const double> at(std::size_t pixel) const {
    return {probs.data() + pixel * numBins, static_cast<std::size_t>(numBins)};
  }
  int argmax(std::size_t pixel) const {
    const auto p = at(pixel);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }
};

struct ValidSet {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> flags;

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
  }
};

/// Pixels with nonzero depth.
inline ValidSet valid_from_depth(const SparseDepthMap& m) {
  ValidSet v{m.width(), m.height(), std::vector<std::uint8_t>(m.size(), 0)};
  for (std::size_t i = 0; i < m.size(); ++i) v.flags[i] = m[i] != 0.0;
  return v;
}

/// -(1 - p)^gamma * log(max(p, floor)).
inline double focal_term(double p, double gamma) {
  return -std::pow(1.0 - p, gamma) * std::log(std::max(p, kProbFloor));
}

/// d(focal_term)/dp multiplied by p, cheaper and finite at p -> 0.
inline double focal_term_dp_times_p(double p, double gamma) {
  const double logp = std::log(std::max(p, kProbFloor));
  const double power_part =
      (gamma == 0.0 || p >= 1.0) ? 0.0 : gamma * std::pow(1.0 - p, gamma - 1.0) * p * logp;
  const double log_part = p >= kProbFloor ? -std::pow(1.0 - p, gamma) : 0.0;
  return power_part + log_part;
}

struct FocalResult {
  double loss = 0.0;
  std::vector<double> terms;  // per pixel, 0 outside the valid set
};

inline void check_loss_inputs(const DepthDistribution& pred, int w, int h, const ValidSet& valid) {
  if (pred.width != w || pred.height != h || valid.width != w || valid.height != h ||
      valid.flags.size() != pred.pixels() ||
      pred.probs.size() != pred.pixels() * static_cast<std::size_t>(pred.numBins))
    throw DimensionMismatch("prediction, target and valid set must share dimensions");
}

inline FocalResult focal_loss(const DepthDistribution& pred, const SparseDepthMap& target,
                              const ValidSet& valid, double gamma = 2.0) {
  if (!(gamma >= 0.0)) throw OutOfRange("gamma must be >= 0");
  check_loss_inputs(pred, target.width(), target.height(), valid);
  FocalResult r{0.0, std::vector<double>(pred.pixels(), 0.0)};
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.pixels(); ++i) {
    if (!valid.flags[i]) continue;
    r.terms[i] = focal_term(pred.at(i)[target_bin(target[i])], gamma);
    r.loss += r.terms[i];
    ++n;
  }
  if (n == 0) throw EmptyValidSet("no valid pixels");
  r.loss /= static_cast<double>(n);
  return r;
}

inline double edge_critical_loss(std::span<const double> perPixelFocal,
                                 std::span<const double> weights, const ValidSet& valid) {
  if (perPixelFocal.size() != weights.size() || weights.size() != valid.flags.size())
    throw DimensionMismatch("edge loss inputs must share dimensions");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!valid.flags[i]) continue;
    sum += weights[i] * perPixelFocal[i];
    ++n;
  }
  if (n == 0) throw EmptyValidSet("no valid pixels");
  return sum / static_cast<double>(n);
}

inline double total_depth_loss(const DepthDistribution& pred, const SparseDepthMap& target,
                               std::span<const double> weights, const ValidSet& valid,
                               double gamma = 2.0) {
  const FocalResult f = focal_loss(pred, target, valid, gamma);
  return f.loss + edge_critical_loss(f.terms, weights, valid);
}

/**
 * @brief Focal + edge loss on a batch of logits, with the gradient.
 *
 * Row i of `logits` is one supervised pixel with target bin `bins[i]` and
 * edge weight `weights[i]`. The loss is mean_i (1 + w_i) * focal_i, which is
 * the sum of the focal and edge terms over the same valid set.
 */
struct BatchLoss {
  double focal = 0.0;
  double edge = 0.0;
  double total() const { return focal + edge; }
  nn::Matrix dlogits;
  nn::Matrix probs;
};

inline BatchLoss depth_loss_on_logits(const nn::Matrix& logits, std::span<const int> bins,
                                      std::span<const double> weights, double gamma) {
  const auto n = static_cast<std::size_t>(logits.rows());
  if (bins.size() != n || weights.size() != n) throw DimensionMismatch("batch loss size mismatch");
  if (n == 0) throw EmptyValidSet("empty batch");
  BatchLoss r;
  r.probs = nn::softmax_rows(logits);
  r.dlogits = nn::Matrix::Zero(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double p = r.probs(row, bins[i]);
    const double term = focal_term(p, gamma);
    r.focal += term;
    r.edge += weights[i] * term;
    // dl/dz_j = (dl/dp * p) * (delta_tj - p_j)
    const double g = (1.0 + weights[i]) * inv_n * focal_term_dp_times_p(p, gamma);
    r.dlogits.row(row) = -g * r.probs.row(row);
    r.dlogits(row, bins[i]) += g;
  }
  r.focal *= inv_n;
  r.edge *= inv_n;
  return r;
}

}  // namespace prefusion

#endif  // PREFUSION_LOSSES_HPP
