#ifndef PREFUSION_DAGF_HPP
#define PREFUSION_DAGF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "prefusion/errors.hpp"
#include "prefusion/feature_map.hpp"
#include "prefusion/geom.hpp"
#include "prefusion/kdtree.hpp"

namespace prefusion {

inline constexpr int kDefaultBlockSize = 20;
inline constexpr std::size_t kGradientNeighbors = 8;
inline constexpr double kMaxGradient = kMaxDepth - kMinDepth;
inline constexpr double kDefaultTau = 1.0;

/// |raw - aligned| per pixel; 0 wherever either map has no measurement.
inline SparseDepthMap discrepancy_map(const SparseDepthMap& raw, const SparseDepthMap& aligned) {
  if (!raw.same_shape(aligned)) throw DimensionMismatch("raw and aligned maps differ in size");
  SparseDepthMap delta(raw.width(), raw.height());
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (raw[i] != 0.0 && aligned[i] != 0.0) delta[i] = std::abs(raw[i] - aligned[i]);
  return delta;
}

/// Keeps aligned depth where the discrepancy is at most tau.
inline SparseDepthMap apply_mask(const SparseDepthMap& aligned, const SparseDepthMap& delta,
                                 double tau = kDefaultTau) {
  if (!(tau > 0.0)) throw OutOfRange("tau must be > 0");
  if (!aligned.same_shape(delta)) throw DimensionMismatch("aligned and discrepancy maps differ");
  SparseDepthMap out(aligned.width(), aligned.height());
  for (std::size_t i = 0; i < aligned.size(); ++i)
    if (delta[i] <= tau) out[i] = aligned[i];
  return out;
}

inline int block_count(int pixels, int blockSize) { return (pixels + blockSize - 1) / blockSize; }

struct BlockStats {
  int cols = 0;
  int rows = 0;
  int blockSize = kDefaultBlockSize;
  std::vector<double> dAvg;  // row-major over blocks
  std::vector<double> gMax;
  std::vector<std::uint8_t> valid;

  std::size_t index(int bx, int by) const { return static_cast<std::size_t>(by) * cols + bx; }
};

/// Measured depths of one block in row-major scan order, with their pixel coordinates.
struct BlockPoints {
  std::vector<Point2> coords;
  std::vector<double> depths;
};

inline BlockPoints block_points(const SparseDepthMap& m, int bx, int by, int blockSize) {
  BlockPoints b;
  const int u_end = std::min(m.width(), (bx + 1) * blockSize);
  const int v_end = std::min(m.height(), (by + 1) * blockSize);
  for (int v = by * blockSize; v < v_end; ++v)
    for (int u = bx * blockSize; u < u_end; ++u)
      if (const double d = m.at(u, v); d != 0.0) {
        b.coords.push_back({static_cast<double>(u), static_cast<double>(v)});
        b.depths.push_back(d);
      }
  return b;
}

/**
 * @brief Mean depth and maximum local discontinuity per block.
 *
 * A point's gradient is its largest absolute depth difference to the
 * min(8, n - 1) nearest measured points of the same block. The block gradient
 * is the maximum over its points, clipped to 59 m.
 */
inline BlockStats block_stats(const SparseDepthMap& m, int blockSize = kDefaultBlockSize) {
  if (blockSize < 2) throw OutOfRange("block size must be >= 2");
  BlockStats s;
  s.blockSize = blockSize;
  s.cols = block_count(m.width(), blockSize);
  s.rows = block_count(m.height(), blockSize);
  const std::size_t n_blocks = static_cast<std::size_t>(s.cols) * s.rows;
  s.dAvg.assign(n_blocks, 0.0);
  s.gMax.assign(n_blocks, 0.0);
  s.valid.assign(n_blocks, 0);
  for (int by = 0; by < s.rows; ++by)
    for (int bx = 0; bx < s.cols; ++bx) {
      const BlockPoints b = block_points(m, bx, by, blockSize);
      if (b.depths.empty()) continue;
      const std::size_t k = s.index(bx, by);
      s.valid[k] = 1;
      double sum = 0.0;
      for (double d : b.depths) sum += d;
      s.dAvg[k] = sum / static_cast<double>(b.depths.size());
      if (b.depths.size() == 1) continue;
      const KdTree2 tree(b.coords);
      double g = 0.0;
      for (std::size_t i = 0; i < b.depths.size(); ++i)
        for (std::size_t j : tree.knn_of(i, kGradientNeighbors))
          g = std::max(g, std::abs(b.depths[i] - b.depths[j]));
      s.gMax[k] = std::min(g, kMaxGradient);
    }
  return s;
}

/// Block statistics broadcast to every pixel of the block.
struct DenseGeometry {
  int width = 0;
  int height = 0;
  int blockSize = kDefaultBlockSize;
  SparseDepthMap dDense;
  SparseDepthMap gDense;
  BlockStats blocks;

  bool pixel_valid(int u, int v) const {
    return blocks.valid[blocks.index(u / blockSize, v / blockSize)] != 0;
  }
};

inline DenseGeometry densify(const SparseDepthMap& m, int blockSize = kDefaultBlockSize) {
  DenseGeometry g{m.width(), m.height(), blockSize, SparseDepthMap(m.width(), m.height()),
                  SparseDepthMap(m.width(), m.height()), block_stats(m, blockSize)};
  for (int v = 0; v < m.height(); ++v)
    for (int u = 0; u < m.width(); ++u) {
      const std::size_t k = g.blocks.index(u / blockSize, v / blockSize);
      g.dDense.at(u, v) = g.blocks.dAvg[k];
      g.gDense.at(u, v) = g.blocks.gMax[k];
    }
  return g;
}

/// Channel 0 dense depth, channel 1 dense gradient.
inline FeatureMap assemble_fa(const DenseGeometry& g) {
  FeatureMap f(g.width, g.height, 2);
  for (std::size_t i = 0; i < f.pixels(); ++i) {
    f.values[2 * i] = g.dDense[i];
    f.values[2 * i + 1] = g.gDense[i];
  }
  return f;
}

}  // namespace prefusion

#endif  // PREFUSION_DAGF_HPP
