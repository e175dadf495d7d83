#ifndef PREFUSION_FEATURE_MAP_HPP
#define PREFUSION_FEATURE_MAP_HPP

#include <cstddef>
#include <algorithm>
#include <vector>

#include "prefusion/errors.hpp"
#include "prefusion/nn.hpp"

namespace prefusion {

/// H x W x C real feature map, stored pixel-major (all channels of a pixel adjacent).
struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int w, int h, int c)
      : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, 0.0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::size_t offset(int u, int v) const {
    return (static_cast<std::size_t>(v) * width + u) * channels;
  }
  double at(int u, int v, int c) const { return values[offset(u, v) + c]; }
  double& at(int u, int v, int c) { return values[offset(u, v) + c]; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

/// One row per pixel, one column per channel.
inline nn::Matrix feature_rows(const FeatureMap& f) {
  nn::Matrix m(static_cast<Eigen::Index>(f.pixels()), f.channels);
  std::copy(f.values.begin(), f.values.end(), m.data());
  return m;
}

inline FeatureMap feature_map_from_rows(const nn::Matrix& rows, int width, int height) {
  if (rows.rows() != static_cast<Eigen::Index>(width) * height)
    throw ShapeMismatch("row count does not match the map size");
  FeatureMap f(width, height, static_cast<int>(rows.cols()));
  std::copy(rows.data(), rows.data() + rows.size(), f.values.begin());
  return f;
}

}  // namespace prefusion

#endif  // PREFUSION_FEATURE_MAP_HPP
