#ifndef PREFUSION_GEOM_HPP
#define PREFUSION_GEOM_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "prefusion/errors.hpp"
#include "prefusion/rng.hpp"

namespace prefusion {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Supervised depth range [m].
inline constexpr double kMinDepth = 1.0;
inline constexpr double kMaxDepth = 60.0;

/// Surface identity of "no surface" in per-pixel attribution maps.
inline constexpr int kNoSource = -1;
/// Class id carried by background surfaces.
inline constexpr int kBackgroundClass = -1;

/// Pinhole intrinsics. Pixel convention: u = column, v = row, origin top-left.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 &&
           cx < width && cy >= 0.0 && cy < height;
  }
};

/**
 * @brief Rigid transform p' = R p + t.
 *
 * Used for the LiDAR-to-camera extrinsics and for the scan-start-world to
 * camera pose. Rotation must stay orthonormal with det = +1.
 */
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad,
                                        const Vec3& t = Vec3::Zero()) {
    RigidTransform out;
    out.rotation = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
    out.translation = t;
    return out;
  }

  static RigidTransform translation_only(const Vec3& t) {
    RigidTransform out;
    out.translation = t;
    return out;
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  /// Rotation angle in radians, recovered from the trace.
  double rotation_angle() const {
    const double c = std::clamp((rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
  }

  bool valid(double tol = 1e-9) const {
    const Mat3 gram = rotation.transpose() * rotation;
    return (gram - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol &&
           translation.allFinite();
  }
};

/// compose(a, b).apply(p) == a.apply(b.apply(p)).
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};
struct BehindCamera {};
struct OutOfFrame {
  double u = 0.0;
  double v = 0.0;
};
using Projection = std::variant<PixelProjection, BehindCamera, OutOfFrame>;

inline long round_pixel(double x) { return std::lround(x); }

/// Projects a world point through camera pose T and intrinsics K.
inline Projection project_point(const Intrinsics& K, const RigidTransform& T,
                                const Vec3& p) {
  const Vec3 q = T.apply(p);
  if (q.z() <= 0.0) return BehindCamera{};
  const double u = K.fx * q.x() / q.z() + K.cx;
  const double v = K.fy * q.y() / q.z() + K.cy;
  const long iu = round_pixel(u);
  const long iv = round_pixel(v);
  if (iu < 0 || iu >= K.width || iv < 0 || iv >= K.height) return OutOfFrame{u, v};
  return PixelProjection{u, v, q.z()};
}

/// Inverse of project_point for a known depth: pixel + depth -> world point.
inline Vec3 unproject(const Intrinsics& K, const RigidTransform& T, double u,
                      double v, double depth) {
  const Vec3 q((u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth);
  return T.inverse().apply(q);
}

/// World-space direction of the camera ray through pixel (u, v).
inline Vec3 pixel_ray(const Intrinsics& K, const RigidTransform& T, double u, double v) {
  const Vec3 q((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
  return T.rotation.transpose() * q;
}

/**
 * @brief Image-sized depth grid; 0 means no measurement.
 *
 * Holds the raw projected depth, the calibrated depth and the masked depth.
 * The optional per-pixel source id records which scene surface produced the
 * winning return; only the simulator fills it.
 */
class SparseDepthMap {
 public:
  SparseDepthMap() = default;
  SparseDepthMap(int width, int height, bool with_source = false)
      : width_(width),
        height_(height),
        depth_(static_cast<std::size_t>(width) * height, 0.0) {
    if (with_source) source_.emplace(depth_.size(), kNoSource);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return depth_.size(); }
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * width_ + u;
  }

  double at(int u, int v) const { return depth_[index(u, v)]; }
  double& at(int u, int v) { return depth_[index(u, v)]; }
  double operator[](std::size_t i) const { return depth_[i]; }
  double& operator[](std::size_t i) { return depth_[i]; }

  const std::vector<double>& depth() const { return depth_; }
  std::vector<double>& depth() { return depth_; }

  bool has_source() const { return source_.has_value(); }
  const std::vector<int>& source() const { return *source_; }
  std::vector<int>& source() { return *source_; }
  void drop_source() { source_.reset(); }

  std::size_t nonzero_count() const {
    std::size_t n = 0;
    for (double d : depth_) n += d != 0.0;
    return n;
  }

  bool same_shape(const SparseDepthMap& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const SparseDepthMap&, const SparseDepthMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
  std::optional<std::vector<int>> source_;
};

/// One LiDAR return, expressed in the scan-start ego frame.
struct LidarPoint {
  Vec3 position = Vec3::Zero();
  double timestamp = 0.0;
  int sourceId = kNoSource;
  int classId = kBackgroundClass;
};

struct PointCloud {
  std::vector<LidarPoint> points;
  double sweepDuration = 0.0;
};

/**
 * @brief Z-buffered rasterization of a point cloud into a sparse depth map.
 *
 * Points land on (round(u), round(v)); the smallest depth wins, ties go to the
 * lowest point index. Returns outside the frustum, or with depth outside
 * [kMinDepth, kMaxDepth], are skipped.
 */
inline SparseDepthMap render_sparse_depth(const PointCloud& cloud, const Intrinsics& K,
                                          const RigidTransform& T) {
  SparseDepthMap out(K.width, K.height, /*with_source=*/true);
  for (const LidarPoint& pt : cloud.points) {
    const Projection proj = project_point(K, T, pt.position);
    const auto* px = std::get_if<PixelProjection>(&proj);
    if (px == nullptr) continue;
    if (px->depth < kMinDepth || px->depth > kMaxDepth) continue;
    const std::size_t i = out.index(static_cast<int>(round_pixel(px->u)),
                                    static_cast<int>(round_pixel(px->v)));
    double& d = out[i];
    // strict < keeps the earliest point on ties
    if (d == 0.0 || px->depth < d) {
      d = px->depth;
      out.source()[i] = pt.sourceId;
    }
  }
  return out;
}

/**
 * Applies a random rigid perturbation in the camera frame: rotation angle
 * uniform in [0, rotNoiseDeg] about a uniform random axis, translation
 * uniform in a ball of radius transNoiseM. Zero noise returns T unchanged.
 */
inline RigidTransform perturb_extrinsics(const RigidTransform& T, double rot_noise_deg,
                                         double trans_noise_m, std::uint64_t seed) {
  if (rot_noise_deg < 0.0 || trans_noise_m < 0.0)
    throw OutOfRange("extrinsic noise must be non-negative");
  if (rot_noise_deg == 0.0 && trans_noise_m == 0.0) return T;

  Rng rng(seed, Stream::kExtrinsics);
  auto unit_vector = [&rng]() {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
  };

  const Vec3 axis = unit_vector();
  const double angle = rng.uniform(0.0, rot_noise_deg) * std::numbers::pi / 180.0;
  const Vec3 dir = unit_vector();
  const double radius = trans_noise_m * std::cbrt(rng.uniform());

  RigidTransform delta = RigidTransform::from_axis_angle(axis, angle, radius * dir);
  RigidTransform out = compose(delta, T);
  // re-orthonormalize so accumulated rounding never breaks the invariant
  Eigen::JacobiSVD<Mat3> svd(out.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  return out;
}

/// Default ego (x fwd, y left, z up) to camera (x right, y down, z fwd) axes.
inline Mat3 ego_to_camera_axes() {
  Mat3 r;
  r << 0, -1, 0,
       0, 0, -1,
       1, 0, 0;
  return r;
}

}  // namespace prefusion

#endif  // PREFUSION_GEOM_HPP
