#ifndef PREFUSION_SIMULATE_HPP
#define PREFUSION_SIMULATE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "prefusion/classes.hpp"
#include "prefusion/errors.hpp"
#include "prefusion/geom.hpp"
#include "prefusion/json_util.hpp"
#include "prefusion/rng.hpp"

namespace prefusion {

/// Bound of all scene geometry [m] along every axis.
inline constexpr double kSceneBound = 60.0;

/// Axis-aligned foreground object. extent holds full side lengths.
struct Cuboid {
  int classId = 0;
  Vec3 center = Vec3::Zero();
  Vec3 extent = Vec3::Ones();

  Vec3 min() const { return center - 0.5 * extent; }
  Vec3 max() const { return center + 0.5 * extent; }

  std::array<Vec3, 8> corners() const {
    std::array<Vec3, 8> out;
    const Vec3 lo = min(), hi = max();
    for (int i = 0; i < 8; ++i)
      out[i] = Vec3((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(),
                    (i & 4) ? hi.z() : lo.z());
    return out;
  }

  friend bool operator==(const Cuboid&, const Cuboid&) = default;
};

/// Background plane normal . x = offset, limited to |x_i| <= bound_i.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  Vec3 bound = Vec3::Constant(kSceneBound);

  friend bool operator==(const Plane&, const Plane&) = default;
};

/**
 * @brief Ground-truth world geometry.
 *
 * Surface ids: cuboid i has id i, plane j has id foreground.size() + j.
 */
struct Scene {
  std::vector<Cuboid> foreground;
  std::vector<Plane> background;

  int surface_count() const { return static_cast<int>(foreground.size() + background.size()); }
  bool is_foreground(int surface) const {
    return surface >= 0 && surface < static_cast<int>(foreground.size());
  }
  int class_of(int surface) const {
    return is_foreground(surface) ? foreground[surface].classId : kBackgroundClass;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct LidarSpec {
  int raysAzimuth = 2048;
  int raysElevation = 32;
  double elevationMinDeg = -25.0;
  double elevationMaxDeg = 5.0;
};

/// Scene description as read from JSON.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Cuboid> cuboids;
  int randomCuboids = 0;
  std::vector<Plane> planes;
  Vec3 egoVelocity = Vec3::Zero();
  double sweepDuration = 0.1;
  LidarSpec lidar;
};

inline bool aabb_overlap(const Cuboid& a, const Cuboid& b, double margin = 0.0) {
  const Vec3 alo = a.min(), ahi = a.max(), blo = b.min(), bhi = b.max();
  for (int i = 0; i < 3; ++i)
    if (ahi[i] + margin <= blo[i] || bhi[i] + margin <= alo[i]) return false;
  return true;
}

namespace detail {

inline void validate_cuboid(const Cuboid& c, const std::string& where) {
  if (c.classId < 0 || c.classId >= kNumClasses) throw SpecError(where + ": bad class");
  if (!(c.extent.array() > 0.0).all() || !c.extent.allFinite())
    throw SpecError(where + ": extent must be positive");
  if (!c.center.allFinite()) throw SpecError(where + ": center must be finite");
  if ((c.min().array() < -kSceneBound).any() || (c.max().array() > kSceneBound).any())
    throw SpecError(where + ": geometry leaves [-60, 60] m");
  if ((c.min().array() <= 0.0).all() && (c.max().array() >= 0.0).all())
    throw SpecError(where + ": cuboid contains the sensor origin");
}

inline Plane parse_plane(const nlohmann::json& j, const std::string& where) {
  using namespace json_util;
  reject_unknown_keys<SpecError>(j, {"normal", "offset", "extent"}, where);
  Plane p;
  const Vec3 n = get_vec3<SpecError>(j, "normal", Vec3::Zero(), where);
  if (!j.contains("normal") || n.norm() < 1e-12) throw SpecError(where + ".normal must be nonzero");
  const double scale = n.norm();
  p.normal = n / scale;
  p.offset = require_number<SpecError>(j, "offset", where) / scale;
  p.bound = get_vec3<SpecError>(j, "extent", Vec3::Constant(kSceneBound), where);
  if (!(p.bound.array() > 0.0).all() || (p.bound.array() > kSceneBound).any())
    throw SpecError(where + ".extent must lie in (0, 60]");
  return p;
}

}  // namespace detail

/// Parses a SceneSpec document. Unknown keys are rejected.
inline SceneSpec parse_scene_spec(const nlohmann::json& j) {
  using namespace json_util;
  const std::string where = "sceneSpec";
  reject_unknown_keys<SpecError>(
      j, {"seed", "cuboids", "randomCuboids", "planes", "egoVelocity", "sweepDuration", "lidar"},
      where);
  SceneSpec spec;
  const long long seed = get_integer<SpecError>(j, "seed", 0, where);
  if (seed < 0) throw SpecError("seed must be >= 0");
  spec.seed = static_cast<std::uint64_t>(seed);

  if (j.contains("cuboids")) {
    const auto& arr = j.at("cuboids");
    if (!arr.is_array()) throw SpecError("cuboids must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string w = "cuboids[" + std::to_string(i) + "]";
      reject_unknown_keys<SpecError>(arr[i], {"class", "center", "extent"}, w);
      const std::string name = get_string<SpecError>(arr[i], "class", "", w);
      const auto cls = class_from_name(name);
      if (!cls) throw SpecError(w + ": unknown class '" + name + "'");
      if (!arr[i].contains("center") || !arr[i].contains("extent"))
        throw SpecError(w + ": center and extent are required");
      Cuboid c;
      c.classId = *cls;
      c.center = get_vec3<SpecError>(arr[i], "center", Vec3::Zero(), w);
      c.extent = get_vec3<SpecError>(arr[i], "extent", Vec3::Ones(), w);
      spec.cuboids.push_back(c);
    }
  }
  const long long nrand = get_integer<SpecError>(j, "randomCuboids", 0, where);
  if (nrand < 0 || nrand > 64) throw SpecError("randomCuboids must lie in [0, 64]");
  spec.randomCuboids = static_cast<int>(nrand);

  if (j.contains("planes")) {
    const auto& arr = j.at("planes");
    if (!arr.is_array()) throw SpecError("planes must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      spec.planes.push_back(detail::parse_plane(arr[i], "planes[" + std::to_string(i) + "]"));
  }
  spec.egoVelocity = get_vec3<SpecError>(j, "egoVelocity", Vec3::Zero(), where);
  if (!spec.egoVelocity.allFinite()) throw SpecError("egoVelocity must be finite");
  spec.sweepDuration = get_number<SpecError>(j, "sweepDuration", 0.1, where);
  if (!(spec.sweepDuration > 0.0)) throw SpecError("sweepDuration must be > 0");

  if (j.contains("lidar")) {
    const auto& l = j.at("lidar");
    reject_unknown_keys<SpecError>(
        l, {"raysAzimuth", "raysElevation", "elevationMinDeg", "elevationMaxDeg"}, "lidar");
    const long long az = get_integer<SpecError>(l, "raysAzimuth", spec.lidar.raysAzimuth, "lidar");
    const long long el = get_integer<SpecError>(l, "raysElevation", spec.lidar.raysElevation, "lidar");
    if (az <= 0 || el <= 0 || az > 100000 || el > 1000)
      throw SpecError("lidar ray counts must be positive");
    spec.lidar.raysAzimuth = static_cast<int>(az);
    spec.lidar.raysElevation = static_cast<int>(el);
    spec.lidar.elevationMinDeg = get_number<SpecError>(l, "elevationMinDeg", -25.0, "lidar");
    spec.lidar.elevationMaxDeg = get_number<SpecError>(l, "elevationMaxDeg", 5.0, "lidar");
    if (!(spec.lidar.elevationMinDeg <= spec.lidar.elevationMaxDeg) ||
        spec.lidar.elevationMinDeg < -90.0 || spec.lidar.elevationMaxDeg > 90.0)
      throw SpecError("lidar elevation range is invalid");
  }
  return spec;
}

inline nlohmann::json scene_spec_to_json(const SceneSpec& spec) {
  using json_util::vec3_to_json;
  nlohmann::json j;
  j["seed"] = spec.seed;
  j["cuboids"] = nlohmann::json::array();
  for (const Cuboid& c : spec.cuboids)
    j["cuboids"].push_back({{"class", class_name(c.classId)},
                            {"center", vec3_to_json(c.center)},
                            {"extent", vec3_to_json(c.extent)}});
  j["randomCuboids"] = spec.randomCuboids;
  j["planes"] = nlohmann::json::array();
  for (const Plane& p : spec.planes)
    j["planes"].push_back({{"normal", vec3_to_json(p.normal)},
                           {"offset", p.offset},
                           {"extent", vec3_to_json(p.bound)}});
  j["egoVelocity"] = vec3_to_json(spec.egoVelocity);
  j["sweepDuration"] = spec.sweepDuration;
  j["lidar"] = {{"raysAzimuth", spec.lidar.raysAzimuth},
                {"raysElevation", spec.lidar.raysElevation},
                {"elevationMinDeg", spec.lidar.elevationMinDeg},
                {"elevationMaxDeg", spec.lidar.elevationMaxDeg}};
  return j;
}

inline nlohmann::json scene_to_json(const Scene& scene) {
  using json_util::vec3_to_json;
  nlohmann::json j;
  j["foreground"] = nlohmann::json::array();
  for (std::size_t i = 0; i < scene.foreground.size(); ++i) {
    const Cuboid& c = scene.foreground[i];
    j["foreground"].push_back({{"sourceId", i},
                               {"class", class_name(c.classId)},
                               {"center", vec3_to_json(c.center)},
                               {"extent", vec3_to_json(c.extent)}});
  }
  j["background"] = nlohmann::json::array();
  for (std::size_t k = 0; k < scene.background.size(); ++k) {
    const Plane& p = scene.background[k];
    j["background"].push_back({{"sourceId", scene.foreground.size() + k},
                               {"normal", vec3_to_json(p.normal)},
                               {"offset", p.offset},
                               {"extent", vec3_to_json(p.bound)}});
  }
  return j;
}

/// Height of the first horizontal plane, or nullopt when there is none.
inline std::optional<double> ground_height(const std::vector<Plane>& planes) {
  for (const Plane& p : planes)
    if (std::abs(p.normal.z()) > 0.99) return p.offset / p.normal.z();
  return std::nullopt;
}

/**
 * @brief Builds the scene described by spec.
 *
 * Explicit cuboids are validated as given; randomCuboids more are placed in
 * the forward half-space, standing on the ground plane, rejecting any pose
 * that would touch an existing cuboid.
 */
inline Scene build_scene(const SceneSpec& spec) {
  Scene scene;
  scene.background = spec.planes;
  for (std::size_t i = 0; i < spec.cuboids.size(); ++i) {
    const std::string where = "cuboids[" + std::to_string(i) + "]";
    detail::validate_cuboid(spec.cuboids[i], where);
    for (const Cuboid& other : scene.foreground)
      if (aabb_overlap(spec.cuboids[i], other))
        throw SpecError(where + " intersects another cuboid");
    scene.foreground.push_back(spec.cuboids[i]);
  }

  Rng rng(spec.seed, Stream::kScene);
  const double ground = ground_height(spec.planes).value_or(-1.8);
  for (int n = 0; n < spec.randomCuboids; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      Cuboid c;
      c.classId = static_cast<int>(rng.below(kNumClasses));
      const ClassShape& s = kClassShapes[c.classId];
      const double scale = rng.uniform(0.9, 1.1);
      c.extent = Vec3(s.length, s.width, s.height) * scale;
      const double x = rng.uniform(8.0, 40.0);
      const double y = rng.uniform(-0.7, 0.7) * x;
      c.center = Vec3(x, y, ground + 0.5 * c.extent.z());
      if ((c.min().array() < -kSceneBound).any() || (c.max().array() > kSceneBound).any())
        continue;
      bool clear = true;
      for (const Cuboid& other : scene.foreground) clear = clear && !aabb_overlap(c, other, 0.5);
      if (!clear) continue;
      scene.foreground.push_back(c);
      placed = true;
    }
    if (!placed) throw SpecError("could not place random cuboid " + std::to_string(n));
  }
  return scene;
}

struct RayHit {
  double t = 0.0;
  int surface = kNoSource;
};

inline constexpr double kRayEpsilon = 1e-9;

inline std::optional<double> intersect(const Cuboid& c, const Vec3& o, const Vec3& d) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const Vec3 lo = c.min(), hi = c.max();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < lo[i] || o[i] > hi[i]) return std::nullopt;
      continue;
    }
    double a = (lo[i] - o[i]) / d[i];
    double b = (hi[i] - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  if (t0 > kRayEpsilon) return t0;
  if (t1 > kRayEpsilon) return t1;
  return std::nullopt;
}

inline std::optional<double> intersect(const Plane& p, const Vec3& o, const Vec3& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = (p.offset - p.normal.dot(o)) / denom;
  if (!(t > kRayEpsilon)) return std::nullopt;
  const Vec3 hit = o + t * d;
  if ((hit.cwiseAbs().array() > p.bound.array() + 1e-9).any()) return std::nullopt;
  return t;
}

/// First surface hit by the ray o + t d, t > 0. Ties go to the lower surface id.
inline std::optional<RayHit> cast_ray(const Scene& scene, const Vec3& o, const Vec3& d) {
  std::optional<RayHit> best;
  auto consider = [&](std::optional<double> t, int id) {
    if (t && (!best || *t < best->t)) best = RayHit{*t, id};
  };
  for (std::size_t i = 0; i < scene.foreground.size(); ++i)
    consider(intersect(scene.foreground[i], o, d), static_cast<int>(i));
  for (std::size_t k = 0; k < scene.background.size(); ++k)
    consider(intersect(scene.background[k], o, d),
             static_cast<int>(scene.foreground.size() + k));
  return best;
}

/**
 * @brief Spinning LiDAR sweep under constant ego velocity.
 *
 * Azimuth column i fires at t_i = i / raysAzimuth * sweepDuration with
 * azimuth 2 pi i / raysAzimuth (counter-clockwise, measured from the rear
 * -x axis so that the forward direction is swept at mid-sweep), from the ego
 * position egoVelocity * t_i. Hits are stored relative to the ego position
 * at firing time but labelled as scan-start frame coordinates, i.e. without
 * motion compensation; that offset is the rolling-shutter distortion.
 */
inline PointCloud lidar_sweep(const Scene& scene, const Vec3& ego_velocity,
                              double sweep_duration, int rays_azimuth, int rays_elevation,
                              std::uint64_t seed, double elevation_min_deg = -25.0,
                              double elevation_max_deg = 5.0) {
  (void)seed;  // the sweep model is noise free; kept so all generators share one signature
  if (!(sweep_duration > 0.0)) throw OutOfRange("sweepDuration must be > 0");
  if (rays_azimuth <= 0 || rays_elevation <= 0) throw OutOfRange("ray counts must be > 0");
  PointCloud cloud;
  cloud.sweepDuration = sweep_duration;
  const double deg = std::numbers::pi / 180.0;
  for (int i = 0; i < rays_azimuth; ++i) {
    const double t = sweep_duration * static_cast<double>(i) / rays_azimuth;
    const double az = 2.0 * std::numbers::pi * static_cast<double>(i) / rays_azimuth;
    const Vec3 origin = ego_velocity * t;
    for (int k = 0; k < rays_elevation; ++k) {
      const double el =
          rays_elevation == 1
              ? elevation_min_deg * deg
              : (elevation_min_deg +
                 (elevation_max_deg - elevation_min_deg) * k / (rays_elevation - 1)) * deg;
      // azimuth 0 points to the rear, so +x (forward) is swept at mid-sweep
      const Vec3 dir(-std::cos(el) * std::cos(az), -std::cos(el) * std::sin(az), std::sin(el));
      const auto hit = cast_ray(scene, origin, dir);
      if (!hit) continue;
      LidarPoint p;
      p.position = hit->t * dir;
      p.timestamp = t;
      p.sourceId = hit->surface;
      p.classId = scene.class_of(hit->surface);
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

inline PointCloud lidar_sweep(const Scene& scene, const SceneSpec& spec) {
  return lidar_sweep(scene, spec.egoVelocity, spec.sweepDuration, spec.lidar.raysAzimuth,
                     spec.lidar.raysElevation, spec.seed, spec.lidar.elevationMinDeg,
                     spec.lidar.elevationMaxDeg);
}

/// Camera exposure happens mid-sweep.
inline double camera_trigger_time(double sweep_duration) { return 0.5 * sweep_duration; }

/// Scan-start-world -> camera pose of a camera mounted with `extrinsics`
/// (ego -> camera) on an ego moving at constant velocity.
inline RigidTransform camera_pose(const RigidTransform& extrinsics, const Vec3& ego_velocity,
                                  double sweep_duration) {
  return compose(extrinsics, RigidTransform::translation_only(
                                 -ego_velocity * camera_trigger_time(sweep_duration)));
}

/// Per-pixel first-hit surface and camera-frame depth seen by a camera.
struct TruthView {
  int width = 0;
  int height = 0;
  std::vector<double> depth;  // 0 where the ray escapes the scene
  std::vector<int> surface;   // kNoSource where the ray escapes the scene
};

inline TruthView render_truth(const Scene& scene, const Intrinsics& K, const RigidTransform& T) {
  TruthView view;
  view.width = K.width;
  view.height = K.height;
  const std::size_t n = static_cast<std::size_t>(K.width) * K.height;
  view.depth.assign(n, 0.0);
  view.surface.assign(n, kNoSource);
  const Vec3 center = T.inverse().translation;
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      // camera-frame z of the direction is 1, so the hit parameter is the depth
      const Vec3 dir = pixel_ray(K, T, u, v);
      const auto hit = cast_ray(scene, center, dir);
      if (!hit) continue;
      const std::size_t i = static_cast<std::size_t>(v) * K.width + u;
      view.depth[i] = hit->t;
      view.surface[i] = hit->surface;
    }
  }
  return view;
}

/// 2D prior box in pixel coordinates.
struct BBox2D {
  double u_min = 0.0;
  double v_min = 0.0;
  double u_max = 0.0;
  double v_max = 0.0;
  int classId = 0;
  bool isSpurious = false;

  bool contains(double u, double v) const {
    return u >= u_min && u <= u_max && v >= v_min && v <= v_max;
  }
  double area() const { return std::max(0.0, u_max - u_min) * std::max(0.0, v_max - v_min); }

  /// Distance from (u, v) to the rectangle boundary.
  double edge_distance(double u, double v) const {
    if (contains(u, v))
      return std::min({u - u_min, u_max - u, v - v_min, v_max - v});
    const double du = std::max({u_min - u, 0.0, u - u_max});
    const double dv = std::max({v_min - v, 0.0, v - v_max});
    return std::hypot(du, dv);
  }

  friend bool operator==(const BBox2D&, const BBox2D&) = default;
};

inline double iou(const BBox2D& a, const BBox2D& b) {
  const double iw = std::min(a.u_max, b.u_max) - std::max(a.u_min, b.u_min);
  const double ih = std::min(a.v_max, b.v_max) - std::max(a.v_min, b.v_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// One box per cuboid with a corner in front of the camera: the pixel AABB of
/// the projected corners, clipped to the image.
inline std::vector<BBox2D> ground_truth_boxes(const Scene& scene, const Intrinsics& K,
                                              const RigidTransform& T_true) {
  std::vector<BBox2D> boxes;
  const double umax_img = K.width - 1.0, vmax_img = K.height - 1.0;
  for (const Cuboid& c : scene.foreground) {
    double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
    double u1 = -u0, v1 = -u0;
    bool any = false;
    for (const Vec3& corner : c.corners()) {
      const Vec3 q = T_true.apply(corner);
      if (q.z() <= 0.0) continue;
      const double u = K.fx * q.x() / q.z() + K.cx;
      const double v = K.fy * q.y() / q.z() + K.cy;
      u0 = std::min(u0, u);
      v0 = std::min(v0, v);
      u1 = std::max(u1, u);
      v1 = std::max(v1, v);
      any = true;
    }
    if (!any) continue;
    BBox2D b{std::max(u0, 0.0), std::max(v0, 0.0), std::min(u1, umax_img),
             std::min(v1, vmax_img), c.classId, false};
    if (b.u_min < b.u_max && b.v_min < b.v_max) boxes.push_back(b);
  }
  return boxes;
}

/**
 * @brief Simulates an imperfect 2D detector.
 *
 * Each true box is dropped with probability fn_rate; survivors get every edge
 * jittered uniformly by +-jitter_px. For every input box a spurious box is
 * added with probability fp_rate: random class, sides in [20, 80] px, placed
 * with IoU < 0.1 against all true boxes.
 */
inline std::vector<BBox2D> degrade_priors(const std::vector<BBox2D>& boxes, double fn_rate,
                                          double fp_rate, double jitter_px, std::uint64_t seed,
                                          int image_width, int image_height) {
  if (fn_rate < 0.0 || fn_rate > 1.0 || fp_rate < 0.0 || fp_rate > 1.0)
    throw OutOfRange("degradation rates must lie in [0, 1]");
  if (jitter_px < 0.0) throw OutOfRange("jitter must be >= 0");
  Rng rng(seed, Stream::kPriors);
  const double umax_img = image_width - 1.0, vmax_img = image_height - 1.0;
  std::vector<BBox2D> out;
  for (const BBox2D& b : boxes) {
    const bool drop = rng.bernoulli(fn_rate);
    double j[4];
    for (double& x : j) x = rng.uniform(-jitter_px, jitter_px);
    if (drop) continue;
    if (jitter_px == 0.0) {
      out.push_back(b);
      continue;
    }
    BBox2D jb = b;
    jb.u_min = std::clamp(b.u_min + j[0], 0.0, umax_img);
    jb.v_min = std::clamp(b.v_min + j[1], 0.0, vmax_img);
    jb.u_max = std::clamp(b.u_max + j[2], 0.0, umax_img);
    jb.v_max = std::clamp(b.v_max + j[3], 0.0, vmax_img);
    if (jb.u_max - jb.u_min < 1.0) jb.u_max = std::min(jb.u_min + 1.0, umax_img), jb.u_min = jb.u_max - 1.0;
    if (jb.v_max - jb.v_min < 1.0) jb.v_max = std::min(jb.v_min + 1.0, vmax_img), jb.v_min = jb.v_max - 1.0;
    out.push_back(jb);
  }
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    if (!rng.bernoulli(fp_rate)) continue;
    for (int attempt = 0; attempt < 100; ++attempt) {
      BBox2D s;
      s.classId = static_cast<int>(rng.below(kNumClasses));
      s.isSpurious = true;
      const double w = std::min(rng.uniform(20.0, 80.0), umax_img);
      const double h = std::min(rng.uniform(20.0, 80.0), vmax_img);
      s.u_min = rng.uniform(0.0, umax_img - w);
      s.v_min = rng.uniform(0.0, vmax_img - h);
      s.u_max = s.u_min + w;
      s.v_max = s.v_min + h;
      bool ok = true;
      for (const BBox2D& t : boxes) ok = ok && iou(s, t) < 0.1;
      if (!ok) continue;
      out.push_back(s);
      break;
    }
  }
  return out;
}

struct MisalignmentStats {
  std::size_t misplacedCount = 0;
  std::size_t totalCount = 0;
  std::size_t misplacedInRing = 0;
  double ringFraction = 0.0;  // misplacedInRing / misplacedCount, 0 when nothing is misplaced
  double meanAbsErrorMisplaced = 0.0;
  double meanAbsErrorCorrect = 0.0;
};

/**
 * @brief Counts depth pixels attributed to the wrong side of an object boundary.
 *
 * A nonzero pixel is MISPLACED when its return came from a foreground surface
 * while the true camera sees background there, or vice versa. "Sees" is
 * evaluated on the 3x3 pixel-center neighbourhood so that a return which
 * rounded across a silhouette edge by less than a pixel is not counted.
 * Depth errors compare against the true depth at the pixel center.
 */
inline MisalignmentStats boundary_error_stats(const SparseDepthMap& d_raw, const Scene& scene,
                                              const Intrinsics& K, const RigidTransform& T_true,
                                              const std::vector<BBox2D>& gt_boxes,
                                              double ring_px) {
  if (!d_raw.has_source()) throw MissingSourceId("depth map carries no source attribution");
  if (d_raw.width() != K.width || d_raw.height() != K.height)
    throw DimensionMismatch("depth map does not match intrinsics");
  const TruthView truth = render_truth(scene, K, T_true);
  MisalignmentStats s;
  double err_mis = 0.0, err_ok = 0.0;
  std::size_t n_err_mis = 0, n_err_ok = 0;
  for (int v = 0; v < d_raw.height(); ++v) {
    for (int u = 0; u < d_raw.width(); ++u) {
      const std::size_t i = d_raw.index(u, v);
      const double d = d_raw[i];
      if (d == 0.0) continue;
      ++s.totalCount;
      const bool src_fg = scene.is_foreground(d_raw.source()[i]);
      bool category_seen = false;
      for (int dv = -1; dv <= 1 && !category_seen; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const int uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= K.width || vv >= K.height) continue;
          if (scene.is_foreground(truth.surface[d_raw.index(uu, vv)]) == src_fg) {
            category_seen = true;
            break;
          }
        }
      }
      const bool misplaced = !category_seen;
      const double td = truth.depth[i];
      if (misplaced) {
        ++s.misplacedCount;
        double ring = std::numeric_limits<double>::infinity();
        for (const BBox2D& b : gt_boxes) ring = std::min(ring, b.edge_distance(u, v));
        if (ring <= ring_px) ++s.misplacedInRing;
        if (td > 0.0) err_mis += std::abs(d - td), ++n_err_mis;
      } else if (td > 0.0) {
        err_ok += std::abs(d - td), ++n_err_ok;
      }
    }
  }
  if (s.misplacedCount > 0)
    s.ringFraction = static_cast<double>(s.misplacedInRing) / s.misplacedCount;
  if (n_err_mis > 0) s.meanAbsErrorMisplaced = err_mis / n_err_mis;
  if (n_err_ok > 0) s.meanAbsErrorCorrect = err_ok / n_err_ok;
  return s;
}

}  // namespace prefusion

#endif  // PREFUSION_SIMULATE_HPP
