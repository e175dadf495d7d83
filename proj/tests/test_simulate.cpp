#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "json.hpp"
#include "prefusion/simulate.hpp"

using namespace prefusion;
using nlohmann::json;

namespace {

// Closed box of six walls around the origin: every ray hits something.
std::vector<Plane> room(double half) {
  std::vector<Plane> walls;
  for (int axis = 0; axis < 3; ++axis)
    for (double sign : {-1.0, 1.0}) {
      Plane p;
      p.normal = Vec3::Zero();
      p.normal[axis] = sign;
      p.offset = half;
      walls.push_back(p);
    }
  return walls;
}

Scene wall_scene(double x) {
  Scene s;
  Plane p;
  p.normal = Vec3::UnitX();
  p.offset = x;
  s.background.push_back(p);
  return s;
}

}  // namespace

TEST(SceneSpec, ParsesAndRoundTrips) {
  const json j = {{"seed", 5},
                  {"cuboids", {{{"class", "car"}, {"center", {20, 0, -1}}, {"extent", {4, 2, 1.5}}}}},
                  {"planes", {{{"normal", {0, 0, 2}}, {"offset", -3.6}}}},
                  {"egoVelocity", {10, 0, 0}}};
  const SceneSpec spec = parse_scene_spec(j);
  ASSERT_EQ(spec.cuboids.size(), 1u);
  EXPECT_EQ(class_name(spec.cuboids[0].classId), "car");
  EXPECT_NEAR(spec.planes[0].normal.z(), 1.0, 1e-15);
  EXPECT_NEAR(spec.planes[0].offset, -1.8, 1e-15);
  const SceneSpec again = parse_scene_spec(scene_spec_to_json(spec));
  EXPECT_EQ(again.cuboids, spec.cuboids);
  EXPECT_EQ(again.planes, spec.planes);
  EXPECT_EQ(again.egoVelocity, spec.egoVelocity);
}

TEST(SceneSpec, RejectsBadInput) {
  EXPECT_THROW(parse_scene_spec(json{{"bogus", 1}}), SpecError);
  EXPECT_THROW(parse_scene_spec(json{{"cuboids", {{{"class", "ufo"}, {"center", {9, 0, 0}},
                                                   {"extent", {1, 1, 1}}}}}}),
               SpecError);
  EXPECT_THROW(parse_scene_spec(json{{"sweepDuration", 0}}), SpecError);
  EXPECT_THROW(parse_scene_spec(json{{"planes", {{{"normal", {0, 0, 0}}, {"offset", 1}}}}}),
               SpecError);
}

TEST(BuildScene, RejectsIntersectingAndOutOfBoundsCuboids) {
  SceneSpec spec;
  spec.cuboids = {{0, Vec3(10, 0, 0), Vec3(4, 2, 2)}, {1, Vec3(11, 0, 0), Vec3(4, 2, 2)}};
  EXPECT_THROW(build_scene(spec), SpecError);
  spec.cuboids = {{0, Vec3(59, 0, 0), Vec3(4, 2, 2)}};
  EXPECT_THROW(build_scene(spec), SpecError);
  spec.cuboids = {{0, Vec3(0, 0, 0), Vec3(4, 2, 2)}};
  EXPECT_THROW(build_scene(spec), SpecError);
}

TEST(BuildScene, RandomCuboidsAreDeterministicAndDisjoint) {
  SceneSpec spec;
  spec.seed = 17;
  spec.randomCuboids = 8;
  const Scene a = build_scene(spec), b = build_scene(spec);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.foreground.size(), 8u);
  for (std::size_t i = 0; i < a.foreground.size(); ++i)
    for (std::size_t k = i + 1; k < a.foreground.size(); ++k)
      EXPECT_FALSE(aabb_overlap(a.foreground[i], a.foreground[k]));
  spec.seed = 18;
  EXPECT_NE(build_scene(spec), a);
}

TEST(CastRay, NearestSurfaceWins) {
  Scene s = wall_scene(30.0);
  s.foreground.push_back({0, Vec3(10, 0, 0), Vec3(2, 2, 2)});
  const auto hit = cast_ray(s, Vec3::Zero(), Vec3::UnitX());
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->t, 9.0, 1e-12);
  EXPECT_EQ(hit->surface, 0);
  const auto miss = cast_ray(s, Vec3::Zero(), -Vec3::UnitX());
  EXPECT_FALSE(miss);
}

TEST(LidarSweep, StaticPointsLieOnSurfaces) {
  Scene s;
  s.background = room(20.0);
  s.foreground.push_back({3, Vec3(8, 2, -1), Vec3(2, 2, 2)});
  const PointCloud c = lidar_sweep(s, Vec3::Zero(), 0.1, 256, 16, 0);
  ASSERT_EQ(c.points.size(), 256u * 16u);
  for (const LidarPoint& p : c.points) {
    if (s.is_foreground(p.sourceId)) {
      const Cuboid& q = s.foreground[p.sourceId];
      const Vec3 lo = q.min(), hi = q.max();
      const double inside = ((p.position - lo).array().min((hi - p.position).array())).minCoeff();
      EXPECT_NEAR(inside, 0.0, 1e-9);
      EXPECT_EQ(p.classId, 3);
    } else {
      const Plane& w = s.background[p.sourceId - s.foreground.size()];
      EXPECT_NEAR(w.normal.dot(p.position), w.offset, 1e-9);
      EXPECT_EQ(p.classId, kBackgroundClass);
    }
  }
}

// A point hit at time t is stored relative to the ego position v t, so its
// stored x is displaced by exactly -|v| t from the wall.
TEST(LidarSweep, RollingShutterDisplacementIsVelocityTimesTime) {
  const Scene s = wall_scene(20.0);
  const PointCloud c = lidar_sweep(s, Vec3(10, 0, 0), 0.1, 512, 4, 0);
  ASSERT_FALSE(c.points.empty());
  double max_t = 0.0;
  for (const LidarPoint& p : c.points) {
    EXPECT_NEAR(p.position.x() + 10.0 * p.timestamp, 20.0, 1e-9);
    max_t = std::max(max_t, p.timestamp);
  }
  // the forward wall is swept around mid-sweep
  EXPECT_GT(max_t, 0.04);
  EXPECT_LT(max_t, 0.08);
}

TEST(LidarSweep, DoublingAzimuthDoublesCountInClosedRoom) {
  Scene s;
  s.background = room(30.0);
  const auto a = lidar_sweep(s, Vec3::Zero(), 0.1, 300, 8, 0).points.size();
  const auto b = lidar_sweep(s, Vec3::Zero(), 0.1, 600, 8, 0).points.size();
  EXPECT_EQ(a, 300u * 8u);
  EXPECT_EQ(b, 2 * a);
}

TEST(LidarSweep, RejectsBadArguments) {
  const Scene s = wall_scene(20.0);
  EXPECT_THROW(lidar_sweep(s, Vec3::Zero(), 0.0, 10, 10, 0), OutOfRange);
  EXPECT_THROW(lidar_sweep(s, Vec3::Zero(), 0.1, 0, 10, 0), OutOfRange);
}

TEST(CameraPose, MovesWithEgoAtTrigger) {
  const RigidTransform pose = camera_pose(RigidTransform::identity(), Vec3(10, 0, 0), 0.1);
  // the camera origin sits at v * T / 2 in scan-start coordinates
  EXPECT_NEAR((pose.inverse().translation - Vec3(0.5, 0, 0)).norm(), 0.0, 1e-12);
}

TEST(GroundTruthBoxes, MatchesProjectedNearFace) {
  Scene s;
  s.foreground.push_back({0, Vec3(0, 0, 20), Vec3(2, 2, 2)});
  const Intrinsics K{100, 100, 50, 50, 100, 100};
  const auto boxes = ground_truth_boxes(s, K, RigidTransform::identity());
  ASSERT_EQ(boxes.size(), 1u);
  // nearest face at z = 19, half side 1 m: half width f / 19
  const double half = 100.0 / 19.0;
  EXPECT_NEAR(boxes[0].u_min, 50.0 - half, 1e-9);
  EXPECT_NEAR(boxes[0].u_max, 50.0 + half, 1e-9);
  EXPECT_NEAR(boxes[0].v_min, 50.0 - half, 1e-9);
  EXPECT_EQ(boxes[0].classId, 0);
  EXPECT_FALSE(boxes[0].isSpurious);
}

TEST(GroundTruthBoxes, SkipsCuboidsBehindCameraAndClips) {
  Scene s;
  s.foreground.push_back({0, Vec3(0, 0, -20), Vec3(2, 2, 2)});
  s.foreground.push_back({1, Vec3(3, 0, 5), Vec3(2, 2, 2)});
  const Intrinsics K{100, 100, 50, 50, 100, 100};
  const auto boxes = ground_truth_boxes(s, K, RigidTransform::identity());
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].classId, 1);
  EXPECT_DOUBLE_EQ(boxes[0].u_max, 99.0);
}

TEST(DegradePriors, ZeroRatesAreIdentity) {
  const std::vector<BBox2D> boxes = {{10, 10, 50, 50, 0, false}, {100, 20, 150, 90, 3, false}};
  EXPECT_EQ(degrade_priors(boxes, 0, 0, 0, 4, 400, 200), boxes);
}

TEST(DegradePriors, FullDropoutKeepsOnlySpurious) {
  const std::vector<BBox2D> boxes(20, BBox2D{10, 10, 50, 50, 0, false});
  EXPECT_TRUE(degrade_priors(boxes, 1.0, 0.0, 0.0, 1, 400, 200).empty());
  const auto mixed = degrade_priors(boxes, 1.0, 1.0, 0.0, 1, 400, 200);
  EXPECT_EQ(mixed.size(), 20u);
  for (const BBox2D& b : mixed) EXPECT_TRUE(b.isSpurious);
}

TEST(DegradePriors, RatesAndSpuriousGeometry) {
  std::vector<BBox2D> boxes;
  for (int i = 0; i < 1000; ++i) boxes.push_back({10, 10, 40, 40, i % kNumClasses, false});
  const auto out = degrade_priors(boxes, 0.1, 0.1, 2.0, 9, 800, 448);
  std::size_t kept = 0, spurious = 0;
  for (const BBox2D& b : out) {
    if (!b.isSpurious) {
      ++kept;
      EXPECT_LE(std::abs(b.u_min - 10.0), 2.0 + 1e-12);
      EXPECT_LE(std::abs(b.v_max - 40.0), 2.0 + 1e-12);
      continue;
    }
    ++spurious;
    EXPECT_GE(b.u_max - b.u_min, 20.0 - 1e-9);
    EXPECT_LE(b.u_max - b.u_min, 80.0 + 1e-9);
    EXPECT_LT(iou(b, boxes[0]), 0.1);
  }
  // binomial(1000, 0.9) and binomial(1000, 0.1): 4 sigma is under 40
  EXPECT_NEAR(static_cast<double>(kept), 900.0, 40.0);
  EXPECT_NEAR(static_cast<double>(spurious), 100.0, 40.0);
  EXPECT_THROW(degrade_priors(boxes, 1.5, 0, 0, 0, 800, 448), OutOfRange);
  EXPECT_THROW(degrade_priors(boxes, 0, 0, -1, 0, 800, 448), OutOfRange);
}

TEST(BoundaryErrorStats, StaticCalibratedSceneHasNoMisplacedPixels) {
  SceneSpec spec;
  spec.seed = 3;
  spec.randomCuboids = 6;
  spec.planes = {Plane{Vec3::UnitZ(), -1.8, Vec3::Constant(60.0)}};
  const Scene s = build_scene(spec);
  const PointCloud c = lidar_sweep(s, spec);
  const Intrinsics K{200, 200, 200, 112, 400, 224};
  RigidTransform T;
  T.rotation = ego_to_camera_axes();
  const SparseDepthMap m = render_sparse_depth(c, K, T);
  const auto stats = boundary_error_stats(m, s, K, T, ground_truth_boxes(s, K, T), 4.0);
  EXPECT_GT(stats.totalCount, 1000u);
  EXPECT_EQ(stats.misplacedCount, 0u);
  EXPECT_DOUBLE_EQ(stats.ringFraction, 0.0);
}

TEST(BoundaryErrorStats, BackgroundOnlySceneAndMissingSource) {
  Scene s = wall_scene(20.0);
  const Intrinsics K{100, 100, 50, 50, 100, 100};
  RigidTransform T;
  T.rotation = ego_to_camera_axes();
  const PointCloud c = lidar_sweep(s, Vec3(10, 0, 0), 0.1, 1024, 32, 0);
  const SparseDepthMap m = render_sparse_depth(c, K, T);
  EXPECT_EQ(boundary_error_stats(m, s, K, T, {}, 4.0).misplacedCount, 0u);
  SparseDepthMap bare = m;
  bare.drop_source();
  EXPECT_THROW(boundary_error_stats(bare, s, K, T, {}, 4.0), MissingSourceId);
}
