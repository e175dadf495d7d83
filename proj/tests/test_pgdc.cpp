#include <gtest/gtest.h>

#include <cmath>

#include "prefusion/pgdc.hpp"

using namespace prefusion;

namespace {

SmoothingHead averaging_head() {
  SmoothingHead h = SmoothingHead::identity();
  h.conv.weight.setConstant(0.2);
  return h;
}

int cls(const char* name) { return *class_from_name(name); }

// Dense 10 m patch covering [10, 30] x [10, 30] with one 40 m spike.
SparseDepthMap patch_with_spike() {
  SparseDepthMap m(40, 40);
  for (int v = 10; v <= 30; ++v)
    for (int u = 10; u <= 30; ++u) m.at(u, v) = 10.0;
  m.at(20, 20) = 40.0;
  return m;
}

}  // namespace

TEST(CriticalNeighbors, TwoSmallestAndTwoLargest) {
  const std::vector<double> d = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3};
  EXPECT_EQ(critical_neighbors(d), (std::array<double, 4>{1, 1, 6, 9}));
  const std::vector<double> four = {7, 5, 6, 8};
  EXPECT_EQ(critical_neighbors(four), (std::array<double, 4>{5, 6, 7, 8}));
  const std::vector<double> three = {1, 2, 3};
  EXPECT_THROW(critical_neighbors(three), TooFewNeighbors);
}

TEST(SmoothPoint, IdentityAndAveragingHeads) {
  const std::array<double, 4> c = {8, 9, 11, 12};
  EXPECT_NEAR(smooth_point(10.0, c, SmoothingHead::identity()), 10.0, 1e-12);
  EXPECT_NEAR(smooth_point(37.5, c, SmoothingHead::identity()), 37.5, 1e-12);
  EXPECT_NEAR(smooth_point(10.0, c, averaging_head()), 10.0, 1e-12);
}

TEST(CalibrateView, NoBoxesIsNoOp) {
  const SparseDepthMap m = patch_with_spike();
  EXPECT_EQ(calibrate_view(m, {}, averaging_head()), m);
}

TEST(CalibrateView, IdentityHeadIsNoOp) {
  const SparseDepthMap m = patch_with_spike();
  const std::vector<BBox2D> boxes = {{5, 5, 35, 35, 0, false}};
  const SparseDepthMap out = calibrate_view(m, boxes, SmoothingHead::identity());
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(out[i], m[i], 1e-12);
}

TEST(CalibrateView, SparseBoxIsSkipped) {
  SparseDepthMap m(20, 20);
  for (int i = 0; i < 4; ++i) m.at(2 + i, 2) = 5.0 + i;
  const std::vector<BBox2D> boxes = {{0, 0, 10, 10, 0, false}};
  EXPECT_EQ(calibrate_view(m, boxes, averaging_head()), m);
}

TEST(CalibrateView, OnlyInBoxPixelsChangeAndSpikeShrinks) {
  SparseDepthMap m = patch_with_spike();
  m.at(35, 35) = 40.0;  // outside the box
  const std::vector<BBox2D> boxes = {{8, 8, 32, 32, 0, false}};
  const SparseDepthMap out = calibrate_view(m, boxes, averaging_head());
  EXPECT_EQ(out.at(35, 35), 40.0);
  EXPECT_LT(std::abs(out.at(20, 20) - 10.0), 0.5 * std::abs(m.at(20, 20) - 10.0));
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(out[i] == 0.0, m[i] == 0.0);
}

TEST(CalibrateView, BoxesApplySequentially) {
  const SparseDepthMap m = patch_with_spike();
  const BBox2D a{8, 8, 24, 24, 0, false}, b{16, 16, 32, 32, 0, false};
  const SmoothingHead h = averaging_head();
  EXPECT_EQ(calibrate_view(m, {a, b}, h), calibrate_view(calibrate_view(m, {a}, h), {b}, h));
}

TEST(CalibrateView, RejectsBadArguments) {
  const SparseDepthMap m = patch_with_spike();
  SmoothingHead bad = SmoothingHead::identity();
  bad.bn.runningVar[0] = 0.0;
  EXPECT_THROW(calibrate_view(m, {}, bad), ShapeMismatch);
  EXPECT_THROW(calibrate_view(m, {}, SmoothingHead::identity(), 3), OutOfRange);
}

TEST(SmoothingHead, JsonRoundTrip) {
  SmoothingHead h = averaging_head();
  h.bn.runningMean[0] = 3.5;
  const SmoothingHead q = SmoothingHead::from_json(h.to_json());
  EXPECT_EQ(q.to_json(), h.to_json());
  nlohmann::json j = h.to_json();
  j["weights"] = {1.0, 2.0};
  EXPECT_THROW(SmoothingHead::from_json(j), ShapeMismatch);
}

TEST(TrainHead, ReducesErrorAndInferenceMatchesTraining) {
  Rng rng(1);
  HeadDataset data;
  data.features.resize(200, 5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> nb(5);
    for (double& x : nb) x = rng.uniform(5.0, 30.0);
    std::sort(nb.begin(), nb.end());
    data.features.row(i) << nb[2] + rng.uniform(-4.0, 4.0), nb[0], nb[1], nb[3], nb[4];
    data.targets.push_back(0.5 * (nb[1] + nb[3]));
  }
  SmoothingHead h = identity_head_for(data);
  const auto trace = train_head(h, data, {0.01, 300});
  EXPECT_LT(trace.back(), trace.front());
  double eval = 0.0;
  for (int i = 0; i < 200; ++i) {
    PointFeatures f;
    for (int k = 0; k < 5; ++k) f[k] = data.features(i, k);
    eval += std::abs(h.evaluate(f) - data.targets[i]);
  }
  EXPECT_NEAR(eval / 200.0, trace.back(), 1e-9);
}

TEST(IdentityHeadFor, MatchesIdentityInTrainingMode) {
  Rng rng(2);
  HeadDataset data;
  data.features = (nn::uniform_matrix(30, 5, 5.0, rng).array() + 20.0).matrix();
  data.targets.assign(30, 0.0);
  SmoothingHead h = identity_head_for(data);
  nn::BatchNorm::Cache cache;
  const nn::Matrix y = h.bn.forward(h.conv.forward(data.features), nn::Mode::kTrain, &cache);
  EXPECT_LT((y.col(0) - data.features.col(0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(AlphaTable, DefaultsAndErrors) {
  const AlphaTable t = AlphaTable::defaults();
  EXPECT_DOUBLE_EQ(t.at(cls("pedestrian")), 1.5);
  EXPECT_DOUBLE_EQ(t.at(cls("car")), 1.2);
  EXPECT_DOUBLE_EQ(t.at(cls("barrier")), 1.3);
  AlphaTable u = AlphaTable::uniform(1.0);
  u.erase(cls("bus"));
  EXPECT_THROW(u.at(cls("bus")), UnknownClass);
  EXPECT_THROW(u.set(0, 0.9), OutOfRange);
}

TEST(AlphaTable, JsonOverridesDefaults) {
  const AlphaTable t = AlphaTable::from_json({{"car", 2.0}});
  EXPECT_DOUBLE_EQ(t.at(cls("car")), 2.0);
  EXPECT_DOUBLE_EQ(t.at(cls("bicycle")), 1.5);
  EXPECT_THROW(AlphaTable::from_json({{"spaceship", 2.0}}), ConfigError);
  EXPECT_THROW(AlphaTable::from_json({{"car", 0.5}}), ConfigError);
  EXPECT_EQ(AlphaTable::from_json(t.to_json()).entries(), t.entries());
}

TEST(EnhanceFeatures, GainsMultiplyInOverlap) {
  FeatureMap f(20, 10, 3);
  for (double& x : f.values) x = 1.0;
  const std::vector<BBox2D> boxes = {{0, 0, 9, 9, cls("car"), false},
                                     {5, 0, 14, 9, cls("pedestrian"), false}};
  const FeatureMap g = enhance_features(f, boxes, AlphaTable::defaults());
  EXPECT_DOUBLE_EQ(g.at(2, 3, 0), 1.2);
  EXPECT_DOUBLE_EQ(g.at(7, 3, 1), 1.2 * 1.5);
  EXPECT_DOUBLE_EQ(g.at(12, 3, 2), 1.5);
  EXPECT_DOUBLE_EQ(g.at(17, 3, 0), 1.0);
}

TEST(EnhanceFeatures, PreservesPerPixelArgmax) {
  Rng rng(3);
  FeatureMap f(16, 16, 5);
  for (double& x : f.values) x = rng.uniform(0.0, 1.0);
  std::vector<BBox2D> boxes;
  for (int i = 0; i < 6; ++i) {
    const double u = rng.uniform(0, 10), v = rng.uniform(0, 10);
    boxes.push_back({u, v, u + 5, v + 5, static_cast<int>(rng.below(kNumClasses)), false});
  }
  const FeatureMap g = enhance_features(f, boxes, AlphaTable::defaults());
  for (int v = 0; v < 16; ++v)
    for (int u = 0; u < 16; ++u) {
      int af = 0, ag = 0;
      for (int c = 1; c < 5; ++c) {
        if (f.at(u, v, c) > f.at(u, v, af)) af = c;
        if (g.at(u, v, c) > g.at(u, v, ag)) ag = c;
      }
      EXPECT_EQ(af, ag);
    }
}

TEST(SeRecalibrate, ZeroSecondLayerHalves) {
  Rng rng(4);
  nn::SqueezeExcitation se = nn::SqueezeExcitation::random(8, 4, rng);
  se.w2.setZero();
  FeatureMap f(4, 3, 8);
  for (double& x : f.values) x = rng.uniform(-2.0, 2.0);
  const FeatureMap g = se_recalibrate(f, se);
  for (std::size_t i = 0; i < f.values.size(); ++i) EXPECT_DOUBLE_EQ(g.values[i], 0.5 * f.values[i]);
  FeatureMap wrong(4, 3, 6);
  EXPECT_THROW(se_recalibrate(wrong, se), ShapeMismatch);
}
