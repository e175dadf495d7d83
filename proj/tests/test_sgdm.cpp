#include <gtest/gtest.h>

#include "prefusion/sgdm.hpp"
#include "support/grad_cases.hpp"

using namespace prefusion;

namespace {

FeatureMap random_map(int w, int h, int c, Rng& rng) {
  FeatureMap f(w, h, c);
  for (double& x : f.values) x = rng.uniform(-1.0, 1.0);
  return f;
}

}  // namespace

TEST(Sgdm, DistributionsAreNormalized) {
  Rng rng(1);
  const SgdmParams p = SgdmParams::init(8, 16, 3);
  const DepthDistribution d = sgdm_forward(random_map(7, 5, 8, rng), random_map(7, 5, 2, rng), p);
  ASSERT_EQ(d.probs.size(), 7u * 5u * kNumBins);
  for (std::size_t i = 0; i < d.pixels(); ++i) {
    double s = 0.0;
    for (double x : d.at(i)) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Sgdm, ZeroHeadGivesUniformDistribution) {
  Rng rng(2);
  SgdmParams p = SgdmParams::init(8, 16, 4);
  p.headConv.weight.setZero();
  p.headConv.bias.setZero();
  const DepthDistribution d = sgdm_forward(random_map(3, 3, 8, rng), random_map(3, 3, 2, rng), p);
  for (double x : d.probs) EXPECT_NEAR(x, 1.0 / kNumBins, 1e-15);
}

TEST(Sgdm, GateStrictlyInsideUnitInterval) {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SgdmParams p = SgdmParams::init(8, 16, seed);
    const nn::Matrix cam = nn::uniform_matrix(50, 8, 20.0, rng);
    const nn::Matrix geo = nn::uniform_matrix(50, 2, 60.0, rng);
    for (double a : sgdm_attention(p, cam, geo)) {
      EXPECT_GT(a, 0.0);
      EXPECT_LT(a, 1.0);
    }
  }
}

TEST(Sgdm, ShapeErrors) {
  Rng rng(4);
  const SgdmParams p = SgdmParams::init(8, 16, 0);
  EXPECT_THROW(sgdm_forward(random_map(3, 3, 7, rng), random_map(3, 3, 2, rng), p), ShapeMismatch);
  EXPECT_THROW(sgdm_forward(random_map(3, 3, 8, rng), random_map(4, 3, 2, rng), p), ShapeMismatch);
  EXPECT_THROW(SgdmParams::init(0, 16, 0), ShapeMismatch);
}

TEST(Sgdm, InitIsSeededAndBounded) {
  const SgdmParams a = SgdmParams::init(8, 16, 9), b = SgdmParams::init(8, 16, 9);
  EXPECT_EQ(a.camConv.weight, b.camConv.weight);
  EXPECT_NE(a.camConv.weight, SgdmParams::init(8, 16, 10).camConv.weight);
  EXPECT_LE(a.headConv.weight.cwiseAbs().maxCoeff(), 0.1);
}

TEST(Sgdm, JsonRoundTrip) {
  SgdmParams p = SgdmParams::init(8, 16, 5);
  p.camBn.runningMean.setConstant(0.25);
  const SgdmParams q = SgdmParams::from_json(p.to_json());
  EXPECT_EQ(q.to_json(), p.to_json());
  nlohmann::json broken = p.to_json();
  broken.erase("headConv");
  EXPECT_THROW(SgdmParams::from_json(broken), ShapeMismatch);
}

TEST(Sgdm, TrainingIsDeterministicAndReducesLoss) {
  Rng rng(6);
  const SgdmBatch batch = grad_cases::random_batch(rng, 64, 8, kNumBins);
  SgdmParams a = SgdmParams::init(8, 16, 1), b = SgdmParams::init(8, 16, 1);
  const auto ta = train_sgdm(a, batch, 2.0, {0.5, 60});
  const auto tb = train_sgdm(b, batch, 2.0, {0.5, 60});
  EXPECT_EQ(ta, tb);
  ASSERT_EQ(ta.size(), 61u);
  EXPECT_LT(ta.back(), ta.front());
}

TEST(Sgdm, OverfitsSinglePixel) {
  SgdmBatch batch;
  batch.cam = nn::Matrix::Constant(1, 8, 0.3);
  batch.geo = nn::Matrix::Constant(1, 2, 0.7);
  batch.bins = {40};
  batch.weights = {0.5};
  SgdmParams p = SgdmParams::init(8, 16, 2);
  const auto trace = train_sgdm(p, batch, 2.0, {1.0, 300});
  EXPECT_LT(trace.back(), 0.05 * trace.front());
}
