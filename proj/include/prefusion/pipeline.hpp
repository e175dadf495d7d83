#ifndef PREFUSION_PIPELINE_HPP
#define PREFUSION_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prefusion/classes.hpp"
#include "prefusion/dagf.hpp"
#include "prefusion/errors.hpp"
#include "prefusion/feature_map.hpp"
#include "prefusion/geom.hpp"
#include "prefusion/io.hpp"
#include "prefusion/json_util.hpp"
#include "prefusion/losses.hpp"
#include "prefusion/nn.hpp"
#include "prefusion/pgdc.hpp"
#include "prefusion/rng.hpp"
#include "prefusion/sgdm.hpp"
#include "prefusion/simulate.hpp"

namespace prefusion {

namespace fs = std::filesystem;

enum class PriorMode { kGroundTruth, kDegraded, kNone };

inline std::string prior_mode_name(PriorMode m) {
  switch (m) {
    case PriorMode::kGroundTruth: return "gt";
    case PriorMode::kDegraded: return "degraded";
    case PriorMode::kNone: return "none";
  }
  return "none";
}

struct PriorSettings {
  PriorMode mode = PriorMode::kGroundTruth;
  double fnRate = 0.1;
  double fpRate = 0.1;
  double jitterPx = 2.0;
};

struct TrainingSettings {
  std::uint64_t seed = 1000;  // training scenes use seeds seed, seed + 1, ...
  int scenes = 8;
  int pixels = 2048;  // supervised pixels sampled per scene
  double lr = 0.5;
  int iterations = 200;
  double headLr = 0.01;
  int headIterations = 200;
};

struct PipelineConfig {
  SceneSpec scene;
  Intrinsics camera{400.0, 400.0, 400.0, 224.0, 800, 448};
  double rotNoiseDeg = 0.5;
  double transNoiseM = 0.0;
  double tau = kDefaultTau;
  int blockSize = kDefaultBlockSize;
  int ks = static_cast<int>(kDefaultNeighborCount);
  double gamma = 2.0;
  double ringPx = 4.0;
  AlphaTable alphas = AlphaTable::defaults();
  int seReduction = 4;
  int hidden = 16;
  PriorSettings priors;
  TrainingSettings training;
  int ablationSeeds = 5;
  std::uint64_t seed = 0;
  fs::path output = "out";
  std::optional<fs::path> headParams;
  std::optional<fs::path> sgdmParams;
};

/// Scene used when a config names none: six random objects, ground, far wall, 10 m/s.
inline SceneSpec default_scene_spec() {
  SceneSpec s;
  s.randomCuboids = 6;
  s.planes.push_back({Vec3(0, 0, 1), -1.8, Vec3::Constant(kSceneBound)});
  s.planes.push_back({Vec3(1, 0, 0), 50.0, Vec3::Constant(kSceneBound)});
  s.egoVelocity = Vec3(10, 0, 0);
  return s;
}

/**
 * Parses a pipeline config. `base` resolves relative paths (scene file,
 * parameter files). Unknown keys and out-of-range values raise ConfigError.
 */
inline PipelineConfig parse_pipeline_config(const nlohmann::json& j, const fs::path& base = ".") {
  using namespace json_util;
  const std::string w = "config";
  reject_unknown_keys<ConfigError>(
      j,
      {"scene", "camera", "extrinsicNoise", "tau", "blockSize", "ks", "gamma", "ringPx", "alphas",
       "seReduction", "hidden", "priors", "training", "ablation", "seed", "output", "headParams",
       "sgdmParams"},
      w);
  PipelineConfig c;
  c.scene = default_scene_spec();
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    try {
      if (s.is_string())
        c.scene = parse_scene_spec(io::read_json(base / s.get<std::string>()));
      else
        c.scene = parse_scene_spec(s);
    } catch (const SpecError& e) {
      throw ConfigError(e.what());
    }
  }
  c.seed = c.scene.seed;
  const long long seed = get_integer<ConfigError>(j, "seed", static_cast<long long>(c.seed), w);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);

  if (j.contains("camera")) {
    const auto& k = j.at("camera");
    reject_unknown_keys<ConfigError>(k, {"fx", "fy", "cx", "cy", "width", "height"}, "camera");
    c.camera.fx = get_number<ConfigError>(k, "fx", c.camera.fx, "camera");
    c.camera.fy = get_number<ConfigError>(k, "fy", c.camera.fy, "camera");
    c.camera.cx = get_number<ConfigError>(k, "cx", c.camera.cx, "camera");
    c.camera.cy = get_number<ConfigError>(k, "cy", c.camera.cy, "camera");
    const long long cw = get_integer<ConfigError>(k, "width", c.camera.width, "camera");
    const long long ch = get_integer<ConfigError>(k, "height", c.camera.height, "camera");
    if (cw <= 0 || ch <= 0 || cw > 8192 || ch > 8192) throw ConfigError("camera size out of range");
    c.camera.width = static_cast<int>(cw);
    c.camera.height = static_cast<int>(ch);
    if (!c.camera.valid()) throw ConfigError("camera intrinsics are invalid");
  }
  if (j.contains("extrinsicNoise")) {
    const auto& e = j.at("extrinsicNoise");
    reject_unknown_keys<ConfigError>(e, {"rotDeg", "transM"}, "extrinsicNoise");
    c.rotNoiseDeg = get_number<ConfigError>(e, "rotDeg", c.rotNoiseDeg, "extrinsicNoise");
    c.transNoiseM = get_number<ConfigError>(e, "transM", c.transNoiseM, "extrinsicNoise");
    if (c.rotNoiseDeg < 0.0 || c.rotNoiseDeg > 45.0 || c.transNoiseM < 0.0 || c.transNoiseM > 5.0)
      throw ConfigError("extrinsic noise out of range");
  }
  c.tau = get_number<ConfigError>(j, "tau", c.tau, w);
  if (!(c.tau > 0.0)) throw ConfigError("tau must be > 0");
  c.blockSize = static_cast<int>(get_integer<ConfigError>(j, "blockSize", c.blockSize, w));
  if (c.blockSize < 2 || c.blockSize > 1024) throw ConfigError("blockSize must lie in [2, 1024]");
  c.ks = static_cast<int>(get_integer<ConfigError>(j, "ks", c.ks, w));
  if (c.ks < 4 || c.ks > 256) throw ConfigError("ks must lie in [4, 256]");
  c.gamma = get_number<ConfigError>(j, "gamma", c.gamma, w);
  if (!(c.gamma >= 0.0) || c.gamma > 10.0) throw ConfigError("gamma must lie in [0, 10]");
  c.ringPx = get_number<ConfigError>(j, "ringPx", c.ringPx, w);
  if (!(c.ringPx >= 0.0)) throw ConfigError("ringPx must be >= 0");
  if (j.contains("alphas")) c.alphas = AlphaTable::from_json(j.at("alphas"));
  c.seReduction = static_cast<int>(get_integer<ConfigError>(j, "seReduction", c.seReduction, w));
  c.hidden = static_cast<int>(get_integer<ConfigError>(j, "hidden", c.hidden, w));
  if (c.hidden < 1 || c.hidden > 256) throw ConfigError("hidden must lie in [1, 256]");

  if (j.contains("priors")) {
    const auto& p = j.at("priors");
    reject_unknown_keys<ConfigError>(p, {"mode", "fnRate", "fpRate", "jitterPx"}, "priors");
    const std::string mode = get_string<ConfigError>(p, "mode", "gt", "priors");
    if (mode == "gt") c.priors.mode = PriorMode::kGroundTruth;
    else if (mode == "degraded") c.priors.mode = PriorMode::kDegraded;
    else if (mode == "none") c.priors.mode = PriorMode::kNone;
    else throw ConfigError("priors.mode must be gt, degraded or none");
    c.priors.fnRate = get_number<ConfigError>(p, "fnRate", c.priors.fnRate, "priors");
    c.priors.fpRate = get_number<ConfigError>(p, "fpRate", c.priors.fpRate, "priors");
    c.priors.jitterPx = get_number<ConfigError>(p, "jitterPx", c.priors.jitterPx, "priors");
    if (c.priors.fnRate < 0.0 || c.priors.fnRate > 1.0 || c.priors.fpRate < 0.0 ||
        c.priors.fpRate > 1.0 || c.priors.jitterPx < 0.0 || c.priors.jitterPx > 100.0)
      throw ConfigError("prior degradation out of range");
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    const std::string tw = "training";
    reject_unknown_keys<ConfigError>(
        t, {"seed", "scenes", "pixels", "lr", "iterations", "headLr", "headIterations"}, tw);
    TrainingSettings& s = c.training;
    const long long ts = get_integer<ConfigError>(t, "seed", static_cast<long long>(s.seed), tw);
    if (ts < 0) throw ConfigError("training.seed must be >= 0");
    s.seed = static_cast<std::uint64_t>(ts);
    s.scenes = static_cast<int>(get_integer<ConfigError>(t, "scenes", s.scenes, tw));
    s.pixels = static_cast<int>(get_integer<ConfigError>(t, "pixels", s.pixels, tw));
    s.lr = get_number<ConfigError>(t, "lr", s.lr, tw);
    s.iterations = static_cast<int>(get_integer<ConfigError>(t, "iterations", s.iterations, tw));
    s.headLr = get_number<ConfigError>(t, "headLr", s.headLr, tw);
    s.headIterations =
        static_cast<int>(get_integer<ConfigError>(t, "headIterations", s.headIterations, tw));
    if (s.scenes < 1 || s.scenes > 64 || s.pixels < 1 || s.pixels > 1000000)
      throw ConfigError("training.scenes / training.pixels out of range");
    if (!(s.lr >= 0.0) || !(s.headLr >= 0.0) || s.iterations < 0 || s.headIterations < 0 ||
        s.iterations > 100000 || s.headIterations > 100000)
      throw ConfigError("training rates and iteration counts must be >= 0");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    reject_unknown_keys<ConfigError>(a, {"seeds"}, "ablation");
    c.ablationSeeds = static_cast<int>(get_integer<ConfigError>(a, "seeds", c.ablationSeeds, "ablation"));
    if (c.ablationSeeds < 1 || c.ablationSeeds > 100) throw ConfigError("ablation.seeds out of range");
  }
  c.output = get_string<ConfigError>(j, "output", c.output.string(), w);
  if (j.contains("headParams")) c.headParams = base / get_string<ConfigError>(j, "headParams", "", w);
  if (j.contains("sgdmParams")) c.sgdmParams = base / get_string<ConfigError>(j, "sgdmParams", "", w);
  return c;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = io::read_json(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_pipeline_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------

inline constexpr int kImageChannels = 8;

/**
 * Synthetic camera features from what the true camera sees: constant,
 * normalized row and column, foreground mask and a 4-d class descriptor
 * (normalized object size plus an indicator). No depth information.
 */
inline FeatureMap image_features(const Scene& scene, const TruthView& truth) {
  FeatureMap f(truth.width, truth.height, kImageChannels);
  for (int v = 0; v < truth.height; ++v)
    for (int u = 0; u < truth.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * truth.width + u;
      const int surface = truth.surface[i];
      double* px = f.values.data() + f.offset(u, v);
      px[0] = 1.0;
      px[1] = static_cast<double>(v) / truth.height;
      px[2] = static_cast<double>(u) / truth.width;
      if (scene.is_foreground(surface)) {
        const ClassShape& s = kClassShapes[scene.class_of(surface)];
        px[3] = 1.0;
        px[4] = s.length / 10.0;
        px[5] = s.width / 3.0;
        px[6] = s.height / 4.0;
        px[7] = 1.0;
      }
    }
  return f;
}

/// Everything the simulator produces for one seeded view.
struct View {
  std::uint64_t seed = 0;
  SceneSpec spec;
  Scene scene;
  PointCloud cloud;
  RigidTransform extrinsics;
  RigidTransform truePose;
  RigidTransform usedPose;
  SparseDepthMap raw;
  TruthView truth;
  std::vector<BBox2D> gtBoxes;
  std::vector<BBox2D> degradedBoxes;
  FeatureMap image;

  const std::vector<BBox2D>& boxes(PriorMode m) const {
    static const std::vector<BBox2D> kNone;
    return m == PriorMode::kGroundTruth ? gtBoxes : m == PriorMode::kDegraded ? degradedBoxes : kNone;
  }
};

/// LiDAR and camera share an origin; the camera looks along ego +x.
inline RigidTransform nominal_extrinsics() {
  RigidTransform t;
  t.rotation = ego_to_camera_axes();
  return t;
}

/**
 * Simulates one view. Depth is projected with the noisy extrinsics and no
 * motion compensation; truth is rendered from the actual camera pose at the
 * mid-sweep trigger time.
 */
inline View make_view(const PipelineConfig& cfg, std::uint64_t seed) {
  View v;
  v.seed = seed;
  v.spec = cfg.scene;
  v.spec.seed = seed;
  v.scene = build_scene(v.spec);
  v.cloud = lidar_sweep(v.scene, v.spec);
  v.extrinsics = nominal_extrinsics();
  v.truePose = camera_pose(v.extrinsics, v.spec.egoVelocity, v.spec.sweepDuration);
  v.usedPose = perturb_extrinsics(v.extrinsics, cfg.rotNoiseDeg, cfg.transNoiseM, seed);
  v.raw = render_sparse_depth(v.cloud, cfg.camera, v.usedPose);
  v.truth = render_truth(v.scene, cfg.camera, v.truePose);
  v.gtBoxes = ground_truth_boxes(v.scene, cfg.camera, v.truePose);
  v.degradedBoxes = degrade_priors(v.gtBoxes, cfg.priors.fnRate, cfg.priors.fpRate,
                                   cfg.priors.jitterPx, seed, cfg.camera.width, cfg.camera.height);
  v.image = image_features(v.scene, v.truth);
  return v;
}

inline std::vector<View> training_views(const PipelineConfig& cfg) {
  std::vector<View> views;
  for (int i = 0; i < cfg.training.scenes; ++i)
    views.push_back(make_view(cfg, cfg.training.seed + static_cast<std::uint64_t>(i)));
  return views;
}

inline nn::SqueezeExcitation make_se(const PipelineConfig& cfg) {
  if (cfg.seReduction <= 0 || kImageChannels % cfg.seReduction != 0)
    throw ConfigError("seReduction must divide the " + std::to_string(kImageChannels) +
                      " image channels");
  Rng rng(mix_seed(cfg.training.seed) ^ 0x5eull, Stream::kInit);
  return nn::SqueezeExcitation::random(kImageChannels, cfg.seReduction, rng);
}

/// Intermediate maps of one view.
struct StageOutputs {
  SparseDepthMap aligned;
  SparseDepthMap delta;
  SparseDepthMap masked;
  DenseGeometry geometry;
  FeatureMap enhanced;
  FeatureMap fa;
};

/**
 * Calibration (when enabled and boxes exist), discrepancy masking (when
 * enabled) and densification of the resulting map.
 */
inline StageOutputs run_stages(const PipelineConfig& cfg, const View& v,
                               const std::vector<BBox2D>& boxes, const SmoothingHead& head,
                               const nn::SqueezeExcitation& se, bool pgdc = true,
                               bool dagf = true) {
  StageOutputs s;
  s.aligned = pgdc ? calibrate_view(v.raw, boxes, head, static_cast<std::size_t>(cfg.ks)) : v.raw;
  s.aligned.drop_source();
  SparseDepthMap raw = v.raw;
  raw.drop_source();
  s.delta = discrepancy_map(raw, s.aligned);
  s.masked = dagf ? apply_mask(s.aligned, s.delta, cfg.tau) : s.aligned;
  s.geometry = densify(s.masked, cfg.blockSize);
  s.enhanced = se_recalibrate(enhance_features(v.image, pgdc ? boxes : std::vector<BBox2D>{},
                                               cfg.alphas),
                              se);
  s.fa = assemble_fa(s.geometry);
  return s;
}

// ---------------------------------------------------------------------------

struct DepthError {
  double meanAbsError = 0.0;
  double binAccuracy = 0.0;
  std::size_t pixels = 0;
};

/// Error of nonzero pixels of `m` against true depth, optionally restricted to `mask`.
inline DepthError depth_error(const SparseDepthMap& m, const TruthView& truth,
                              const std::vector<std::uint8_t>* mask = nullptr) {
  DepthError e;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0 || truth.depth[i] == 0.0 || (mask && !(*mask)[i])) continue;
    e.meanAbsError += std::abs(m[i] - truth.depth[i]);
    hits += target_bin(m[i]) == target_bin(truth.depth[i]);
    ++e.pixels;
  }
  if (e.pixels) {
    e.meanAbsError /= static_cast<double>(e.pixels);
    e.binAccuracy = static_cast<double>(hits) / static_cast<double>(e.pixels);
  }
  return e;
}

inline std::vector<std::uint8_t> box_mask(const std::vector<BBox2D>& boxes, int width, int height) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(width) * height, 0);
  for (const BBox2D& b : boxes) {
    const PixelRange r = pixel_range(b, width, height);
    for (int v = r.v0; v <= r.v1; ++v)
      for (int u = r.u0; u <= r.u1; ++u) m[static_cast<std::size_t>(v) * width + u] = 1;
  }
  return m;
}

/// In-box features from the raw map, supervised by true depth.
inline HeadDataset head_dataset(const std::vector<View>& views, std::size_t ks) {
  std::vector<PointFeatures> feats;
  HeadDataset d;
  for (const View& v : views)
    for (const BBox2D& b : v.gtBoxes)
      for (const BoxPoint& p : box_point_features(v.raw, b, ks)) {
        if (v.truth.depth[p.pixel] == 0.0) continue;
        feats.push_back(p.features);
        d.targets.push_back(v.truth.depth[p.pixel]);
      }
  d.features.resize(static_cast<Eigen::Index>(feats.size()), 5);
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (int k = 0; k < 5; ++k) d.features(static_cast<Eigen::Index>(i), k) = feats[i][k];
  return d;
}

/// Supervised pixels sampled uniformly from valid blocks of each view.
inline SgdmBatch sgdm_batch(const PipelineConfig& cfg, const std::vector<View>& views,
                            const SmoothingHead& head, const nn::SqueezeExcitation& se) {
  std::vector<nn::Matrix> cams, geos;
  SgdmBatch b;
  for (const View& v : views) {
    const StageOutputs s = run_stages(cfg, v, v.gtBoxes, head, se);
    std::vector<std::size_t> candidates;
    for (int y = 0; y < v.raw.height(); ++y)
      for (int x = 0; x < v.raw.width(); ++x)
        if (s.geometry.pixel_valid(x, y)) candidates.push_back(v.raw.index(x, y));
    Rng rng(v.seed, Stream::kSample);
    const std::size_t n = std::min(candidates.size(), static_cast<std::size_t>(cfg.training.pixels));
    for (std::size_t i = 0; i < n; ++i)
      std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
    candidates.resize(n);
    nn::Matrix cam(static_cast<Eigen::Index>(n), s.enhanced.channels), geo(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t px = candidates[i];
      const auto row = static_cast<Eigen::Index>(i);
      for (int c = 0; c < s.enhanced.channels; ++c)
        cam(row, c) = s.enhanced.values[px * s.enhanced.channels + c];
      geo(row, 0) = s.fa.values[2 * px];
      geo(row, 1) = s.fa.values[2 * px + 1];
      b.bins.push_back(target_bin(s.geometry.dDense[px]));
      b.weights.push_back(s.geometry.gDense[px]);
    }
    cams.push_back(std::move(cam));
    geos.push_back(std::move(geo));
  }
  Eigen::Index rows = 0;
  for (const auto& m : cams) rows += m.rows();
  if (rows == 0) throw EmptyValidSet("no valid blocks in the training views");
  b.cam.resize(rows, kImageChannels);
  b.geo.resize(rows, 2);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    b.cam.middleRows(at, cams[i].rows()) = cams[i];
    b.geo.middleRows(at, geos[i].rows()) = geos[i];
    at += cams[i].rows();
  }
  return b;
}

struct TrainedModels {
  SmoothingHead head = SmoothingHead::identity();
  SgdmParams sgdm;
  std::vector<double> headTrace;
  std::vector<double> sgdmTrace;
  DepthError inBoxBefore;  // raw depth inside gt boxes of the training views
  DepthError inBoxAfter;   // calibrated depth, same pixels
};

inline SgdmParams initial_sgdm(const PipelineConfig& cfg) {
  return SgdmParams::init(kImageChannels, cfg.hidden, cfg.training.seed);
}

/**
 * Fits the smoothing head to true depth (L1), then trains the depth head on
 * focal + edge loss with the fitted calibration in front of it.
 */
inline TrainedModels train_models(const PipelineConfig& cfg) {
  const std::vector<View> views = training_views(cfg);
  const nn::SqueezeExcitation se = make_se(cfg);
  TrainedModels m;
  const HeadDataset hd = head_dataset(views, static_cast<std::size_t>(cfg.ks));
  if (hd.features.rows() > 0) {
    if (cfg.training.headIterations > 0) m.head = identity_head_for(hd);
    m.headTrace = train_head(m.head, hd, {cfg.training.headLr, cfg.training.headIterations});
  }
  DepthError before, after;
  for (const View& v : views) {
    const auto mask = box_mask(v.gtBoxes, v.raw.width(), v.raw.height());
    const DepthError b = depth_error(v.raw, v.truth, &mask);
    const DepthError a = depth_error(
        calibrate_view(v.raw, v.gtBoxes, m.head, static_cast<std::size_t>(cfg.ks)), v.truth, &mask);
    before.meanAbsError += b.meanAbsError * static_cast<double>(b.pixels);
    after.meanAbsError += a.meanAbsError * static_cast<double>(a.pixels);
    before.binAccuracy += b.binAccuracy * static_cast<double>(b.pixels);
    after.binAccuracy += a.binAccuracy * static_cast<double>(a.pixels);
    before.pixels += b.pixels;
    after.pixels += a.pixels;
  }
  for (DepthError* e : {&before, &after})
    if (e->pixels) {
      e->meanAbsError /= static_cast<double>(e->pixels);
      e->binAccuracy /= static_cast<double>(e->pixels);
    }
  m.inBoxBefore = before;
  m.inBoxAfter = after;

  m.sgdm = initial_sgdm(cfg);
  const SgdmBatch batch = sgdm_batch(cfg, views, m.head, se);
  m.sgdmTrace = train_sgdm(m.sgdm, batch, cfg.gamma, {cfg.training.lr, cfg.training.iterations});
  return m;
}

// ---------------------------------------------------------------------------
// Commands. Each writes into `out` (created if needed) and nothing else.

inline std::string num(double x) { return io::format_number(x); }

inline io::CsvWriter boxes_csv(const std::vector<BBox2D>& boxes) {
  io::CsvWriter csv({"u_min", "v_min", "u_max", "v_max", "class", "spurious"});
  for (const BBox2D& b : boxes)
    csv.row({num(b.u_min), num(b.v_min), num(b.u_max), num(b.v_max), class_name(b.classId),
             b.isSpurious ? "1" : "0"});
  return csv;
}

inline void cmd_simulate(const PipelineConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const View v = make_view(cfg, cfg.seed);
  io::write_json(out / "scene.json", scene_to_json(v.scene));
  io::CsvWriter cloud({"x", "y", "z", "timestamp", "source", "class"});
  for (const LidarPoint& p : v.cloud.points)
    cloud.row({num(p.position.x()), num(p.position.y()), num(p.position.z()), num(p.timestamp),
               std::to_string(p.sourceId), class_name(p.classId)});
  cloud.save(out / "cloud.csv");
  io::write_fmap(out / "d_raw.fmap", v.raw);
  boxes_csv(v.gtBoxes).save(out / "boxes_gt.csv");
  boxes_csv(v.degradedBoxes).save(out / "boxes_degraded.csv");
  const MisalignmentStats s =
      boundary_error_stats(v.raw, v.scene, cfg.camera, v.truePose, v.gtBoxes, cfg.ringPx);
  io::CsvWriter stats({"misplaced", "total", "misplaced_in_ring", "ring_fraction",
                       "mae_misplaced", "mae_correct"});
  stats.row({std::to_string(s.misplacedCount), std::to_string(s.totalCount),
             std::to_string(s.misplacedInRing), num(s.ringFraction), num(s.meanAbsErrorMisplaced),
             num(s.meanAbsErrorCorrect)});
  stats.save(out / "stats.csv");
}

/// Argmax bin centre per pixel.
inline SparseDepthMap predicted_depth(const DepthDistribution& d) {
  SparseDepthMap m(d.width, d.height);
  for (std::size_t i = 0; i < d.pixels(); ++i) m[i] = bin_center(d.argmax(i));
  return m;
}

inline void cmd_pipeline(const PipelineConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const SmoothingHead head =
      cfg.headParams ? SmoothingHead::from_json(io::read_json(*cfg.headParams)) : SmoothingHead::identity();
  const SgdmParams sgdm =
      cfg.sgdmParams ? SgdmParams::from_json(io::read_json(*cfg.sgdmParams)) : initial_sgdm(cfg);
  const View v = make_view(cfg, cfg.seed);
  const std::vector<BBox2D>& boxes = v.boxes(cfg.priors.mode);
  const StageOutputs s = run_stages(cfg, v, boxes, head, make_se(cfg));
  const DepthDistribution dist = sgdm_forward(s.enhanced, s.fa, sgdm);
  const SparseDepthMap pred = predicted_depth(dist);

  io::write_fmap(out / "d_raw.fmap", v.raw);
  io::write_fmap(out / "d_aligned.fmap", s.aligned);
  io::write_fmap(out / "delta.fmap", s.delta);
  io::write_fmap(out / "mask.fmap", s.masked);
  io::write_fmap(out / "d_dense.fmap", s.geometry.dDense);
  io::write_fmap(out / "g_dense.fmap", s.geometry.gDense);
  io::write_fmap(out / "pred_depth.fmap", pred);

  const auto in_box = box_mask(v.gtBoxes, v.raw.width(), v.raw.height());
  // prediction is scored where depth supervision exists
  SparseDepthMap pred_on_valid(pred.width(), pred.height());
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (s.geometry.dDense[i] != 0.0) pred_on_valid[i] = pred[i];
  io::CsvWriter csv({"stage", "pixels", "mean_abs_error", "bin_accuracy", "in_box_pixels",
                     "in_box_mean_abs_error"});
  const std::pair<const char*, const SparseDepthMap*> stages[] = {
      {"raw", &v.raw},          {"aligned", &s.aligned},          {"masked", &s.masked},
      {"dense", &s.geometry.dDense}, {"predicted", &pred_on_valid}};
  for (const auto& [name, map] : stages) {
    const DepthError all = depth_error(*map, v.truth);
    const DepthError box = depth_error(*map, v.truth, &in_box);
    csv.row({name, std::to_string(all.pixels), num(all.meanAbsError), num(all.binAccuracy),
             std::to_string(box.pixels), num(box.meanAbsError)});
  }
  csv.save(out / "metrics.csv");
}

inline void save_trace(const std::vector<double>& trace, const fs::path& path) {
  io::CsvWriter csv({"iteration", "loss"});
  for (std::size_t i = 0; i < trace.size(); ++i) csv.row({std::to_string(i), num(trace[i])});
  csv.save(path);
}

inline void cmd_train(const PipelineConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const TrainedModels m = train_models(cfg);
  io::write_json(out / "head_params.json", m.head.to_json());
  io::write_json(out / "sgdm_params.json", m.sgdm.to_json());
  save_trace(m.headTrace, out / "head_loss.csv");
  save_trace(m.sgdmTrace, out / "loss_trace.csv");
  io::CsvWriter csv({"initial_loss", "final_loss", "loss_ratio", "in_box_pixels",
                     "in_box_error_before", "in_box_error_after"});
  const double first = m.sgdmTrace.front(), last = m.sgdmTrace.back();
  csv.row({num(first), num(last), num(last / first), std::to_string(m.inBoxBefore.pixels),
           num(m.inBoxBefore.meanAbsError), num(m.inBoxAfter.meanAbsError)});
  csv.save(out / "train_summary.csv");
}

/// One ablation cell: module toggles and prior source.
struct AblationCell {
  bool pgdc = false;
  bool dagf = false;
  PriorMode prior = PriorMode::kNone;
  double meanAbsError = 0.0;  // mean over seeds
  double binAccuracy = 0.0;
  double pixels = 0.0;

  std::string name() const {
    return std::string(pgdc ? "pgdc" : "-") + "/" + (dagf ? "dagf" : "-") + "/" +
           prior_mode_name(prior);
  }
};

struct AblationCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds() const { return lhs <= rhs; }
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::vector<AblationCheck> checks;

  const AblationCell& cell(bool pgdc, bool dagf, PriorMode prior) const {
    for (const AblationCell& c : cells)
      if (c.pgdc == pgdc && c.dagf == dagf && c.prior == prior) return c;
    throw OutOfRange("no such ablation cell");
  }
};

/**
 * @brief Module and prior-quality grid.
 *
 * The smoothing head is fitted once on the training views; every cell is
 * then scored on the evaluation seeds seed, seed + 1, ... by the mean
 * absolute error of the depth map handed to the depth head (raw, calibrated
 * or masked) against true depth.
 */
inline AblationResult run_ablation(const PipelineConfig& cfg) {
  const std::vector<View> train = training_views(cfg);
  SmoothingHead head = SmoothingHead::identity();
  const HeadDataset hd = head_dataset(train, static_cast<std::size_t>(cfg.ks));
  if (hd.features.rows() > 0 && cfg.training.headIterations > 0) {
    head = identity_head_for(hd);
    train_head(head, hd, {cfg.training.headLr, cfg.training.headIterations});
  }
  const nn::SqueezeExcitation se = make_se(cfg);
  AblationResult r;
  for (PriorMode prior : {PriorMode::kNone, PriorMode::kDegraded, PriorMode::kGroundTruth})
    for (bool pgdc : {false, true})
      for (bool dagf : {false, true}) r.cells.push_back({pgdc, dagf, prior});
  const double n = cfg.ablationSeeds;
  for (int k = 0; k < cfg.ablationSeeds; ++k) {
    const View v = make_view(cfg, cfg.seed + static_cast<std::uint64_t>(k));
    for (AblationCell& c : r.cells) {
      const StageOutputs s = run_stages(cfg, v, v.boxes(c.prior), head, se, c.pgdc, c.dagf);
      const DepthError e = depth_error(s.masked, v.truth);
      c.meanAbsError += e.meanAbsError / n;
      c.binAccuracy += e.binAccuracy / n;
      c.pixels += static_cast<double>(e.pixels) / n;
    }
  }
  const auto err = [&](bool p, bool d, PriorMode m) { return r.cell(p, d, m).meanAbsError; };
  const PriorMode gt = PriorMode::kGroundTruth;
  r.checks = {
      {"full <= pgdc_only", err(true, true, gt), err(true, false, gt)},
      {"full <= dagf_only", err(true, true, gt), err(false, true, gt)},
      {"pgdc_only <= baseline", err(true, false, gt), err(false, false, gt)},
      {"dagf_only <= baseline", err(false, true, gt), err(false, false, gt)},
      {"gt_priors <= degraded_priors", err(true, true, gt),
       err(true, true, PriorMode::kDegraded)},
      {"degraded_priors <= no_priors", err(true, true, PriorMode::kDegraded),
       err(true, true, PriorMode::kNone)},
  };
  return r;
}

inline void cmd_ablate(const PipelineConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const AblationResult r = run_ablation(cfg);
  io::CsvWriter cells({"pgdc", "dagf", "prior", "mean_abs_error", "bin_accuracy", "pixels"});
  for (const AblationCell& c : r.cells)
    cells.row({c.pgdc ? "1" : "0", c.dagf ? "1" : "0", prior_mode_name(c.prior),
               num(c.meanAbsError), num(c.binAccuracy), num(c.pixels)});
  cells.save(out / "ablation.csv");
  io::CsvWriter checks({"check", "lhs", "rhs", "holds"});
  for (const AblationCheck& c : r.checks)
    checks.row({c.name, num(c.lhs), num(c.rhs), c.holds() ? "1" : "0"});
  checks.save(out / "ablation_checks.csv");
}

inline void cmd_render(const fs::path& in, const fs::path& out) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_pgm(out, io::read_fmap(in));
}

}  // namespace prefusion

#endif  // PREFUSION_PIPELINE_HPP
