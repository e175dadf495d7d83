// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: prefusion_acceptance <path to prefusion cli>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "prefusion/io.hpp"
#include "prefusion/pipeline.hpp"
#include "../support/grad_cases.hpp"

using namespace prefusion;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// --- 1: misplaced depth concentrates at box edges ------------------------------

Outcome boundary_concentration() {
  PipelineConfig noisy = parse_pipeline_config(nlohmann::json::object());
  PipelineConfig clean = noisy;
  clean.rotNoiseDeg = 0.0;
  clean.scene.egoVelocity = Vec3::Zero();
  std::size_t misplaced = 0, in_ring = 0, clean_misplaced = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const View v = make_view(noisy, seed);
    const auto s = boundary_error_stats(v.raw, v.scene, noisy.camera, v.truePose, v.gtBoxes, 4.0);
    misplaced += s.misplacedCount;
    in_ring += s.misplacedInRing;
    const View c = make_view(clean, seed);
    clean_misplaced +=
        boundary_error_stats(c.raw, c.scene, clean.camera, c.truePose, c.gtBoxes, 4.0).misplacedCount;
  }
  const double fraction = misplaced ? static_cast<double>(in_ring) / misplaced : 0.0;
  return {misplaced > 0 && fraction >= 0.8 && clean_misplaced == 0,
          "ring fraction " + fmt("%.4f", fraction) + " of " + std::to_string(misplaced) +
              " misplaced, zero-noise misplaced " + std::to_string(clean_misplaced)};
}

// --- 2: k-d tree equals exhaustive search --------------------------------------

std::vector<std::size_t> brute_knn(const std::vector<Point2>& pts, const Point2& q, std::size_t k,
                                   std::size_t skip) {
  // insertion into a sorted top-k list keyed by (distance, index)
  std::vector<std::pair<double, std::size_t>> best;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i == skip) continue;
    const std::pair<double, std::size_t> c{squared_distance(pts[i], q), i};
    if (best.size() == k && !(c < best.back())) continue;
    best.insert(std::upper_bound(best.begin(), best.end(), c), c);
    if (best.size() > k) best.pop_back();
  }
  std::vector<std::size_t> out;
  for (const auto& b : best) out.push_back(b.second);
  return out;
}

Outcome knn_oracle() {
  Rng rng(2024);
  std::size_t queries = 0;
  for (int set = 0; set < 200; ++set) {
    const std::size_t n = 1 + rng.below(2000);
    const bool lattice = set % 2 == 1;  // integer coordinates force many ties
    std::vector<Point2> pts(n);
    for (Point2& p : pts)
      p = lattice ? Point2{double(rng.below(40)), double(rng.below(25))}
                  : Point2{rng.uniform(0, 800), rng.uniform(0, 448)};
    const KdTree2 tree(pts);
    for (std::size_t i = 0; i < n; ++i) {
      ++queries;
      if (tree.knn_of(i, 10) != brute_knn(pts, pts[i], 10, i))
        return {false, "mismatch in set " + std::to_string(set) + " at point " + std::to_string(i)};
    }
    for (int q = 0; q < 50; ++q) {
      const Point2 p{rng.uniform(-20, 820), rng.uniform(-20, 470)};
      ++queries;
      if (tree.knn(p, 10) != brute_knn(pts, p, 10, static_cast<std::size_t>(-1)))
        return {false, "mismatch in set " + std::to_string(set) + " for a free query"};
    }
  }
  return {true, std::to_string(queries) + " queries over 200 sets identical"};
}

// --- 3: block statistics equal the quadratic reference -------------------------

Outcome block_oracle() {
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int w = 20 + static_cast<int>(rng.below(220)), h = 20 + static_cast<int>(rng.below(140));
    const int bs = 2 + static_cast<int>(rng.below(29));
    const double density = rng.uniform(0.005, 0.5);
    SparseDepthMap m(w, h);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (rng.bernoulli(density)) m[i] = rng.uniform(1.0, 60.0);
    const BlockStats got = block_stats(m, bs);
    for (int by = 0; by < got.rows; ++by)
      for (int bx = 0; bx < got.cols; ++bx) {
        std::vector<std::array<double, 3>> pts;
        for (int v = by * bs; v < std::min(h, (by + 1) * bs); ++v)
          for (int u = bx * bs; u < std::min(w, (bx + 1) * bs); ++u)
            if (m.at(u, v) != 0.0) pts.push_back({double(u), double(v), m.at(u, v)});
        const std::size_t k = got.index(bx, by);
        if ((got.valid[k] != 0) != !pts.empty()) return {false, "validity differs"};
        if (pts.empty()) continue;
        double sum = 0.0;
        for (const auto& p : pts) sum += p[2];
        const double mean = sum / pts.size();
        double g = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
          std::vector<std::pair<double, std::size_t>> order;
          for (std::size_t j = 0; j < pts.size(); ++j)
            if (j != i)
              order.push_back({std::pow(pts[i][0] - pts[j][0], 2) + std::pow(pts[i][1] - pts[j][1], 2), j});
          std::sort(order.begin(), order.end());
          for (std::size_t r = 0; r < std::min<std::size_t>(8, order.size()); ++r)
            g = std::max(g, std::abs(pts[i][2] - pts[order[r].second][2]));
        }
        g = std::min(g, 59.0);
        worst = std::max(worst, std::abs(got.dAvg[k] - mean) / mean);
        worst = std::max(worst, std::abs(got.gMax[k] - g) / std::max(g, 1e-300));
      }
  }
  return {worst < 1e-9, "max relative error " + fmt("%.3g", worst)};
}

// --- 4: masking recall --------------------------------------------------------

Outcome masking_recall() {
  Rng rng(4);
  std::size_t corrupted = 0, corrupted_zeroed = 0, clean = 0, clean_zeroed = 0;
  const double taus[] = {0.5, 1.0, 2.0};
  for (int trial = 0; trial < 100; ++trial) {
    const double tau = taus[trial % 3];
    SparseDepthMap raw(120, 80), aligned(120, 80);
    std::vector<int> kind(raw.size(), 0);  // 0 empty, 1 clean, 2 corrupted
    // multiples of 1/64 keep every difference exact, including |delta| = tau
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!rng.bernoulli(0.3)) continue;
      raw[i] = static_cast<double>(64 + 128 + rng.below(3000)) / 64.0;
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      const auto tau64 = static_cast<std::uint64_t>(tau * 64);
      if (rng.bernoulli(0.2)) {
        kind[i] = 2;
        aligned[i] = raw[i] + sign * static_cast<double>(tau64 + 1 + rng.below(128)) / 64.0;
        aligned[i] = std::max(aligned[i], 1.0 / 64.0);
        if (std::abs(aligned[i] - raw[i]) <= tau) aligned[i] = raw[i] + (tau + 1.0);
      } else {
        kind[i] = 1;
        aligned[i] = raw[i] + sign * static_cast<double>(rng.below(tau64 + 1)) / 64.0;
      }
    }
    const SparseDepthMap masked = apply_mask(aligned, discrepancy_map(raw, aligned), tau);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (kind[i] == 2) ++corrupted, corrupted_zeroed += masked[i] == 0.0;
      if (kind[i] == 1) ++clean, clean_zeroed += masked[i] == 0.0;
    }
  }
  const double recall = static_cast<double>(corrupted_zeroed) / corrupted;
  const double fp = static_cast<double>(clean_zeroed) / clean;
  return {recall == 1.0 && fp == 0.0, "corrupted zeroed " + fmt("%.4f", recall * 100) +
                                          "%, clean zeroed " + fmt("%.4f", fp * 100) + "%"};
}

// --- 5: gradient checks -------------------------------------------------------

Outcome gradient_checks() {
  double worst = 0.0;
  std::string worst_case;
  for (const auto& c : grad_cases::all_cases())
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      if (const double e = c.run(seed); e > worst) worst = e, worst_case = c.name;
  return {worst < 1e-3, "max relative error " + fmt("%.3g", worst) + " (" + worst_case + ")"};
}

// --- 6: training efficacy -----------------------------------------------------

Outcome training_efficacy() {
  const TrainedModels m = train_models(parse_pipeline_config(nlohmann::json::object()));
  const double ratio = m.sgdmTrace.back() / m.sgdmTrace.front();
  return {ratio <= 0.5 && m.inBoxAfter.meanAbsError < m.inBoxBefore.meanAbsError,
          "loss ratio " + fmt("%.4f", ratio) + ", in-box error " +
              fmt("%.5f", m.inBoxBefore.meanAbsError) + " -> " +
              fmt("%.5f", m.inBoxAfter.meanAbsError)};
}

// --- 7: ablation ordering -----------------------------------------------------

Outcome ablation_ordering() {
  const AblationResult r = run_ablation(parse_pipeline_config(nlohmann::json::object()));
  bool all = true;
  std::string failed;
  for (const AblationCheck& c : r.checks)
    if (!c.holds()) all = false, failed += " [" + c.name + ": " + fmt("%.5f", c.lhs) + " > " +
                                          fmt("%.5f", c.rhs) + "]";
  const double full = r.cell(true, true, PriorMode::kGroundTruth).meanAbsError;
  const double base = r.cell(false, false, PriorMode::kGroundTruth).meanAbsError;
  return {all, std::to_string(r.checks.size()) + " orderings, full " + fmt("%.5f", full) +
                   " vs baseline " + fmt("%.5f", base) + (all ? "" : ", failed:" + failed)};
}

// --- 8: loss closed forms -----------------------------------------------------

Outcome loss_closed_forms() {
  const int w = 16, h = 9;
  DepthDistribution pred{w, h, kNumBins, std::vector<double>(w * h * kNumBins, 1.0 / kNumBins)};
  Rng rng(8);
  SparseDepthMap target(w, h);
  for (std::size_t i = 0; i < target.size(); ++i)
    if (rng.bernoulli(0.6)) target[i] = rng.uniform(1.0, 60.0);
  const ValidSet valid = valid_from_depth(target);
  const FocalResult f = focal_loss(pred, target, valid, 2.0);
  const double expected = std::pow(1.0 - 1.0 / 118.0, 2) * std::log(118.0);
  const double err = std::abs(f.loss - expected);

  DepthDistribution rnd{w, h, kNumBins, {}};
  for (int i = 0; i < w * h; ++i) {
    std::vector<double> p(kNumBins);
    double s = 0.0;
    for (double& x : p) s += (x = rng.uniform(0.01, 1.0));
    for (double x : p) rnd.probs.push_back(x / s);
  }
  const FocalResult fr = focal_loss(rnd, target, valid, 2.0);
  const std::vector<double> ones(target.size(), 1.0);
  const bool equal = edge_critical_loss(fr.terms, ones, valid) == fr.loss;
  return {err < 1e-9 && equal, "uniform focal error " + fmt("%.3g", err) +
                                   (equal ? ", unit-weight edge loss equals focal exactly"
                                          : ", unit-weight edge loss differs")};
}

// --- 9: determinism -------------------------------------------------------------

std::string run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? "" : "command failed: " + args;
}

std::string compare_trees(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::vector<fs::path> names;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) names.push_back(fs::relative(e.path(), a));
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  if (names.size() != other) return "different file sets in " + a.filename().string();
  for (const fs::path& n : names) {
    if (!fs::exists(b / n)) return "missing " + n.string();
    if (io::read_text(a / n) != io::read_text(b / n)) return "bytes differ in " + n.string();
    ++files;
  }
  return "";
}

Outcome determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "prefusion_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const char* commands[] = {"simulate", "pipeline", "train", "ablate"};
  std::size_t files = 0;
  for (const char* c : commands) {
    for (const char* run : {"a", "b"}) {
      const fs::path out = root / run / c;
      if (auto e = run_cli(cli, std::string("--seed 3 ") + c + " --out \"" + out.string() + "\"");
          !e.empty())
        return {false, e};
    }
  }
  // pipeline again with the trained parameters, then render its maps
  const std::string params = "{\"headParams\": \"" + (root / "a/train/head_params.json").string() +
                             "\", \"sgdmParams\": \"" +
                             (root / "a/train/sgdm_params.json").string() + "\"}";
  io::write_text(root / "trained.json", params);
  for (const char* run : {"a", "b"}) {
    const fs::path out = root / run / "pipeline_trained";
    if (auto e = run_cli(cli, "--config \"" + (root / "trained.json").string() +
                                  "\" --seed 3 pipeline --out \"" + out.string() + "\"");
        !e.empty())
      return {false, e};
    for (const char* map : {"d_raw", "mask", "d_dense", "g_dense", "pred_depth"}) {
      const fs::path img = root / run / "render" / (std::string(map) + ".pgm");
      if (auto e = run_cli(cli, "render --in \"" + (out / (std::string(map) + ".fmap")).string() +
                                    "\" --out \"" + img.string() + "\"");
          !e.empty())
        return {false, e};
    }
  }
  if (auto e = compare_trees(root / "a", root / "b", files); !e.empty()) return {false, e};
  fs::remove_all(root);
  return {true, std::to_string(files) + " output files byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <prefusion cli>\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  struct Criterion {
    int id;
    const char* name;
    double limitSeconds;  // 0: no limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "boundary concentration", 30, boundary_concentration},
      {2, "kNN oracle equivalence", 10, knn_oracle},
      {3, "block statistics oracle", 10, block_oracle},
      {4, "masking recall", 0, masking_recall},
      {5, "gradient checks", 60, gradient_checks},
      {6, "training efficacy", 300, training_efficacy},
      {7, "ablation ordering", 600, ablation_ordering},
      {8, "loss closed forms", 0, loss_closed_forms},
      {9, "determinism", 0, [&] { return determinism(cli); }},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = c.limitSeconds <= 0 || secs < c.limitSeconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("criterion %d %-26s %s  %s; %.2f s%s\n", c.id, c.name, pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs,
                in_time ? "" : (" (limit " + fmt("%.0f", c.limitSeconds) + " s)").c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
