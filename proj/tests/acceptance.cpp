// One line per acceptance criterion; exit status 1 when any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "helpers.hpp"

using namespace hgi2p;
using namespace hgi2p::test;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Model default_model(int channels, double beta = kDefaultBeta) {
  return Model::identity(kDefaultMaxRegions, kDefaultMaxRegions, channels, beta);
}

std::vector<Scene> scenes(const SceneConfig& cfg, std::uint64_t first, int count) {
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(cfg, first + static_cast<std::uint64_t>(i)));
  return out;
}

// ------------------------------------------------------------------ 1

Outcome path_oracle() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst = 0.0;
  for (int g = 0; g < 100; ++g) {
    const int m = 1 + static_cast<int>(rng.index(4));
    const int n = 1 + static_cast<int>(rng.index(4));
    const HeteroGraph graph =
        HeteroGraph::from_vertices(random_matrix(rng, m, 3, 0.5), random_matrix(rng, n, 3, 0.5));
    const PathMatrices p = path_matrices(graph);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double e1 = 0, e2 = 0, e3 = 0;
        for (int a = 0; a < m; ++a) {
          e1 += graph.e_image(i, a) * graph.e_cross(a, j);
          for (int b = 0; b < n; ++b) e3 += graph.e_image(i, a) * graph.e_cross(a, b) * graph.e_cloud(b, j);
        }
        for (int b = 0; b < n; ++b) e2 += graph.e_cross(i, b) * graph.e_cloud(b, j);
        worst = std::max({worst, std::abs(p.e1(i, j) - e1), std::abs(p.e2(i, j) - e2), std::abs(p.e3(i, j) - e3)});
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && secs < 1.0, fmt("max abs error %.3g over 100 graphs, %.3f s", worst, secs)};
}

// ------------------------------------------------------------------ 2

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const Scene s = generate_scene(SceneConfig::toy(), seed);
    const GradientCheck r = check_gradients(perturbed_model(rng, 3, 3, 4), s, kDefaultLambda1);
    worst = std::max(worst, r.worst_relative);
    checked += r.checked;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          fmt("worst relative error %.3g over %zu coordinates, %.1f s", worst, checked, secs)};
}

// ------------------------------------------------------------------ 3

Outcome identity_pathways() {
  const Scene s = generate_scene(SceneConfig::clean(), 3);
  Rng rng(3);
  Model m = perturbed_model(rng, kDefaultMaxRegions, kDefaultMaxRegions, s.rs2d.channels(), 0.01);
  m.he.beta = 0.0;
  const ForwardResult fw = forward(m, s.rs2d, s.rs3d, s.k);
  const bool features = (fw.features.image.array() == s.rs2d.features().array()).all() &&
                        (fw.features.cloud.array() == s.rs3d.features().array()).all();

  const auto toy = scenes(SceneConfig::toy(), 0, 3);
  const Model start = perturbed_model(rng, 3, 3, 4);
  const TrainResult r = train(start, toy, {.epochs = 3, .lr = 0.0});
  bool params = true;
  for (std::size_t i = 0; i < start.matrices().size(); ++i)
    params = params && (r.model.matrices()[i]->array() == start.matrices()[i]->array()).all();

  const double e = edge_loss(s.gt_edges, s.gt_edges);
  return {features && params && e == 0.0,
          fmt("beta=0 features %s, lr=0 parameters %s, edge_loss(gt, gt) = %g", features ? "identical" : "changed",
              params ? "identical" : "changed", e)};
}

// ------------------------------------------------------------------ 4

Outcome normalization() {
  double row_err = 0.0, box_err = 0.0, softmax_err = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = generate_scene(SceneConfig::noisy(), 40 + seed);
    Rng rng(seed);
    const Model m = perturbed_model(rng, kDefaultMaxRegions, kDefaultMaxRegions, s.rs2d.channels(), 0.01);
    const EdgePrediction p = predict(m, s.rs2d, s.rs3d, s.k);
    for (Eigen::Index i = 0; i < p.e_hat.rows(); ++i) {
      const double sum = p.e_hat.row(i).sum();
      if (sum != 0.0) row_err = std::max(row_err, std::abs(sum - 1.0));
    }
    const PooledNeighbors pooled = pooled_neighbor_features(p.e_hat, p.graph.v_image, p.graph.v_cloud);
    for (Eigen::Index i = 0; i < p.e_hat.rows(); ++i) {
      for (Eigen::Index c = 0; c < p.graph.v_cloud.cols(); ++c) {
        double lo = 1e300, hi = -1e300;
        for (Eigen::Index j = 0; j < p.e_hat.cols(); ++j)
          if (p.e_hat(i, j) > 0) lo = std::min(lo, p.graph.v_cloud(j, c)), hi = std::max(hi, p.graph.v_cloud(j, c));
        if (lo > hi) continue;
        const double v = pooled.cloud_for_image(i, c);
        box_err = std::max({box_err, lo - v, v - hi});
      }
    }
    const Eigen::MatrixXd sm = softmax_rows(random_matrix(rng, 20, 30, 5.0));
    for (Eigen::Index r = 0; r < sm.rows(); ++r) softmax_err = std::max(softmax_err, std::abs(sm.row(r).sum() - 1.0));
  }
  return {row_err <= 1e-9 && box_err <= 1e-12 && softmax_err <= 1e-12,
          fmt("row sum error %.3g, box violation %.3g, softmax row error %.3g", row_err, box_err, softmax_err)};
}

// ------------------------------------------------------------------ 5

Outcome pnp_ransac() {
  const auto t0 = Clock::now();
  const Intrinsics k = test_camera();
  double rte = 0.0, rre = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Pose gt = random_pose(rng, 30, 0.5);
    const PnpResult clean = solve_pnp(exact_pairs(rng, gt, k, 12), k, {.seed = seed});
    rte = std::max(rte, pose_error(clean.pose, gt).rte);
    rre = std::max(rre, pose_error(clean.pose, gt).rre);

    auto pairs = exact_pairs(rng, gt, k, 14);
    for (int i = 0; i < 6; ++i) {  // 6 of 20 = 30 %
      auto bad = exact_pairs(rng, gt, k, 1).front();
      const Eigen::Vector2d truth = bad.pixel;
      while ((bad.pixel - truth).norm() < 20.0) bad.pixel = {rng.uniform(0, k.width), rng.uniform(0, k.height)};
      pairs.push_back(bad);
    }
    const PnpResult r = solve_pnp(pairs, k, {.threshold_px = 4.0, .seed = seed});
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const bool truth = i < 14;
      tp += r.inliers[i] && truth;
      fp += r.inliers[i] && !truth;
      fn += !r.inliers[i] && truth;
    }
  }
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double secs = seconds_since(t0);
  return {rte < 1e-6 && rre < 1e-5 && precision == 1.0 && recall == 1.0 && secs < 5.0,
          fmt("max rte %.3g m, max rre %.3g deg, outlier mask precision %.4f recall %.4f, %.2f s", rte, rre, precision,
              recall, secs)};
}

// ------------------------------------------------------------------ 6

Outcome pruning_efficacy() {
  double ir_before = 0.0, ir_one = 0.0, ir_both = 0.0;
  const int n = 20;
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const Scene s = generate_scene(SceneConfig::noisy(), 600 + static_cast<std::uint64_t>(i));
    const Model model = default_model(s.rs2d.channels());
    const ForwardResult fw = forward(model, s.rs2d, s.rs3d, s.k);
    const CorrespondenceSet cs = match_features(s.rs2d, s.rs3d, fw.features.image, fw.features.cloud, fw.edges.e_hat);
    const PruneConfig cfg;
    Pose seed;
    try {
      seed = seed_pose(fw.edges.e_hat, s.rs2d, s.rs3d, s.k, cfg.ransac);
    } catch (const Error&) {
      continue;
    }
    const PruneContext ctx = PruneContext::build(fw.edges.e_hat, s.rs2d, s.rs3d, seed, s.k);
    PruneConfig only_one = cfg;
    only_one.use_criterion_two = false;
    ir_before += inlier_ratio(cs, s);
    ir_one += inlier_ratio(hc_prune(cs, ctx, only_one), s);
    ir_both += inlier_ratio(hc_prune(cs, ctx, cfg), s);
    ++used;
  }
  ir_before /= used;
  ir_one /= used;
  ir_both /= used;
  return {used == n && ir_both >= ir_before && ir_both >= ir_one,
          fmt("mean IR before %.6f, criterion I %.6f, I+II %.6f over %d/%d scenes", ir_before, ir_one, ir_both, used, n)};
}

// ------------------------------------------------------------------ 7

struct EvalStats {
  double edge_l2 = 0.0;
  double rr = 0.0;
};

EvalStats evaluate(const Model& model, const std::vector<Scene>& set) {
  EvalStats out;
  std::vector<PoseError> errs;
  for (const Scene& s : set) {
    out.edge_l2 += edge_loss(predict(model, s.rs2d, s.rs3d, s.k).e_hat, s.gt_edges) / static_cast<double>(set.size());
    try {
      errs.push_back(pose_error(register_pair(model, s.rs2d, s.rs3d, s.k, {}).result.pose, s.gt_pose));
    } catch (const Error&) {
      errs.push_back({std::numeric_limits<double>::infinity(), 180.0});
    }
  }
  out.rr = registration_recall(errs, 0.05);
  return out;
}

Outcome end_to_end() {
  const auto train_set = scenes(SceneConfig::clean(), 100, 8);
  const auto held_clean = scenes(SceneConfig::clean(), 200, 8);
  const auto held_noisy = scenes(SceneConfig::noisy(), 300, 8);
  const Model init = default_model(train_set.front().rs2d.channels());

  const auto t0 = Clock::now();
  const TrainResult trained = train(init, train_set, {.epochs = 50});
  const double secs = seconds_since(t0);

  const EvalStats clean_init = evaluate(init, held_clean);
  const EvalStats clean_trained = evaluate(trained.model, held_clean);
  const EvalStats noisy_init = evaluate(init, held_noisy);
  const EvalStats noisy_trained = evaluate(trained.model, held_noisy);
  const bool a = clean_trained.edge_l2 < clean_init.edge_l2;
  const bool b = clean_trained.rr >= 0.9;
  const bool c = noisy_trained.rr >= noisy_init.rr;
  return {a && b && c && secs <= 120.0,
          fmt("train %.1f s; (a) held-out edge L2 %.5f -> %.5f %s; (b) clean RR@0.05 %.3f %s; (c) noisy RR %.3f "
              "(init %.3f) %s",
              secs, clean_init.edge_l2, clean_trained.edge_l2, a ? "ok" : "FAIL", clean_trained.rr, b ? "ok" : "FAIL",
              noisy_trained.rr, noisy_init.rr, c ? "ok" : "FAIL")};
}

// ------------------------------------------------------------------ 8

Outcome beta_sweep() {
  std::map<double, double> ir;
  const auto set = scenes(SceneConfig::noisy(), 700, 3);
  for (double beta : {0.0, 0.1, 0.5}) {
    double sum = 0.0;
    for (const Scene& s : set) {
      try {
        sum += inlier_ratio(register_pair(default_model(s.rs2d.channels(), beta), s.rs2d, s.rs3d, s.k, {}).correspondences, s);
      } catch (const Error&) {
      }
    }
    ir[beta] = sum / static_cast<double>(set.size());
  }
  return {ir[0.1] >= ir[0.5], fmt("mean IR beta=0 %.4f, beta=0.1 %.4f, beta=0.5 %.4f", ir[0.0], ir[0.1], ir[0.5])};
}

// ------------------------------------------------------------------ 9

int run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" HGI2P_CLI "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return out;
}

Outcome cli_determinism() {
  const std::vector<std::string> commands = {
      "gen --seed 5 --num-scenes 2 --noise-preset clean --out scenes",
      "train --scenes scenes --epochs 1 --seed 3 --out model.bin",
      "register --model model.bin --scene scenes/scene_0000.json --out reg.json",
      "register --model model.bin --scene scenes/scene_0001.json --no-prune --out reg_noprune.json",
      "eval --model model.bin --scenes scenes --plot --out report",
  };
  std::vector<std::map<std::string, std::string>> runs;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = fs::temp_directory_path() / ("hgi2p_acceptance_" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& c : commands)
      if (run(dir, c) != 0) return {false, "command failed: " + c};
    runs.push_back(tree(dir));
    fs::remove_all(dir);
  }
  return {runs[0] == runs[1], fmt("%zu output files from %zu commands, %s across two runs", runs[0].size(),
                                  commands.size(), runs[0] == runs[1] ? "byte-identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"path oracle", path_oracle},
      {"gradient check", gradient_check},
      {"identity pathways", identity_pathways},
      {"normalization and convexity", normalization},
      {"PnP and RANSAC", pnp_ransac},
      {"pruning efficacy", pruning_efficacy},
      {"end-to-end training", end_to_end},
      {"beta ablation direction", beta_sweep},
      {"CLI determinism", cli_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %zu %-28s %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
