#pragma once

// Registration of one segmented image against one segmented cloud: edges,
// adapted features, matches, seed pose, pruning, final pose.

#include <Eigen/Dense>

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/matchprune.hpp"
#include "hgi2p/model.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

struct RegisterOptions {
  bool prune = true;
  int topk = kDefaultTopK;
  PruneConfig prune_cfg;
  RansacConfig final_ransac;
};

struct StageTiming {
  std::string stage;
  double milliseconds = 0.0;
};

struct Registration {
  Eigen::MatrixXd e_hat;
  CorrespondenceSet correspondences;
  bool seeded = false;
  Pose seed;
  PnpResult result;
  std::vector<StageTiming> timings;
};

/// Error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), "stage '" + stage + "': " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

template <typename F>
auto timed_stage(std::vector<StageTiming>& timings, const char* name, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&] {
    const std::chrono::duration<double, std::milli> d = std::chrono::steady_clock::now() - start;
    timings.push_back({name, d.count()});
  };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      finish();
    } else {
      auto r = f();
      finish();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

}  // namespace detail

/// Runs the pipeline. `edge_override`, when given, replaces the predicted edges
/// (rows are L1-normalized first).
inline Registration register_pair(const Model& model, const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                                  const Intrinsics& k, const RegisterOptions& opt,
                                  const Eigen::MatrixXd* edge_override = nullptr) {
  Registration out;
  auto& t = out.timings;

  const EdgePrediction pred = detail::timed_stage(t, "edges", [&] {
    EdgePrediction p = predict(model, rs2d, rs3d, k);
    if (edge_override != nullptr) {
      if (edge_override->rows() != p.e_hat.rows() || edge_override->cols() != p.e_hat.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "edge override must be M x N");
      }
      p.e_hat = clamp_mask_normalize(*edge_override, Eigen::MatrixXd::Ones(p.e_hat.rows(), p.e_hat.cols()));
    }
    return p;
  });
  out.e_hat = pred.e_hat;

  const AdaptedFeatures feats = detail::timed_stage(t, "adapt", [&] {
    return adapt_features(rs2d, rs3d, pred.e_hat, pred.graph.v_image, pred.graph.v_cloud, model.he);
  });

  out.correspondences = detail::timed_stage(
      t, "match", [&] { return match_features(rs2d, rs3d, feats.image, feats.cloud, pred.e_hat, opt.topk); });

  if (opt.prune) {
    out.seed = detail::timed_stage(t, "seed", [&] { return seed_pose(pred.e_hat, rs2d, rs3d, k, opt.prune_cfg.ransac); });
    out.seeded = true;
    out.correspondences = detail::timed_stage(t, "prune", [&] {
      return hc_prune(std::move(out.correspondences), PruneContext::build(pred.e_hat, rs2d, rs3d, out.seed, k),
                      opt.prune_cfg);
    });
  }

  out.result = detail::timed_stage(t, "pose", [&] { return final_pose(out.correspondences, k, opt.final_ransac); });
  return out;
}

}  // namespace hgi2p
