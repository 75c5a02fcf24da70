#pragma once

// Pinhole camera, rigid transforms, RANSAC PnP and pose-error metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/random.hpp"

namespace hgi2p {

/// Points with camera-frame depth at or below this are invisible.
inline constexpr double kMinDepth = 1e-6;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 && cy < height;
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  /// Pixel i covers [i - 0.5, i + 0.5) under nearest rounding.
  bool contains(const Eigen::Vector2d& px) const {
    return px.x() >= -0.5 && px.x() < width - 0.5 && px.y() >= -0.5 && px.y() < height - 0.5;
  }

  /// Unit-depth ray through a pixel.
  Eigen::Vector3d unproject(const Eigen::Vector2d& px) const {
    return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
  }
};

/// Rigid transform mapping world (map) coordinates into the camera frame.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  /// (a * b)(x) == a(b(x)).
  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }

  Pose inverse() const {
    Eigen::Matrix3d rt = rotation.transpose();
    return {rt, -rt * translation};
  }

  bool is_valid(double tol = 1e-9) const {
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
  }
};

struct PoseError {
  double rte = 0.0;  // meters
  double rre = 0.0;  // degrees
};

/// Pixel coordinates of a camera-frame point, without image-bounds checks.
inline std::optional<Eigen::Vector2d> project_camera(const Eigen::Vector3d& pc, const Intrinsics& k) {
  if (!(pc.z() > kMinDepth)) return std::nullopt;
  return Eigen::Vector2d(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

/// Projection without the image-bounds test; absent only behind the near plane.
inline std::optional<Eigen::Vector2d> project_unbounded(const Eigen::Vector3d& point, const Pose& pose,
                                                        const Intrinsics& k) {
  return project_camera(pose.apply(point), k);
}

/// Projection of a world point; absent when behind the camera or outside the image.
inline std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& point, const Pose& pose, const Intrinsics& k) {
  auto px = project_unbounded(point, pose, k);
  if (!px || !k.contains(*px)) return std::nullopt;
  return px;
}

inline PoseError pose_error(const Pose& est, const Pose& gt) {
  PoseError err;
  err.rte = (est.translation - gt.translation).norm();
  const double c = std::clamp(((gt.rotation.transpose() * est.rotation).trace() - 1.0) / 2.0, -1.0, 1.0);
  err.rre = std::acos(c) * 180.0 / std::numbers::pi;
  return err;
}

inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

struct RansacConfig {
  int max_iterations = 1000;
  double threshold_px = 4.0;
  int min_consensus = 6;
  std::uint64_t seed = 0;
};

struct Correspondence2D3D {
  Eigen::Vector2d pixel;
  Eigen::Vector3d point;
};

struct PnpResult {
  Pose pose;
  std::vector<bool> inliers;
  int num_inliers = 0;
  double rms_px = 0.0;  // over inliers
};

namespace detail {

inline double squared_residual(const Correspondence2D3D& c, const Pose& pose, const Intrinsics& k) {
  auto px = project_unbounded(c.point, pose, k);
  if (!px) return std::numeric_limits<double>::infinity();
  return (*px - c.pixel).squaredNorm();
}

inline double total_cost(std::span<const Correspondence2D3D> corrs, const Pose& pose, const Intrinsics& k) {
  double cost = 0.0;
  for (const auto& c : corrs) cost += squared_residual(c, pose, k);
  return cost;
}

}  // namespace detail

/// Gauss-Newton on SE(3) minimizing the summed squared reprojection error.
/// Left-multiplicative axis-angle update; at most 50 iterations, stops once the
/// step norm drops below 1e-10 or no halving of the step lowers the cost.
inline Pose refine_pose(std::span<const Correspondence2D3D> corrs, const Intrinsics& k, Pose pose,
                        int max_iterations = 50, double step_tol = 1e-10) {
  double cost = detail::total_cost(corrs, pose, k);
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& c : corrs) {
      const Eigen::Vector3d pc = pose.apply(c.point);
      if (!(pc.z() > kMinDepth)) continue;
      const double iz = 1.0 / pc.z();
      const Eigen::Vector2d r(k.fx * pc.x() * iz + k.cx - c.pixel.x(), k.fy * pc.y() * iz + k.cy - c.pixel.y());
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dpoint;
      dpoint.leftCols<3>() << 0.0, pc.z(), -pc.y(), -pc.z(), 0.0, pc.x(), pc.y(), -pc.x(), 0.0;
      dpoint.rightCols<3>().setIdentity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dpoint;
      jtj.noalias() += j.transpose() * j;
      jtr.noalias() += j.transpose() * r;
    }
    const Eigen::Matrix<double, 6, 1> step = -jtj.ldlt().solve(jtr);
    if (!step.allFinite()) break;

    bool improved = false;
    Eigen::Matrix<double, 6, 1> trial = step;
    for (int halving = 0; halving < 12; ++halving) {
      const Eigen::Matrix3d dr = rotation_from_axis_angle(trial.head<3>());
      Pose candidate{dr * pose.rotation, dr * pose.translation + trial.tail<3>()};
      const double candidate_cost = detail::total_cost(corrs, candidate, k);
      if (candidate_cost <= cost) {
        pose = candidate;
        improved = candidate_cost < cost;
        cost = candidate_cost;
        break;
      }
      trial *= 0.5;
    }
    if (!improved || trial.norm() < step_tol) break;
  }
  // Re-orthonormalize against accumulated round-off.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(pose.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  pose.rotation = svd.matrixU() * svd.matrixV().transpose();
  return pose;
}

/// Linear pose from >= 6 correspondences (DLT on normalized image coordinates).
/// Returns nullopt for rank-deficient (e.g. coplanar) configurations.
inline std::optional<Pose> dlt_pose(std::span<const Correspondence2D3D> corrs, const Intrinsics& k) {
  const auto n = static_cast<Eigen::Index>(corrs.size());
  if (n < 6) return std::nullopt;

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& c : corrs) centroid += c.point;
  centroid /= static_cast<double>(n);
  double mean_dist = 0.0;
  for (const auto& c : corrs) mean_dist += (c.point - centroid).norm();
  mean_dist /= static_cast<double>(n);
  if (!(mean_dist > 1e-12)) return std::nullopt;
  const double scale = std::sqrt(3.0) / mean_dist;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = corrs[static_cast<std::size_t>(i)];
    const Eigen::Vector3d ray = k.unproject(c.pixel);
    Eigen::Vector4d x;
    x << (c.point - centroid) * scale, 1.0;
    // x_n * (p3 . X) - (p1 . X) = 0 ; y_n * (p3 . X) - (p2 . X) = 0
    a.block<1, 4>(2 * i, 0) = -x.transpose();
    a.block<1, 4>(2 * i, 8) = ray.x() * x.transpose();
    a.block<1, 4>(2 * i + 1, 4) = -x.transpose();
    a.block<1, 4>(2 * i + 1, 8) = ray.y() * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A well-posed problem has a one-dimensional null space.
  if (sv.size() < 11 || sv(10) < 1e-9 * sv(0)) return std::nullopt;
  const Eigen::VectorXd p = svd.matrixV().col(11);

  Eigen::Matrix3d m;
  m << p(0), p(1), p(2), p(4), p(5), p(6), p(8), p(9), p(10);
  Eigen::Vector3d b(p(3), p(7), p(11));
  // Undo the point normalization: P [X;1] = M s (X - c) + b.
  m *= scale;
  b -= m * centroid;
  if (m.determinant() < 0.0) {
    m = -m;
    b = -b;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double lambda = msvd.singularValues().mean();
  if (!(lambda > 0.0)) return std::nullopt;
  Pose pose{msvd.matrixU() * msvd.matrixV().transpose(), b / lambda};

  int in_front = 0;
  for (const auto& c : corrs) in_front += pose.apply(c.point).z() > kMinDepth ? 1 : 0;
  if (2 * in_front < n) return std::nullopt;
  return pose;
}

/// RANSAC over 6-point DLT hypotheses (each polished on its sample), then Gauss-Newton on the consensus set.
/// With 4 or 5 correspondences there is no minimal DLT sample; the pose is then
/// refined from identity, relying on the near-identity pose prior.
inline PnpResult solve_pnp(std::span<const Correspondence2D3D> corrs, const Intrinsics& k, const RansacConfig& cfg) {
  const std::size_t n = corrs.size();
  if (n < 4) {
    throw Error(ErrorCode::InsufficientCorrespondences, "PnP needs at least 4 correspondences, got " + std::to_string(n));
  }
  const double thr2 = cfg.threshold_px * cfg.threshold_px;

  auto consensus = [&](const Pose& pose, std::vector<bool>& mask) {
    int count = 0;
    mask.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (detail::squared_residual(corrs[i], pose, k) <= thr2) {
        mask[i] = true;
        ++count;
      }
    }
    return count;
  };
  auto gather = [&](const std::vector<bool>& mask) {
    std::vector<Correspondence2D3D> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) subset.push_back(corrs[i]);
    return subset;
  };

  PnpResult result;
  std::vector<bool> mask;
  const int needed = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.min_consensus, 4)), n));

  if (n < 6) {
    result.pose = refine_pose(corrs, k, Pose::identity());
  } else {
    Rng rng(cfg.seed);
    std::vector<std::size_t> indices(n);
    std::vector<Correspondence2D3D> sample(6);
    std::optional<Pose> best;
    int best_count = -1;
    int valid_hypotheses = 0;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      // Partial Fisher-Yates for 6 distinct indices.
      for (std::size_t i = 0; i < n; ++i) indices[i] = i;
      for (std::size_t s = 0; s < 6; ++s) {
        std::swap(indices[s], indices[s + rng.index(n - s)]);
        sample[s] = corrs[indices[s]];
      }
      auto hypothesis = dlt_pose(sample, k);
      if (!hypothesis) continue;
      ++valid_hypotheses;
      // Rigid polish of the linear fit.
      hypothesis = refine_pose(sample, k, *hypothesis, 5);
      const int count = consensus(*hypothesis, mask);
      if (count > best_count) {
        best_count = count;
        best = hypothesis;
      }
      if (best_count == static_cast<int>(n)) break;
    }
    if (valid_hypotheses == 0) {
      throw Error(ErrorCode::DegenerateConfiguration,
                  "no non-degenerate minimal sample in " + std::to_string(cfg.max_iterations) + " iterations");
    }
    result.pose = *best;
    consensus(result.pose, mask);
    // Two refinement rounds: the refined pose may recruit additional inliers.
    for (int round = 0; round < 2; ++round) {
      auto inlier_set = gather(mask);
      if (inlier_set.size() < 4) break;
      result.pose = refine_pose(inlier_set, k, result.pose);
      consensus(result.pose, mask);
    }
  }

  result.num_inliers = consensus(result.pose, mask);
  result.inliers = mask;
  if (result.num_inliers < needed) {
    throw Error(ErrorCode::NoConsensus, "best consensus " + std::to_string(result.num_inliers) + " below required " +
                                            std::to_string(needed));
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) sq += detail::squared_residual(corrs[i], result.pose, k);
  result.rms_px = std::sqrt(sq / std::max(1, result.num_inliers));
  return result;
}

}  // namespace hgi2p
