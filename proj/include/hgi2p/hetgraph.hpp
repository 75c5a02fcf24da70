#pragma once

// Heterogeneous 2D/3D region graph: vertex features, Gaussian homogeneous
// edges, IoU ground-truth heterogeneous edges and their Gaussian initial guess.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

inline constexpr double kDefaultAlpha = 1.6;

enum class EdgeRole { GroundTruth, Initial, Predicted };

/// exp(-alpha * |a_i - b_j|^2) for every row pair.
inline Eigen::MatrixXd gaussian_affinity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double alpha) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be positive");
  if (a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "feature dimensions differ");
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) out(i, j) = std::exp(-alpha * (a.row(i) - b.row(j)).squaredNorm());
  return out;
}

/// Intra-modal adjacency; symmetric with an exact unit diagonal.
inline Eigen::MatrixXd build_homogeneous_edges(const Eigen::MatrixXd& v, double alpha) {
  Eigen::MatrixXd e = gaussian_affinity(v, v, alpha);
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    e(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) e(i, j) = e(j, i);
  }
  return e;
}

/// Cross-modal Gaussian affinity used to seed edge prediction.
inline Eigen::MatrixXd init_heterogeneous_edges(const Eigen::MatrixXd& v_image, const Eigen::MatrixXd& v_cloud,
                                                double alpha) {
  return gaussian_affinity(v_image, v_cloud, alpha);
}

/// Entry (i, j) is the IoU between the mask of 2D region i and the pixels
/// covered by 3D region j projected under the ground-truth pose.
inline Eigen::MatrixXd build_gt_heterogeneous_edges(const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                                                    const Pose& gt, const Intrinsics& k) {
  if (k.width != rs2d.width() || k.height != rs2d.height()) {
    throw Error(ErrorCode::ShapeMismatch, "intrinsics image size differs from region set");
  }
  std::vector<PixelSet> masks(static_cast<std::size_t>(rs2d.count()));
  for (int i = 0; i < rs2d.count(); ++i) masks[static_cast<std::size_t>(i)] = rs2d.mask(i);

  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(rs2d.count(), rs3d.count());
  for (int j = 0; j < rs3d.count(); ++j) {
    const PixelSet projected = project_region(rs3d, j, gt, k);
    if (projected.empty()) continue;
    for (int i = 0; i < rs2d.count(); ++i) e(i, j) = iou_2d(masks[static_cast<std::size_t>(i)], projected);
  }
  return e;
}

struct HeteroGraph {
  Eigen::MatrixXd v_image;  // M x c
  Eigen::MatrixXd v_cloud;  // N x c
  Eigen::MatrixXd e_image;  // M x M
  Eigen::MatrixXd e_cloud;  // N x N
  Eigen::MatrixXd e_cross;  // M x N
  EdgeRole cross_role = EdgeRole::Initial;
  double alpha = kDefaultAlpha;

  int m() const { return static_cast<int>(v_image.rows()); }
  int n() const { return static_cast<int>(v_cloud.rows()); }

  /// Graph from pooled vertex features with the Gaussian cross-modal initial guess.
  static HeteroGraph from_vertices(Eigen::MatrixXd v_image, Eigen::MatrixXd v_cloud, double alpha = kDefaultAlpha) {
    HeteroGraph g;
    g.alpha = alpha;
    g.e_image = build_homogeneous_edges(v_image, alpha);
    g.e_cloud = build_homogeneous_edges(v_cloud, alpha);
    g.e_cross = init_heterogeneous_edges(v_image, v_cloud, alpha);
    g.v_image = std::move(v_image);
    g.v_cloud = std::move(v_cloud);
    g.cross_role = EdgeRole::Initial;
    return g;
  }

  static HeteroGraph from_regions(const RegionSet2D& rs2d, const RegionSet3D& rs3d, double alpha = kDefaultAlpha) {
    return from_vertices(pool_region_features(rs2d), pool_region_features(rs3d), alpha);
  }

  HeteroGraph with_cross_edges(Eigen::MatrixXd e, EdgeRole role) const {
    if (e.rows() != e_cross.rows() || e.cols() != e_cross.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "cross edge matrix must be M x N");
    }
    HeteroGraph g = *this;
    g.e_cross = std::move(e);
    g.cross_role = role;
    return g;
  }
};

}  // namespace hgi2p
