#pragma once

// A registration problem with ground truth: segmented image, segmented cloud,
// camera, pose, pixel/point pairs and IoU edges.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/hetgraph.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

struct GtPair {
  int pixel = -1;  // row-major pixel index
  int point = -1;  // point index
  bool operator==(const GtPair&) const = default;
};

struct Scene {
  std::uint64_t seed = 0;
  Intrinsics k;
  Pose gt_pose;
  RegionSet2D rs2d;
  RegionSet3D rs3d;
  std::vector<GtPair> gt_pairs;
  Eigen::MatrixXd gt_edges;
  /// Per-pixel camera depth of the rendered surface, 0 where nothing was hit.
  /// Empty when the scene carries no depth.
  std::vector<double> depth;

  void refresh_gt_edges() { gt_edges = build_gt_heterogeneous_edges(rs2d, rs3d, gt_pose, k); }

  /// Same scene with image region i renamed image_order[i] and cloud region j
  /// renamed cloud_order[j].
  Scene relabeled(std::span<const int> image_order, std::span<const int> cloud_order) const {
    if (std::ssize(image_order) != rs2d.count() || std::ssize(cloud_order) != rs3d.count()) {
      throw Error(ErrorCode::ShapeMismatch, "relabeling must cover every region");
    }
    Scene out = *this;
    auto l2 = rs2d.labels();
    for (int& l : l2)
      if (l != kUnlabeled) l = image_order[static_cast<std::size_t>(l)];
    auto l3 = rs3d.labels();
    for (int& l : l3)
      if (l != kUnlabeled) l = cloud_order[static_cast<std::size_t>(l)];
    out.rs2d = RegionSet2D(rs2d.width(), rs2d.height(), std::move(l2), rs2d.count(), rs2d.features());
    out.rs3d = RegionSet3D(rs3d.points(), std::move(l3), rs3d.count(), rs3d.features());
    for (int i = 0; i < rs2d.count(); ++i)
      for (int j = 0; j < rs3d.count(); ++j)
        out.gt_edges(image_order[static_cast<std::size_t>(i)], cloud_order[static_cast<std::size_t>(j)]) = gt_edges(i, j);
    return out;
  }

  /// World position of the surface seen through a pixel center under the
  /// ground-truth pose, when depth is known there.
  std::optional<Eigen::Vector3d> lift(int pixel_index) const {
    if (depth.empty() || pixel_index < 0 || static_cast<std::size_t>(pixel_index) >= depth.size()) return std::nullopt;
    const double z = depth[static_cast<std::size_t>(pixel_index)];
    if (!(z > 0.0)) return std::nullopt;
    const Eigen::Vector3d cam = k.unproject(rs2d.pixel_coords(pixel_index)) * z;
    return gt_pose.inverse().apply(cam);
  }
};

}  // namespace hgi2p
