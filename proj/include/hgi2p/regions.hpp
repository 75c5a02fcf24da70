#pragma once

// Region-partitioned images and point clouds.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"

namespace hgi2p {

/// Label of elements that belong to no region (unsegmented background).
inline constexpr int kUnlabeled = -1;

/// Sorted, duplicate-free row-major pixel indices (y * width + x).
using PixelSet = std::vector<std::int32_t>;

namespace detail {

inline std::vector<std::vector<int>> group_members(const std::vector<int>& labels, int count,
                                                   const char* what) {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l == kUnlabeled) continue;
    if (l < 0 || l >= count) {
      throw Error(ErrorCode::InvalidArgument,
                  std::string(what) + " label " + std::to_string(l) + " outside [0," + std::to_string(count) + ")");
    }
    members[static_cast<std::size_t>(l)].push_back(static_cast<int>(i));
  }
  for (int r = 0; r < count; ++r) {
    if (members[static_cast<std::size_t>(r)].empty()) {
      throw Error(ErrorCode::InvalidArgument, std::string(what) + " region " + std::to_string(r) + " is empty");
    }
  }
  return members;
}

}  // namespace detail

/// Image partitioned into `count()` labeled regions plus a per-pixel feature map.
class RegionSet2D {
 public:
  RegionSet2D() = default;

  /// `labels` is row-major (width*height); `features` has one row per pixel.
  RegionSet2D(int width, int height, std::vector<int> labels, int count, Eigen::MatrixXd features)
      : width_(width), height_(height), count_(count), labels_(std::move(labels)), features_(std::move(features)) {
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
    const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (labels_.size() != n) throw Error(ErrorCode::ShapeMismatch, "label map size != width*height");
    if (static_cast<std::size_t>(features_.rows()) != n) {
      throw Error(ErrorCode::ShapeMismatch, "pixel feature rows != width*height");
    }
    members_ = detail::group_members(labels_, count_, "pixel");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int count() const { return count_; }
  int channels() const { return static_cast<int>(features_.cols()); }
  std::size_t size() const { return labels_.size(); }
  const std::vector<int>& labels() const { return labels_; }
  int label(int pixel_index) const { return labels_[static_cast<std::size_t>(pixel_index)]; }
  const Eigen::MatrixXd& features() const { return features_; }
  const std::vector<int>& members(int region) const { return members_[static_cast<std::size_t>(region)]; }

  Eigen::Vector2d pixel_coords(int pixel_index) const {
    return {static_cast<double>(pixel_index % width_), static_cast<double>(pixel_index / width_)};
  }

  /// Index of the pixel containing `px` (nearest-pixel rounding), or -1 when outside.
  int pixel_at(const Eigen::Vector2d& px) const {
    const long x = std::lround(px.x());
    const long y = std::lround(px.y());
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return -1;
    return static_cast<int>(y * width_ + x);
  }

  PixelSet mask(int region) const {
    const auto& m = members(region);
    return PixelSet(m.begin(), m.end());
  }

  /// Same partition with a replaced feature map (used after feature refinement).
  RegionSet2D with_features(Eigen::MatrixXd features) const {
    RegionSet2D copy = *this;
    if (features.rows() != features_.rows()) throw Error(ErrorCode::ShapeMismatch, "feature rows mismatch");
    copy.features_ = std::move(features);
    return copy;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int count_ = 0;
  std::vector<int> labels_;
  Eigen::MatrixXd features_;
  std::vector<std::vector<int>> members_;
};

/// Point cloud partitioned into `count()` labeled regions plus per-point features.
class RegionSet3D {
 public:
  RegionSet3D() = default;

  RegionSet3D(std::vector<Eigen::Vector3d> points, std::vector<int> labels, int count, Eigen::MatrixXd features)
      : count_(count), points_(std::move(points)), labels_(std::move(labels)), features_(std::move(features)) {
    if (labels_.size() != points_.size()) throw Error(ErrorCode::ShapeMismatch, "point label count != point count");
    if (static_cast<std::size_t>(features_.rows()) != points_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "point feature rows != point count");
    }
    members_ = detail::group_members(labels_, count_, "point");
  }

  int count() const { return count_; }
  int channels() const { return static_cast<int>(features_.cols()); }
  std::size_t size() const { return points_.size(); }
  const std::vector<Eigen::Vector3d>& points() const { return points_; }
  const Eigen::Vector3d& point(int index) const { return points_[static_cast<std::size_t>(index)]; }
  const std::vector<int>& labels() const { return labels_; }
  int label(int point_index) const { return labels_[static_cast<std::size_t>(point_index)]; }
  const Eigen::MatrixXd& features() const { return features_; }
  const std::vector<int>& members(int region) const { return members_[static_cast<std::size_t>(region)]; }

  RegionSet3D with_features(Eigen::MatrixXd features) const {
    RegionSet3D copy = *this;
    if (features.rows() != features_.rows()) throw Error(ErrorCode::ShapeMismatch, "feature rows mismatch");
    copy.features_ = std::move(features);
    return copy;
  }

 private:
  int count_ = 0;
  std::vector<Eigen::Vector3d> points_;
  std::vector<int> labels_;
  Eigen::MatrixXd features_;
  std::vector<std::vector<int>> members_;
};

/// Mean feature of each region: one row per region.
template <typename RegionSet>
Eigen::MatrixXd pool_region_features(const RegionSet& rs) {
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(rs.count(), rs.channels());
  for (int r = 0; r < rs.count(); ++r) {
    const auto& m = rs.members(r);
    for (int e : m) pooled.row(r) += rs.features().row(e);
    pooled.row(r) /= static_cast<double>(m.size());
  }
  return pooled;
}

/// Mean pixel coordinate (x, y) of each region.
inline Eigen::MatrixXd region_centers(const RegionSet2D& rs) {
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(rs.count(), 2);
  for (int r = 0; r < rs.count(); ++r) {
    const auto& m = rs.members(r);
    for (int p : m) centers.row(r) += rs.pixel_coords(p).transpose();
    centers.row(r) /= static_cast<double>(m.size());
  }
  return centers;
}

/// Mean 3D position of each region.
inline Eigen::MatrixXd region_centers(const RegionSet3D& rs) {
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(rs.count(), 3);
  for (int r = 0; r < rs.count(); ++r) {
    const auto& m = rs.members(r);
    for (int p : m) centers.row(r) += rs.point(p).transpose();
    centers.row(r) /= static_cast<double>(m.size());
  }
  return centers;
}

/// |A ∩ B| / |A ∪ B| over sorted pixel sets; 0 when both are empty.
inline double iou_2d(const PixelSet& a, const PixelSet& b) {
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Pixels hit by the nearest-pixel rounding of every visible point of a region.
inline PixelSet project_region(const RegionSet3D& rs, int region, const Pose& pose, const Intrinsics& k) {
  PixelSet out;
  for (int p : rs.members(region)) {
    auto px = project(rs.point(p), pose, k);
    if (!px) continue;
    const long x = std::lround(px->x());
    const long y = std::lround(px->y());
    if (x < 0 || y < 0 || x >= k.width || y >= k.height) continue;
    out.push_back(static_cast<std::int32_t>(y * k.width + x));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace hgi2p
