#pragma once

// Synthetic registration scenes: tilted planar patches seen by a pinhole
// camera, with ray-cast segmentation and depth, sampled point clouds, feature
// signatures, ground-truth pairs and edges; plus the IR / RR metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/matchprune.hpp"
#include "hgi2p/random.hpp"
#include "hgi2p/regions.hpp"
#include "hgi2p/scene.hpp"

namespace hgi2p {

struct NoiseConfig {
  double feature_sigma = 0.0;      // per-channel Gaussian noise on every feature
  double point_jitter = 0.0;       // per-axis Gaussian noise on cloud points, meters
  double segment_dropout = 0.0;    // probability an image region's features are replaced by noise
  double pose_jitter_deg = 0.0;    // extra rotation of the true pose away from identity
  double pose_jitter_m = 0.0;      // extra translation of the true pose away from identity

  void validate() const {
    if (feature_sigma < 0.0 || point_jitter < 0.0 || segment_dropout < 0.0 || segment_dropout > 1.0 ||
        pose_jitter_deg < 0.0 || pose_jitter_m < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "noise parameters must be non-negative");
    }
  }
};

struct SceneConfig {
  int width = 128;
  int height = 96;
  double focal = 110.0;
  int min_patches = 6;
  int max_patches = 20;
  int min_visible_regions = 4;
  int channels = 16;
  double depth_min = 1.0;
  double depth_max = 9.0;
  double max_tilt_deg = 35.0;
  /// Patch half-size range as a fraction of the image width.
  double min_patch_size = 0.06;
  double max_patch_size = 0.16;
  /// Cloud samples form a grid of this spacing in projected pixels.
  double point_spacing_px = 0.8;
  /// Cloud made of the lifted visible pixel centers instead of a patch grid.
  bool lift_points_from_pixels = false;
  double gt_pair_radius_px = 0.5;
  double min_translation = 0.06;
  double max_translation = 0.08;
  double max_rotation_deg = 0.5;
  int max_attempts = 32;
  NoiseConfig noise;

  void validate() const {
    noise.validate();
    if (width <= 0 || height <= 0 || !(focal > 0.0) || channels < 4) {
      throw Error(ErrorCode::InvalidArgument, "image size, focal length or channel count");
    }
    if (min_patches < 1 || max_patches < min_patches || min_visible_regions < 1) {
      throw Error(ErrorCode::InvalidArgument, "patch counts");
    }
    if (!(depth_min > 0.0) || depth_max < depth_min || !(point_spacing_px > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "depth range or point spacing");
    }
  }

  /// Region counts this configuration can produce.
  int max_regions() const { return max_patches; }

  /// Every cloud point is a lifted pixel and features are noise-free.
  static SceneConfig exact() {
    SceneConfig c;
    c.lift_points_from_pixels = true;
    return c;
  }

  /// Independently sampled cloud, noise-free features.
  static SceneConfig clean() { return SceneConfig{}; }

  static SceneConfig noisy() {
    SceneConfig c;
    c.noise.feature_sigma = 0.08;
    c.noise.point_jitter = 0.005;
    c.noise.segment_dropout = 0.1;
    c.noise.pose_jitter_deg = 0.3;
    c.noise.pose_jitter_m = 0.02;
    return c;
  }

  /// Three patches, four channels, tiny image: gradient-check scale.
  static SceneConfig toy() {
    SceneConfig c;
    c.width = 24;
    c.height = 18;
    c.focal = 20.0;
    c.min_patches = c.max_patches = 3;
    c.min_visible_regions = 3;
    c.channels = 4;
    c.depth_min = 1.0;
    c.depth_max = 3.0;
    c.max_tilt_deg = 20.0;
    c.noise.feature_sigma = 0.05;
    return c;
  }

  static SceneConfig preset(const std::string& name) {
    if (name == "exact") return exact();
    if (name == "clean") return clean();
    if (name == "noisy") return noisy();
    if (name == "toy") return toy();
    throw Error(ErrorCode::InvalidArgument, "unknown noise preset '" + name + "' (exact, clean, noisy, toy)");
  }
};

namespace detail {

/// Planar patch defined by a pixel rectangle back-projected onto a plane.
struct Patch {
  double x0, y0, x1, y1;   // pixel rectangle, inclusive bounds
  Eigen::Vector3d center;  // camera frame
  Eigen::Vector3d normal;
  Eigen::Vector3d axis_u;  // in-plane frame for the positional code
  Eigen::Vector3d axis_v;

  bool covers(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }

  /// Camera-frame intersection of the ray through pixel (x, y) with the plane.
  Eigen::Vector3d hit(const Intrinsics& k, double x, double y) const {
    const Eigen::Vector3d d = k.unproject({x, y});
    return d * (normal.dot(center) / normal.dot(d));
  }

  Eigen::Vector2d local(const Eigen::Vector3d& cam) const {
    return {(cam - center).dot(axis_u), (cam - center).dot(axis_v)};
  }
};

inline Eigen::Matrix3d random_rotation(Rng& rng, double max_deg) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() == 0.0) axis = Eigen::Vector3d::UnitZ();
  const double angle = rng.uniform(0.0, max_deg) * std::numbers::pi / 180.0;
  return rotation_from_axis_angle(axis.normalized() * angle);
}

/// Region signature directions: orthonormal while they fit in the channel
/// count, then random unit vectors.
inline Eigen::MatrixXd region_signatures(Rng& rng, int count, int channels) {
  Eigen::MatrixXd g(channels, channels);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::MatrixXd sig(count, channels);
  for (int r = 0; r < count; ++r) {
    if (r < channels) {
      sig.row(r) = q.col(r).transpose();
    } else {
      for (int c = 0; c < channels; ++c) sig(r, c) = rng.normal();
      sig.row(r).normalize();
    }
  }
  return sig;
}

/// Constant-norm multi-frequency sinusoidal code of in-plane coordinates,
/// mapped into feature space by a fixed matrix with orthonormal columns.
struct PositionalCode {
  std::vector<double> freqs;
  Eigen::MatrixXd basis;  // channels x 4*freqs

  static PositionalCode make(Rng& rng, int channels) {
    PositionalCode pc;
    pc.freqs = channels >= 12 ? std::vector<double>{0.9, 3.5, 11.0} : std::vector<double>{2.0};
    const int dim = 4 * static_cast<int>(pc.freqs.size());
    Eigen::MatrixXd g(channels, channels);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    pc.basis = q.rightCols(std::min(dim, channels));
    return pc;
  }

  Eigen::RowVectorXd encode(const Eigen::Vector2d& uv) const {
    Eigen::VectorXd e(4 * static_cast<Eigen::Index>(freqs.size()));
    for (std::size_t f = 0; f < freqs.size(); ++f) {
      const auto i = static_cast<Eigen::Index>(4 * f);
      e(i) = std::sin(freqs[f] * uv.x());
      e(i + 1) = std::cos(freqs[f] * uv.x());
      e(i + 2) = std::sin(freqs[f] * uv.y());
      e(i + 3) = std::cos(freqs[f] * uv.y());
    }
    e /= std::sqrt(2.0 * static_cast<double>(freqs.size()));
    return (basis * e.head(basis.cols())).transpose();
  }
};

/// Patches of random size scattered over the image, ordered left to right by
/// center; overlaps are resolved by the z-buffer.
inline std::vector<Patch> layout_patches(Rng& rng, const SceneConfig& cfg, const Intrinsics& k) {
  const int count = cfg.min_patches + static_cast<int>(rng.index(static_cast<std::uint64_t>(
                                          cfg.max_patches - cfg.min_patches + 1)));
  const double w = cfg.width;
  const double h = cfg.height;
  std::vector<Patch> patches;
  for (int i = 0; i < count; ++i) {
    const double cx = rng.uniform(0.1 * w, 0.9 * w);
    const double cy = rng.uniform(0.1 * h, 0.9 * h);
    const double half = rng.uniform(cfg.min_patch_size, cfg.max_patch_size) * w;
    const double aspect = rng.uniform(0.6, 1.4);
    Patch p;
    p.x0 = cx - half * aspect;
    p.x1 = cx + half * aspect;
    p.y0 = cy - half / aspect;
    p.y1 = cy + half / aspect;
    const double depth = rng.uniform(cfg.depth_min, cfg.depth_max);
    p.center = k.unproject({cx, cy}) * depth;
    const Eigen::Matrix3d tilt = random_rotation(rng, cfg.max_tilt_deg);
    p.normal = tilt * Eigen::Vector3d(0.0, 0.0, -1.0);
    p.axis_u = (tilt * Eigen::Vector3d::UnitX()).normalized();
    p.axis_v = p.normal.cross(p.axis_u).normalized();
    patches.push_back(p);
  }
  std::ranges::stable_sort(patches, {}, [](const Patch& p) { return p.x0 + p.x1; });
  return patches;
}

}  // namespace detail

/// Deterministic scene for (cfg, seed). Throws RetryExhausted when no attempt
/// produces at least cfg.min_visible_regions visible patches.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const Intrinsics k{cfg.focal, cfg.focal, (cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0, cfg.width, cfg.height};
  const std::size_t num_pixels = static_cast<std::size_t>(cfg.width) * static_cast<std::size_t>(cfg.height);

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const auto patches = detail::layout_patches(rng, cfg, k);
    const int np = static_cast<int>(patches.size());

    // Ray-cast z-buffer.
    std::vector<int> owner(num_pixels, kUnlabeled);
    std::vector<double> depth(num_pixels, 0.0);
    std::vector<int> visible(static_cast<std::size_t>(np), 0);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cfg.width) + static_cast<std::size_t>(x);
        double best = std::numeric_limits<double>::infinity();
        for (int p = 0; p < np; ++p) {
          const auto& patch = patches[static_cast<std::size_t>(p)];
          if (!patch.covers(x, y)) continue;
          const double z = patch.hit(k, x, y).z();
          if (z > kMinDepth && z < best) {
            best = z;
            owner[pix] = p;
          }
        }
        if (owner[pix] != kUnlabeled) {
          depth[pix] = best;
          ++visible[static_cast<std::size_t>(owner[pix])];
        }
      }
    }

    // Image regions are the visible patches, in patch order.
    std::vector<int> region_of_patch(static_cast<std::size_t>(np), kUnlabeled);
    int m = 0;
    for (int p = 0; p < np; ++p)
      if (visible[static_cast<std::size_t>(p)] > 0) region_of_patch[static_cast<std::size_t>(p)] = m++;
    if (m < cfg.min_visible_regions) continue;

    Scene scene;
    scene.seed = seed;
    scene.k = k;
    const Eigen::Matrix3d rot = detail::random_rotation(rng, cfg.max_rotation_deg);
    Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d trans = dir.normalized() * rng.uniform(cfg.min_translation, cfg.max_translation);
    Pose gt{rot, trans};
    if (cfg.noise.pose_jitter_deg > 0.0 || cfg.noise.pose_jitter_m > 0.0) {
      const Eigen::Matrix3d jr = detail::random_rotation(rng, cfg.noise.pose_jitter_deg);
      const Eigen::Vector3d jt(rng.normal(0.0, cfg.noise.pose_jitter_m), rng.normal(0.0, cfg.noise.pose_jitter_m),
                               rng.normal(0.0, cfg.noise.pose_jitter_m));
      gt = Pose{jr, jt} * gt;
    }
    scene.gt_pose = gt;
    const Pose cam_to_world = gt.inverse();

    const auto signatures = detail::region_signatures(rng, np, cfg.channels);
    const auto code = detail::PositionalCode::make(rng, cfg.channels);
    auto feature = [&](int patch, const Eigen::Vector3d& cam) -> Eigen::RowVectorXd {
      const auto& pt = patches[static_cast<std::size_t>(patch)];
      return signatures.row(patch) + code.encode(pt.local(cam));
    };

    // Cloud: camera-frame samples per patch, kept with their patch id.
    std::vector<Eigen::Vector3d> cam_points;
    std::vector<int> point_patch;
    if (cfg.lift_points_from_pixels) {
      for (std::size_t pix = 0; pix < num_pixels; ++pix) {
        if (owner[pix] == kUnlabeled) continue;
        const double x = static_cast<double>(pix % static_cast<std::size_t>(cfg.width));
        const double y = static_cast<double>(pix / static_cast<std::size_t>(cfg.width));
        cam_points.push_back(k.unproject({x, y}) * depth[pix]);
        point_patch.push_back(owner[pix]);
      }
    } else {
      const double s = cfg.point_spacing_px;
      for (int p = 0; p < np; ++p) {
        const auto& patch = patches[static_cast<std::size_t>(p)];
        const double ox = rng.uniform(0.0, s);
        const double oy = rng.uniform(0.0, s);
        for (double y = patch.y0 + oy; y <= patch.y1; y += s) {
          for (double x = patch.x0 + ox; x <= patch.x1; x += s) {
            cam_points.push_back(patch.hit(k, x, y));
            point_patch.push_back(p);
          }
        }
      }
    }

    // Cloud regions are the patches that contributed points, in patch order.
    std::vector<int> cloud_region_of_patch(static_cast<std::size_t>(np), kUnlabeled);
    int n = 0;
    {
      std::vector<bool> used(static_cast<std::size_t>(np), false);
      for (int p : point_patch) used[static_cast<std::size_t>(p)] = true;
      for (int p = 0; p < np; ++p)
        if (used[static_cast<std::size_t>(p)]) cloud_region_of_patch[static_cast<std::size_t>(p)] = n++;
    }

    std::vector<Eigen::Vector3d> points(cam_points.size());
    std::vector<int> point_labels(cam_points.size());
    Eigen::MatrixXd point_features(static_cast<Eigen::Index>(cam_points.size()), cfg.channels);
    for (std::size_t i = 0; i < cam_points.size(); ++i) {
      const int p = point_patch[i];
      point_features.row(static_cast<Eigen::Index>(i)) = feature(p, cam_points[i]);
      Eigen::Vector3d w = cam_to_world.apply(cam_points[i]);
      if (cfg.noise.point_jitter > 0.0) {
        w += Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * cfg.noise.point_jitter;
      }
      points[i] = w;
      point_labels[i] = cloud_region_of_patch[static_cast<std::size_t>(p)];
    }

    std::vector<int> pixel_labels(num_pixels, kUnlabeled);
    Eigen::MatrixXd pixel_features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_pixels), cfg.channels);
    for (std::size_t pix = 0; pix < num_pixels; ++pix) {
      const int p = owner[pix];
      if (p == kUnlabeled) continue;
      pixel_labels[pix] = region_of_patch[static_cast<std::size_t>(p)];
      const double x = static_cast<double>(pix % static_cast<std::size_t>(cfg.width));
      const double y = static_cast<double>(pix / static_cast<std::size_t>(cfg.width));
      pixel_features.row(static_cast<Eigen::Index>(pix)) = feature(p, k.unproject({x, y}) * depth[pix]);
    }

    if (cfg.noise.feature_sigma > 0.0) {
      for (Eigen::Index i = 0; i < pixel_features.size(); ++i) pixel_features.data()[i] += rng.normal(0.0, cfg.noise.feature_sigma);
      for (Eigen::Index i = 0; i < point_features.size(); ++i) point_features.data()[i] += rng.normal(0.0, cfg.noise.feature_sigma);
    }
    if (cfg.noise.segment_dropout > 0.0) {
      for (int r = 0; r < m; ++r) {
        if (!rng.bernoulli(cfg.noise.segment_dropout)) continue;
        for (std::size_t pix = 0; pix < num_pixels; ++pix) {
          if (pixel_labels[pix] != r) continue;
          for (int c = 0; c < cfg.channels; ++c) pixel_features(static_cast<Eigen::Index>(pix), c) = rng.normal(0.0, 0.5);
        }
      }
    }

    // Ground-truth pairs: the nearest visible-surface point within the radius of each pixel center.
    std::vector<double> best_dist(num_pixels, std::numeric_limits<double>::infinity());
    std::vector<int> best_point(num_pixels, -1);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto px = project(points[i], gt, k);
      if (!px) continue;
      const long x = std::lround(px->x());
      const long y = std::lround(px->y());
      if (x < 0 || y < 0 || x >= cfg.width || y >= cfg.height) continue;
      const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cfg.width) + static_cast<std::size_t>(x);
      if (owner[pix] != point_patch[i]) continue;
      const double dist = (*px - Eigen::Vector2d(static_cast<double>(x), static_cast<double>(y))).norm();
      if (dist > cfg.gt_pair_radius_px || dist >= best_dist[pix]) continue;
      best_dist[pix] = dist;
      best_point[pix] = static_cast<int>(i);
    }
    for (std::size_t pix = 0; pix < num_pixels; ++pix)
      if (best_point[pix] >= 0) scene.gt_pairs.push_back({static_cast<int>(pix), best_point[pix]});

    scene.rs2d = RegionSet2D(cfg.width, cfg.height, std::move(pixel_labels), m, std::move(pixel_features));
    scene.rs3d = RegionSet3D(std::move(points), std::move(point_labels), n, std::move(point_features));
    scene.depth = std::move(depth);
    scene.refresh_gt_edges();
    return scene;
  }
  throw Error(ErrorCode::RetryExhausted, "no layout with " + std::to_string(cfg.min_visible_regions) +
                                             " visible regions after " + std::to_string(cfg.max_attempts) +
                                             " attempts (seed " + std::to_string(seed) + ")");
}

inline constexpr double kDefaultInlierRadius = 0.05;

/// Fraction of correspondences whose point lies within tau_in of the surface
/// point lifted from the pixel under the true pose. Pruned correspondences are
/// skipped unless include_pruned is set; an empty set scores 0.
inline double inlier_ratio(const CorrespondenceSet& cs, const Scene& scene, double tau_in = kDefaultInlierRadius,
                           bool include_pruned = false) {
  std::size_t total = 0;
  std::size_t good = 0;
  for (const auto& c : cs) {
    if (!include_pruned && c.flag == InlierFlag::Pruned) continue;
    ++total;
    const int pix = c.pixel_index >= 0 ? c.pixel_index : scene.rs2d.pixel_at(c.pixel);
    const auto lifted = scene.lift(pix);
    if (lifted && (*lifted - c.point).norm() <= tau_in) ++good;
  }
  return total == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(total);
}

/// Fraction of results with rte <= tau_rr; 0 for an empty list.
inline double registration_recall(std::span<const PoseError> results, double tau_rr) {
  if (results.empty()) return 0.0;
  const auto hits = std::count_if(results.begin(), results.end(), [&](const PoseError& e) { return e.rte <= tau_rr; });
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

}  // namespace hgi2p
