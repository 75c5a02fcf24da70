#pragma once

// Correspondence generation from refined features, and graph-consistency pruning
// seeded by a region-center PnP pose.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/headapting.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

enum class InlierFlag { Unknown, Kept, Pruned };

struct Correspondence {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  int pixel_index = -1;  // row-major index into the image, -1 if not from a region set
  int point_index = -1;  // index into the point cloud
  double score = 0.0;    // cosine similarity of the matched features
  InlierFlag flag = InlierFlag::Unknown;
};

using CorrespondenceSet = std::vector<Correspondence>;

inline constexpr int kDefaultTopK = 8;
inline constexpr double kDefaultDeltaRej = 15.0;
inline constexpr double kDefaultKeepFraction = 0.85;

struct PruneConfig {
  double delta_rej = kDefaultDeltaRej;
  double keep_fraction = kDefaultKeepFraction;
  /// Criterion I treats region k as adjacent to i when Ê_ik is positive and at
  /// least this fraction of the largest edge in row i (or column k).
  double adjacency_ratio = 0.5;
  bool use_criterion_one = true;
  bool use_criterion_two = true;
  /// Seed-pose RANSAC over region centers. Centers of partly hidden regions
  /// disagree by several pixels, so the threshold matches delta_rej.
  RansacConfig ransac{.threshold_px = kDefaultDeltaRej};
};

namespace detail {

inline Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

/// Up to `topk` cloud regions with the largest positive edges in row i.
inline std::vector<int> top_neighbors(const Eigen::MatrixXd& e_hat, Eigen::Index i, int topk) {
  std::vector<int> nb;
  for (Eigen::Index j = 0; j < e_hat.cols(); ++j)
    if (e_hat(i, j) > kNeighborEps) nb.push_back(static_cast<int>(j));
  std::stable_sort(nb.begin(), nb.end(), [&](int a, int b) { return e_hat(i, a) > e_hat(i, b); });
  if (static_cast<int>(nb.size()) > topk) nb.resize(static_cast<std::size_t>(topk));
  return nb;
}

}  // namespace detail

/// Mutual nearest neighbors (cosine similarity) between the pixels of image
/// region i and the points of cloud region j, for the `topk` strongest edges of
/// every image region. A pixel matched in several pairs keeps its best match.
/// Output is ordered by pixel index.
inline CorrespondenceSet match_features(const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                                        const Eigen::MatrixXd& g_image, const Eigen::MatrixXd& g_cloud,
                                        const Eigen::MatrixXd& e_hat, int topk = kDefaultTopK) {
  if (e_hat.rows() != rs2d.count() || e_hat.cols() != rs3d.count()) {
    throw Error(ErrorCode::ShapeMismatch, "edge matrix must be M x N");
  }
  const Eigen::MatrixXd fi = detail::normalized_rows(g_image);
  const Eigen::MatrixXd fp = detail::normalized_rows(g_cloud);

  std::vector<Correspondence> best(rs2d.size());
  std::vector<bool> has(rs2d.size(), false);
  bool any_pair = false;
  for (int i = 0; i < rs2d.count(); ++i) {
    const auto& pixels = rs2d.members(i);
    const Eigen::MatrixXd a = fi(pixels, Eigen::all);
    for (int j : detail::top_neighbors(e_hat, i, topk)) {
      any_pair = true;
      const auto& points = rs3d.members(j);
      const Eigen::MatrixXd sim = a * fp(points, Eigen::all).transpose();
      std::vector<Eigen::Index> nn_point(pixels.size());
      std::vector<Eigen::Index> nn_pixel(points.size());
      for (Eigen::Index u = 0; u < sim.rows(); ++u) sim.row(u).maxCoeff(&nn_point[static_cast<std::size_t>(u)]);
      for (Eigen::Index q = 0; q < sim.cols(); ++q) sim.col(q).maxCoeff(&nn_pixel[static_cast<std::size_t>(q)]);
      for (Eigen::Index u = 0; u < sim.rows(); ++u) {
        const Eigen::Index q = nn_point[static_cast<std::size_t>(u)];
        if (nn_pixel[static_cast<std::size_t>(q)] != u) continue;
        const int pix = pixels[static_cast<std::size_t>(u)];
        const double score = sim(u, q);
        auto& slot = best[static_cast<std::size_t>(pix)];
        if (has[static_cast<std::size_t>(pix)] && slot.score >= score) continue;
        has[static_cast<std::size_t>(pix)] = true;
        slot.pixel = rs2d.pixel_coords(pix);
        slot.pixel_index = pix;
        slot.point_index = points[static_cast<std::size_t>(q)];
        slot.point = rs3d.point(slot.point_index);
        slot.score = score;
      }
    }
  }
  if (!any_pair) throw Error(ErrorCode::EmptyMatch, "no region pair with edge weight above threshold");

  CorrespondenceSet out;
  for (std::size_t p = 0; p < best.size(); ++p)
    if (has[p]) out.push_back(best[p]);
  return out;
}

/// Initial pose from region centers: every (2D center i, 3D center k) pair with
/// a positive edge, duplicates collapsed, solved by RANSAC PnP. Needs at least
/// four distinct centers on each side.
inline Pose seed_pose(const Eigen::MatrixXd& e_hat, const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                      const Intrinsics& k, const RansacConfig& ransac) {
  const Eigen::MatrixXd c2 = region_centers(rs2d);
  const Eigen::MatrixXd c3 = region_centers(rs3d);
  std::vector<Correspondence2D3D> pairs;
  for (Eigen::Index i = 0; i < e_hat.rows(); ++i) {
    for (Eigen::Index j = 0; j < e_hat.cols(); ++j) {
      if (!(e_hat(i, j) > kNeighborEps)) continue;
      Correspondence2D3D c{c2.row(i).transpose(), c3.row(j).transpose()};
      const bool dup = std::any_of(pairs.begin(), pairs.end(), [&](const Correspondence2D3D& o) {
        return o.pixel == c.pixel && o.point == c.point;
      });
      if (!dup) pairs.push_back(c);
    }
  }
  std::vector<Eigen::Vector2d> pixels;
  std::vector<Eigen::Vector3d> points;
  for (const auto& c : pairs) {
    if (std::find(pixels.begin(), pixels.end(), c.pixel) == pixels.end()) pixels.push_back(c.pixel);
    if (std::find(points.begin(), points.end(), c.point) == points.end()) points.push_back(c.point);
  }
  if (pixels.size() < 4 || points.size() < 4) {
    throw Error(ErrorCode::InsufficientCorrespondences,
                "center seeding needs 4 distinct image and cloud centers, got " + std::to_string(pixels.size()) +
                    " and " + std::to_string(points.size()));
  }
  return solve_pnp(pairs, k, ransac).pose;
}

/// Precomputed per-graph quantities shared by both pruning criteria.
struct PruneContext {
  const RegionSet2D* rs2d = nullptr;
  const RegionSet3D* rs3d = nullptr;
  Eigen::MatrixXd e_hat;
  Pose seed;
  Intrinsics k;
  Eigen::MatrixXd centers_2d;  // M x 2
  Eigen::MatrixXd q_bar;       // M x 2, edge-weighted projected cloud centers
  std::vector<bool> q_valid;   // false where row m has no usable edge
  Eigen::VectorXd row_max;
  Eigen::VectorXd col_max;

  static PruneContext build(const Eigen::MatrixXd& e_hat, const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                            const Pose& seed, const Intrinsics& k) {
    PruneContext ctx;
    ctx.rs2d = &rs2d;
    ctx.rs3d = &rs3d;
    ctx.e_hat = e_hat;
    ctx.seed = seed;
    ctx.k = k;
    ctx.centers_2d = region_centers(rs2d);
    const Eigen::MatrixXd c3 = region_centers(rs3d);
    std::vector<std::optional<Eigen::Vector2d>> proj(static_cast<std::size_t>(rs3d.count()));
    for (int n = 0; n < rs3d.count(); ++n) proj[static_cast<std::size_t>(n)] = project_unbounded(c3.row(n).transpose(), seed, k);

    ctx.q_bar = Eigen::MatrixXd::Zero(rs2d.count(), 2);
    ctx.q_valid.assign(static_cast<std::size_t>(rs2d.count()), false);
    for (int m = 0; m < rs2d.count(); ++m) {
      double w = 0.0;
      Eigen::Vector2d acc = Eigen::Vector2d::Zero();
      for (int n = 0; n < rs3d.count(); ++n) {
        const double e = e_hat(m, n);
        if (e <= 0.0 || !proj[static_cast<std::size_t>(n)]) continue;
        acc += e * *proj[static_cast<std::size_t>(n)];
        w += e;
      }
      if (w > 0.0) {
        ctx.q_bar.row(m) = (acc / w).transpose();
        ctx.q_valid[static_cast<std::size_t>(m)] = true;
      }
    }
    ctx.row_max = e_hat.rowwise().maxCoeff();
    ctx.col_max = e_hat.colwise().maxCoeff().transpose();
    return ctx;
  }
};

namespace detail {

inline int pixel_region(const Correspondence& c, const RegionSet2D& rs2d) {
  const int pix = c.pixel_index >= 0 ? c.pixel_index : rs2d.pixel_at(c.pixel);
  return pix < 0 ? kUnlabeled : rs2d.label(pix);
}

inline int point_region(const Correspondence& c, const RegionSet3D& rs3d) {
  return c.point_index < 0 ? kUnlabeled : rs3d.label(c.point_index);
}

}  // namespace detail

/// Criterion I: graph adjacency of the regions containing the pixel and the
/// point (either direction), or reprojection under the seed pose within delta_rej.
inline bool prune_criterion_one(const Correspondence& c, const PruneContext& ctx, double delta_rej,
                                double adjacency_ratio = 0.5) {
  const int a = detail::pixel_region(c, *ctx.rs2d);
  const int b = detail::point_region(c, *ctx.rs3d);
  if (a != kUnlabeled && b != kUnlabeled) {
    const double e = ctx.e_hat(a, b);
    if (e > kNeighborEps) {
      if (e >= adjacency_ratio * ctx.row_max(a)) return true;  // (i)
      if (e >= adjacency_ratio * ctx.col_max(b)) return true;  // (ii)
    }
  }
  const auto px = project_unbounded(c.point, ctx.seed, ctx.k);
  return px && (c.pixel - *px).norm() <= delta_rej;  // (iii)
}

/// Criterion II score: cosine between the pixel's offsets to every image
/// region center and the projected point's offsets to the edge-weighted
/// projected cloud centers. Rows without edges contribute zero entries.
inline double prune_criterion_two(const Correspondence& c, const PruneContext& ctx) {
  const auto proj = project_unbounded(c.point, ctx.seed, ctx.k);
  if (!proj) return 0.0;
  double st = 0.0, ss = 0.0, tt = 0.0;
  for (Eigen::Index m = 0; m < ctx.centers_2d.rows(); ++m) {
    if (!ctx.q_valid[static_cast<std::size_t>(m)]) continue;
    const Eigen::Vector2d s = c.pixel - ctx.centers_2d.row(m).transpose();
    const Eigen::Vector2d t = *proj - ctx.q_bar.row(m).transpose();
    st += s.dot(t);
    ss += s.squaredNorm();
    tt += t.squaredNorm();
  }
  if (ss == 0.0 || tt == 0.0) return 0.0;
  return std::clamp(st / (std::sqrt(ss) * std::sqrt(tt)), -1.0, 1.0);
}

/// Criterion wrappers matching the per-correspondence call shape.
inline bool prune_criterion_one(const Correspondence& c, const Eigen::MatrixXd& e_hat, const RegionSet2D& rs2d,
                                const RegionSet3D& rs3d, const Pose& seed, const Intrinsics& k, double delta_rej) {
  return prune_criterion_one(c, PruneContext::build(e_hat, rs2d, rs3d, seed, k), delta_rej);
}

inline double prune_criterion_two(const Correspondence& c, const Eigen::MatrixXd& e_hat, const RegionSet2D& rs2d,
                                  const RegionSet3D& rs3d, const Pose& seed, const Intrinsics& k) {
  return prune_criterion_two(c, PruneContext::build(e_hat, rs2d, rs3d, seed, k));
}

/// Flags every correspondence Kept or Pruned. Criterion II passes the top
/// keep_fraction of the set by cosine score; a correspondence is kept when any
/// enabled criterion passes. With both criteria disabled nothing is pruned.
inline CorrespondenceSet hc_prune(CorrespondenceSet cs, const PruneContext& ctx, const PruneConfig& cfg) {
  if (!(cfg.delta_rej > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta_rej must be positive");
  const std::size_t n = cs.size();
  std::vector<bool> keep(n, !cfg.use_criterion_one && !cfg.use_criterion_two);

  if (cfg.use_criterion_two && n > 0) {
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = prune_criterion_two(cs[i], ctx);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    const auto quota = static_cast<std::size_t>(
        std::clamp(std::ceil(cfg.keep_fraction * static_cast<double>(n) - 1e-9), 0.0, static_cast<double>(n)));
    for (std::size_t r = 0; r < quota; ++r) keep[order[r]] = true;
  }
  if (cfg.use_criterion_one) {
    for (std::size_t i = 0; i < n; ++i)
      if (!keep[i] && prune_criterion_one(cs[i], ctx, cfg.delta_rej, cfg.adjacency_ratio)) keep[i] = true;
  }
  for (std::size_t i = 0; i < n; ++i) cs[i].flag = keep[i] ? InlierFlag::Kept : InlierFlag::Pruned;
  return cs;
}

inline std::vector<Correspondence2D3D> kept_pairs(const CorrespondenceSet& cs) {
  std::vector<Correspondence2D3D> out;
  for (const auto& c : cs)
    if (c.flag != InlierFlag::Pruned) out.push_back({c.pixel, c.point});
  return out;
}

/// RANSAC PnP over every correspondence not flagged Pruned.
inline PnpResult final_pose(const CorrespondenceSet& cs, const Intrinsics& k, const RansacConfig& ransac) {
  return solve_pnp(kept_pairs(cs), k, ransac);
}

}  // namespace hgi2p
