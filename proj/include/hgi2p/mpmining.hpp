#pragma once

// Multi-path edge mining: heterogeneous edge prediction from products of the
// homogeneous and initial heterogeneous adjacency matrices.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/hetgraph.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

inline constexpr double kDefaultTau2d = 16.0;
inline constexpr double kDefaultQueryGain = 10.0;

/// Learnable matrices of the edge predictor. Shapes are fixed by the maximum
/// region counts; a scene with M <= m_max, N <= n_max uses the sub-blocks
/// addressed by its (i, j) index pairs.
struct MpParams {
  int m_max = 0;
  int n_max = 0;
  Eigen::MatrixXd w_feature;  // 3*m_max*n_max x m_max*n_max
  Eigen::MatrixXd w_query;    // m_max*n_max x m_max*n_max
  Eigen::MatrixXd w_key;
  Eigen::MatrixXd w_value;

  int slots() const { return m_max * n_max; }

  /// Stacked (1/3)·I blocks for the feature map, identity key and value
  /// projections and a scaled identity query, so the untrained model attends
  /// over the mean of the three path matrices with rows favoring themselves.
  /// At unit query gain the attention is close to uniform across rows.
  static MpParams identity(int m_max, int n_max, double query_gain = kDefaultQueryGain) {
    if (m_max <= 0 || n_max <= 0) throw Error(ErrorCode::InvalidArgument, "m_max and n_max must be positive");
    MpParams p;
    p.m_max = m_max;
    p.n_max = n_max;
    const Eigen::Index s = static_cast<Eigen::Index>(m_max) * n_max;
    p.w_feature = Eigen::MatrixXd::Zero(3 * s, s);
    for (int b = 0; b < 3; ++b) p.w_feature.block(b * s, 0, s, s).diagonal().setConstant(1.0 / 3.0);
    p.w_query = query_gain * Eigen::MatrixXd::Identity(s, s);
    p.w_key = Eigen::MatrixXd::Identity(s, s);
    p.w_value = Eigen::MatrixXd::Identity(s, s);
    return p;
  }

  bool finite() const {
    return w_feature.allFinite() && w_query.allFinite() && w_key.allFinite() && w_value.allFinite();
  }
};

struct PathMatrices {
  Eigen::MatrixXd e1;  // I -> I -> P
  Eigen::MatrixXd e2;  // I -> P -> P
  Eigen::MatrixXd e3;  // I -> I -> P -> P
};

inline PathMatrices path_matrices(const HeteroGraph& g) {
  PathMatrices p;
  p.e1 = g.e_image * g.e_cross;
  p.e2 = g.e_cross * g.e_cloud;
  p.e3 = p.e1 * g.e_cloud;
  return p;
}

/// Row-wise softmax with max subtraction.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Scaled dot-product attention, softmax(q kᵀ / sqrt(d)) v with d = q.cols().
inline Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw Error(ErrorCode::ShapeMismatch, "attention shapes");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return softmax_rows((q * k.transpose()) * scale) * v;
}

namespace detail {

/// Parameter slot of entry (i, j) of path matrix `block` (0..2).
inline Eigen::Index input_slot(const MpParams& p, int block, int i, int j) {
  return static_cast<Eigen::Index>(block) * p.slots() + static_cast<Eigen::Index>(i) * p.n_max + j;
}

inline Eigen::Index output_slot(const MpParams& p, int i, int j) {
  return static_cast<Eigen::Index>(i) * p.n_max + j;
}

inline void check_capacity(const MpParams& p, int m, int n) {
  if (m > p.m_max || n > p.n_max) {
    throw Error(ErrorCode::ShapeMismatch, "graph with " + std::to_string(m) + "x" + std::to_string(n) +
                                              " regions exceeds model capacity " + std::to_string(p.m_max) + "x" +
                                              std::to_string(p.n_max));
  }
}

}  // namespace detail

/// Active slot indices for an M x N graph: inputs (3MN) and outputs (MN), row-major.
struct ActiveSlots {
  std::vector<Eigen::Index> inputs;
  std::vector<Eigen::Index> outputs;

  static ActiveSlots of(const MpParams& p, int m, int n) {
    detail::check_capacity(p, m, n);
    ActiveSlots s;
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) s.inputs.push_back(detail::input_slot(p, b, i, j));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) s.outputs.push_back(detail::output_slot(p, i, j));
    return s;
  }
};

/// Row-major flatten of the stacked path matrices [e1; e2; e3].
inline Eigen::VectorXd flatten_paths(const PathMatrices& paths) {
  const Eigen::Index m = paths.e1.rows();
  const Eigen::Index n = paths.e1.cols();
  Eigen::VectorXd x(3 * m * n);
  const Eigen::MatrixXd* blocks[3] = {&paths.e1, &paths.e2, &paths.e3};
  for (int b = 0; b < 3; ++b)
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j) x(b * m * n + i * n + j) = (*blocks[b])(i, j);
  return x;
}

/// Row-major reshape of an (M*N)-vector into an M x N matrix.
inline Eigen::MatrixXd reshape_rows(const Eigen::VectorXd& v, Eigen::Index m, Eigen::Index n) {
  Eigen::MatrixXd out(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = v(i * n + j);
  return out;
}

/// Raw edge prediction (before clamping, masking and normalization).
///
/// F = W_Fᵀ · flatten([e1; e2; e3]); Q, K, V = F·W_{Q,K,V} reshaped to M x N and
/// treated as M tokens of width N, so the attention runs with d_k = N.
inline Eigen::MatrixXd predict_edges(const HeteroGraph& g, const MpParams& p) {
  const int m = g.m();
  const int n = g.n();
  const ActiveSlots slots = ActiveSlots::of(p, m, n);
  const Eigen::VectorXd x = flatten_paths(path_matrices(g));

  const Eigen::MatrixXd wf = p.w_feature(slots.inputs, slots.outputs);
  const Eigen::VectorXd f = wf.transpose() * x;
  const Eigen::VectorXd q = p.w_query(slots.outputs, slots.outputs).transpose() * f;
  const Eigen::VectorXd k = p.w_key(slots.outputs, slots.outputs).transpose() * f;
  const Eigen::VectorXd v = p.w_value(slots.outputs, slots.outputs).transpose() * f;
  return attention(reshape_rows(q, m, n), reshape_rows(k, m, n), reshape_rows(v, m, n));
}

/// 0/1 mask keeping pairs whose 2D region center lies within tau2d pixels of
/// the identity-pose projection of the 3D region center.
inline Eigen::MatrixXd edge_mask(const RegionSet2D& rs2d, const RegionSet3D& rs3d, const Intrinsics& k,
                                 double tau2d) {
  if (!(tau2d > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau2d must be positive");
  const Eigen::MatrixXd c2 = region_centers(rs2d);
  const Eigen::MatrixXd c3 = region_centers(rs3d);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(rs2d.count(), rs3d.count());
  for (int j = 0; j < rs3d.count(); ++j) {
    const auto px = project_unbounded(c3.row(j).transpose(), Pose::identity(), k);
    if (!px) continue;
    for (int i = 0; i < rs2d.count(); ++i) {
      if ((c2.row(i).transpose() - *px).norm() <= tau2d) mask(i, j) = 1.0;
    }
  }
  return mask;
}

/// Clamp at zero, apply the 0/1 mask, L1-normalize nonzero rows.
inline Eigen::MatrixXd clamp_mask_normalize(const Eigen::MatrixXd& e_hat, const Eigen::MatrixXd& mask) {
  if (e_hat.rows() != mask.rows() || e_hat.cols() != mask.cols()) throw Error(ErrorCode::ShapeMismatch, "mask shape");
  Eigen::MatrixXd out = e_hat.cwiseMax(0.0).cwiseProduct(mask);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

inline Eigen::MatrixXd mask_and_normalize(const Eigen::MatrixXd& e_hat, const RegionSet2D& rs2d,
                                          const RegionSet3D& rs3d, const Intrinsics& k, double tau2d = kDefaultTau2d) {
  return clamp_mask_normalize(e_hat, edge_mask(rs2d, rs3d, k, tau2d));
}

}  // namespace hgi2p
