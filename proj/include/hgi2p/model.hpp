#pragma once

// Learnable edge predictor plus feature adapter, and the plain forward pass
// shared by training, registration and evaluation.

#include <Eigen/Dense>

#include <array>

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/headapting.hpp"
#include "hgi2p/hetgraph.hpp"
#include "hgi2p/mpmining.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

inline constexpr int kDefaultMaxRegions = 24;

struct Model {
  MpParams mp;
  HeParams he;
  double alpha = kDefaultAlpha;
  double tau2d = kDefaultTau2d;

  int channels() const { return he.channels; }

  static Model identity(int m_max, int n_max, int channels, double beta = kDefaultBeta) {
    return Model{MpParams::identity(m_max, n_max), HeParams::identity(channels, beta)};
  }

  bool finite() const { return mp.finite() && he.finite(); }

  static constexpr std::array<const char*, 12> kMatrixNames = {
      "mp.w_feature",    "mp.w_query",     "mp.w_key",       "mp.w_value",
      "he.msg_image",    "he.msg_cloud",   "he.image_query", "he.image_key",
      "he.image_value",  "he.cloud_query", "he.cloud_key",   "he.cloud_value"};

  /// Parameter matrices in kMatrixNames order.
  std::array<Eigen::MatrixXd*, 12> matrices() {
    return {&mp.w_feature,    &mp.w_query,      &mp.w_key,       &mp.w_value,
            &he.msg_image,    &he.msg_cloud,    &he.image_query, &he.image_key,
            &he.image_value,  &he.cloud_query,  &he.cloud_key,   &he.cloud_value};
  }

  std::array<const Eigen::MatrixXd*, 12> matrices() const {
    return {&mp.w_feature,    &mp.w_query,      &mp.w_key,       &mp.w_value,
            &he.msg_image,    &he.msg_cloud,    &he.image_query, &he.image_key,
            &he.image_value,  &he.cloud_query,  &he.cloud_key,   &he.cloud_value};
  }

  /// Same shapes, every entry zero (gradient accumulator).
  Model zeros_like() const {
    Model z = *this;
    for (auto* m : z.matrices()) m->setZero();
    return z;
  }
};

/// Edge prediction for a segmented pair: graph, raw and final edges, mask.
struct EdgePrediction {
  HeteroGraph graph;
  Eigen::MatrixXd raw;    // attention output
  Eigen::MatrixXd mask;   // 0/1 center-proximity mask
  Eigen::MatrixXd e_hat;  // clamped, masked, row-normalized
};

inline EdgePrediction predict(const Model& model, const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                              const Intrinsics& k) {
  if (rs2d.channels() != model.channels() || rs3d.channels() != model.channels()) {
    throw Error(ErrorCode::ShapeMismatch, "feature width differs from model channels");
  }
  EdgePrediction out;
  out.graph = HeteroGraph::from_regions(rs2d, rs3d, model.alpha);
  out.raw = predict_edges(out.graph, model.mp);
  out.mask = edge_mask(rs2d, rs3d, k, model.tau2d);
  out.e_hat = clamp_mask_normalize(out.raw, out.mask);
  return out;
}

struct ForwardResult {
  EdgePrediction edges;
  AdaptedFeatures features;
};

/// Full forward pass: edges, messages and refined per-element features.
inline ForwardResult forward(const Model& model, const RegionSet2D& rs2d, const RegionSet3D& rs3d,
                             const Intrinsics& k) {
  ForwardResult out;
  out.edges = predict(model, rs2d, rs3d, k);
  out.features = adapt_features(rs2d, rs3d, out.edges.e_hat, out.edges.graph.v_image, out.edges.graph.v_cloud,
                                model.he);
  return out;
}

}  // namespace hgi2p
