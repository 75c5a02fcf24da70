#pragma once

// Edge-guided feature adaptation: pooled cross-modal messages per region,
// then per-region self-attention over [features | message].

#include <Eigen/Dense>

#include <vector>

#include "hgi2p/error.hpp"
#include "hgi2p/mpmining.hpp"
#include "hgi2p/regions.hpp"

namespace hgi2p {

inline constexpr double kDefaultBeta = 0.1;
/// Heterogeneous edges above this weight make two regions neighbors.
inline constexpr double kNeighborEps = 1e-6;

struct HeParams {
  int channels = 0;
  double beta = kDefaultBeta;
  /// Off: literal single-token message attention. On: attend over the
  /// un-pooled neighbor vertex features instead.
  bool neighbor_attention = false;

  Eigen::MatrixXd msg_image;  // c x c, applied to image-side vertex features
  Eigen::MatrixXd msg_cloud;  // c x c, applied to cloud-side vertex features
  Eigen::MatrixXd image_query, image_key, image_value;  // 2c x c
  Eigen::MatrixXd cloud_query, cloud_key, cloud_value;  // 2c x c

  static HeParams identity(int channels, double beta = kDefaultBeta) {
    if (channels <= 0) throw Error(ErrorCode::InvalidArgument, "channels must be positive");
    HeParams p;
    p.channels = channels;
    p.beta = beta;
    p.msg_image = Eigen::MatrixXd::Identity(channels, channels);
    p.msg_cloud = Eigen::MatrixXd::Identity(channels, channels);
    Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(2 * channels, channels);
    stacked.topRows(channels).setIdentity();
    p.image_query = p.image_key = p.image_value = stacked;
    p.cloud_query = p.cloud_key = p.cloud_value = stacked;
    return p;
  }

  bool finite() const {
    for (const auto* m : {&msg_image, &msg_cloud, &image_query, &image_key, &image_value, &cloud_query, &cloud_key,
                          &cloud_value})
      if (!m->allFinite()) return false;
    return beta >= 0.0 && beta <= 1.0;
  }
};

struct PooledNeighbors {
  Eigen::MatrixXd cloud_for_image;  // M x c: edge-weighted mean of cloud vertices per image region
  Eigen::MatrixXd image_for_cloud;  // N x c
  std::vector<bool> image_isolated;  // rows with zero edge mass
  std::vector<bool> cloud_isolated;
};

/// Edge-weighted means of the opposite modality's vertex features.
inline PooledNeighbors pooled_neighbor_features(const Eigen::MatrixXd& e_hat, const Eigen::MatrixXd& v_image,
                                                const Eigen::MatrixXd& v_cloud) {
  if (e_hat.rows() != v_image.rows() || e_hat.cols() != v_cloud.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "edge matrix must be M x N");
  }
  PooledNeighbors out;
  out.cloud_for_image = Eigen::MatrixXd::Zero(v_image.rows(), v_cloud.cols());
  out.image_for_cloud = Eigen::MatrixXd::Zero(v_cloud.rows(), v_image.cols());
  out.image_isolated.assign(static_cast<std::size_t>(v_image.rows()), true);
  out.cloud_isolated.assign(static_cast<std::size_t>(v_cloud.rows()), true);
  for (Eigen::Index i = 0; i < e_hat.rows(); ++i) {
    const double d = e_hat.row(i).sum();
    if (d == 0.0) continue;
    out.cloud_for_image.row(i) = (e_hat.row(i) / d) * v_cloud;
    out.image_isolated[static_cast<std::size_t>(i)] = false;
  }
  for (Eigen::Index j = 0; j < e_hat.cols(); ++j) {
    const double d = e_hat.col(j).sum();
    if (d == 0.0) continue;
    out.image_for_cloud.row(j) = (e_hat.col(j).transpose() / d) * v_image;
    out.cloud_isolated[static_cast<std::size_t>(j)] = false;
  }
  return out;
}

struct Messages {
  Eigen::MatrixXd image;  // M x c
  Eigen::MatrixXd cloud;  // N x c
};

/// Literal message generation. With one pooled key/value token the softmax
/// weight is 1, so the message is the projected pooled neighbor feature and the
/// query has no influence.
inline Messages generate_messages(const Eigen::MatrixXd& v_image, const Eigen::MatrixXd& v_cloud,
                                  const PooledNeighbors& pooled, const HeParams& p) {
  (void)v_image;
  (void)v_cloud;
  return {pooled.cloud_for_image * p.msg_cloud, pooled.image_for_cloud * p.msg_image};
}

/// Message generation attending over every neighbor vertex (edge weight above
/// kNeighborEps) rather than the single pooled token. Isolated vertices get a
/// zero message.
inline Messages generate_messages_over_neighbors(const Eigen::MatrixXd& e_hat, const Eigen::MatrixXd& v_image,
                                                 const Eigen::MatrixXd& v_cloud, const HeParams& p) {
  Messages out{Eigen::MatrixXd::Zero(v_image.rows(), p.channels), Eigen::MatrixXd::Zero(v_cloud.rows(), p.channels)};
  const Eigen::MatrixXd qi = v_image * p.msg_image;
  const Eigen::MatrixXd kc = v_cloud * p.msg_cloud;
  for (Eigen::Index i = 0; i < e_hat.rows(); ++i) {
    std::vector<Eigen::Index> nb;
    for (Eigen::Index j = 0; j < e_hat.cols(); ++j)
      if (e_hat(i, j) > kNeighborEps) nb.push_back(j);
    if (nb.empty()) continue;
    const Eigen::MatrixXd keys = kc(nb, Eigen::all);
    out.image.row(i) = attention(qi.row(i), keys, keys);
  }
  for (Eigen::Index j = 0; j < e_hat.cols(); ++j) {
    std::vector<Eigen::Index> nb;
    for (Eigen::Index i = 0; i < e_hat.rows(); ++i)
      if (e_hat(i, j) > kNeighborEps) nb.push_back(i);
    if (nb.empty()) continue;
    const Eigen::MatrixXd keys = qi(nb, Eigen::all);
    out.cloud.row(j) = attention(kc.row(j), keys, keys);
  }
  return out;
}

enum class Side { Image, Cloud };

/// Refine the features of one region: G = (1-β)F + β·Attn(H Wq, H Wk, H Wv),
/// H = [F | repeat(message)], d_k = c.
inline Eigen::MatrixXd interact_region(const Eigen::MatrixXd& features, const Eigen::RowVectorXd& message,
                                       const Eigen::MatrixXd& wq, const Eigen::MatrixXd& wk,
                                       const Eigen::MatrixXd& wv, double beta) {
  const Eigen::Index c = features.cols();
  Eigen::MatrixXd h(features.rows(), 2 * c);
  h.leftCols(c) = features;
  h.rightCols(c) = message.replicate(features.rows(), 1);
  return (1.0 - beta) * features + beta * attention(h * wq, h * wk, h * wv);
}

/// Refined per-element features in the original layout. Unlabeled elements keep
/// their input features.
template <typename RegionSet>
Eigen::MatrixXd interact_messages(const RegionSet& rs, const Eigen::MatrixXd& messages, const HeParams& p, Side side) {
  if (messages.rows() != rs.count()) throw Error(ErrorCode::ShapeMismatch, "one message row per region expected");
  if (rs.channels() != p.channels) throw Error(ErrorCode::ShapeMismatch, "feature width differs from model");
  const auto& wq = side == Side::Image ? p.image_query : p.cloud_query;
  const auto& wk = side == Side::Image ? p.image_key : p.cloud_key;
  const auto& wv = side == Side::Image ? p.image_value : p.cloud_value;

  Eigen::MatrixXd out = rs.features();
  if (p.beta == 0.0) return out;
  for (int r = 0; r < rs.count(); ++r) {
    const auto& members = rs.members(r);
    const Eigen::MatrixXd f = rs.features()(members, Eigen::all);
    out(members, Eigen::all) = interact_region(f, messages.row(r), wq, wk, wv, p.beta);
  }
  return out;
}

/// Refined features of selected elements only (rows in the order given); keys
/// and values still span each element's whole region.
template <typename RegionSet>
Eigen::MatrixXd refine_elements(const RegionSet& rs, const Eigen::MatrixXd& messages, const HeParams& p, Side side,
                                const std::vector<int>& elements) {
  if (messages.rows() != rs.count()) throw Error(ErrorCode::ShapeMismatch, "one message row per region expected");
  const auto& wq = side == Side::Image ? p.image_query : p.cloud_query;
  const auto& wk = side == Side::Image ? p.image_key : p.cloud_key;
  const auto& wv = side == Side::Image ? p.image_value : p.cloud_value;
  const Eigen::Index c = rs.features().cols();

  Eigen::MatrixXd out(static_cast<Eigen::Index>(elements.size()), c);
  std::vector<std::vector<std::size_t>> by_region(static_cast<std::size_t>(rs.count()));
  for (std::size_t e = 0; e < elements.size(); ++e) {
    const int r = rs.label(elements[e]);
    out.row(static_cast<Eigen::Index>(e)) = rs.features().row(elements[e]);
    if (r != kUnlabeled && p.beta != 0.0) by_region[static_cast<std::size_t>(r)].push_back(e);
  }
  for (int r = 0; r < rs.count(); ++r) {
    const auto& wanted = by_region[static_cast<std::size_t>(r)];
    if (wanted.empty()) continue;
    const auto& members = rs.members(r);
    Eigen::MatrixXd h(static_cast<Eigen::Index>(members.size()), 2 * c);
    h.leftCols(c) = rs.features()(members, Eigen::all);
    h.rightCols(c) = messages.row(r).replicate(h.rows(), 1);
    Eigen::MatrixXd hq(static_cast<Eigen::Index>(wanted.size()), 2 * c);
    for (std::size_t w = 0; w < wanted.size(); ++w) {
      hq.row(static_cast<Eigen::Index>(w)) << rs.features().row(elements[wanted[w]]), messages.row(r);
    }
    const Eigen::MatrixXd att = attention(hq * wq, h * wk, h * wv);
    for (std::size_t w = 0; w < wanted.size(); ++w) {
      const auto row = static_cast<Eigen::Index>(wanted[w]);
      out.row(row) = (1.0 - p.beta) * out.row(row) + p.beta * att.row(static_cast<Eigen::Index>(w));
    }
  }
  return out;
}

struct AdaptedFeatures {
  Eigen::MatrixXd image;  // per-pixel, same layout as RegionSet2D::features()
  Eigen::MatrixXd cloud;  // per-point
  Messages messages;
};

/// Full adaptation step for one graph.
inline AdaptedFeatures adapt_features(const RegionSet2D& rs2d, const RegionSet3D& rs3d, const Eigen::MatrixXd& e_hat,
                                      const Eigen::MatrixXd& v_image, const Eigen::MatrixXd& v_cloud,
                                      const HeParams& p) {
  AdaptedFeatures out;
  if (p.neighbor_attention) {
    out.messages = generate_messages_over_neighbors(e_hat, v_image, v_cloud, p);
  } else {
    out.messages = generate_messages(v_image, v_cloud, pooled_neighbor_features(e_hat, v_image, v_cloud), p);
  }
  out.image = interact_messages(rs2d, out.messages.image, p, Side::Image);
  out.cloud = interact_messages(rs3d, out.messages.cloud, p, Side::Cloud);
  return out;
}

}  // namespace hgi2p
