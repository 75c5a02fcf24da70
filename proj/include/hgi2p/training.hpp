#pragma once

// Joint objective (circle loss on pixel/point features plus supervised edge
// error), reverse-mode gradients and a momentum SGD loop.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "hgi2p/autodiff.hpp"
#include "hgi2p/error.hpp"
#include "hgi2p/headapting.hpp"
#include "hgi2p/model.hpp"
#include "hgi2p/mpmining.hpp"
#include "hgi2p/random.hpp"
#include "hgi2p/scene.hpp"

namespace hgi2p {

inline constexpr double kDefaultLambda1 = 0.064;

struct CircleLossConfig {
  double pos_margin = 0.1;  // on cosine distance 1 - s
  double neg_margin = 1.4;
  double scale = 10.0;
  /// Cloud points closer than this to the positive point are never negatives.
  double pos_radius = 0.05;
  int max_anchors = 64;
  int negative_candidates = 64;
  int hardest_negatives = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(neg_margin > pos_margin)) throw Error(ErrorCode::InvalidArgument, "neg_margin must exceed pos_margin");
    if (!(scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "circle loss scale must be positive");
    if (max_anchors <= 0 || hardest_negatives < 0 || negative_candidates < 0) {
      throw Error(ErrorCode::InvalidArgument, "circle loss sample sizes");
    }
  }
};

struct LossBreakdown {
  double total = 0.0;
  double corr = 0.0;
  double edge = 0.0;
  double lambda1 = kDefaultLambda1;
};

/// Sum of squared differences over the entries where e_gt is nonzero.
inline double edge_loss(const Eigen::MatrixXd& e_hat, const Eigen::MatrixXd& e_gt) {
  if (e_hat.rows() != e_gt.rows() || e_hat.cols() != e_gt.cols()) throw Error(ErrorCode::ShapeMismatch, "edge_loss");
  double s = 0.0;
  for (Eigen::Index i = 0; i < e_gt.rows(); ++i)
    for (Eigen::Index j = 0; j < e_gt.cols(); ++j)
      if (e_gt(i, j) != 0.0) s += (e_hat(i, j) - e_gt(i, j)) * (e_hat(i, j) - e_gt(i, j));
  return s;
}

// ---------------------------------------------------------------- circle loss

struct CircleValue {
  double loss = 0.0;
  Eigen::VectorXd grad_pos;  // d loss / d positive similarity
  Eigen::VectorXd grad_neg;
};

namespace detail {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log-sum-exp and its softmax weights; -inf for an empty input.
inline double log_sum_exp(const Eigen::VectorXd& x, Eigen::VectorXd& weights) {
  weights = Eigen::VectorXd::Zero(x.size());
  if (x.size() == 0) return -std::numeric_limits<double>::infinity();
  const double mx = x.maxCoeff();
  weights = (x.array() - mx).exp().matrix();
  const double s = weights.sum();
  weights /= s;
  return mx + std::log(s);
}

}  // namespace detail

/// Circle loss of one anchor given its positive and negative cosine
/// similarities. Distances are d = 1 - s; pair weights grow with the margin
/// violation from a floor of 1 and are differentiated through.
inline CircleValue circle_anchor(const Eigen::VectorXd& pos, const Eigen::VectorXd& neg, const CircleLossConfig& cfg) {
  const double g = cfg.scale;
  Eigen::VectorXd lp(pos.size()), dlp(pos.size());
  for (Eigen::Index i = 0; i < pos.size(); ++i) {
    const double u = (1.0 - pos(i)) - cfg.pos_margin;
    lp(i) = g * (1.0 + std::max(u, 0.0)) * u;
    dlp(i) = -g * (1.0 + 2.0 * std::max(u, 0.0));
  }
  Eigen::VectorXd ln(neg.size()), dln(neg.size());
  for (Eigen::Index j = 0; j < neg.size(); ++j) {
    const double v = cfg.neg_margin - (1.0 - neg(j));
    ln(j) = g * (1.0 + std::max(v, 0.0)) * v;
    dln(j) = g * (1.0 + 2.0 * std::max(v, 0.0));
  }
  Eigen::VectorXd wp, wn;
  const double a = detail::log_sum_exp(lp, wp);
  const double b = detail::log_sum_exp(ln, wn);
  CircleValue out;
  out.grad_pos = Eigen::VectorXd::Zero(pos.size());
  out.grad_neg = Eigen::VectorXd::Zero(neg.size());
  if (pos.size() == 0 || neg.size() == 0) return out;
  const double z = a + b;
  out.loss = detail::softplus(z) / g;
  const double dz = detail::sigmoid(z) / g;
  out.grad_pos = dz * wp.cwiseProduct(dlp);
  out.grad_neg = dz * wn.cwiseProduct(dln);
  return out;
}

/// One anchor pixel with its ground-truth point and sampled negative points.
struct CircleAnchor {
  int pixel = -1;
  int positive = -1;
  std::vector<int> negatives;
};

namespace detail {

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double n = a.norm() * b.norm();
  return n > 0.0 ? a.dot(b) / n : 0.0;
}

}  // namespace detail

/// Seeded anchor subset of the ground-truth pairs. Negatives come from the
/// positive point's region, farther than pos_radius from it; of a seeded
/// candidate subset the hardest by input-feature cosine are kept, so the
/// selection does not depend on the parameters being trained.
inline std::vector<CircleAnchor> sample_circle_anchors(const Scene& scene, const CircleLossConfig& cfg) {
  cfg.validate();
  if (scene.gt_pairs.empty()) throw Error(ErrorCode::NoPositives, "scene has no ground-truth pairs");
  Rng rng(cfg.seed ^ (scene.seed * 0x9E3779B97F4A7C15ULL));
  const auto picked = rng.sample(static_cast<int>(scene.gt_pairs.size()), cfg.max_anchors);

  std::vector<CircleAnchor> anchors;
  anchors.reserve(picked.size());
  for (int idx : picked) {
    const GtPair& gp = scene.gt_pairs[static_cast<std::size_t>(idx)];
    CircleAnchor a{gp.pixel, gp.point, {}};
    const int region = scene.rs3d.label(gp.point);
    if (region != kUnlabeled) {
      const Eigen::Vector3d& p0 = scene.rs3d.point(gp.point);
      std::vector<int> eligible;
      for (int q : scene.rs3d.members(region))
        if ((scene.rs3d.point(q) - p0).norm() > cfg.pos_radius) eligible.push_back(q);
      std::vector<int> candidates;
      for (int i : rng.sample(static_cast<int>(eligible.size()), cfg.negative_candidates))
        candidates.push_back(eligible[static_cast<std::size_t>(i)]);
      const Eigen::RowVectorXd f = scene.rs2d.features().row(gp.pixel);
      std::vector<double> sim(candidates.size());
      for (std::size_t i = 0; i < candidates.size(); ++i)
        sim[i] = detail::cosine(f, scene.rs3d.features().row(candidates[i]));
      std::vector<std::size_t> order(candidates.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sim[x] > sim[y]; });
      const std::size_t keep = std::min(order.size(), static_cast<std::size_t>(cfg.hardest_negatives));
      for (std::size_t i = 0; i < keep; ++i) a.negatives.push_back(candidates[order[i]]);
    }
    anchors.push_back(std::move(a));
  }
  return anchors;
}

/// Mean circle loss over anchors, with g_image / g_cloud holding one feature row
/// per pixel / point.
inline double circle_loss(const Eigen::MatrixXd& g_image, const Eigen::MatrixXd& g_cloud,
                          std::span<const CircleAnchor> anchors, const CircleLossConfig& cfg) {
  if (anchors.empty()) throw Error(ErrorCode::NoPositives, "no anchors");
  double total = 0.0;
  for (const auto& a : anchors) {
    const Eigen::RowVectorXd f = g_image.row(a.pixel);
    Eigen::VectorXd pos(1);
    pos(0) = detail::cosine(f, g_cloud.row(a.positive));
    Eigen::VectorXd neg(static_cast<Eigen::Index>(a.negatives.size()));
    for (std::size_t j = 0; j < a.negatives.size(); ++j)
      neg(static_cast<Eigen::Index>(j)) = detail::cosine(f, g_cloud.row(a.negatives[j]));
    total += circle_anchor(pos, neg, cfg).loss;
  }
  return total / static_cast<double>(anchors.size());
}

inline double circle_loss(const Eigen::MatrixXd& g_image, const Eigen::MatrixXd& g_cloud, const Scene& scene,
                          const CircleLossConfig& cfg) {
  const auto anchors = sample_circle_anchors(scene, cfg);
  return circle_loss(g_image, g_cloud, anchors, cfg);
}

// ------------------------------------------------------------- plain objective

namespace detail {

/// Sorted distinct element indices referenced by the anchors.
struct AnchorElements {
  std::vector<int> pixels;
  std::vector<int> points;
  std::map<int, int> pixel_row;
  std::map<int, int> point_row;

  explicit AnchorElements(std::span<const CircleAnchor> anchors) {
    for (const auto& a : anchors) {
      pixel_row.emplace(a.pixel, 0);
      point_row.emplace(a.positive, 0);
      for (int q : a.negatives) point_row.emplace(q, 0);
    }
    for (auto& [e, row] : pixel_row) {
      row = static_cast<int>(pixels.size());
      pixels.push_back(e);
    }
    for (auto& [e, row] : point_row) {
      row = static_cast<int>(points.size());
      points.push_back(e);
    }
  }

  std::vector<CircleAnchor> remap(std::span<const CircleAnchor> anchors) const {
    std::vector<CircleAnchor> out;
    for (const auto& a : anchors) {
      CircleAnchor r{pixel_row.at(a.pixel), point_row.at(a.positive), {}};
      for (int q : a.negatives) r.negatives.push_back(point_row.at(q));
      out.push_back(std::move(r));
    }
    return out;
  }
};

}  // namespace detail

/// Full forward pass and loss without a tape.
inline LossBreakdown total_loss(const Model& model, const Scene& scene, double lambda1 = kDefaultLambda1,
                                const CircleLossConfig& cfg = {}) {
  const EdgePrediction pred = predict(model, scene.rs2d, scene.rs3d, scene.k);
  if (scene.gt_edges.rows() != pred.e_hat.rows() || scene.gt_edges.cols() != pred.e_hat.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "scene ground-truth edges missing or mis-sized");
  }
  const auto anchors = sample_circle_anchors(scene, cfg);
  const detail::AnchorElements elems(anchors);
  const Messages msg = generate_messages(pred.graph.v_image, pred.graph.v_cloud,
                                         pooled_neighbor_features(pred.e_hat, pred.graph.v_image, pred.graph.v_cloud),
                                         model.he);
  const Eigen::MatrixXd gi = refine_elements(scene.rs2d, msg.image, model.he, Side::Image, elems.pixels);
  const Eigen::MatrixXd gp = refine_elements(scene.rs3d, msg.cloud, model.he, Side::Cloud, elems.points);

  LossBreakdown out;
  out.lambda1 = lambda1;
  out.edge = edge_loss(pred.e_hat, scene.gt_edges);
  out.corr = circle_loss(gi, gp, elems.remap(anchors), cfg);
  out.total = out.corr + lambda1 * out.edge;
  if (!std::isfinite(out.total)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  return out;
}

// ------------------------------------------------------------------ gradients

namespace detail {

/// Mean circle loss over anchors from a pixel-by-point cosine matrix.
inline ad::Var circle_from_similarity(ad::Var sim, std::vector<CircleAnchor> anchors, const CircleLossConfig& cfg) {
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(sim.rows(), sim.cols());
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(anchors.size());
  for (const auto& a : anchors) {
    Eigen::VectorXd pos(1);
    pos(0) = sim.value()(a.pixel, a.positive);
    Eigen::VectorXd neg(static_cast<Eigen::Index>(a.negatives.size()));
    for (std::size_t j = 0; j < a.negatives.size(); ++j)
      neg(static_cast<Eigen::Index>(j)) = sim.value()(a.pixel, a.negatives[j]);
    const CircleValue cv = circle_anchor(pos, neg, cfg);
    total += cv.loss;
    grad(a.pixel, a.positive) += inv * cv.grad_pos(0);
    for (std::size_t j = 0; j < a.negatives.size(); ++j)
      grad(a.pixel, a.negatives[j]) += inv * cv.grad_neg(static_cast<Eigen::Index>(j));
  }
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = total * inv;
  return sim.tape->op(std::move(out), {sim},
                      [sim, grad](ad::Tape& t, const Eigen::MatrixXd& g) { t.accumulate(sim, g(0, 0) * grad); });
}

struct HeLeaves {
  ad::Var query, key, value;
};

/// Refined rows for the given elements of one modality, in element order.
template <typename RegionSet>
ad::Var refine_on_tape(ad::Tape& tape, const RegionSet& rs, ad::Var messages, const HeLeaves& w, double beta,
                       const std::vector<int>& elements) {
  std::vector<std::vector<int>> by_region(static_cast<std::size_t>(rs.count()));
  std::vector<int> unlabeled;
  for (int e : elements) {
    const int r = rs.label(e);
    if (r == kUnlabeled) {
      unlabeled.push_back(e);
    } else {
      by_region[static_cast<std::size_t>(r)].push_back(e);
    }
  }
  std::vector<ad::Var> parts;
  std::vector<int> order;  // element of each assembled row
  if (!unlabeled.empty()) {
    parts.push_back(tape.constant(rs.features()(unlabeled, Eigen::all)));
    order.insert(order.end(), unlabeled.begin(), unlabeled.end());
  }
  for (int r = 0; r < rs.count(); ++r) {
    const auto& wanted = by_region[static_cast<std::size_t>(r)];
    if (wanted.empty()) continue;
    const auto& members = rs.members(r);
    const ad::Var msg = ad::gather_rows(messages, {r});
    const ad::Var h = ad::concat_cols(tape.constant(rs.features()(members, Eigen::all)),
                                      ad::repeat_row(msg, static_cast<Eigen::Index>(members.size())));
    const ad::Var f = tape.constant(rs.features()(wanted, Eigen::all));
    const ad::Var hq = ad::concat_cols(f, ad::repeat_row(msg, static_cast<Eigen::Index>(wanted.size())));
    const ad::Var att =
        ad::attention(ad::matmul(hq, w.query), ad::matmul(h, w.key), ad::matmul(h, w.value));
    parts.push_back(ad::add(ad::scale(f, 1.0 - beta), ad::scale(att, beta)));
    order.insert(order.end(), wanted.begin(), wanted.end());
  }
  const ad::Var stacked = ad::concat_rows(parts);
  std::map<int, int> row_of;
  for (std::size_t i = 0; i < order.size(); ++i) row_of[order[i]] = static_cast<int>(i);
  std::vector<int> perm;
  for (int e : elements) perm.push_back(row_of.at(e));
  return ad::gather_rows(stacked, std::move(perm));
}

}  // namespace detail

/// Loss and, when `grad` is non-null, its gradient with respect to every model
/// matrix (accumulated into `grad`, which must have the model's shapes).
/// The forward recomputes only the refined rows the loss touches.
inline LossBreakdown loss_and_gradients(const Model& model, const Scene& scene, double lambda1,
                                        const CircleLossConfig& cfg, Model* grad) {
  if (model.he.neighbor_attention) {
    throw Error(ErrorCode::InvalidArgument, "gradients are implemented for pooled-message adaptation only");
  }
  const int m = scene.rs2d.count();
  const int n = scene.rs3d.count();
  const HeteroGraph graph = HeteroGraph::from_regions(scene.rs2d, scene.rs3d, model.alpha);
  const ActiveSlots slots = ActiveSlots::of(model.mp, m, n);
  const Eigen::MatrixXd mask = edge_mask(scene.rs2d, scene.rs3d, scene.k, model.tau2d);
  const auto anchors = sample_circle_anchors(scene, cfg);
  const detail::AnchorElements elems(anchors);

  ad::Tape tape;
  const ad::Var wf = tape.variable(model.mp.w_feature(slots.inputs, slots.outputs));
  const ad::Var wq = tape.variable(model.mp.w_query(slots.outputs, slots.outputs));
  const ad::Var wk = tape.variable(model.mp.w_key(slots.outputs, slots.outputs));
  const ad::Var wv = tape.variable(model.mp.w_value(slots.outputs, slots.outputs));
  const ad::Var msg_image_w = tape.variable(model.he.msg_image);
  const ad::Var msg_cloud_w = tape.variable(model.he.msg_cloud);
  const detail::HeLeaves image_w{tape.variable(model.he.image_query), tape.variable(model.he.image_key),
                                 tape.variable(model.he.image_value)};
  const detail::HeLeaves cloud_w{tape.variable(model.he.cloud_query), tape.variable(model.he.cloud_key),
                                 tape.variable(model.he.cloud_value)};

  const ad::Var x = tape.constant(flatten_paths(path_matrices(graph)));
  const ad::Var f = ad::matmul(ad::transpose(wf), x);
  const ad::Var q = ad::reshape_rows(ad::matmul(ad::transpose(wq), f), m, n);
  const ad::Var k = ad::reshape_rows(ad::matmul(ad::transpose(wk), f), m, n);
  const ad::Var v = ad::reshape_rows(ad::matmul(ad::transpose(wv), f), m, n);
  const ad::Var e_hat = ad::normalize_rows_l1(ad::hadamard(ad::relu(ad::attention(q, k, v)), mask));
  const ad::Var edge = ad::masked_squared_error(e_hat, scene.gt_edges);

  const ad::Var v_image = tape.constant(graph.v_image);
  const ad::Var v_cloud = tape.constant(graph.v_cloud);
  const ad::Var m_image = ad::matmul(ad::row_weighted_mean(e_hat, v_cloud), msg_cloud_w);
  const ad::Var m_cloud = ad::matmul(ad::row_weighted_mean(ad::transpose(e_hat), v_image), msg_image_w);
  const ad::Var gi = detail::refine_on_tape(tape, scene.rs2d, m_image, image_w, model.he.beta, elems.pixels);
  const ad::Var gp = detail::refine_on_tape(tape, scene.rs3d, m_cloud, cloud_w, model.he.beta, elems.points);
  const ad::Var sim = ad::matmul(ad::normalize_rows_l2(gi), ad::transpose(ad::normalize_rows_l2(gp)));
  const ad::Var corr = detail::circle_from_similarity(sim, elems.remap(anchors), cfg);
  const ad::Var total = ad::add(corr, ad::scale(edge, lambda1));

  LossBreakdown out;
  out.lambda1 = lambda1;
  out.corr = corr.value()(0, 0);
  out.edge = edge.value()(0, 0);
  out.total = total.value()(0, 0);
  if (!std::isfinite(out.total)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  if (grad == nullptr) return out;

  tape.backward(total);
  grad->mp.w_feature(slots.inputs, slots.outputs) += tape.grad(wf);
  grad->mp.w_query(slots.outputs, slots.outputs) += tape.grad(wq);
  grad->mp.w_key(slots.outputs, slots.outputs) += tape.grad(wk);
  grad->mp.w_value(slots.outputs, slots.outputs) += tape.grad(wv);
  grad->he.msg_image += tape.grad(msg_image_w);
  grad->he.msg_cloud += tape.grad(msg_cloud_w);
  grad->he.image_query += tape.grad(image_w.query);
  grad->he.image_key += tape.grad(image_w.key);
  grad->he.image_value += tape.grad(image_w.value);
  grad->he.cloud_query += tape.grad(cloud_w.query);
  grad->he.cloud_key += tape.grad(cloud_w.key);
  grad->he.cloud_value += tape.grad(cloud_w.value);
  if (!grad->finite()) throw Error(ErrorCode::NonFiniteLoss, "gradient is not finite");
  return out;
}

inline Model gradients(const Model& model, const Scene& scene, double lambda1 = kDefaultLambda1,
                       const CircleLossConfig& cfg = {}) {
  Model g = model.zeros_like();
  loss_and_gradients(model, scene, lambda1, cfg, &g);
  return g;
}

// ------------------------------------------------------------------- training

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  double momentum = 0.9;
  double lambda1 = kDefaultLambda1;
  std::uint64_t seed = 0;
  /// Visit every scene under a fresh random region numbering. Parameters are
  /// addressed by region index, which carries no meaning across scenes.
  bool permute_regions = true;
  CircleLossConfig circle;
};

struct TrainResult {
  Model model;
  /// Mean loss over scenes before training (row 0) and after every epoch.
  std::vector<LossBreakdown> trace;
};

inline LossBreakdown mean_loss(const Model& model, std::span<const Scene> scenes, double lambda1,
                               const CircleLossConfig& cfg) {
  LossBreakdown mean;
  mean.lambda1 = lambda1;
  mean.total = mean.corr = mean.edge = 0.0;
  for (const auto& s : scenes) {
    const LossBreakdown l = loss_and_gradients(model, s, lambda1, cfg, nullptr);
    mean.total += l.total;
    mean.corr += l.corr;
    mean.edge += l.edge;
  }
  const double inv = 1.0 / static_cast<double>(scenes.size());
  mean.total *= inv;
  mean.corr *= inv;
  mean.edge *= inv;
  return mean;
}

/// Momentum SGD with one step per scene, scenes visited in a seeded order each
/// epoch. Trace row 0 is the initial mean loss; row e is the mean of the losses
/// seen by the steps of epoch e.
inline TrainResult train(Model model, std::span<const Scene> scenes, const TrainConfig& cfg) {
  if (scenes.empty()) throw Error(ErrorCode::InvalidArgument, "training needs at least one scene");
  if (cfg.epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be non-negative");
  TrainResult out;
  out.trace.push_back(mean_loss(model, scenes, cfg.lambda1, cfg.circle));
  Model velocity = model.zeros_like();
  Model g = model.zeros_like();
  Rng rng(cfg.seed);
  const int n = static_cast<int>(scenes.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = rng.permutation(n);
    LossBreakdown mean;
    mean.lambda1 = cfg.lambda1;
    for (int idx : order) {
      for (auto* m : g.matrices()) m->setZero();
      const Scene& scene = scenes[static_cast<std::size_t>(idx)];
      const LossBreakdown l =
          cfg.permute_regions
              ? loss_and_gradients(model,
                                   scene.relabeled(rng.permutation(scene.rs2d.count()),
                                                   rng.permutation(scene.rs3d.count())),
                                   cfg.lambda1, cfg.circle, &g)
              : loss_and_gradients(model, scene, cfg.lambda1, cfg.circle, &g);
      mean.total += l.total / n;
      mean.corr += l.corr / n;
      mean.edge += l.edge / n;
      const auto w = model.matrices();
      const auto vel = velocity.matrices();
      const auto gm = g.matrices();
      for (std::size_t i = 0; i < w.size(); ++i) {
        *vel[i] = cfg.momentum * *vel[i] + *gm[i];
        *w[i] -= cfg.lr * *vel[i];
      }
    }
    out.trace.push_back(mean);
  }
  out.model = std::move(model);
  return out;
}

}  // namespace hgi2p
