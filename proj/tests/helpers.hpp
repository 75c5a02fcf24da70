#pragma once

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "hgi2p/hgi2p.hpp"

namespace hgi2p::test {

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sigma = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sigma);
  return m;
}

inline Pose random_pose(Rng& rng, double max_deg, double max_t) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  const double angle = rng.uniform(0.0, max_deg) * std::numbers::pi / 180.0;
  const Eigen::Vector3d t(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t));
  return {rotation_from_axis_angle(axis.normalized() * angle), t};
}

inline Intrinsics test_camera() { return {100.0, 100.0, 50.0, 50.0, 100, 100}; }

/// Exact correspondences: camera-frame points in view, mapped to world by pose⁻¹.
inline std::vector<Correspondence2D3D> exact_pairs(Rng& rng, const Pose& pose, const Intrinsics& k, int n) {
  std::vector<Correspondence2D3D> out;
  const Pose inv = pose.inverse();
  while (static_cast<int>(out.size()) < n) {
    const double z = rng.uniform(2.0, 6.0);
    const Eigen::Vector2d px(rng.uniform(5.0, k.width - 5.0), rng.uniform(5.0, k.height - 5.0));
    const Eigen::Vector3d cam = k.unproject(px) * z;
    out.push_back({px, inv.apply(cam)});
  }
  return out;
}

/// Image of `w` x `h` pixels with the given label map and random features.
inline RegionSet2D image_regions(Rng& rng, int w, int h, std::vector<int> labels, int count, int c) {
  return RegionSet2D(w, h, std::move(labels), count, random_matrix(rng, static_cast<Eigen::Index>(w) * h, c));
}

template <typename F>
::testing::AssertionResult throws_code(F&& f, ErrorCode code) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == code) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "threw " << to_string(e.code()) << ": " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw";
}

inline double max_abs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Identity model plus a small seeded perturbation of every matrix.
inline Model perturbed_model(Rng& rng, int m_max, int n_max, int c, double sigma = 0.05) {
  Model m = Model::identity(m_max, n_max, c);
  for (auto* w : m.matrices()) *w += random_matrix(rng, w->rows(), w->cols(), sigma);
  return m;
}

struct GradientCheck {
  double worst_relative = 0.0;  // over coordinates with |grad| above the floor
  std::size_t checked = 0;
  std::size_t coordinates = 0;
};

/// Central differences on every parameter of `model` against loss_and_gradients.
inline GradientCheck check_gradients(const Model& model, const Scene& scene, double lambda1, double h = 1e-4,
                                     double floor = 1e-6) {
  const CircleLossConfig circle;
  const Model g = gradients(model, scene, lambda1, circle);
  GradientCheck out;
  Model probe = model;
  const auto params = probe.matrices();
  const auto grads = g.matrices();
  for (std::size_t m = 0; m < params.size(); ++m) {
    Eigen::MatrixXd& w = *params[m];
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + h;
      const double up = total_loss(probe, scene, lambda1, circle).total;
      w.data()[i] = orig - h;
      const double down = total_loss(probe, scene, lambda1, circle).total;
      w.data()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = grads[m]->data()[i];
      ++out.coordinates;
      if (std::abs(an) <= floor) continue;
      ++out.checked;
      out.worst_relative = std::max(out.worst_relative, std::abs(an - fd) / std::max(std::abs(an), std::abs(fd)));
    }
  }
  return out;
}

}  // namespace hgi2p::test
