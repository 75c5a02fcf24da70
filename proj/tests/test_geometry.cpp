#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"

using namespace hgi2p;
using namespace hgi2p::test;

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const auto px = project({0, 0, 1}, Pose::identity(), test_camera());
  ASSERT_TRUE(px);
  EXPECT_DOUBLE_EQ(px->x(), 50.0);
  EXPECT_DOUBLE_EQ(px->y(), 50.0);
}

TEST(Project, BehindCameraIsAbsent) { EXPECT_FALSE(project({0, 0, -1}, Pose::identity(), test_camera())); }

TEST(Project, HandEvaluatedOffAxisPoint) {
  const auto px = project({0.5, 0, 2}, Pose::identity(), test_camera());
  ASSERT_TRUE(px);
  EXPECT_DOUBLE_EQ(px->x(), 75.0);
  EXPECT_DOUBLE_EQ(px->y(), 50.0);
}

TEST(Project, OutsideImageIsAbsent) {
  EXPECT_FALSE(project({5, 0, 1}, Pose::identity(), test_camera()));
  EXPECT_TRUE(project_unbounded({5, 0, 1}, Pose::identity(), test_camera()));
}

TEST(Project, CompositionMatchesSequentialTransform) {
  Rng rng(11);
  const Intrinsics k = test_camera();
  int visible = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Pose a = random_pose(rng, 10, 0.2);
    const Pose b = random_pose(rng, 10, 0.2);
    const Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 5));
    const auto direct = project(p, a * b, k);
    const auto staged = project(b.apply(p), a, k);
    ASSERT_EQ(direct.has_value(), staged.has_value());
    if (!direct) continue;
    ++visible;
    EXPECT_LT((*direct - *staged).norm(), 1e-9);
  }
  EXPECT_GT(visible, 100);
}

TEST(PoseError, IdentityIsZero) {
  Rng rng(2);
  const Pose p = random_pose(rng, 40, 1);
  const PoseError e = pose_error(p, p);
  EXPECT_NEAR(e.rte, 0.0, 1e-12);
  EXPECT_NEAR(e.rre, 0.0, 1e-6);
}

TEST(PoseError, TenDegreesAboutZ) {
  const Pose gt = Pose::identity();
  const Pose est{rotation_from_axis_angle(Eigen::Vector3d::UnitZ() * (10.0 * std::numbers::pi / 180.0)),
                 Eigen::Vector3d::Zero()};
  EXPECT_NEAR(pose_error(est, gt).rre, 10.0, 1e-9);
}

TEST(PoseError, TranslationOffset) {
  Pose est;
  est.translation = {0.03, 0, 0};
  EXPECT_DOUBLE_EQ(pose_error(est, Pose::identity()).rte, 0.03);
}

TEST(PoseError, RotationErrorIsSymmetric) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Pose a = random_pose(rng, 170, 1);
    const Pose b = random_pose(rng, 170, 1);
    EXPECT_NEAR(pose_error(a, b).rre, pose_error(b, a).rre, 1e-9);
    EXPECT_GE(pose_error(a, b).rre, 0.0);
    EXPECT_LE(pose_error(a, b).rre, 180.0);
  }
}

TEST(SolvePnp, NoiseFreeTwelvePoints) {
  const Intrinsics k = test_camera();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Pose gt = random_pose(rng, 30, 0.5);
    const auto pairs = exact_pairs(rng, gt, k, 12);
    const PnpResult r = solve_pnp(pairs, k, {.seed = seed});
    const PoseError e = pose_error(r.pose, gt);
    EXPECT_LT(e.rte, 1e-6) << "seed " << seed;
    EXPECT_LT(e.rre, 1e-5) << "seed " << seed;
    EXPECT_LT(r.rms_px, 1e-8) << "seed " << seed;
    EXPECT_TRUE(r.pose.is_valid());
  }
}

TEST(SolvePnp, OutlierPixelsAreExcludedFromInlierMask) {
  const Intrinsics k = test_camera();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Pose gt = random_pose(rng, 20, 0.3);
    auto pairs = exact_pairs(rng, gt, k, 12);
    for (int i = 0; i < 5; ++i) {
      auto bad = pairs[static_cast<std::size_t>(i)];
      bad.pixel = {rng.uniform(0, k.width), rng.uniform(0, k.height)};
      pairs.push_back(bad);
    }
    const PnpResult r = solve_pnp(pairs, k, {.threshold_px = 2.0, .seed = seed});
    for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(r.inliers[i], i < 12) << "seed " << seed << " pair " << i;
  }
}

TEST(SolvePnp, ThreeCorrespondencesAreInsufficient) {
  Rng rng(1);
  const auto pairs = exact_pairs(rng, Pose::identity(), test_camera(), 3);
  try {
    solve_pnp(pairs, test_camera(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientCorrespondences);
  }
}

TEST(SolvePnp, FourPointsNearIdentity) {
  Rng rng(3);
  const Pose gt = random_pose(rng, 2, 0.05);
  const auto pairs = exact_pairs(rng, gt, test_camera(), 4);
  const PnpResult r = solve_pnp(pairs, test_camera(), {});
  EXPECT_LT(pose_error(r.pose, gt).rte, 1e-6);
}

TEST(SolvePnp, DeterministicUnderSeed) {
  Rng rng(9);
  const Pose gt = random_pose(rng, 20, 0.3);
  auto pairs = exact_pairs(rng, gt, test_camera(), 30);
  for (int i = 0; i < 10; ++i) pairs[static_cast<std::size_t>(i)].pixel += Eigen::Vector2d(rng.normal(0, 20), rng.normal(0, 20));
  const PnpResult a = solve_pnp(pairs, test_camera(), {.seed = 4});
  const PnpResult b = solve_pnp(pairs, test_camera(), {.seed = 4});
  EXPECT_EQ(a.pose.rotation, b.pose.rotation);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.inliers, b.inliers);
}
