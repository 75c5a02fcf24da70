// synthbench, file formats and reports.

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "helpers.hpp"

using namespace hgi2p;
using namespace hgi2p::test;

namespace {

Correspondence from_gt(const Scene& s, const GtPair& g) {
  Correspondence c;
  c.pixel = s.rs2d.pixel_coords(g.pixel);
  c.pixel_index = g.pixel;
  c.point = s.rs3d.point(g.point);
  c.point_index = g.point;
  return c;
}

}  // namespace

// --------------------------------------------------------------- generator

TEST(GenerateScene, PureInConfigAndSeed) {
  for (const char* preset : {"exact", "clean", "noisy", "toy"}) {
    const SceneConfig cfg = SceneConfig::preset(preset);
    EXPECT_EQ(serialize_scene(generate_scene(cfg, 42)), serialize_scene(generate_scene(cfg, 42))) << preset;
    EXPECT_NE(serialize_scene(generate_scene(cfg, 42)), serialize_scene(generate_scene(cfg, 43))) << preset;
  }
}

TEST(GenerateScene, GroundTruthPairsReprojectWithinHalfPixel) {
  for (const char* preset : {"exact", "clean", "noisy", "toy"}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Scene s = generate_scene(SceneConfig::preset(preset), seed);
      ASSERT_FALSE(s.gt_pairs.empty());
      double worst = 0.0;
      for (const auto& g : s.gt_pairs) {
        const auto px = project(s.rs3d.point(g.point), s.gt_pose, s.k);
        ASSERT_TRUE(px);
        worst = std::max(worst, (*px - s.rs2d.pixel_coords(g.pixel)).norm());
      }
      EXPECT_LE(worst, 0.5) << preset << " seed " << seed;
    }
  }
}

TEST(GenerateScene, EdgesRecomputeAndCountsInRange) {
  for (const char* preset : {"clean", "noisy"}) {
    const SceneConfig cfg = SceneConfig::preset(preset);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Scene s = generate_scene(cfg, seed);
      EXPECT_EQ(s.gt_edges, build_gt_heterogeneous_edges(s.rs2d, s.rs3d, s.gt_pose, s.k));
      EXPECT_GE(s.rs2d.count(), cfg.min_visible_regions);
      EXPECT_LE(s.rs2d.count(), cfg.max_patches);
      EXPECT_LE(s.rs3d.count(), cfg.max_patches);
      EXPECT_LE(s.rs2d.count(), kDefaultMaxRegions);
      EXPECT_TRUE(s.gt_pose.is_valid());
    }
  }
}

TEST(GenerateScene, PoseNearIdentity) {
  const SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PoseError e = pose_error(generate_scene(cfg, seed).gt_pose, Pose::identity());
    EXPECT_LE(e.rte, cfg.max_translation + 1e-12);
    EXPECT_LE(e.rre, cfg.max_rotation_deg + 1e-9);
  }
}

TEST(GenerateScene, ImpossibleVisibilityExhaustsRetries) {
  SceneConfig cfg = SceneConfig::toy();
  cfg.min_visible_regions = 4;
  EXPECT_TRUE(throws_code([&] { generate_scene(cfg, 1); }, ErrorCode::RetryExhausted));
  cfg.channels = 2;
  EXPECT_TRUE(throws_code([&] { generate_scene(cfg, 1); }, ErrorCode::InvalidArgument));
  EXPECT_TRUE(throws_code([] { SceneConfig::preset("foggy"); }, ErrorCode::InvalidArgument));
}

// --------------------------------------------------------------- metrics

TEST(InlierRatio, ExactEmptyAndPruned) {
  const Scene s = generate_scene(SceneConfig::exact(), 3);
  CorrespondenceSet cs;
  for (std::size_t i = 0; i < s.gt_pairs.size(); i += 50) cs.push_back(from_gt(s, s.gt_pairs[i]));
  EXPECT_DOUBLE_EQ(inlier_ratio(cs, s), 1.0);
  EXPECT_DOUBLE_EQ(inlier_ratio({}, s), 0.0);
  EXPECT_DOUBLE_EQ(kDefaultInlierRadius, 0.05);

  const std::size_t n = cs.size();
  for (std::size_t i = 0; i < n; ++i) {
    Correspondence bad = cs[i];
    bad.point += Eigen::Vector3d(0.2, 0, 0);
    bad.flag = InlierFlag::Pruned;
    cs.push_back(bad);
  }
  EXPECT_DOUBLE_EQ(inlier_ratio(cs, s), 1.0);
  EXPECT_DOUBLE_EQ(inlier_ratio(cs, s, kDefaultInlierRadius, true), 0.5);
}

TEST(InlierRatio, UsesThreeDimensionalRadius) {
  const Scene s = generate_scene(SceneConfig::exact(), 4);
  Correspondence c = from_gt(s, s.gt_pairs.front());
  c.point += Eigen::Vector3d(0, 0.049, 0);
  EXPECT_DOUBLE_EQ(inlier_ratio({c}, s), 1.0);
  c.point += Eigen::Vector3d(0, 0.002, 0);
  EXPECT_DOUBLE_EQ(inlier_ratio({c}, s), 0.0);
}

TEST(RegistrationRecall, CountingExamples) {
  const std::vector<PoseError> mixed = {{0.01, 0.0}, {0.09, 0.0}};
  EXPECT_DOUBLE_EQ(registration_recall(mixed, 0.05), 0.5);
  const std::vector<PoseError> exact(4, PoseError{0.0, 0.0});
  for (double t : {0.025, 0.05, 0.10}) EXPECT_DOUBLE_EQ(registration_recall(exact, t), 1.0);
  EXPECT_DOUBLE_EQ(registration_recall({}, 0.05), 0.0);
}

TEST(RegistrationRecall, MonotoneInThreshold) {
  Rng rng(5);
  std::vector<PoseError> errs;
  for (int i = 0; i < 50; ++i) errs.push_back({rng.uniform(0, 0.2), rng.uniform(0, 5)});
  double prev = 0.0;
  for (double t = 0.0; t <= 0.25; t += 0.005) {
    const double rr = registration_recall(errs, t);
    EXPECT_GE(rr, prev);
    prev = rr;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(Pipeline, PruningDoesNotLowerInlierRatioInExactRegime) {
  const Model model = Model::identity(kDefaultMaxRegions, kDefaultMaxRegions, SceneConfig{}.channels);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = generate_scene(SceneConfig::exact(), 500 + seed);
    const Registration reg = register_pair(model, s.rs2d, s.rs3d, s.k, {});
    EXPECT_GE(inlier_ratio(reg.correspondences, s), inlier_ratio(reg.correspondences, s, kDefaultInlierRadius, true))
        << "seed " << 500 + seed;
  }
}

TEST(Pipeline, GroundTruthEdgeOverrideOnNoiseFreeScene) {
  const Scene s = generate_scene(SceneConfig::exact(), 6);
  const Model model = Model::identity(kDefaultMaxRegions, kDefaultMaxRegions, s.rs2d.channels());
  const Registration reg = register_pair(model, s.rs2d, s.rs3d, s.k, {}, &s.gt_edges);
  EXPECT_LT(pose_error(reg.result.pose, s.gt_pose).rte, 1e-3);
  std::vector<std::string> stages;
  for (const auto& t : reg.timings) stages.push_back(t.stage);
  EXPECT_EQ(stages, (std::vector<std::string>{"edges", "adapt", "match", "seed", "prune", "pose"}));
}

// --------------------------------------------------------------- model file

TEST(ModelFile, RoundTripIsExact) {
  Rng rng(7);
  Model m = perturbed_model(rng, 4, 5, 6);
  m.alpha = 1.25;
  m.he.beta = 0.3;
  m.tau2d = 12.5;
  m.he.neighbor_attention = true;
  const std::string bytes = serialize_model(m);
  EXPECT_EQ(bytes.substr(0, 6), std::string("HGI2P\0", 6));
  const Model back = parse_model(bytes);
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(back.mp.m_max, 4);
  EXPECT_EQ(back.mp.n_max, 5);
  EXPECT_EQ(back.alpha, 1.25);
  EXPECT_EQ(back.he.beta, 0.3);
  EXPECT_EQ(back.tau2d, 12.5);
  EXPECT_TRUE(back.he.neighbor_attention);
  const auto a = m.matrices();
  const auto b = back.matrices();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]) << Model::kMatrixNames[i];
}

TEST(ModelFile, CorruptInputNamesSourceAndOffset) {
  const std::string bytes = serialize_model(Model::identity(2, 2, 4));
  try {
    parse_model(bytes.substr(0, bytes.size() - 3), "m.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("m.bin at byte"), std::string::npos) << e.what();
  }
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_TRUE(throws_code([&] { parse_model(bad); }, ErrorCode::ParseError));
  EXPECT_TRUE(throws_code([&] { parse_model(bytes + "x"); }, ErrorCode::ParseError));
  EXPECT_TRUE(throws_code([] { load_model("/nonexistent/model.bin"); }, ErrorCode::IoError));
}

// --------------------------------------------------------------- scene file

TEST(SceneFile, SerializeParseSerializeIsByteIdentical) {
  for (const char* preset : {"exact", "noisy", "toy"}) {
    const Scene s = generate_scene(SceneConfig::preset(preset), 8);
    const std::string text = serialize_scene(s);
    const Scene back = parse_scene(text);
    EXPECT_EQ(serialize_scene(back), text) << preset;
    EXPECT_EQ(back.gt_edges, s.gt_edges);
    EXPECT_EQ(back.rs2d.features(), s.rs2d.features());
    EXPECT_EQ(back.rs3d.labels(), s.rs3d.labels());
    EXPECT_EQ(back.gt_pose.rotation, s.gt_pose.rotation);
  }
}

TEST(SceneFile, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "hgi2p_scene_file_test";
  std::filesystem::create_directories(dir);
  const Scene s = generate_scene(SceneConfig::toy(), 9);
  save_scene(s, dir / "s.json");
  EXPECT_EQ(serialize_scene(load_scene(dir / "s.json")), serialize_scene(s));
  std::filesystem::remove_all(dir);
}

TEST(SceneFile, SyntaxErrorNamesFileAndByte) {
  std::string text = serialize_scene(generate_scene(SceneConfig::toy(), 10));
  text.resize(text.size() / 2);
  try {
    parse_scene(text, "scenes/broken.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("scenes/broken.json at byte"), std::string::npos) << e.what();
  }
}

TEST(SceneFile, SemanticErrorsNameFile) {
  auto j = nlohmann::json::parse(serialize_scene(generate_scene(SceneConfig::toy(), 11)));
  j.erase("gt_pose");
  try {
    parse_scene(j.dump(), "a.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("a.json"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("gt_pose"), std::string::npos);
  }
}

TEST(SceneFile, MissingPixelFeaturesDerivedPerRegion) {
  const Scene s = generate_scene(SceneConfig::toy(), 12);
  auto j = nlohmann::json::parse(serialize_scene(s));
  j.erase("pixel_features");
  const Scene back = parse_scene(j.dump());
  ASSERT_EQ(back.rs2d.features().rows(), s.rs2d.features().rows());
  ASSERT_EQ(back.rs2d.features().cols(), s.rs2d.features().cols());
  for (int r = 0; r < back.rs2d.count(); ++r) {
    const auto& members = back.rs2d.members(r);
    for (int p : members) EXPECT_EQ(back.rs2d.features().row(p), back.rs2d.features().row(members.front()));
    EXPECT_NEAR(back.rs2d.features().row(members.front()).norm(), 1.0, 1e-12);
  }
}

// --------------------------------------------------------------- reports

TEST(Report, SummaryRecomputesFromRows) {
  std::vector<ReportRow> rows(3);
  rows[0] = {.scene = 1, .ok = true, .correspondences = 10, .kept = 8, .ir_pre = 0.5, .ir_post = 0.75, .rte = 0.01, .rre = 1.0};
  rows[1] = {.scene = 2, .ok = true, .correspondences = 10, .kept = 9, .ir_pre = 0.3, .ir_post = 0.25, .rte = 0.09, .rre = 3.0};
  rows[2] = {.scene = 3, .ok = false, .error = "seed: NoConsensus, \"x\""};
  const ReportSummary s = summarize(rows, {0.025, 0.05, 0.10});
  EXPECT_EQ(s.scenes, 3u);
  EXPECT_EQ(s.failed, 1u);
  EXPECT_DOUBLE_EQ(s.mean_ir_pre, 0.4);
  EXPECT_DOUBLE_EQ(s.mean_ir_post, 0.5);
  EXPECT_DOUBLE_EQ(s.mean_rte, 0.05);
  ASSERT_EQ(s.recall.size(), 3u);
  EXPECT_DOUBLE_EQ(s.recall[0].second, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.recall[1].second, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.recall[2].second, 2.0 / 3.0);

  const std::string csv = report_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kReportColumns);
  std::getline(in, line);
  EXPECT_EQ(line, "1,ok,10,8,0.5,0.75,0.01,1,");
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line, "3,failed,0,0,0,0,,,\"seed: NoConsensus, \"\"x\"\"\"");

  const std::string summary = report_summary(s, {{"model", "m.bin"}});
  EXPECT_NE(summary.find("rr@0.05 0.3333333333333333"), std::string::npos) << summary;
  EXPECT_NE(summary.find("config.model m.bin"), std::string::npos);
  EXPECT_NE(report_svg(rows).find("<svg"), std::string::npos);
}
