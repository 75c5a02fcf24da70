#pragma once

// JSON scene files.
//
//   intrinsics      {fx, fy, cx, cy, width, height}
//   gt_pose         row-major 3x4 [R | t], world to camera
//   points          flat x, y, z per point
//   point_labels    region per point
//   point_features  flat row-major, points x channels
//   mask_rle        per image region, flat (start, length) runs over row-major pixel indices
//   pixel_features  optional, flat row-major, pixels x channels; when absent every
//                   labeled pixel gets its region signature (seeded by `seed`)
//   gt_pairs        flat (pixel, point) pairs
//   seed            generator seed
//   depth           optional per-pixel camera depth, 0 where unknown
//
// gt_edges are not stored; they are recomputed on load.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/model_io.hpp"
#include "hgi2p/random.hpp"
#include "hgi2p/regions.hpp"
#include "hgi2p/scene.hpp"
#include "hgi2p/synthbench.hpp"

namespace hgi2p {

namespace detail {

inline std::vector<double> flatten(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline Eigen::MatrixXd unflatten(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline std::vector<int> run_lengths(const std::vector<int>& members) {
  std::vector<int> runs;
  for (std::size_t i = 0; i < members.size();) {
    std::size_t j = i + 1;
    while (j < members.size() && members[j] == members[j - 1] + 1) ++j;
    runs.push_back(members[i]);
    runs.push_back(static_cast<int>(j - i));
    i = j;
  }
  return runs;
}

}  // namespace detail

inline std::string serialize_scene(const Scene& scene) {
  using nlohmann::json;
  json j;
  j["seed"] = scene.seed;
  j["intrinsics"] = {{"fx", scene.k.fx}, {"fy", scene.k.fy},         {"cx", scene.k.cx},
                     {"cy", scene.k.cy}, {"width", scene.k.width}, {"height", scene.k.height}};
  std::vector<double> pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.push_back(scene.gt_pose.rotation(r, c));
    pose.push_back(scene.gt_pose.translation(r));
  }
  j["gt_pose"] = pose;

  std::vector<double> points;
  points.reserve(3 * scene.rs3d.size());
  for (const auto& p : scene.rs3d.points()) points.insert(points.end(), {p.x(), p.y(), p.z()});
  j["points"] = points;
  j["point_labels"] = scene.rs3d.labels();
  j["point_features"] = detail::flatten(scene.rs3d.features());

  json rle = json::array();
  for (int r = 0; r < scene.rs2d.count(); ++r) rle.push_back(detail::run_lengths(scene.rs2d.members(r)));
  j["mask_rle"] = rle;
  j["pixel_features"] = detail::flatten(scene.rs2d.features());

  std::vector<int> pairs;
  pairs.reserve(2 * scene.gt_pairs.size());
  for (const auto& p : scene.gt_pairs) pairs.insert(pairs.end(), {p.pixel, p.point});
  j["gt_pairs"] = pairs;
  if (!scene.depth.empty()) j["depth"] = scene.depth;
  return j.dump();
}

inline Scene parse_scene(const std::string& text, const std::string& source = "<memory>") {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, source + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  auto bad = [&](const std::string& what) -> Error { return Error(ErrorCode::ParseError, source + ": " + what); };
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw bad(std::string("missing key '") + key + "'");
    return j.at(key);
  };

  try {
    Scene s;
    s.seed = need("seed").get<std::uint64_t>();
    const json& in = need("intrinsics");
    s.k = Intrinsics{in.at("fx").get<double>(),   in.at("fy").get<double>(),    in.at("cx").get<double>(),
                     in.at("cy").get<double>(),   in.at("width").get<int>(), in.at("height").get<int>()};
    if (s.k.width <= 0 || s.k.height <= 0) throw bad("image size must be positive");

    const auto pose = need("gt_pose").get<std::vector<double>>();
    if (pose.size() != 12) throw bad("gt_pose needs 12 numbers");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) s.gt_pose.rotation(r, c) = pose[static_cast<std::size_t>(4 * r + c)];
      s.gt_pose.translation(r) = pose[static_cast<std::size_t>(4 * r + 3)];
    }

    const auto flat_points = need("points").get<std::vector<double>>();
    if (flat_points.size() % 3 != 0) throw bad("points length is not a multiple of 3");
    const std::size_t n_points = flat_points.size() / 3;
    std::vector<Eigen::Vector3d> points(n_points);
    for (std::size_t i = 0; i < n_points; ++i) points[i] = {flat_points[3 * i], flat_points[3 * i + 1], flat_points[3 * i + 2]};
    auto point_labels = need("point_labels").get<std::vector<int>>();
    if (point_labels.size() != n_points) throw bad("point_labels length differs from point count");
    const auto point_features = need("point_features").get<std::vector<double>>();
    if (n_points == 0 || point_features.size() % n_points != 0) throw bad("point_features length is not points x channels");
    const auto channels = static_cast<Eigen::Index>(point_features.size() / n_points);
    int n_regions = 0;
    for (int l : point_labels) n_regions = std::max(n_regions, l + 1);

    const std::size_t n_pixels = static_cast<std::size_t>(s.k.width) * static_cast<std::size_t>(s.k.height);
    std::vector<int> pixel_labels(n_pixels, kUnlabeled);
    const json& rle = need("mask_rle");
    if (!rle.is_array()) throw bad("mask_rle must be an array");
    const int m_regions = static_cast<int>(rle.size());
    for (int r = 0; r < m_regions; ++r) {
      const auto runs = rle[static_cast<std::size_t>(r)].get<std::vector<int>>();
      if (runs.size() % 2 != 0) throw bad("mask_rle region " + std::to_string(r) + " has an odd length");
      for (std::size_t i = 0; i < runs.size(); i += 2) {
        const long start = runs[i];
        const long len = runs[i + 1];
        if (start < 0 || len <= 0 || static_cast<std::size_t>(start + len) > n_pixels) {
          throw bad("mask_rle region " + std::to_string(r) + " run out of range");
        }
        for (long p = start; p < start + len; ++p) {
          if (pixel_labels[static_cast<std::size_t>(p)] != kUnlabeled) throw bad("mask_rle regions overlap");
          pixel_labels[static_cast<std::size_t>(p)] = r;
        }
      }
    }

    Eigen::MatrixXd pixel_features;
    if (j.contains("pixel_features")) {
      const auto pf = j.at("pixel_features").get<std::vector<double>>();
      if (pf.size() != n_pixels * static_cast<std::size_t>(channels)) throw bad("pixel_features length is not pixels x channels");
      pixel_features = detail::unflatten(pf, static_cast<Eigen::Index>(n_pixels), channels);
    } else {
      Rng rng(s.seed);
      const Eigen::MatrixXd sig = detail::region_signatures(rng, m_regions, static_cast<int>(channels));
      pixel_features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_pixels), channels);
      for (std::size_t p = 0; p < n_pixels; ++p)
        if (pixel_labels[p] != kUnlabeled) pixel_features.row(static_cast<Eigen::Index>(p)) = sig.row(pixel_labels[p]);
    }

    s.rs2d = RegionSet2D(s.k.width, s.k.height, std::move(pixel_labels), m_regions, std::move(pixel_features));
    s.rs3d = RegionSet3D(std::move(points), std::move(point_labels), n_regions,
                         detail::unflatten(point_features, static_cast<Eigen::Index>(n_points), channels));

    const auto pairs = need("gt_pairs").get<std::vector<int>>();
    if (pairs.size() % 2 != 0) throw bad("gt_pairs has an odd length");
    for (std::size_t i = 0; i < pairs.size(); i += 2) {
      if (pairs[i] < 0 || static_cast<std::size_t>(pairs[i]) >= n_pixels || pairs[i + 1] < 0 ||
          static_cast<std::size_t>(pairs[i + 1]) >= n_points) {
        throw bad("gt_pairs entry out of range");
      }
      s.gt_pairs.push_back({pairs[i], pairs[i + 1]});
    }
    if (j.contains("depth")) {
      s.depth = j.at("depth").get<std::vector<double>>();
      if (s.depth.size() != n_pixels) throw bad("depth length differs from pixel count");
    }
    s.refresh_gt_edges();
    return s;
  } catch (const json::exception& e) {
    throw bad(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError) throw;
    throw bad(e.what());
  }
}

inline void save_scene(const Scene& scene, const std::filesystem::path& path) {
  write_file(path, serialize_scene(scene));
}

inline Scene load_scene(const std::filesystem::path& path) { return parse_scene(read_file(path), path.string()); }

}  // namespace hgi2p
