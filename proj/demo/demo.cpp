// Registers a few synthetic scenes with the untrained model, with and without
// pruning, and prints match quality and pose error.

#include <cstdio>
#include <cstdlib>
#include <string>

#include "hgi2p/hgi2p.hpp"

using namespace hgi2p;

int main(int argc, char** argv) {
  const std::string preset = argc > 1 ? argv[1] : "noisy";
  const int count = argc > 2 ? std::atoi(argv[2]) : 3;
  const SceneConfig cfg = SceneConfig::preset(preset);
  const Model model = Model::identity(kDefaultMaxRegions, kDefaultMaxRegions, cfg.channels);

  std::printf("%-6s %4s %4s %7s %7s %7s %9s %8s\n", "scene", "M", "N", "C", "kept", "IR", "rte[m]", "rre[deg]");
  for (int s = 0; s < count; ++s) {
    const Scene scene = generate_scene(cfg, static_cast<std::uint64_t>(s));
    for (bool prune : {false, true}) {
      RegisterOptions opt;
      opt.prune = prune;
      try {
        const Registration reg = register_pair(model, scene.rs2d, scene.rs3d, scene.k, opt);
        const PoseError err = pose_error(reg.result.pose, scene.gt_pose);
        std::printf("%-6d %4d %4d %7zu %7zu %7.3f %9.4f %8.3f%s\n", s, scene.rs2d.count(), scene.rs3d.count(),
                    reg.correspondences.size(), kept_pairs(reg.correspondences).size(),
                    inlier_ratio(reg.correspondences, scene), err.rte, err.rre, prune ? "  pruned" : "");
      } catch (const Error& e) {
        std::printf("%-6d failed: %s\n", s, e.what());
      }
    }
  }
}
