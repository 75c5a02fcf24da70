// hgi2p: generate synthetic scenes, train, register and evaluate.
//
// Exit codes: 0 ok, 1 pipeline failure, 2 usage or I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hgi2p/hgi2p.hpp"

namespace fs = std::filesystem;
using namespace hgi2p;

namespace {

constexpr int kExitPipeline = 1;
constexpr int kExitUsage = 2;

struct SceneEntry {
  fs::path file;
  Scene scene;
};

std::vector<fs::path> scene_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(manifest));
      for (const auto& e : j.at("scenes")) files.push_back(dir / e.at("file").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, manifest.string() + ": " + e.what());
    }
  } else {
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  }
  return files;
}

std::string pose_json_row(const Pose& p) {
  std::vector<double> v;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v.push_back(p.rotation(r, c));
    v.push_back(p.translation(r));
  }
  return nlohmann::json(v).dump();
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    const double t = detail::parse_double(item, "--rr-threshold");
    if (!(t > 0.0)) throw Error(ErrorCode::InvalidArgument, "--rr-threshold values must be positive");
    out.push_back(t);
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "--rr-threshold is empty");
  return out;
}

unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HGI2P_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, static_cast<unsigned>(cap));
  }
  return std::max(1u, std::min<unsigned>(n, static_cast<unsigned>(std::max<std::size_t>(jobs, 1))));
}

// ------------------------------------------------------------------ commands

struct GenArgs {
  std::uint64_t seed = 0;
  int num_scenes = 8;
  std::string preset = "clean";
  fs::path out;
};

int cmd_gen(const GenArgs& a) {
  const SceneConfig cfg = SceneConfig::preset(a.preset);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + a.out.string() + ": " + ec.message());
  Rng rng(a.seed);
  nlohmann::json manifest{{"preset", a.preset}, {"seed", a.seed}, {"scenes", nlohmann::json::array()}};
  for (int i = 0; i < a.num_scenes; ++i) {
    const std::uint64_t scene_seed = rng.index(std::uint64_t{1} << 32);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d.json", i);
    save_scene(generate_scene(cfg, scene_seed), a.out / name);
    manifest["scenes"].push_back({{"file", name}, {"seed", scene_seed}});
  }
  write_file(a.out / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

struct TrainArgs {
  fs::path scenes;
  int epochs = 50;
  double lr = 1e-3;
  double lambda1 = kDefaultLambda1;
  std::uint64_t seed = 0;
  int m_max = kDefaultMaxRegions;
  int n_max = kDefaultMaxRegions;
  double beta = kDefaultBeta;
  fs::path out;
};

int cmd_train(const TrainArgs& a) {
  std::vector<Scene> scenes;
  for (const auto& f : scene_files(a.scenes)) scenes.push_back(load_scene(f));
  if (scenes.empty()) throw Error(ErrorCode::IoError, "no scene files in " + a.scenes.string());
  const int channels = scenes.front().rs2d.channels();
  for (const auto& s : scenes)
    if (s.rs2d.channels() != channels || s.rs3d.channels() != channels) {
      throw Error(ErrorCode::ParseError, "scenes in " + a.scenes.string() + " disagree on feature width");
    }

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.lambda1 = a.lambda1;
  cfg.seed = a.seed;
  cfg.circle.seed = a.seed;
  const TrainResult r = train(Model::identity(a.m_max, a.n_max, channels, a.beta), scenes, cfg);
  save_model(r.model, a.out);

  std::ostringstream csv;
  csv << "epoch,total,corr,edge\n";
  for (std::size_t e = 0; e < r.trace.size(); ++e) {
    csv << e << ',' << detail::format_double(r.trace[e].total) << ',' << detail::format_double(r.trace[e].corr) << ','
        << detail::format_double(r.trace[e].edge) << '\n';
  }
  write_file(a.out.string() + ".loss.csv", csv.str());
  return 0;
}

struct RegisterArgs {
  fs::path model;
  fs::path scene;
  bool no_prune = false;
  bool gt_edges = false;
  fs::path out;
};

const char* flag_name(InlierFlag f) {
  switch (f) {
    case InlierFlag::Kept: return "kept";
    case InlierFlag::Pruned: return "pruned";
    case InlierFlag::Unknown: break;
  }
  return "unknown";
}

int cmd_register(const RegisterArgs& a) {
  const Model model = load_model(a.model);
  const Scene scene = load_scene(a.scene);
  RegisterOptions opt;
  opt.prune = !a.no_prune;
  const Registration reg =
      register_pair(model, scene.rs2d, scene.rs3d, scene.k, opt, a.gt_edges ? &scene.gt_edges : nullptr);
  for (const auto& t : reg.timings) std::fprintf(stderr, "stage %-6s %10.3f ms\n", t.stage.c_str(), t.milliseconds);

  const PoseError err = pose_error(reg.result.pose, scene.gt_pose);
  std::ostringstream out;
  out << "{\n  \"scene_seed\": " << scene.seed << ",\n  \"prune\": " << (opt.prune ? "true" : "false")
      << ",\n  \"gt_edges\": " << (a.gt_edges ? "true" : "false")
      << ",\n  \"pose\": " << pose_json_row(reg.result.pose)
      << ",\n  \"seed_pose\": " << (reg.seeded ? pose_json_row(reg.seed) : std::string("null"))
      << ",\n  \"rte\": " << detail::format_double(err.rte) << ",\n  \"rre\": " << detail::format_double(err.rre)
      << ",\n  \"inlier_ratio\": " << detail::format_double(inlier_ratio(reg.correspondences, scene))
      << ",\n  \"correspondences\": [";
  for (std::size_t i = 0; i < reg.correspondences.size(); ++i) {
    const auto& c = reg.correspondences[i];
    out << (i == 0 ? "\n    " : ",\n    ") << '[' << c.pixel_index << ", " << c.point_index << ", "
        << detail::format_double(c.score) << ", \"" << flag_name(c.flag) << "\"]";
  }
  out << "\n  ]\n}\n";
  write_file(a.out, out.str());
  return 0;
}

struct EvalArgs {
  fs::path model;
  fs::path scenes;
  std::string thresholds = "0.025,0.05,0.10";
  fs::path out;
  bool plot = false;
  bool no_prune = false;
};

ReportRow evaluate_scene(const Model& model, const fs::path& file, bool prune) {
  ReportRow row;
  Scene scene;
  try {
    scene = load_scene(file);
  } catch (const Error& e) {
    row.error = e.what();
    return row;
  }
  row.scene = scene.seed;
  try {
    RegisterOptions opt;
    opt.prune = prune;
    const Registration reg = register_pair(model, scene.rs2d, scene.rs3d, scene.k, opt);
    row.correspondences = reg.correspondences.size();
    row.kept = kept_pairs(reg.correspondences).size();
    row.ir_pre = inlier_ratio(reg.correspondences, scene, kDefaultInlierRadius, true);
    row.ir_post = inlier_ratio(reg.correspondences, scene);
    const PoseError err = pose_error(reg.result.pose, scene.gt_pose);
    row.rte = err.rte;
    row.rre = err.rre;
    row.ok = true;
  } catch (const Error& e) {
    row.error = e.what();
  }
  return row;
}

int cmd_eval(const EvalArgs& a) {
  const std::vector<double> thresholds = parse_thresholds(a.thresholds);
  const Model model = load_model(a.model);
  const auto files = scene_files(a.scenes);
  if (files.empty()) throw Error(ErrorCode::IoError, "no scene files in " + a.scenes.string());

  std::vector<ReportRow> rows(files.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < files.size(); i = next++) rows[i] = evaluate_scene(model, files[i], !a.no_prune);
  };
  std::vector<std::thread> pool;
  const unsigned workers = worker_count(files.size());
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& x, const ReportRow& y) { return x.scene < y.scene; });

  const std::map<std::string, std::string> config{{"model", a.model.string()},
                                                  {"scenes", a.scenes.string()},
                                                  {"prune", a.no_prune ? "false" : "true"},
                                                  {"rr_thresholds", a.thresholds}};
  write_file(a.out.string() + ".csv", report_csv(rows));
  write_file(a.out.string() + ".summary.txt", report_summary(summarize(rows, thresholds), config));
  if (a.plot) write_file(a.out.string() + ".svg", report_svg(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-to-point-cloud registration on heterogeneous region graphs"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate synthetic scenes and a manifest");
  g->add_option("--seed", gen.seed, "Base seed");
  g->add_option("--num-scenes", gen.num_scenes, "Number of scenes")->check(CLI::NonNegativeNumber);
  g->add_option("--noise-preset", gen.preset, "exact, clean, noisy or toy");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; also writes <out>.loss.csv");
  t->add_option("--scenes", tr.scenes, "Scene directory")->required();
  t->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--lambda1", tr.lambda1, "Edge-loss weight");
  t->add_option("--seed", tr.seed, "Shuffling and sampling seed");
  t->add_option("--m-max", tr.m_max, "Image region capacity")->check(CLI::PositiveNumber);
  t->add_option("--n-max", tr.n_max, "Cloud region capacity")->check(CLI::PositiveNumber);
  t->add_option("--beta", tr.beta, "Feature interaction weight")->check(CLI::Range(0.0, 1.0));
  t->add_option("--out", tr.out, "Model file")->required();

  RegisterArgs reg;
  auto* r = app.add_subcommand("register", "Register one scene; stage timings go to stderr");
  r->add_option("--model", reg.model, "Model file")->required();
  r->add_option("--scene", reg.scene, "Scene file")->required();
  r->add_flag("--no-prune", reg.no_prune, "Skip graph-consistency pruning");
  r->add_flag("--gt-edges", reg.gt_edges, "Use the scene's ground-truth edges instead of predicted ones");
  r->add_option("--out", reg.out, "Output JSON")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a model over a scene directory");
  e->add_option("--model", ev.model, "Model file")->required();
  e->add_option("--scenes", ev.scenes, "Scene directory")->required();
  e->add_option("--rr-threshold", ev.thresholds, "Comma-separated RR thresholds in meters");
  e->add_option("--out", ev.out, "Output prefix: <out>.csv, <out>.summary.txt, <out>.svg")->required();
  e->add_flag("--plot", ev.plot, "Also write an SVG chart of IR before and after pruning");
  e->add_flag("--no-prune", ev.no_prune, "Skip graph-consistency pruning");
  e->footer(std::string("CSV columns: ") + kReportColumns +
            "\n  ir_pre counts every match, ir_post only kept ones; rte/rre are empty for failed scenes."
            "\nHGI2P_THREADS caps the number of worker threads.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*r) return cmd_register(reg);
    if (*e) return cmd_eval(ev);
  } catch (const StageError& err) {
    std::cerr << "hgi2p: " << err.what() << '\n';
    return kExitPipeline;
  } catch (const Error& err) {
    std::cerr << "hgi2p: " << err.what() << '\n';
    switch (err.code()) {
      case ErrorCode::IoError:
      case ErrorCode::ParseError:
      case ErrorCode::InvalidArgument: return kExitUsage;
      default: return kExitPipeline;
    }
  } catch (const std::exception& err) {
    std::cerr << "hgi2p: " << err.what() << '\n';
    return kExitPipeline;
  }
  return kExitUsage;
}
