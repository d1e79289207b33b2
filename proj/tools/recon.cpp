#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <json.hpp>

#include "recon/pipeline.hpp"
#include "recon/synth.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

void add_pipeline_flags(CLI::App* cmd, recon::PipelineConfig& c, bool& force) {
  cmd->add_option("--manifest", c.manifest, "Text file listing RIMG paths")->required();
  cmd->add_option("--work", c.work, "Work directory (RECON_WORK overrides)");
  cmd->add_option("--out", c.output, "Output mesh (.ply or .obj)");
  cmd->add_option("--leaf-cubes", c.leaf_cubes, "Records per treetop leaf");
  cmd->add_option("--memory-budget", c.memory_budget, "Resident record budget (default: leaf cubes)");
  cmd->add_option("--delta", c.vote.delta_multiplier, "Vote band multiplier");
  cmd->add_option("--eta", c.vote.eta_multiplier, "Occluded band multiplier");
  cmd->add_option("--alpha0", c.solver.alpha0, "Weight of the second-order term");
  cmd->add_option("--alpha1", c.solver.alpha1, "Weight of the first-order term");
  cmd->add_option("--lambda", c.solver.lambda, "Data term weight");
  cmd->add_option("--iters", c.solver.iterations, "Iterations per level");
  cmd->add_option("--threads", c.threads, "Worker threads (0: all cores)");
  cmd->add_option("--decimate-ratio", c.decimate_ratio, "Fraction of faces kept by decimation");
  cmd->add_flag("--snapshots", c.keep_level_snapshots, "Keep the solved field of every level");
  cmd->add_flag("--force", force, "Rerun stages whose checkpoints are current");
}

void print_report(const recon::StageReport& r) {
  std::cout << recon::stage_name(r.stage) << ": " << r.wall_seconds << " s, peak records " << r.peak_records
            << ", records in " << r.records_in << ", out " << r.records_out << "\n";
}

int run_pipeline(std::optional<recon::Stage> stage, recon::PipelineConfig config, bool force) {
  if (const char* env = std::getenv("RECON_WORK"); env && *env) config.work = env;
  try {
    config.validate();
    if (stage) {
      print_report(recon::run_stage(*stage, config));
    } else {
      const auto reports = recon::reconstruct(config, force);
      if (reports.empty()) std::cout << "all stages current\n";
      for (const auto& r : reports) print_report(r);
      std::cout << "mesh written to " << config.output_path().string() << "\n";
    }
  } catch (const recon::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const recon::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-core surface reconstruction from range images"};
  app.require_subcommand(1);

  recon::PipelineConfig config;
  bool force = false;
  std::optional<recon::Stage> stage;
  bool pipeline = false;

  auto* rec = app.add_subcommand("reconstruct", "Run all stages");
  add_pipeline_flags(rec, config, force);
  rec->callback([&] { pipeline = true; });
  for (recon::Stage s : recon::kStages) {
    auto* cmd = app.add_subcommand(recon::stage_name(s), "Run the " + recon::stage_name(s) + " stage");
    add_pipeline_flags(cmd, config, force);
    cmd->callback([&, s] {
      pipeline = true;
      stage = s;
    });
  }

  std::string scene_name = "sphere";
  int cams = 20;
  std::uint32_t res = 128;
  std::string out_dir;
  double outliers = 0.0;
  std::uint64_t seed = 1;
  double fov = 45.0;
  double radius = 1.0;
  auto* synth = app.add_subcommand("synth", "Render a synthetic scene into range images");
  synth->add_option("--scene", scene_name, "sphere | box | two-spheres | plane-with-bump");
  synth->add_option("--cams", cams, "Number of cameras");
  synth->add_option("--res", res, "Image width and height");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--outliers", outliers, "Fraction of floater outliers per image");
  synth->add_option("--seed", seed, "Outlier seed");
  synth->add_option("--fov", fov, "Horizontal field of view, degrees");
  synth->add_option("--radius", radius, "Scene size");

  std::string mesh_path;
  auto* score = app.add_subcommand("score", "Score a mesh against a synthetic scene");
  score->add_option("--mesh", mesh_path, "Mesh file")->required();
  score->add_option("--scene", scene_name, "Scene name");
  score->add_option("--radius", radius, "Scene size");

  std::string ply_path, rimg_path;
  std::uint32_t width = 2048, height = 1024;
  std::vector<double> origin{0, 0, 0};
  auto* lidar = app.add_subcommand("import-lidar", "Convert a LIDAR point cloud to an equirectangular range image");
  lidar->add_option("--ply", ply_path, "ASCII PLY point cloud")->required();
  lidar->add_option("--out", rimg_path, "Output RIMG")->required();
  lidar->add_option("--width", width, "Image width");
  lidar->add_option("--height", height, "Image height");
  lidar->add_option("--origin", origin, "Scanner position x y z")->expected(3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (pipeline) return run_pipeline(stage, config, force);

  try {
    if (synth->parsed() || score->parsed()) {
      const auto kind = recon::parse_scene_kind(scene_name);
      if (!kind) {
        std::cerr << "config error: unknown scene '" << scene_name << "'\n";
        return kExitConfig;
      }
      const auto scene = recon::make_scene(*kind, radius);
      if (synth->parsed()) {
        const auto rig = recon::fibonacci_rig(scene, cams, res, fov);
        const auto manifest = recon::write_synthetic_dataset(scene, rig, out_dir, outliers, seed);
        std::cout << manifest.string() << "\n";
      } else {
        const auto r = recon::score(recon::load_mesh(mesh_path), scene);
        nlohmann::json j;
        j["empty"] = r.empty;
        if (!r.empty) {
          j["vertices"] = r.vertices;
          j["faces"] = r.faces;
          j["mean_abs_sdf"] = r.mean_abs_sdf;
          j["max_abs_sdf"] = r.max_abs_sdf;
          j["boundary_edges"] = r.boundary_edges;
          j["nonmanifold_edges"] = r.nonmanifold_edges;
          j["components"] = r.components;
          j["euler"] = r.euler;
          j["largest_component_euler"] = r.largest_euler;
        }
        std::cout << j.dump(2) << "\n";
      }
    } else if (lidar->parsed()) {
      const auto points = recon::load_ascii_ply_points(ply_path);
      recon::SensorPose pose;
      pose.origin = recon::Vec3(origin[0], origin[1], origin[2]);
      const auto conv = recon::lidar_to_range_image(points, pose, width, height);
      recon::save_range_image(conv.image, rimg_path);
      std::cout << conv.image.valid_count() << " samples, " << conv.skipped_at_origin << " skipped at origin\n";
    }
  } catch (const recon::ContractViolation& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
