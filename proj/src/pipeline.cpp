#include "recon/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "recon/mesher.hpp"
#include "recon/octree_build.hpp"
#include "recon/parallel.hpp"
#include "recon/resident.hpp"
#include "recon/synth.hpp"
#include "recon/treetop.hpp"

namespace recon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path spawn_dir(const PipelineConfig& c) { return c.work / "spawn"; }
fs::path merged_path(const PipelineConfig& c) { return c.work / "merged.octr"; }
fs::path balanced_path(const PipelineConfig& c) { return c.work / "balanced.octr"; }
fs::path treetop_path(const PipelineConfig& c) { return c.work / "treetop.ttop"; }
fs::path voted_path(const PipelineConfig& c) { return c.work / "voted.octr"; }
fs::path vote_manifest_path(const PipelineConfig& c) { return c.work / "vote_manifest.json"; }
fs::path solved_path(const PipelineConfig& c) { return c.work / "solved.octr"; }
fs::path parts_dir(const PipelineConfig& c) { return c.work / "parts"; }
fs::path decimated_dir(const PipelineConfig& c) { return c.work / "decimated"; }
fs::path tmp_dir(const PipelineConfig& c, Stage s) { return c.work / "tmp" / stage_name(s); }

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> part_files(const fs::path& dir, std::size_t count) {
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(dir / ("part_" + std::to_string(i) + ".mpart"));
  return out;
}

json stage_params(Stage s, const PipelineConfig& c) {
  json j;
  j["stage"] = stage_name(s);
  j["budget"] = c.budget();
  switch (s) {
    case Stage::kSpawn: {
      json inputs = json::array();
      for (const auto& p : read_manifest(c.manifest)) {
        const auto size = fs::exists(p) ? fs::file_size(p) : 0;
        inputs.push_back({{"path", fs::absolute(p).lexically_normal().string()}, {"bytes", size}});
      }
      j["inputs"] = inputs;
      j["min_root_radius"] = c.min_root_radius;
      break;
    }
    case Stage::kTreetop:
      j["leaf_cubes"] = c.leaf_cubes;
      break;
    case Stage::kVote:
      j["delta"] = c.vote.delta_multiplier;
      j["eta"] = c.vote.eta_multiplier;
      break;
    case Stage::kSolve:
      j["alpha0"] = c.solver.alpha0;
      j["alpha1"] = c.solver.alpha1;
      j["lambda"] = c.solver.lambda;
      j["iterations"] = c.solver.iterations;
      j["energy_every"] = c.solver.energy_every;
      j["leaf_cubes"] = c.leaf_cubes;
      j["snapshots"] = c.keep_level_snapshots;
      break;
    case Stage::kDecimate:
      j["ratio"] = c.decimate_ratio;
      break;
    case Stage::kFinalize:
      j["output"] = c.output_path().string();
      break;
    default:
      break;
  }
  return j;
}

fs::path artifact_path(const PipelineConfig& c, Stage s) {
  switch (s) {
    case Stage::kSpawn: return spawn_dir(c);
    case Stage::kMerge: return merged_path(c);
    case Stage::kBalance: return balanced_path(c);
    case Stage::kTreetop: return treetop_path(c);
    case Stage::kVote: return voted_path(c);
    case Stage::kSolve: return solved_path(c);
    case Stage::kMesh: return parts_dir(c);
    case Stage::kDecimate: return decimated_dir(c);
    case Stage::kFinalize: return c.output_path();
  }
  return c.work;
}

std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

void require_prior(Stage s, const PipelineConfig& c) {
  if (s == Stage::kSpawn) return;
  const Stage prev = kStages[stage_index(s) - 1];
  const auto report = load_report(c, prev);
  if (!report) {
    throw StageError(prev, "stage '" + stage_name(s) + "' needs the checkpoint of stage '" + stage_name(prev) +
                               "', which is missing; run `recon " + stage_name(prev) + "` first");
  }
  if (report->value("config_hash", std::string()) != stage_hash(prev, c)) {
    throw StageError(prev, "checkpoint of stage '" + stage_name(prev) +
                               "' was made with a different configuration; rerun `recon " + stage_name(prev) + "`");
  }
}

Treetop load_checked_treetop(const PipelineConfig& c) {
  if (!fs::exists(treetop_path(c))) {
    throw StageError(Stage::kTreetop, "treetop file is missing; run `recon treetop` first");
  }
  return load_treetop(treetop_path(c));
}

void require_file(const fs::path& p, Stage producer) {
  if (!fs::exists(p)) {
    throw StageError(producer, "missing artifact " + p.string() + "; rerun `recon " + stage_name(producer) + "`");
  }
}

StageReport run_spawn(const PipelineConfig& c) {
  StageReport r;
  const auto images = read_manifest(c.manifest);
  if (images.empty()) throw ConfigError("manifest " + c.manifest.string() + " lists no images");
  const RootFrame frame = compute_root_frame(images, c.min_root_radius);
  fs::remove_all(spawn_dir(c));
  fs::create_directories(spawn_dir(c));
  std::uint64_t samples = 0, outside = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const RangeImage img = load_range_image(images[i]);
    const auto radii = estimate_sample_radii(img);
    char name[32];
    std::snprintf(name, sizeof(name), "run_%05zu.octr", i);
    const SpawnResult s = spawn_cubes(img, radii, frame, spawn_dir(c) / name);
    samples += s.samples;
    outside += s.outside_root;
    r.records_out += s.records;
  }
  r.records_in = samples;
  r.details["images"] = images.size();
  r.details["samples_outside_root"] = outside;
  r.details["root_center"] = {frame.center.x(), frame.center.y(), frame.center.z()};
  r.details["root_radius"] = frame.r_root;
  return r;
}

StageReport run_merge(const PipelineConfig& c) {
  StageReport r;
  const auto runs = sorted_files(spawn_dir(c), ".octr");
  if (runs.empty()) throw StageError(Stage::kSpawn, "no spawn runs found; rerun `recon spawn`");
  const MergeStats m = external_merge(runs, merged_path(c), c.budget());
  r.records_in = m.records_in;
  r.records_out = m.records_out;
  r.details["runs"] = runs.size();
  return r;
}

StageReport run_balance(const PipelineConfig& c) {
  StageReport r;
  require_file(merged_path(c), Stage::kMerge);
  const fs::path scratch = tmp_dir(c, Stage::kBalance);
  fs::remove_all(scratch);
  const BalanceStats b = balance(merged_path(c), balanced_path(c), c.budget(), scratch);
  fs::remove_all(scratch);
  r.records_in = b.records_in;
  r.records_out = b.records_out;
  r.details["rounds"] = b.rounds;
  r.details["dropped_ancestors"] = b.dropped_ancestors;
  return r;
}

StageReport run_treetop(const PipelineConfig& c) {
  StageReport r;
  require_file(balanced_path(c), Stage::kBalance);
  const OctreeFile octree(balanced_path(c));
  const Treetop t = build_treetop(octree, c.leaf_cubes);
  save_treetop(t, treetop_path(c));
  r.records_in = octree.size();
  std::uint64_t largest = 0;
  for (const auto& leaf : t.leaves()) largest = std::max(largest, leaf.last - leaf.first);
  r.details["nodes"] = t.nodes().size();
  r.details["leaves"] = t.leaves().size();
  r.details["largest_leaf_records"] = largest;
  return r;
}

StageReport run_vote(const PipelineConfig& c) {
  StageReport r;
  require_file(balanced_path(c), Stage::kBalance);
  const Treetop t = load_checked_treetop(c);
  const std::string hash = stage_hash(Stage::kVote, c);

  // Resume only from a manifest written under the same configuration.
  json manifest;
  bool resume = false;
  if (fs::exists(vote_manifest_path(c)) && fs::exists(voted_path(c))) {
    std::ifstream in(vote_manifest_path(c));
    manifest = json::parse(in, nullptr, false);
    resume = !manifest.is_discarded() && manifest.value("config_hash", std::string()) == hash &&
             manifest.value("leaves", std::size_t(0)) == t.leaves().size() && !manifest.value("complete", true);
  }
  if (!resume) {
    fs::copy_file(balanced_path(c), voted_path(c), fs::copy_options::overwrite_existing);
    manifest = json{{"config_hash", hash}, {"leaves", t.leaves().size()}, {"complete", false}, {"done", json::object()}};
    write_json_atomic(vote_manifest_path(c), manifest);
  }

  const auto paths = read_manifest(c.manifest);
  std::vector<ImageEntry> images;
  for (const auto& p : paths) images.push_back(ImageEntry{p, RangeImageSummary::of(load_range_image(p))});

  OctreeFile balanced(balanced_path(c));
  OctreeFile voted(voted_path(c), true);
  std::uint64_t votes = 0;
  std::size_t resumed = 0;
  for (std::size_t k = 0; k < t.leaves().size(); ++k) {
    const auto& leaf = t.leaves()[k];
    const std::string key = to_string(leaf.code);
    if (manifest["done"].contains(key)) {
      ++resumed;
      continue;
    }
    {
      // Restore the leaf's records in case an interrupted run left partial votes.
      std::vector<CubeRecord> pristine;
      RecordLease lease(static_cast<std::int64_t>(leaf.last - leaf.first));
      balanced.read_range(leaf.first, leaf.last, pristine);
      voted.write_range(leaf.first, pristine);
    }
    const LeafVoteStats s = vote_leaf(voted, leaf, images, c.vote);
    votes += s.votes;
    manifest["done"][key] = s.images_voted;
    write_json_atomic(vote_manifest_path(c), manifest);
  }
  manifest["complete"] = true;
  write_json_atomic(vote_manifest_path(c), manifest);
  r.records_in = r.records_out = voted.size();
  r.details["votes"] = votes;
  r.details["leaves_resumed"] = resumed;
  r.details["images"] = images.size();
  return r;
}

StageReport run_solve(const PipelineConfig& c) {
  StageReport r;
  require_file(voted_path(c), Stage::kVote);
  const Treetop t = load_checked_treetop(c);
  CoarseToFineOptions opt;
  opt.params = c.solver;
  opt.leaf_budget = c.leaf_cubes;
  opt.scratch = tmp_dir(c, Stage::kSolve);
  opt.energy_csv = c.work / "reports" / "solve_energy.csv";
  opt.keep_level_snapshots = c.keep_level_snapshots;
  fs::remove_all(opt.scratch);
  const CoarseToFineReport s = solve_coarse_to_fine(voted_path(c), t, solved_path(c), opt);
  if (c.keep_level_snapshots) {
    const fs::path levels = c.work / "levels";
    fs::remove_all(levels);
    fs::create_directories(levels);
    json names = json::array();
    for (const auto& p : s.snapshots) {
      fs::rename(p, levels / p.filename());
      names.push_back((levels / p.filename()).string());
    }
    r.details["snapshots"] = names;
  }
  fs::remove_all(opt.scratch);
  r.records_in = r.records_out = read_octree_header(solved_path(c)).count;
  r.details["first_level"] = s.first_level;
  r.details["last_level"] = s.last_level;
  r.details["groups_per_level"] = s.groups_per_level;
  r.details["max_group_cells"] = s.max_group_cells;
  r.details["max_view_cells"] = s.max_view_cells;
  r.details["energy_csv"] = opt.energy_csv.string();
  return r;
}

StageReport run_mesh(const PipelineConfig& c) {
  StageReport r;
  require_file(solved_path(c), Stage::kSolve);
  const Treetop t = load_checked_treetop(c);
  fs::remove_all(parts_dir(c));
  const fs::path scratch = tmp_dir(c, Stage::kMesh);
  fs::remove_all(scratch);
  const MeshStageStats s = mesh_all_parts(solved_path(c), t, parts_dir(c), scratch);
  fs::remove_all(scratch);
  r.records_in = read_octree_header(solved_path(c)).count;
  r.details["parts"] = s.parts;
  r.details["triangles"] = s.triangles;
  r.details["dual_cells"] = s.dual_cells;
  return r;
}

StageReport run_decimate(const PipelineConfig& c) {
  StageReport r;
  const Treetop t = load_checked_treetop(c);
  const auto inputs = part_files(parts_dir(c), t.leaves().size());
  for (const auto& p : inputs) require_file(p, Stage::kMesh);
  fs::remove_all(decimated_dir(c));
  fs::create_directories(decimated_dir(c));
  std::size_t before = 0, after = 0;
  for (const auto& p : inputs) {
    const MeshPart part = load_mesh_part(p);
    const auto target =
        static_cast<std::size_t>(std::ceil(c.decimate_ratio * static_cast<double>(part.triangles.size())));
    const MeshPart out = decimate(part, target);
    before += part.triangles.size();
    after += out.triangles.size();
    save_mesh_part(out, decimated_dir(c) / p.filename());
  }
  r.details["faces_before"] = before;
  r.details["faces_after"] = after;
  return r;
}

StageReport run_finalize(const PipelineConfig& c) {
  StageReport r;
  const Treetop t = load_checked_treetop(c);
  const auto inputs = part_files(decimated_dir(c), t.leaves().size());
  std::vector<MeshPart> parts;
  for (const auto& p : inputs) {
    require_file(p, Stage::kDecimate);
    parts.push_back(load_mesh_part(p));
  }
  SeamReport seam;
  const Mesh mesh = merge_parts(parts, &seam);
  const fs::path out = c.output_path();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_mesh(mesh, out);
  const TopologyStats topo = topology(mesh);
  r.details["output"] = out.string();
  r.details["vertices"] = mesh.vertices.size();
  r.details["faces"] = mesh.triangles.size();
  r.details["border_edges"] = seam.border_edges;
  r.details["matched_border_edges"] = seam.matched;
  r.details["unmatched_border_edges"] = seam.unmatched;
  r.details["boundary_edges"] = topo.boundary_edges;
  r.details["components"] = topo.components;
  r.details["euler"] = topo.euler;
  return r;
}

}  // namespace

std::string stage_name(Stage s) {
  static const char* names[] = {"spawn", "merge", "balance", "treetop", "vote",
                                "solve", "mesh",  "decimate", "finalize"};
  return names[stage_index(s)];
}

std::optional<Stage> parse_stage(const std::string& name) {
  for (Stage s : kStages) {
    if (stage_name(s) == name) return s;
  }
  return std::nullopt;
}

void PipelineConfig::validate() const {
  if (manifest.empty()) throw ConfigError("no input manifest given");
  if (!fs::exists(manifest)) throw ConfigError("manifest " + manifest.string() + " does not exist");
  if (work.empty()) throw ConfigError("no work directory given");
  if (leaf_cubes < 8) throw ConfigError("leaf cube budget must be at least 8");
  if (budget() == 0) throw ConfigError("memory budget must be positive");
  if (!(vote.delta_multiplier > 0.0) || !(vote.eta_multiplier > 0.0)) {
    throw ConfigError("vote band multipliers must be positive");
  }
  if (!(solver.alpha0 > 0.0) || !(solver.alpha1 > 0.0) || !(solver.lambda > 0.0)) {
    throw ConfigError("alpha0, alpha1 and lambda must be positive");
  }
  if (solver.iterations <= 0 || solver.energy_every <= 0) throw ConfigError("iteration counts must be positive");
  if (!(decimate_ratio > 0.0 && decimate_ratio <= 1.0)) throw ConfigError("decimate ratio must be in (0, 1]");
  if (!(min_root_radius > 0.0)) throw ConfigError("minimum root radius must be positive");
}

RootFrame compute_root_frame(const std::vector<fs::path>& images, double min_radius) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  std::size_t samples = 0;
  for (const auto& path : images) {
    const RangeImage img = load_range_image(path);
    for (std::uint32_t y = 0; y < img.height; ++y) {
      for (std::uint32_t x = 0; x < img.width; ++x) {
        if (!img.valid(x, y)) continue;
        const Vec3 p = img.unproject(x, y);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
        ++samples;
      }
    }
  }
  if (samples == 0) throw Error("no valid samples in any input image");
  RootFrame frame;
  frame.center = 0.5 * (lo + hi);
  frame.r_root = std::max(1.05 * 0.5 * (hi - lo).maxCoeff(), min_radius);
  return frame;
}

std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string stage_hash(Stage s, const PipelineConfig& config) {
  json chain = json::array();
  for (Stage t : kStages) {
    chain.push_back(stage_params(t, config));
    if (t == s) break;
  }
  return hex64(config_hash(chain));
}

json StageReport::to_json() const {
  return json{{"stage", stage_name(stage)},
              {"config_hash", config_hash},
              {"wall_seconds", wall_seconds},
              {"peak_resident_records", peak_records},
              {"peak_resident_pyramids", peak_pyramids},
              {"records_in", records_in},
              {"records_out", records_out},
              {"details", details}};
}

fs::path report_path(const PipelineConfig& config, Stage s) {
  return config.work / "reports" / (stage_name(s) + ".json");
}

std::optional<json> load_report(const PipelineConfig& config, Stage s) {
  const fs::path p = report_path(config, s);
  if (!fs::exists(p)) return std::nullopt;
  std::ifstream in(p);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

bool stage_current(const PipelineConfig& config, Stage s) {
  const auto r = load_report(config, s);
  return r && r->value("config_hash", std::string()) == stage_hash(s, config) && fs::exists(artifact_path(config, s));
}

StageReport run_stage(Stage s, const PipelineConfig& config) {
  config.validate();
  require_prior(s, config);
  set_thread_count(config.threads);
  fs::create_directories(config.work / "reports");
  // A rerun invalidates this stage's report until it completes.
  fs::remove(report_path(config, s));

  auto& tracker = ResidentTracker::instance();
  tracker.reset_peaks();
  const auto start = std::chrono::steady_clock::now();
  StageReport r;
  try {
    switch (s) {
      case Stage::kSpawn: r = run_spawn(config); break;
      case Stage::kMerge: r = run_merge(config); break;
      case Stage::kBalance: r = run_balance(config); break;
      case Stage::kTreetop: r = run_treetop(config); break;
      case Stage::kVote: r = run_vote(config); break;
      case Stage::kSolve: r = run_solve(config); break;
      case Stage::kMesh: r = run_mesh(config); break;
      case Stage::kDecimate: r = run_decimate(config); break;
      case Stage::kFinalize: r = run_finalize(config); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(s, "stage '" + stage_name(s) + "' failed: " + e.what());
  }
  r.stage = s;
  r.config_hash = stage_hash(s, config);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.peak_records = tracker.peak_records();
  r.peak_pyramids = tracker.peak_pyramids();
  json j = r.to_json();
  j["memory_budget"] = config.budget();
  j["leaf_cubes"] = config.leaf_cubes;
  write_json_atomic(report_path(config, s), j);
  return r;
}

std::vector<StageReport> reconstruct(const PipelineConfig& config, bool force) {
  config.validate();
  std::vector<StageReport> reports;
  bool rerun = force;
  for (Stage s : kStages) {
    // Once one stage runs, every later one reruns.
    if (!rerun && stage_current(config, s)) continue;
    rerun = true;
    reports.push_back(run_stage(s, config));
  }
  return reports;
}

}  // namespace recon
