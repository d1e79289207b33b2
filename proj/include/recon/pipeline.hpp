#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "recon/histograms.hpp"
#include "recon/solver.hpp"

namespace recon {

enum class Stage : std::uint8_t { kSpawn, kMerge, kBalance, kTreetop, kVote, kSolve, kMesh, kDecimate, kFinalize };

inline constexpr std::array<Stage, 9> kStages = {Stage::kSpawn, Stage::kMerge,  Stage::kBalance,
                                                 Stage::kTreetop, Stage::kVote, Stage::kSolve,
                                                 Stage::kMesh,  Stage::kDecimate, Stage::kFinalize};

std::string stage_name(Stage s);
std::optional<Stage> parse_stage(const std::string& name);

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A stage could not run or failed; names the stage to rerun when a
/// checkpoint is missing.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what) : Error(what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct PipelineConfig {
  std::filesystem::path manifest;
  std::filesystem::path work;
  std::filesystem::path output;  // empty: <work>/mesh.ply
  std::uint64_t leaf_cubes = std::uint64_t(1) << 24;
  std::uint64_t memory_budget = 0;  // records; 0: leaf_cubes
  VoteParams vote;
  SolverParams solver;
  double decimate_ratio = 1.0;  // fraction of faces kept
  double min_root_radius = 1e-3;
  bool keep_level_snapshots = false;
  unsigned threads = 1;

  /// Throws ConfigError.
  void validate() const;
  std::uint64_t budget() const { return memory_budget ? memory_budget : leaf_cubes; }
  std::filesystem::path output_path() const { return output.empty() ? work / "mesh.ply" : output; }
};

/// Cube around all unprojected samples: center of their bounding box, half
/// edge 1.05 times half the largest extent, at least `min_radius`.
RootFrame compute_root_frame(const std::vector<std::filesystem::path>& images, double min_radius = 1e-3);

/// FNV-1a 64 of the canonical JSON dump.
std::uint64_t config_hash(const nlohmann::json& j);

/// Hash of the settings a stage depends on, chained through all earlier stages.
std::string stage_hash(Stage s, const PipelineConfig& config);

struct StageReport {
  Stage stage = Stage::kSpawn;
  std::string config_hash;
  double wall_seconds = 0.0;
  std::int64_t peak_records = 0;
  std::int64_t peak_pyramids = 0;
  std::uint64_t records_in = 0;
  std::uint64_t records_out = 0;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
};

std::filesystem::path report_path(const PipelineConfig& config, Stage s);
std::optional<nlohmann::json> load_report(const PipelineConfig& config, Stage s);

/// True when the stage's report exists with the current hash.
bool stage_current(const PipelineConfig& config, Stage s);

/// Runs one stage after checking the previous stage's checkpoint.
StageReport run_stage(Stage s, const PipelineConfig& config);

/// Runs every stage in order. Stages with a current report are skipped
/// unless `force`.
std::vector<StageReport> reconstruct(const PipelineConfig& config, bool force = false);

}  // namespace recon
