#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "recon/octree_file.hpp"
#include "recon/range_image.hpp"

namespace recon {

/// Depth d with 0.75 r <= r_root / 2^d < 1.5 r, clamped to [0, 30]. Equality
/// on the left resolves to the coarser depth.
int cube_depth_for_radius(double r_x, const RootFrame& frame);

struct SpawnResult {
  std::uint64_t samples = 0;
  std::uint64_t records = 0;
  std::uint64_t outside_root = 0;
};

/// One record per valid pixel at its radius-matched depth, sorted and merged.
std::vector<CubeRecord> spawn_records(const RangeImage& img, std::span<const float> radii, const RootFrame& frame,
                                      SpawnResult* result = nullptr);
SpawnResult spawn_cubes(const RangeImage& img, std::span<const float> radii, const RootFrame& frame,
                        const std::filesystem::path& out);

struct MergeStats {
  std::uint64_t records_in = 0;
  std::uint64_t records_out = 0;
};

/// k-way merge of sorted OCTR runs. Equal codes are merged in run order.
/// Resident records stay within memory_budget + runs.size().
MergeStats external_merge(std::span<const std::filesystem::path> runs, const std::filesystem::path& out,
                          std::size_t memory_budget);

struct BalanceStats {
  std::uint64_t records_in = 0;
  std::uint64_t records_out = 0;
  std::uint64_t rounds = 0;
  std::uint64_t dropped_ancestors = 0;
};

/// Produces the complete, face 2:1 balanced linear octree refining every input
/// code. Temporary runs go to `scratch`.
BalanceStats balance(const std::filesystem::path& in, const std::filesystem::path& out, std::size_t memory_budget,
                     const std::filesystem::path& scratch);

/// Complete linear octree whose leaves are the deepest codes of the sorted
/// input plus the coarsest blocks filling the gaps. Streams the input.
std::uint64_t linearize_complete(OctreeReader& in, OctreeWriter& out, std::uint64_t* dropped = nullptr);

/// Buffer size used by streaming stages for a given record budget.
std::size_t io_chunk(std::size_t memory_budget);

}  // namespace recon
