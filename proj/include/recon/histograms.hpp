#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "recon/octree_file.hpp"
#include "recon/range_image.hpp"
#include "recon/treetop.hpp"

namespace recon {

inline constexpr int kBins = 8;

/// Center of histogram bin b on [-1, 1].
inline double bin_center(int b) { return -1.0 + 0.25 * b + 0.125; }

struct VoteParams {
  double delta_multiplier = 6.0;
  double eta_multiplier = 18.0;
};

struct VoxelView {
  Vec3 center;
  double r_c = 0.0;
  std::array<std::uint32_t, 8>* histogram = nullptr;
};

struct Vote {
  int bin = 0;
  std::uint32_t weight = 0;
};

/// Bin for a signed distance `a` along the ray, or none when the voxel lies
/// beyond the occluded band.
std::optional<int> vote_bin(double a, double r_x, const VoteParams& params = {});

/// Projects the voxel into the pyramid and adds the image's vote weight to the
/// matching bin.
std::optional<Vote> add_to_voxel_histograms(const DepthPyramid& pyr, VoxelView voxel, const VoteParams& params = {});

struct ImageEntry {
  std::filesystem::path path;
  RangeImageSummary summary;
};

struct LeafVoteStats {
  std::vector<std::size_t> images_voted;
  std::uint64_t votes = 0;
};

/// Votes every overlapping image into the leaf's records. Holds one image
/// pyramid and the leaf's records at a time.
LeafVoteStats vote_leaf(OctreeFile& octree, const TreetopNode& leaf, std::span<const ImageEntry> images,
                        const VoteParams& params = {});

/// Votes one pyramid into a record range held in memory.
std::uint64_t vote_records(const DepthPyramid& pyr, const RootFrame& frame, std::span<CubeRecord> records,
                           const VoteParams& params = {});

}  // namespace recon
