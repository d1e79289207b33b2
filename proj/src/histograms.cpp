#include "recon/histograms.hpp"

#include <algorithm>
#include <cmath>

#include "recon/parallel.hpp"

namespace recon {

std::optional<int> vote_bin(double a, double r_x, const VoteParams& params) {
  const double delta = params.delta_multiplier * r_x;
  const double eta = params.eta_multiplier * r_x;
  if (a < -eta) return std::nullopt;
  const double x = std::clamp(a / delta, -1.0, 1.0);
  return std::min(static_cast<int>(std::floor((x + 1.0) / 2.0 * kBins)), kBins - 1);
}

std::optional<Vote> add_to_voxel_histograms(const DepthPyramid& pyr, VoxelView voxel, const VoteParams& params) {
  RECON_REQUIRE(voxel.r_c > 0.0, "voxel radius must be positive");
  const auto proj = pyr.project(voxel.center, voxel.r_c);
  if (!proj || !proj->depth) return std::nullopt;
  const double a = *proj->depth - proj->distance;
  const auto bin = vote_bin(a, voxel.r_c, params);
  if (!bin) return std::nullopt;
  Vote vote{*bin, pyr.vote_weight()};
  if (voxel.histogram) (*voxel.histogram)[vote.bin] += vote.weight;
  return vote;
}

std::uint64_t vote_records(const DepthPyramid& pyr, const RootFrame& frame, std::span<CubeRecord> records,
                           const VoteParams& params) {
  std::vector<std::uint64_t> counts(records.size(), 0);
  parallel_for(records.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      CubeRecord& r = records[i];
      VoxelView voxel{frame.cell_center(r.code), r.density(frame), &r.hist};
      if (add_to_voxel_histograms(pyr, voxel, params)) counts[i] = 1;
    }
  });
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  return total;
}

LeafVoteStats vote_leaf(OctreeFile& octree, const TreetopNode& leaf, std::span<const ImageEntry> images,
                        const VoteParams& params) {
  RECON_REQUIRE(leaf.leaf && leaf.first <= leaf.last && leaf.last <= octree.size(), "invalid treetop leaf range");
  LeafVoteStats stats;
  const RootFrame& frame = octree.frame();
  std::vector<CubeRecord> records;
  RecordLease lease(static_cast<std::int64_t>(leaf.last - leaf.first));
  octree.read_range(leaf.first, leaf.last, records);
  if (records.empty()) return stats;

  double max_r = 0.0;
  for (const auto& r : records) max_r = std::max(max_r, r.density(frame));
  const double slack = params.eta_multiplier * max_r;
  const Vec3 lo = frame.cell_min(leaf.code);
  const Aabb box{lo, lo + Vec3::Constant(frame.edge(leaf.code.depth))};

  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!frustum_overlaps(images[i].summary, box, slack)) continue;
    RangeImage img;
    try {
      img = load_range_image(images[i].path);
    } catch (const std::exception& e) {
      throw IoError("voting leaf " + to_string(leaf.code) + ": " + e.what());
    }
    PyramidLease pyramid_lease;
    const DepthPyramid pyr(img);
    stats.votes += vote_records(pyr, frame, records, params);
    stats.images_voted.push_back(i);
  }
  octree.write_range(leaf.first, records);
  return stats;
}

}  // namespace recon
