#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "recon/octree_file.hpp"

namespace recon {

/// A cell of the octree seen at level L: a leaf of depth <= L or the depth-L
/// ancestor of finer leaves.
struct ViewCell {
  MortonCode code;
  std::array<std::uint32_t, 8> hist{};
  double u = 0.0;
  Vec3 v = Vec3::Zero();
  std::uint64_t first = 0;  // leaf records [first, last) covered
  std::uint64_t last = 0;
};

struct ViewNeighbor {
  std::uint32_t cell = 0;
  double weight = 0.0;  // fraction of the face covered
  double area = 0.0;    // shared face area, world units
};

/// Interior cells A (indices [0, interior)) followed by frozen halo cells B.
/// Adjacency is stored for A cells only.
struct LevelView {
  RootFrame frame;
  int level = 0;
  std::vector<ViewCell> cells;
  std::size_t interior = 0;
  std::vector<std::uint32_t> adj_offset;  // size interior * 6 + 1
  std::vector<ViewNeighbor> adj;

  std::size_t size() const { return cells.size(); }
  std::size_t halo() const { return cells.size() - interior; }
  double edge(std::size_t i) const { return frame.edge(cells[i].code.depth); }
  Vec3 center(std::size_t i) const { return frame.cell_center(cells[i].code); }
  /// Neighbors of A cell i across face f; empty at the root boundary.
  std::span<const ViewNeighbor> neighbors(std::size_t i, Face f) const {
    const std::size_t k = i * 6 + static_cast<std::size_t>(f);
    return {adj.data() + adj_offset[k], adj.data() + adj_offset[k + 1]};
  }
};

/// Finds the leaf containing a finest Z index, caching halo lookups.
class LeafLocator {
 public:
  LeafLocator(const CellSource& source, std::size_t cache_limit) : source_(source), cache_limit_(cache_limit) {}
  /// Returns (record index, record).
  std::pair<std::uint64_t, CubeRecord> locate(u128 z);
  std::size_t cached() const { return cache_.size(); }

 private:
  const CellSource& source_;
  std::size_t cache_limit_;
  std::map<u128, std::pair<std::uint64_t, CubeRecord>> cache_;
};

/// A = records [first, last) viewed at level L, aggregated; B = face-neighbor
/// cells outside the range with u, v read from their leaves. The range must
/// not split a level-L cell.
LevelView build_level_view(const CellSource& source, std::uint64_t first, std::uint64_t last, int level);

/// Number of distinct level-L cells for every L in [0, 30] over the whole file.
std::array<std::uint64_t, kMaxDepth + 1> level_cell_counts(const CellSource& source);

}  // namespace recon
