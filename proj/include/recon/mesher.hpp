#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "recon/level_view.hpp"
#include "recon/mesh.hpp"
#include "recon/treetop.hpp"

namespace recon {

/// Point on the finest grid, coordinates in [0, 2^30].
using GridPoint = std::array<std::uint32_t, 3>;

/// The 8 leaves around a grid point; corner i lies on the + side of axis a
/// iff bit a of i is set. Corners repeat where a coarser leaf covers several.
/// Outside the root cube a corner is the mirror image of the leaf inside,
/// with u = +1; `mirror` has bit 2a (2a + 1) set when mirrored across the low
/// (high) root face of axis a.
struct DualCell {
  GridPoint point{};
  std::array<MortonCode, 8> code;
  std::array<std::uint8_t, 8> mirror{};
  std::array<Vec3, 8> center;
  std::array<double, 8> u{};

  /// Identity of corner i shared by every dual cell that uses it.
  u128 corner_key(int i) const { return code[i].key() | (u128(mirror[i]) << 100); }
};

/// The 8 corner grid points of a leaf.
std::vector<GridPoint> leaf_corners(const MortonCode& leaf);

/// Finest Z index of the cell just below `p` on every axis (clamped into the
/// root cube); the dual cell at `p` belongs to the treetop leaf containing it.
u128 owner_z(const GridPoint& p);

/// Dual cell at `p` from any complete octree source.
DualCell dual_cell_at(const GridPoint& p, LeafLocator& locator, const RootFrame& frame);

/// Dual cells owned by records [first, last) of a complete octree, sorted by point.
std::vector<DualCell> build_dual_cells(const CellSource& source, std::uint64_t first, std::uint64_t last);

/// Polygon loops of one dual cell, each vertex named by its corner pair (a, b).
std::vector<std::vector<std::array<int, 2>>> polygonize(const DualCell& cell);

/// Zero crossing between two corners, computed with the smaller key first so
/// every caller gets the same bits.
Vec3 crossing_point(u128 ka, const Vec3& pa, double ua, u128 kb, const Vec3& pb, double ub);

/// Minimum-area triangulation of a closed polygon by interval DP. Ties go to
/// the lexicographically smallest set of diagonals.
std::vector<std::array<int, 3>> dp_triangulate(std::span<const Vec3> loop);

/// Triangulates the dual cells into a part; vertices are shared per cell pair.
MeshPart extract_part(std::span<const DualCell> cells, const MortonCode& leaf);

/// Area at most 1e-12 times the squared longest edge: repeated or collinear
/// vertices. Such triangles are never emitted.
bool degenerate_triangle(const Vec3& a, const Vec3& b, const Vec3& c);

/// Quadric edge collapse toward `target_faces`; border vertices never move.
MeshPart decimate(const MeshPart& part, std::size_t target_faces);

struct SeamReport {
  std::size_t border_edges = 0;
  std::size_t matched = 0;
  std::size_t unmatched = 0;
  std::size_t shared_vertices = 0;
};

/// Concatenates parts, merging bit-identical vertices. Every border edge must
/// be matched by exactly one other part unless `allow_open`.
Mesh merge_parts(std::span<const MeshPart> parts, SeamReport* report = nullptr, bool allow_open = false);

/// Meshes a whole octree held in a source as a single part.
MeshPart extract_whole(const CellSource& source);

struct MeshStageStats {
  std::size_t parts = 0;
  std::size_t triangles = 0;
  std::size_t dual_cells = 0;
};

/// Writes one MESHPART file per treetop leaf into `out_dir` (part_<i>.mpart).
/// Grid points are routed to their owning leaf through files in `scratch`.
MeshStageStats mesh_all_parts(const std::filesystem::path& solved, const Treetop& treetop,
                              const std::filesystem::path& out_dir, const std::filesystem::path& scratch);

}  // namespace recon
