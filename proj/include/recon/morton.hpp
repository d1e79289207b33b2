#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "recon/common.hpp"

namespace recon {

inline constexpr int kMaxDepth = 30;
inline constexpr int kPathBits = 3 * kMaxDepth;

/// Cell coordinates at a given depth.
struct CellCoord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;
  friend bool operator==(const CellCoord&, const CellCoord&) = default;
};

enum class Face : std::uint8_t { kNegX = 0, kPosX, kNegY, kPosY, kNegZ, kPosZ };
inline constexpr std::array<Face, 6> kAllFaces = {Face::kNegX, Face::kPosX, Face::kNegY,
                                                  Face::kPosY, Face::kNegZ, Face::kPosZ};

inline int face_axis(Face f) { return static_cast<int>(f) / 2; }
inline bool face_positive(Face f) { return static_cast<int>(f) % 2 == 1; }
inline Face opposite(Face f) { return static_cast<Face>(static_cast<int>(f) ^ 1); }

/// Octree cell address: `depth` octant triplets stored most-significant first
/// in a 90-bit path, left-aligned, unused low bits zero. Octant index is
/// x | y << 1 | z << 2. The path is also the Z-order index of the cell's first
/// finest-level descendant.
struct MortonCode {
  u128 path = 0;
  std::uint8_t depth = 0;

  /// 96-bit key: path above a 6-bit depth field. Orders like (path, depth),
  /// which is preorder Z-curve traversal.
  u128 key() const { return (path << 6) | depth; }
  static MortonCode from_key(u128 key);

  /// Z-order index range [begin, end) of finest-level cells covered.
  u128 begin() const { return path; }
  u128 end() const { return path + (u128(1) << (3 * (kMaxDepth - depth))); }

  int octant_at(int level) const;  // level in [1, depth]

  friend bool operator==(const MortonCode&, const MortonCode&) = default;
  friend std::strong_ordering operator<=>(const MortonCode& a, const MortonCode& b) {
    if (a.path != b.path) return a.path < b.path ? std::strong_ordering::less : std::strong_ordering::greater;
    return a.depth <=> b.depth;
  }
};

MortonCode encode(int depth, CellCoord c);
CellCoord decode(const MortonCode& code);

MortonCode root_code();
MortonCode parent(const MortonCode& code);
MortonCode child(const MortonCode& code, int octant);
std::array<MortonCode, 8> children(const MortonCode& code);
/// Same-depth neighbor across a face; absent outside the root cube.
std::optional<MortonCode> face_neighbor(const MortonCode& code, Face face);
/// Ancestor at depth `d` (or the code itself when d >= depth).
MortonCode truncate(const MortonCode& code, int d);
/// True if `a` equals or is an ancestor of `b`.
bool contains(const MortonCode& a, const MortonCode& b);
/// Finest-level cell containing the finest-level Z index.
MortonCode finest_cell(u128 z_index);
/// Readable form "depth:octants", e.g. "3:071".
std::string to_string(const MortonCode& code);

struct MortonKeyHash {
  std::size_t operator()(const MortonCode& c) const {
    const u128 k = c.key();
    const auto lo = static_cast<std::uint64_t>(k);
    const auto hi = static_cast<std::uint64_t>(k >> 64);
    return std::hash<std::uint64_t>{}(lo ^ (hi * 0x9e3779b97f4a7c15ull));
  }
};

/// Root cube placement in world space.
struct RootFrame {
  Vec3 center = Vec3::Zero();
  double r_root = 1.0;  // half edge length

  friend bool operator==(const RootFrame&, const RootFrame&) = default;

  double half_edge(int depth) const { return r_root / double(std::uint64_t(1) << depth); }
  double edge(int depth) const { return 2.0 * half_edge(depth); }
  Vec3 cell_min(const MortonCode& code) const;
  Vec3 cell_center(const MortonCode& code) const;
  /// Cell at `depth` containing `p`; absent outside the root cube.
  std::optional<MortonCode> locate(const Vec3& p, int depth) const;
};

}  // namespace recon
