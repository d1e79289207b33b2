#include "recon/morton.hpp"

#include <cmath>

namespace recon {

namespace {

int shift_for_level(int level) { return kPathBits - 3 * level; }

}  // namespace

MortonCode MortonCode::from_key(u128 key) {
  MortonCode c;
  c.depth = static_cast<std::uint8_t>(key & 0x3f);
  c.path = key >> 6;
  return c;
}

int MortonCode::octant_at(int level) const { return static_cast<int>((path >> shift_for_level(level)) & 7); }

MortonCode encode(int depth, CellCoord c) {
  RECON_REQUIRE(depth >= 0 && depth <= kMaxDepth, "depth out of range");
  const std::uint64_t limit = std::uint64_t(1) << depth;
  RECON_REQUIRE(c.x < limit && c.y < limit && c.z < limit, "cell coordinate out of range for depth");
  MortonCode code;
  code.depth = static_cast<std::uint8_t>(depth);
  for (int level = 1; level <= depth; ++level) {
    const int bit = depth - level;
    const u128 oct = ((c.x >> bit) & 1u) | (((c.y >> bit) & 1u) << 1) | (((c.z >> bit) & 1u) << 2);
    code.path |= oct << shift_for_level(level);
  }
  return code;
}

CellCoord decode(const MortonCode& code) {
  CellCoord c;
  for (int level = 1; level <= code.depth; ++level) {
    const int oct = code.octant_at(level);
    c.x = (c.x << 1) | (oct & 1);
    c.y = (c.y << 1) | ((oct >> 1) & 1);
    c.z = (c.z << 1) | ((oct >> 2) & 1);
  }
  return c;
}

MortonCode root_code() { return MortonCode{}; }

MortonCode parent(const MortonCode& code) {
  RECON_REQUIRE(code.depth >= 1, "root has no parent");
  return truncate(code, code.depth - 1);
}

MortonCode child(const MortonCode& code, int octant) {
  RECON_REQUIRE(code.depth < kMaxDepth, "cell at maximum depth has no children");
  RECON_REQUIRE(octant >= 0 && octant < 8, "octant out of range");
  MortonCode c;
  c.depth = static_cast<std::uint8_t>(code.depth + 1);
  c.path = code.path | (u128(octant) << shift_for_level(c.depth));
  return c;
}

std::array<MortonCode, 8> children(const MortonCode& code) {
  std::array<MortonCode, 8> out;
  for (int i = 0; i < 8; ++i) out[i] = child(code, i);
  return out;
}

std::optional<MortonCode> face_neighbor(const MortonCode& code, Face face) {
  CellCoord c = decode(code);
  const std::uint64_t limit = std::uint64_t(1) << code.depth;
  std::uint32_t* axis[3] = {&c.x, &c.y, &c.z};
  std::uint32_t& v = *axis[face_axis(face)];
  if (face_positive(face)) {
    if (v + 1 >= limit) return std::nullopt;
    ++v;
  } else {
    if (v == 0) return std::nullopt;
    --v;
  }
  return encode(code.depth, c);
}

MortonCode truncate(const MortonCode& code, int d) {
  if (d >= code.depth) return code;
  MortonCode t;
  t.depth = static_cast<std::uint8_t>(d);
  const int keep = 3 * d;
  t.path = keep == 0 ? u128(0) : (code.path >> (kPathBits - keep)) << (kPathBits - keep);
  return t;
}

bool contains(const MortonCode& a, const MortonCode& b) {
  return a.depth <= b.depth && truncate(b, a.depth) == a;
}

MortonCode finest_cell(u128 z_index) {
  MortonCode c;
  c.depth = kMaxDepth;
  c.path = z_index;
  return c;
}

std::string to_string(const MortonCode& code) {
  std::string s = std::to_string(code.depth) + ":";
  for (int level = 1; level <= code.depth; ++level) s += static_cast<char>('0' + code.octant_at(level));
  return s;
}

Vec3 RootFrame::cell_min(const MortonCode& code) const {
  const CellCoord c = decode(code);
  const double e = edge(code.depth);
  return center - Vec3::Constant(r_root) + e * Vec3(c.x, c.y, c.z);
}

Vec3 RootFrame::cell_center(const MortonCode& code) const {
  return cell_min(code) + Vec3::Constant(half_edge(code.depth));
}

std::optional<MortonCode> RootFrame::locate(const Vec3& p, int depth) const {
  const Vec3 rel = (p - (center - Vec3::Constant(r_root))) / edge(depth);
  const double limit = double(std::uint64_t(1) << depth);
  CellCoord c;
  std::uint32_t* axis[3] = {&c.x, &c.y, &c.z};
  for (int i = 0; i < 3; ++i) {
    const double f = std::floor(rel[i]);
    if (!(f >= 0.0 && f < limit)) return std::nullopt;
    *axis[i] = static_cast<std::uint32_t>(f);
  }
  return encode(depth, c);
}

}  // namespace recon
