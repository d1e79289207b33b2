#include "support.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>

namespace recon::testing {

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto base = std::filesystem::temp_directory_path();
  do {
    path_ = base / ("recon_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  } while (std::filesystem::exists(path_));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

u128 interleave_bitwise(int depth, std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  u128 path = 0;
  for (int level = 1; level <= depth; ++level) {
    const int coord_bit = depth - level;
    const int base = 3 * (kMaxDepth - level);
    if ((x >> coord_bit) & 1u) path |= u128(1) << (base + 0);
    if ((y >> coord_bit) & 1u) path |= u128(1) << (base + 1);
    if ((z >> coord_bit) & 1u) path |= u128(1) << (base + 2);
  }
  return path;
}

std::string path_string(const MortonCode& c) {
  std::string s;
  for (int level = 1; level <= c.depth; ++level) {
    const int base = 3 * (kMaxDepth - level);
    s.push_back(char('0' + int((c.path >> base) & 7)));
  }
  return s;
}

MortonCode random_code(std::mt19937_64& rng, int min_depth, int max_depth) {
  const int d = std::uniform_int_distribution<int>(min_depth, max_depth)(rng);
  const std::uint32_t n = d == 0 ? 1u : (std::uint32_t(1) << d);
  std::uniform_int_distribution<std::uint32_t> coord(0, n - 1);
  return encode(d, {coord(rng), coord(rng), coord(rng)});
}

std::vector<MortonCode> random_surface_codes(std::mt19937_64& rng, std::size_t count, int min_depth, int max_depth) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3 c(0.3 + 0.4 * unit(rng), 0.3 + 0.4 * unit(rng), 0.3 + 0.4 * unit(rng));
  const double r = 0.1 + 0.25 * unit(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> depth(min_depth, max_depth);
  std::vector<MortonCode> codes;
  codes.reserve(count);
  while (codes.size() < count) {
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    if (dir.norm() < 1e-9) continue;
    const Vec3 p = c + r * dir.normalized();
    if ((p.array() < 0.0).any() || (p.array() >= 1.0).any()) continue;
    const int d = depth(rng);
    const double n = double(std::uint64_t(1) << d);
    codes.push_back(encode(d, {std::uint32_t(p.x() * n), std::uint32_t(p.y() * n), std::uint32_t(p.z() * n)}));
  }
  return codes;
}

namespace {

bool has_strict_descendant(const std::set<u128>& keys, const MortonCode& node) {
  auto it = keys.upper_bound(node.key());
  if (it == keys.end()) return false;
  return MortonCode::from_key(*it).path < node.end();
}

void split_into(const std::set<u128>& keys, const MortonCode& node, std::vector<MortonCode>& out) {
  if (node.depth < kMaxDepth && has_strict_descendant(keys, node)) {
    for (int o = 0; o < 8; ++o) split_into(keys, child(node, o), out);
  } else {
    out.push_back(node);
  }
}

}  // namespace

std::vector<MortonCode> complete_leaves(std::vector<MortonCode> codes) {
  std::set<u128> keys;
  for (const auto& c : codes) keys.insert(c.key());
  std::vector<MortonCode> out;
  split_into(keys, root_code(), out);
  return out;
}

std::vector<MortonCode> ripple_balance(const std::vector<MortonCode>& codes) {
  std::set<u128> leaves;
  for (const auto& c : complete_leaves(codes)) leaves.insert(c.key());
  auto holder = [&](const MortonCode& n) -> MortonCode {
    auto it = leaves.upper_bound(n.key());
    --it;
    return MortonCode::from_key(*it);
  };
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<MortonCode> snapshot;
    for (u128 k : leaves) snapshot.push_back(MortonCode::from_key(k));
    for (const auto& leaf : snapshot) {
      if (!leaves.count(leaf.key())) continue;
      for (Face f : kAllFaces) {
        const auto n = face_neighbor(leaf, f);
        if (!n) continue;
        const MortonCode m = holder(*n);
        if (contains(m, *n) && m.depth + 1 < leaf.depth) {
          leaves.erase(m.key());
          for (const auto& ch : children(m)) leaves.insert(ch.key());
          changed = true;
        }
      }
    }
  }
  std::vector<MortonCode> out;
  for (u128 k : leaves) out.push_back(MortonCode::from_key(k));
  return out;
}

bool exact_cover(const std::vector<MortonCode>& leaves) {
  u128 sum = 0;
  u128 expect_begin = 0;
  for (const auto& l : leaves) {
    if (l.begin() != expect_begin) return false;
    sum += u128(1) << (3 * (kMaxDepth - l.depth));
    expect_begin = l.end();
  }
  return sum == (u128(1) << (3 * kMaxDepth));
}

bool two_to_one(const std::vector<MortonCode>& leaves, std::string* witness) {
  for (const auto& leaf : leaves) {
    for (Face f : kAllFaces) {
      const auto n = face_neighbor(leaf, f);
      if (!n) continue;
      auto it = std::upper_bound(leaves.begin(), leaves.end(), *n);
      if (it == leaves.begin()) return false;
      const MortonCode m = *std::prev(it);
      if (!contains(m, *n)) continue;
      if (leaf.depth - m.depth > 1) {
        if (witness) *witness = to_string(leaf) + " next to " + to_string(m);
        return false;
      }
    }
  }
  return true;
}

std::vector<MortonCode> codes_of(const std::vector<CubeRecord>& records) {
  std::vector<MortonCode> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.code);
  return out;
}

std::vector<CubeRecord> records_of(const std::vector<MortonCode>& codes) {
  std::vector<CubeRecord> out;
  out.reserve(codes.size());
  for (const auto& c : codes) {
    CubeRecord r;
    r.code = c;
    out.push_back(r);
  }
  return out;
}

std::vector<CubeRecord> uniform_records(int depth) {
  const std::uint32_t n = std::uint32_t(1) << depth;
  std::vector<MortonCode> codes;
  for (std::uint32_t z = 0; z < n; ++z)
    for (std::uint32_t y = 0; y < n; ++y)
      for (std::uint32_t x = 0; x < n; ++x) codes.push_back(encode(depth, {x, y, z}));
  std::sort(codes.begin(), codes.end());
  return records_of(codes);
}

Mesh icosphere(int subdivisions, double r) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& v : m.vertices) v = v.normalized() * r;
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto [it, fresh] = mid.try_emplace({key.first, key.second}, std::uint32_t(m.vertices.size()));
      if (fresh) m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized() * r);
      return it->second;
    };
    std::vector<Triangle> next;
    for (const auto& tri : m.triangles) {
      const auto ab = midpoint(tri[0], tri[1]);
      const auto bc = midpoint(tri[1], tri[2]);
      const auto ca = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], ab, ca});
      next.push_back({tri[1], bc, ab});
      next.push_back({tri[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  return m;
}

std::optional<int> listing_vote_bin(double depth, double distance, double r_x, double delta_mult,
                                    double eta_mult) {
  const double delta_x = delta_mult * r_x;
  const double eta_x = eta_mult * r_x;
  double a = depth - distance;
  if (a < -eta_x) return std::nullopt;
  a = std::max(-1.0, std::min(1.0, a / delta_x));
  int bin = static_cast<int>(std::floor(((a + 1.0) / 2.0) * 8.0));
  if (bin == 8) bin = 7;
  return bin;
}

RangeImage constant_panorama(float range, std::uint32_t weight, std::uint32_t width) {
  RangeImage img;
  img.model = ProjectionModel::kEquirectangular;
  img.width = width;
  img.height = width / 2;
  img.vote_weight = weight;
  img.depth.assign(std::size_t(img.width) * img.height, range);
  return img;
}

double grid_prox(double u_tilde, double tau_lambda, const std::array<std::uint32_t, 8>& hist, double step) {
  const long n = std::lround(2.0 / step);
  double best = 0.0, best_value = std::numeric_limits<double>::infinity();
  for (long k = 0; k <= n; ++k) {
    const double u = -1.0 + double(k) * step;
    double s = 0.0;
    for (int b = 0; b < 8; ++b) s += hist[b] * std::abs(u - (-1.0 + 0.25 * b + 0.125));
    const double value = 0.5 * (u - u_tilde) * (u - u_tilde) + tau_lambda * s;
    if (value < best_value) {
      best_value = value;
      best = u;
    }
  }
  return best;
}

std::vector<CubeRecord> slab_records(int depth, std::uint32_t weight) {
  auto recs = uniform_records(depth);
  const std::uint32_t n = std::uint32_t(1) << depth;
  for (auto& r : recs) {
    const std::uint32_t x = decode(r.code).x;
    r.hist[2 * x < n ? 0 : 7] = weight;
  }
  return recs;
}

bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::equal(std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>(),
                    std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>());
}

}  // namespace recon::testing
