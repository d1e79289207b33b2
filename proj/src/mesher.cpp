#include "recon/mesher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <cstring>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "recon/resident.hpp"

namespace recon {

namespace {

constexpr std::uint32_t kGridMax = std::uint32_t(1) << kMaxDepth;

// Cube faces, corners listed counter-clockwise seen from outside the cube.
constexpr int kFaceCorners[6][4] = {
    {0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6},
};

int edge_id(int a, int b) { return a < b ? a * 8 + b : b * 8 + a; }

u128 finest_z(std::uint32_t x, std::uint32_t y, std::uint32_t z) { return encode(kMaxDepth, {x, y, z}).path; }

using Locate = std::function<CubeRecord(u128)>;

DualCell dual_cell_with(const GridPoint& p, const Locate& locate, const RootFrame& frame) {
  DualCell cell;
  cell.point = p;
  const Vec3 lo = frame.center - Vec3::Constant(frame.r_root);
  const Vec3 hi = frame.center + Vec3::Constant(frame.r_root);
  for (int i = 0; i < 8; ++i) {
    std::array<std::uint32_t, 3> c{};
    std::uint8_t mirror = 0;
    for (int a = 0; a < 3; ++a) {
      if ((i >> a) & 1) {
        c[a] = p[a];
        if (c[a] == kGridMax) {
          c[a] = kGridMax - 1;
          mirror |= std::uint8_t(1 << (2 * a + 1));
        }
      } else if (p[a] == 0) {
        mirror |= std::uint8_t(1 << (2 * a));
      } else {
        c[a] = p[a] - 1;
      }
    }
    const CubeRecord rec = locate(finest_z(c[0], c[1], c[2]));
    cell.code[i] = rec.code;
    cell.mirror[i] = mirror;
    Vec3 center = frame.cell_center(rec.code);
    for (int a = 0; a < 3; ++a) {
      if (mirror & (1 << (2 * a))) center[a] = 2.0 * lo[a] - center[a];
      if (mirror & (1 << (2 * a + 1))) center[a] = 2.0 * hi[a] - center[a];
    }
    cell.center[i] = center;
    cell.u[i] = mirror ? 1.0 : rec.u;
  }
  return cell;
}

struct PairKey {
  u128 a, b;
  bool operator==(const PairKey&) const = default;
};

struct PairKeyHash {
  std::size_t operator()(const PairKey& k) const {
    std::hash<std::uint64_t> h;
    auto mix = [&](u128 x) { return h(static_cast<std::uint64_t>(x) ^ (static_cast<std::uint64_t>(x >> 64) * 0x9e3779b97f4a7c15ull)); };
    return mix(k.a) * 31 + mix(k.b);
  }
};

// Accumulates triangles of dual cells into one part.
class PartBuilder {
 public:
  explicit PartBuilder(const MortonCode& leaf) { part_.leaf = leaf; }

  void add(const DualCell& cell) {
    for (const auto& loop : polygonize(cell)) {
      std::vector<std::uint32_t> ids;
      for (const auto& e : loop) {
        const std::uint32_t id = vertex(cell, e[0], e[1]);
        if (ids.empty() || ids.back() != id) ids.push_back(id);
      }
      while (ids.size() > 1 && ids.front() == ids.back()) ids.pop_back();
      if (ids.size() < 3) continue;
      std::vector<Vec3> pts;
      for (auto id : ids) pts.push_back(part_.vertices[id]);
      for (const auto& t : dp_triangulate(pts)) {
        const Triangle tri{ids[t[0]], ids[t[1]], ids[t[2]]};
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
        if (degenerate_triangle(part_.vertices[tri[0]], part_.vertices[tri[1]], part_.vertices[tri[2]])) continue;
        part_.triangles.push_back(tri);
      }
    }
  }

  MeshPart finish() {
    // Drop vertices no triangle kept.
    std::vector<std::int64_t> remap(part_.vertices.size(), -1);
    MeshPart out;
    out.leaf = part_.leaf;
    for (auto& t : part_.triangles) {
      for (auto& k : t) {
        if (remap[k] < 0) {
          remap[k] = static_cast<std::int64_t>(out.vertices.size());
          out.vertices.push_back(part_.vertices[k]);
        }
        k = static_cast<std::uint32_t>(remap[k]);
      }
    }
    out.triangles = std::move(part_.triangles);
    mark_border_vertices(out);
    return out;
  }

 private:
  std::uint32_t vertex(const DualCell& cell, int a, int b) {
    const u128 ka = cell.corner_key(a);
    const u128 kb = cell.corner_key(b);
    auto [it, inserted] = ids_.try_emplace(PairKey{std::min(ka, kb), std::max(ka, kb)},
                                           static_cast<std::uint32_t>(part_.vertices.size()));
    if (inserted) {
      part_.vertices.push_back(crossing_point(ka, cell.center[a], cell.u[a], kb, cell.center[b], cell.u[b]));
    }
    return it->second;
  }

  MeshPart part_;
  std::unordered_map<PairKey, std::uint32_t, PairKeyHash> ids_;
};


}  // namespace

std::vector<GridPoint> leaf_corners(const MortonCode& leaf) {
  const CellCoord c = decode(leaf);
  const std::uint32_t s = std::uint32_t(1) << (kMaxDepth - leaf.depth);
  std::vector<GridPoint> out;
  out.reserve(8);
  for (int i = 0; i < 8; ++i) {
    out.push_back({c.x * s + ((i & 1) ? s : 0), c.y * s + ((i & 2) ? s : 0), c.z * s + ((i & 4) ? s : 0)});
  }
  return out;
}

u128 owner_z(const GridPoint& p) {
  auto below = [](std::uint32_t v) { return v == 0 ? 0 : v - 1; };
  return finest_z(below(p[0]), below(p[1]), below(p[2]));
}

DualCell dual_cell_at(const GridPoint& p, LeafLocator& locator, const RootFrame& frame) {
  return dual_cell_with(p, [&](u128 z) { return locator.locate(z).second; }, frame);
}

std::vector<DualCell> build_dual_cells(const CellSource& source, std::uint64_t first, std::uint64_t last) {
  RECON_REQUIRE(first < last && last <= source.size(), "invalid record range");
  const u128 z_begin = source.record(first).code.begin();
  const u128 z_end = source.record(last - 1).code.end();
  std::vector<GridPoint> points;
  std::vector<CubeRecord> chunk;
  for (std::uint64_t i = 0; i < source.size(); i += 4096) {
    source.read_range(i, std::min<std::uint64_t>(source.size(), i + 4096), chunk);
    for (const auto& r : chunk) {
      for (const auto& p : leaf_corners(r.code)) {
        const u128 z = owner_z(p);
        if (z >= z_begin && z < z_end) points.push_back(p);
      }
    }
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  LeafLocator locator(source, 1 << 16);
  std::vector<DualCell> cells;
  cells.reserve(points.size());
  for (const auto& p : points) cells.push_back(dual_cell_at(p, locator, source.frame()));
  return cells;
}

std::vector<std::vector<std::array<int, 2>>> polygonize(const DualCell& cell) {
  std::array<bool, 8> neg;
  int negatives = 0;
  for (int i = 0; i < 8; ++i) {
    if (std::isnan(cell.u[i])) throw Error("NaN indicator at a dual cell corner");
    neg[i] = cell.u[i] < 0.0;
    negatives += neg[i] ? 1 : 0;
  }
  if (negatives == 0 || negatives == 8) return {};

  std::array<int, 64> next;
  next.fill(-1);
  for (const auto& face : kFaceCorners) {
    for (int t = 0; t < 4; ++t) {
      const int a = face[t], b = face[(t + 1) % 4];
      if (neg[a] || !neg[b]) continue;
      // A negative run starts at edge t; find where it ends.
      for (int s = 1; s <= 4; ++s) {
        const int c = face[(t + s) % 4], d = face[(t + s + 1) % 4];
        if (neg[c] && !neg[d]) {
          next[edge_id(a, b)] = edge_id(c, d);
          break;
        }
      }
    }
  }

  std::vector<std::vector<std::array<int, 2>>> loops;
  std::array<bool, 64> seen{};
  for (int e = 0; e < 64; ++e) {
    if (next[e] < 0 || seen[e]) continue;
    std::vector<std::array<int, 2>> loop;
    for (int cur = e; !seen[cur]; cur = next[cur]) {
      seen[cur] = true;
      loop.push_back({cur / 8, cur % 8});
      if (next[cur] < 0) throw Error("open polygon in dual cell");
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

Vec3 crossing_point(u128 ka, const Vec3& pa, double ua, u128 kb, const Vec3& pb, double ub) {
  if (kb < ka) return crossing_point(kb, pb, ub, ka, pa, ua);
  const double t = ua / (ua - ub);
  return pa + t * (pb - pa);
}

std::vector<std::array<int, 3>> dp_triangulate(std::span<const Vec3> loop) {
  const int n = static_cast<int>(loop.size());
  if (n < 3) return {};
  using Diagonals = std::vector<std::pair<int, int>>;
  std::vector<double> cost(n * n, 0.0);
  std::vector<int> choice(n * n, -1);
  std::vector<Diagonals> diags(n * n);
  auto at = [n](int i, int j) { return i * n + j; };
  for (int len = 2; len < n; ++len) {
    for (int i = 0; i + len < n; ++i) {
      const int j = i + len;
      double best = std::numeric_limits<double>::infinity();
      for (int k = i + 1; k < j; ++k) {
        const double c = cost[at(i, k)] + cost[at(k, j)] + triangle_area(loop[i], loop[k], loop[j]);
        Diagonals d = diags[at(i, k)];
        d.insert(d.end(), diags[at(k, j)].begin(), diags[at(k, j)].end());
        if (k > i + 1) d.emplace_back(i, k);
        if (j > k + 1) d.emplace_back(k, j);
        std::sort(d.begin(), d.end());
        const double tol = 1e-12 * std::max(std::abs(best), std::abs(c));
        const bool better = choice[at(i, j)] < 0 || c < best - tol || (std::abs(c - best) <= tol && d < diags[at(i, j)]);
        if (better) {
          best = c;
          choice[at(i, j)] = k;
          diags[at(i, j)] = std::move(d);
        }
      }
      cost[at(i, j)] = best;
    }
  }
  std::vector<std::array<int, 3>> tris;
  std::vector<std::pair<int, int>> stack{{0, n - 1}};
  while (!stack.empty()) {
    auto [i, j] = stack.back();
    stack.pop_back();
    if (j - i < 2) continue;
    const int k = choice[at(i, j)];
    tris.push_back({i, k, j});
    stack.emplace_back(k, j);
    stack.emplace_back(i, k);
  }
  return tris;
}

bool degenerate_triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
  const double longest = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
  return triangle_area(a, b, c) <= 1e-12 * longest;
}

MeshPart extract_part(std::span<const DualCell> cells, const MortonCode& leaf) {
  PartBuilder builder(leaf);
  for (const auto& c : cells) builder.add(c);
  return builder.finish();
}

MeshPart extract_whole(const CellSource& source) {
  const auto cells = build_dual_cells(source, 0, source.size());
  return extract_part(cells, root_code());
}

MeshStageStats mesh_all_parts(const std::filesystem::path& solved, const Treetop& treetop,
                              const std::filesystem::path& out_dir, const std::filesystem::path& scratch) {
  std::filesystem::create_directories(out_dir);
  std::filesystem::create_directories(scratch);
  const OctreeFile src(solved);
  const auto& leaves = treetop.leaves();
  auto points_file = [&](std::size_t k) { return scratch / ("points_" + std::to_string(k) + ".bin"); };
  for (std::size_t k = 0; k < leaves.size(); ++k) std::ofstream(points_file(k), std::ios::binary | std::ios::trunc);

  // Route every leaf corner to the treetop leaf owning its dual cell.
  {
    std::vector<std::vector<GridPoint>> outbox(leaves.size());
    auto flush = [&](std::size_t k) {
      if (outbox[k].empty()) return;
      std::ofstream f(points_file(k), std::ios::binary | std::ios::app);
      f.write(reinterpret_cast<const char*>(outbox[k].data()),
              static_cast<std::streamsize>(outbox[k].size() * sizeof(GridPoint)));
      if (!f) throw IoError("write failed on " + points_file(k).string());
      outbox[k].clear();
    };
    std::vector<CubeRecord> chunk;
    RecordLease lease(static_cast<std::int64_t>(std::min<std::uint64_t>(4096, src.size())));
    for (std::uint64_t i = 0; i < src.size(); i += 4096) {
      src.read_range(i, std::min<std::uint64_t>(src.size(), i + 4096), chunk);
      for (const auto& r : chunk) {
        for (const auto& p : leaf_corners(r.code)) {
          const std::size_t k = treetop.leaf_for_z(owner_z(p));
          outbox[k].push_back(p);
          if (outbox[k].size() >= 8192) flush(k);
        }
      }
    }
    for (std::size_t k = 0; k < leaves.size(); ++k) flush(k);
  }

  MeshStageStats stats;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    std::vector<GridPoint> points;
    {
      std::ifstream f(points_file(k), std::ios::binary);
      f.seekg(0, std::ios::end);
      const auto bytes = static_cast<std::size_t>(f.tellg());
      f.seekg(0);
      points.resize(bytes / sizeof(GridPoint));
      f.read(reinterpret_cast<char*>(points.data()), static_cast<std::streamsize>(points.size() * sizeof(GridPoint)));
    }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    std::vector<CubeRecord> own;
    RecordLease own_lease(static_cast<std::int64_t>(leaves[k].last - leaves[k].first));
    src.read_range(leaves[k].first, leaves[k].last, own);
    const u128 z_begin = own.empty() ? 0 : own.front().code.begin();
    const u128 z_end = own.empty() ? 0 : own.back().code.end();
    const std::size_t cache_limit = std::max<std::size_t>(64, own.size() / 8);
    LeafLocator halo(src, cache_limit);
    RecordLease halo_lease(static_cast<std::int64_t>(cache_limit));
    const Locate locate = [&](u128 z) {
      if (z >= z_begin && z < z_end) {
        auto it = std::upper_bound(own.begin(), own.end(), z,
                                   [](u128 value, const CubeRecord& r) { return value < r.code.begin(); });
        return *(it - 1);
      }
      return halo.locate(z).second;
    };

    PartBuilder builder(leaves[k].code);
    for (const auto& p : points) builder.add(dual_cell_with(p, locate, src.frame()));
    stats.dual_cells += points.size();
    const MeshPart part = builder.finish();
    stats.triangles += part.triangles.size();
    save_mesh_part(part, out_dir / ("part_" + std::to_string(k) + ".mpart"));
    std::filesystem::remove(points_file(k));
    ++stats.parts;
  }
  return stats;
}

Mesh merge_parts(std::span<const MeshPart> parts, SeamReport* report, bool allow_open) {
  using Bits = std::array<std::uint64_t, 3>;
  auto bits_of = [](const Vec3& v) {
    Bits b;
    for (int i = 0; i < 3; ++i) std::memcpy(&b[i], &v[i], sizeof(double));
    return b;
  };
  Mesh mesh;
  std::map<Bits, std::uint32_t> index;
  std::vector<std::uint32_t> owners;  // parts referencing each vertex, counted once per part
  std::vector<std::size_t> last_part;
  std::map<std::array<std::uint32_t, 2>, std::vector<std::size_t>> border;

  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& part = parts[p];
    std::vector<std::uint32_t> remap(part.vertices.size());
    for (std::size_t i = 0; i < part.vertices.size(); ++i) {
      auto [it, inserted] = index.try_emplace(bits_of(part.vertices[i]), static_cast<std::uint32_t>(mesh.vertices.size()));
      if (inserted) {
        mesh.vertices.push_back(part.vertices[i]);
        owners.push_back(0);
        last_part.push_back(parts.size());
      }
      remap[i] = it->second;
    }
    for (const auto& t : part.triangles) {
      const Triangle g{remap[t[0]], remap[t[1]], remap[t[2]]};
      if (g[0] == g[1] || g[1] == g[2] || g[0] == g[2]) continue;
      mesh.triangles.push_back(g);
      for (auto k : g) {
        if (last_part[k] != p) {
          last_part[k] = p;
          ++owners[k];
        }
      }
    }
    for (const auto& e : boundary_edges(part.triangles)) {
      std::array<std::uint32_t, 2> g{remap[e[0]], remap[e[1]]};
      if (g[0] > g[1]) std::swap(g[0], g[1]);
      border[g].push_back(p);
    }
  }

  SeamReport r;
  std::optional<std::array<std::uint32_t, 2>> first_unmatched;
  for (const auto& [edge, ps] : border) {
    r.border_edges += ps.size();
    if (ps.size() == 2 && ps[0] != ps[1]) {
      r.matched += 2;
    } else {
      r.unmatched += ps.size();
      if (!first_unmatched) first_unmatched = edge;
    }
  }
  r.shared_vertices = static_cast<std::size_t>(std::count_if(owners.begin(), owners.end(), [](auto n) { return n >= 2; }));
  if (report) *report = r;
  if (first_unmatched && !allow_open) {
    const Vec3& a = mesh.vertices[(*first_unmatched)[0]];
    const Vec3& b = mesh.vertices[(*first_unmatched)[1]];
    std::ostringstream msg;
    msg.precision(17);
    msg << "seam check failed: " << r.unmatched << " unmatched border edges, first (" << a.x() << ", " << a.y()
        << ", " << a.z() << ") - (" << b.x() << ", " << b.y() << ", " << b.z() << ")";
    throw Error(msg.str());
  }
  return mesh;
}

}  // namespace recon
