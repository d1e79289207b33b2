#include "recon/level_view.hpp"

#include <algorithm>
#include <unordered_map>

#include "recon/resident.hpp"

namespace recon {

namespace {

constexpr std::uint64_t kChunk = 4096;

int common_levels(const MortonCode& a, const MortonCode& b) {
  const int limit = std::min(a.depth, b.depth);
  int l = 0;
  while (l < limit && a.octant_at(l + 1) == b.octant_at(l + 1)) ++l;
  return l;
}

Vec3 to_vec(const std::array<float, 3>& v) { return Vec3(v[0], v[1], v[2]); }

}  // namespace

std::pair<std::uint64_t, CubeRecord> LeafLocator::locate(u128 z) {
  auto it = cache_.upper_bound(z);
  if (it != cache_.begin()) {
    --it;
    if (it->second.second.code.end() > z) return it->second;
  }
  if (cache_.size() >= cache_limit_) cache_.clear();
  const std::uint64_t index = source_.locate(z);
  const CubeRecord rec = source_.record(index);
  RECON_REQUIRE(rec.code.begin() <= z && z < rec.code.end(), "octree is not complete around a queried point");
  cache_.emplace(rec.code.begin(), std::make_pair(index, rec));
  return {index, rec};
}

LevelView build_level_view(const CellSource& source, std::uint64_t first, std::uint64_t last, int level) {
  RECON_REQUIRE(first < last && last <= source.size(), "empty or invalid record range");
  RECON_REQUIRE(level >= 0 && level <= kMaxDepth, "level out of range");
  LevelView view;
  view.frame = source.frame();
  view.level = level;

  RecordLease lease;
  std::vector<CubeRecord> chunk;
  // Small read chunks keep the buffer well below the view itself.
  const std::uint64_t step = std::clamp<std::uint64_t>((last - first) / 64, 16, kChunk);
  RecordLease chunk_lease(static_cast<std::int64_t>(std::min(step, last - first)));
  for (std::uint64_t i = first; i < last; i += step) {
    const std::uint64_t end = std::min(last, i + step);
    source.read_range(i, end, chunk);
    for (std::uint64_t j = 0; j < chunk.size(); ++j) {
      const CubeRecord& r = chunk[j];
      const MortonCode code = truncate(r.code, level);
      if (!view.cells.empty() && view.cells.back().code == code) {
        ViewCell& c = view.cells.back();
        for (int b = 0; b < 8; ++b) c.hist[b] += r.hist[b];
        c.last = i + j + 1;
        continue;
      }
      ViewCell c;
      c.code = code;
      c.hist = r.hist;
      c.u = r.u;
      c.v = to_vec(r.v);
      c.first = i + j;
      c.last = i + j + 1;
      view.cells.push_back(c);
    }
    lease.resize(static_cast<std::int64_t>(view.cells.size()));
  }
  chunk.clear();
  chunk_lease.resize(0);
  view.interior = view.cells.size();
  const std::size_t n_a = view.interior;
  const u128 z_begin = view.cells.front().code.begin();
  const u128 z_end = view.cells.back().code.end();
  RECON_REQUIRE(view.cells.front().first == first && view.cells.back().last == last,
                "record range splits a level cell");

  LeafLocator locator(source, std::max<std::size_t>(64, n_a / 8));
  std::unordered_map<MortonCode, std::uint32_t, MortonKeyHash> halo;

  auto cell_at = [&](u128 z) -> std::uint32_t {
    if (z >= z_begin && z < z_end) {
      auto it = std::upper_bound(view.cells.begin(), view.cells.begin() + static_cast<std::ptrdiff_t>(n_a), z,
                                 [](u128 value, const ViewCell& c) { return value < c.code.begin(); });
      return static_cast<std::uint32_t>(it - view.cells.begin()) - 1;
    }
    const auto [index, rec] = locator.locate(z);
    const MortonCode code = truncate(rec.code, level);
    auto [it, inserted] = halo.try_emplace(code, static_cast<std::uint32_t>(view.cells.size()));
    if (inserted) {
      ViewCell c;
      c.code = code;
      c.u = rec.u;
      c.v = to_vec(rec.v);
      view.cells.push_back(c);
      lease.resize(static_cast<std::int64_t>(view.cells.size()));
    }
    return it->second;
  };

  // Code of the view cell containing z, without adding it to the halo.
  auto code_at = [&](u128 z) -> MortonCode {
    if (z >= z_begin && z < z_end) return view.cells[cell_at(z)].code;
    return truncate(locator.locate(z).second.code, level);
  };

  view.adj_offset.assign(n_a * 6 + 1, 0);
  for (std::size_t i = 0; i < n_a; ++i) {
    const MortonCode c = view.cells[i].code;
    for (Face f : kAllFaces) {
      const std::size_t slot = i * 6 + static_cast<std::size_t>(f);
      view.adj_offset[slot] = static_cast<std::uint32_t>(view.adj.size());
      const auto nb = face_neighbor(c, f);
      if (!nb) continue;
      const MortonCode wc = code_at(nb->begin());
      if (wc.depth <= c.depth) {
        if (c.depth - wc.depth > 1) {
          throw Error("balance violation between cells " + to_string(c) + " and " + to_string(wc));
        }
        const double e = view.frame.edge(c.depth);
        view.adj.push_back({cell_at(nb->begin()), 1.0, e * e});
        continue;
      }
      const int axis = face_axis(f);
      const int touching_bit = face_positive(f) ? 0 : 1;
      const double e = view.frame.edge(c.depth + 1);
      for (int oct = 0; oct < 8; ++oct) {
        if (((oct >> axis) & 1) != touching_bit) continue;
        const MortonCode k = child(*nb, oct);
        const std::uint32_t jk = cell_at(k.begin());
        if (!(view.cells[jk].code == k)) {
          throw Error("balance violation between cells " + to_string(c) + " and " + to_string(view.cells[jk].code));
        }
        view.adj.push_back({jk, 0.25, e * e});
      }
    }
  }
  view.adj_offset[n_a * 6] = static_cast<std::uint32_t>(view.adj.size());
  return view;
}

std::array<std::uint64_t, kMaxDepth + 1> level_cell_counts(const CellSource& source) {
  std::array<std::uint64_t, kMaxDepth + 1> counts{};
  const std::uint64_t n = source.size();
  if (n == 0) return counts;
  std::array<std::uint64_t, kMaxDepth + 1> by_prefix{};
  std::vector<CubeRecord> chunk;
  RecordLease lease(static_cast<std::int64_t>(std::min(kChunk, n)));
  MortonCode prev;
  bool have_prev = false;
  for (std::uint64_t i = 0; i < n; i += kChunk) {
    source.read_range(i, std::min(n, i + kChunk), chunk);
    for (const auto& r : chunk) {
      if (have_prev) ++by_prefix[common_levels(prev, r.code)];
      prev = r.code;
      have_prev = true;
    }
  }
  std::uint64_t running = 1;
  for (int l = 0; l <= kMaxDepth; ++l) {
    counts[l] = running;
    running += by_prefix[l];
  }
  return counts;
}

}  // namespace recon
