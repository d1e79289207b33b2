#include "recon/octree_build.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <queue>
#include <set>

namespace recon {

namespace {

constexpr u128 kFinestCells = u128(1) << kPathBits;

u128 block_size(int level) { return u128(1) << (3 * level); }

// Coarsest aligned blocks tiling [a, b) of finest Z indices.
template <typename Emit>
void fill_gap(u128 a, u128 b, Emit&& emit) {
  while (a < b) {
    int level = kMaxDepth;
    while (level > 0 && ((a & (block_size(level) - 1)) != 0 || a + block_size(level) > b)) --level;
    CubeRecord rec;
    rec.code.path = a;
    rec.code.depth = static_cast<std::uint8_t>(kMaxDepth - level);
    emit(rec);
    a += block_size(level);
  }
}

CubeRecord empty_record(const MortonCode& code) {
  CubeRecord r;
  r.code = code;
  return r;
}

std::uint64_t record_offset(std::uint64_t index) { return kOctreeHeaderBytes + index * kRecordBytes; }

}  // namespace

std::size_t io_chunk(std::size_t memory_budget) {
  return std::clamp<std::size_t>(memory_budget / 16, 1, 4096);
}

int cube_depth_for_radius(double r_x, const RootFrame& frame) {
  RECON_REQUIRE(r_x > 0.0, "sample radius must be positive");
  const double r_root = frame.r_root;
  int d = static_cast<int>(std::floor(std::log2(r_root / (1.5 * r_x)))) + 1;
  d = std::clamp(d, 0, kMaxDepth);
  while (d > 0 && std::ldexp(r_root, -d) < 0.75 * r_x) --d;
  while (d < kMaxDepth && std::ldexp(r_root, -d) >= 1.5 * r_x) ++d;
  return d;
}

std::vector<CubeRecord> spawn_records(const RangeImage& img, std::span<const float> radii, const RootFrame& frame,
                                      SpawnResult* result) {
  RECON_REQUIRE(radii.size() == img.depth.size(), "radius grid does not match image");
  SpawnResult stats;
  std::vector<CubeRecord> records;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) {
      if (!img.valid(x, y)) continue;
      const float r = radii[img.index(x, y)];
      if (!(r > 0.0f)) continue;
      ++stats.samples;
      const Vec3 p = img.unproject(x, y);
      const auto code = frame.locate(p, cube_depth_for_radius(r, frame));
      if (!code) {
        ++stats.outside_root;
        continue;
      }
      CubeRecord rec;
      rec.code = *code;
      rec.n = 1;
      rec.r_sum = r;
      records.push_back(rec);
    }
  }
  sort_and_merge(records);
  stats.records = records.size();
  if (result) *result = stats;
  return records;
}

SpawnResult spawn_cubes(const RangeImage& img, std::span<const float> radii, const RootFrame& frame,
                        const std::filesystem::path& out) {
  SpawnResult stats;
  RecordLease lease(static_cast<std::int64_t>(img.valid_count()));
  const auto records = spawn_records(img, radii, frame, &stats);
  write_octree(out, frame, records);
  return stats;
}

MergeStats external_merge(std::span<const std::filesystem::path> runs, const std::filesystem::path& out,
                          std::size_t memory_budget) {
  RECON_REQUIRE(!runs.empty(), "external_merge needs at least one run");
  RECON_REQUIRE(memory_budget > 0, "memory budget must be positive");
  const std::size_t k = runs.size();
  const std::size_t run_buffer = std::max<std::size_t>(1, memory_budget / (2 * k));
  const std::size_t out_buffer = std::max<std::size_t>(1, memory_budget / 2);

  std::vector<std::unique_ptr<OctreeReader>> readers;
  readers.reserve(k);
  MergeStats stats;
  for (const auto& path : runs) {
    readers.push_back(std::make_unique<OctreeReader>(path, run_buffer));
    if (!(readers.back()->frame() == readers.front()->frame())) {
      throw Error("run " + path.string() + " has a different root frame");
    }
    stats.records_in += readers.back()->size();
  }

  struct Head {
    MortonCode code;
    std::size_t run;
    bool operator>(const Head& o) const { return code != o.code ? code > o.code : run > o.run; }
  };
  std::priority_queue<Head, std::vector<Head>, std::greater<>> heap;
  std::vector<MortonCode> last(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (const CubeRecord* r = readers[i]->peek()) heap.push({r->code, i});
  }

  auto advance = [&](std::size_t i) {
    CubeRecord rec = *readers[i]->next();
    last[i] = rec.code;
    if (const CubeRecord* r = readers[i]->peek()) {
      if (r->code < last[i]) {
        throw ParseError("unsorted run " + runs[i].string(), record_offset(readers[i]->position()));
      }
      heap.push({r->code, i});
    }
    return rec;
  };

  OctreeWriter writer(out, readers.front()->frame(), out_buffer);
  while (!heap.empty()) {
    const Head h = heap.top();
    heap.pop();
    CubeRecord acc = advance(h.run);
    while (!heap.empty() && heap.top().code == acc.code) {
      const Head e = heap.top();
      heap.pop();
      acc.absorb(advance(e.run));
    }
    writer.append(acc);
  }
  stats.records_out = writer.written();
  writer.close();
  return stats;
}

std::uint64_t linearize_complete(OctreeReader& in, OctreeWriter& out, std::uint64_t* dropped) {
  std::uint64_t dropped_count = 0;
  u128 cursor = 0;
  auto emit = [&](const CubeRecord& r) { out.append(r); };
  while (auto rec = in.next()) {
    const CubeRecord* nx = in.peek();
    if (nx && !(rec->code < nx->code)) {
      throw ParseError("octree records not strictly sorted", record_offset(in.position()));
    }
    if (nx && contains(rec->code, nx->code)) {
      ++dropped_count;
      continue;
    }
    fill_gap(cursor, rec->code.begin(), emit);
    out.append(*rec);
    cursor = rec->code.end();
  }
  fill_gap(cursor, kFinestCells, emit);
  if (dropped) *dropped = dropped_count;
  return out.written();
}

namespace {

// One closure round: every code at depth d >= 2 demands the face neighbors of
// its parent. Demands inside the current part's key interval are resolved in
// memory; the rest go to exchange runs merged with the parts.
std::uint64_t closure_round(const std::filesystem::path& in, const std::filesystem::path& out,
                            std::size_t memory_budget, const std::filesystem::path& scratch, int round) {
  const std::size_t chunk = io_chunk(memory_budget);
  const std::size_t part_size = std::max<std::size_t>(8, memory_budget / 4);
  const std::size_t part_cap = std::max<std::size_t>(2 * part_size, memory_budget / 2);
  const std::size_t exchange_cap = std::max<std::size_t>(8, memory_budget / 8);

  std::vector<std::filesystem::path> runs;
  auto next_run = [&](const char* kind) {
    runs.push_back(scratch / ("balance_r" + std::to_string(round) + "_" + kind + std::to_string(runs.size()) + ".octr"));
    return runs.back();
  };

  OctreeReader reader(in, chunk);
  const RootFrame frame = reader.frame();

  std::vector<MortonCode> exchange;
  RecordLease exchange_lease;
  auto flush_exchange = [&]() {
    if (exchange.empty()) return;
    std::sort(exchange.begin(), exchange.end());
    exchange.erase(std::unique(exchange.begin(), exchange.end()), exchange.end());
    OctreeWriter w(next_run("x"), frame, chunk);
    for (const auto& c : exchange) w.append(empty_record(c));
    w.close();
    exchange.clear();
    exchange_lease.resize(0);
  };
  auto demand_outside = [&](const MortonCode& c) {
    exchange.push_back(c);
    exchange_lease.resize(static_cast<std::int64_t>(exchange.size()));
    if (exchange.size() >= exchange_cap) flush_exchange();
  };

  while (reader.peek()) {
    std::vector<CubeRecord> part;
    RecordLease part_lease;
    while (part.size() < part_size && reader.peek()) {
      part.push_back(*reader.next());
      part_lease.resize(static_cast<std::int64_t>(part.size()));
    }
    const MortonCode lo = part.front().code;
    const MortonCode hi = part.back().code;
    std::vector<MortonCode> part_codes;
    part_codes.reserve(part.size());
    for (const auto& r : part) part_codes.push_back(r.code);
    auto in_part = [&](const MortonCode& c) { return std::binary_search(part_codes.begin(), part_codes.end(), c); };

    std::set<MortonCode> added;
    std::vector<MortonCode> work = part_codes;
    RecordLease added_lease;
    while (!work.empty()) {
      const MortonCode s = work.back();
      work.pop_back();
      if (s.depth < 2) continue;
      const MortonCode p = parent(s);
      for (Face f : kAllFaces) {
        const auto nb = face_neighbor(p, f);
        if (!nb) continue;
        const bool inside = !(*nb < lo) && !(hi < *nb);
        if (inside && part.size() + added.size() < part_cap) {
          if (in_part(*nb) || added.count(*nb)) continue;
          added.insert(*nb);
          added_lease.resize(static_cast<std::int64_t>(added.size()));
          work.push_back(*nb);
        } else if (!inside || (!in_part(*nb) && !added.count(*nb))) {
          demand_outside(*nb);
        }
      }
    }

    OctreeWriter w(next_run("p"), frame, chunk);
    auto ai = added.begin();
    for (const auto& r : part) {
      while (ai != added.end() && *ai < r.code) w.append(empty_record(*ai++));
      w.append(r);
    }
    while (ai != added.end()) w.append(empty_record(*ai++));
    w.close();
  }
  flush_exchange();

  if (runs.empty()) {
    OctreeWriter w(out, frame, 1);
    w.close();
    return 0;
  }
  const MergeStats ms = external_merge(runs, out, memory_budget);
  for (const auto& r : runs) std::filesystem::remove(r);
  return ms.records_out;
}

}  // namespace

BalanceStats balance(const std::filesystem::path& in, const std::filesystem::path& out, std::size_t memory_budget,
                     const std::filesystem::path& scratch) {
  RECON_REQUIRE(memory_budget > 0, "memory budget must be positive");
  std::filesystem::create_directories(scratch);
  BalanceStats stats;
  std::filesystem::path current = in;
  std::uint64_t count = read_octree_header(in).count;
  stats.records_in = count;
  std::filesystem::path previous_tmp;
  constexpr int kMaxRounds = 4 * kMaxDepth;
  for (int round = 0;; ++round) {
    if (round >= kMaxRounds) throw Error("balance closure did not reach a fixpoint");
    const auto next = scratch / ("balance_closure_" + std::to_string(round) + ".octr");
    const std::uint64_t next_count = closure_round(current, next, memory_budget, scratch, round);
    ++stats.rounds;
    if (!previous_tmp.empty()) std::filesystem::remove(previous_tmp);
    previous_tmp = next;
    current = next;
    if (next_count == count) break;
    count = next_count;
  }

  const std::size_t chunk = io_chunk(memory_budget);
  {
    OctreeReader reader(current, chunk);
    OctreeWriter writer(out, reader.frame(), chunk);
    linearize_complete(reader, writer, &stats.dropped_ancestors);
    stats.records_out = writer.written();
    writer.close();
  }
  std::filesystem::remove(previous_tmp);
  return stats;
}

}  // namespace recon
