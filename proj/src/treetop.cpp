#include "recon/treetop.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "recon/binary_io.hpp"

namespace recon {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'O', 'P'};
constexpr std::uint32_t kVersion = 1;

// First record index whose code begins at or after `z`.
std::uint64_t lower_bound_z(const CellSource& src, u128 z) {
  std::uint64_t lo = 0;
  std::uint64_t hi = src.size();
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (src.record(mid).code.begin() < z) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

void build_node(const CellSource& src, const MortonCode& code, std::uint64_t first, std::uint64_t last,
                std::uint64_t budget, std::vector<TreetopNode>& out) {
  TreetopNode node;
  node.code = code;
  if (last - first < budget || code.depth == kMaxDepth) {
    node.leaf = true;
    node.first = first;
    node.last = last;
    out.push_back(node);
    return;
  }
  out.push_back(node);
  std::uint64_t begin = first;
  for (const MortonCode& c : children(code)) {
    const std::uint64_t end = c.end() >= (u128(1) << kPathBits) ? last : lower_bound_z(src, c.end());
    build_node(src, c, begin, std::min(end, last), budget, out);
    begin = std::min(end, last);
  }
}

}  // namespace

Treetop::Treetop(std::vector<TreetopNode> preorder) : nodes_(std::move(preorder)) {
  for (const auto& n : nodes_) {
    if (n.leaf) leaves_.push_back(n);
  }
}

std::size_t Treetop::leaf_for_z(u128 z) const {
  RECON_REQUIRE(!leaves_.empty(), "empty treetop");
  auto it = std::upper_bound(leaves_.begin(), leaves_.end(), z,
                             [](u128 value, const TreetopNode& n) { return value < n.code.begin(); });
  return static_cast<std::size_t>(it - leaves_.begin()) - 1;
}

std::size_t Treetop::leaf_for_record(std::uint64_t index) const {
  RECON_REQUIRE(!leaves_.empty(), "empty treetop");
  auto it = std::upper_bound(leaves_.begin(), leaves_.end(), index,
                             [](std::uint64_t value, const TreetopNode& n) { return value < n.last; });
  RECON_REQUIRE(it != leaves_.end(), "record index beyond the treetop");
  return static_cast<std::size_t>(it - leaves_.begin());
}

Treetop build_treetop(const CellSource& octree, std::uint64_t leaf_budget) {
  RECON_REQUIRE(leaf_budget >= 8, "treetop leaf budget must be at least 8");
  std::vector<TreetopNode> nodes;
  build_node(octree, root_code(), 0, octree.size(), leaf_budget, nodes);
  return Treetop(std::move(nodes));
}

void save_treetop(const Treetop& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create treetop file " + path.string());
  out.write(kMagic, 4);
  bin::put(out, kVersion);
  bin::put(out, static_cast<std::uint64_t>(t.nodes().size()));
  for (const auto& n : t.nodes()) {
    unsigned char key[12];
    const u128 k = n.code.key();
    for (int i = 0; i < 12; ++i) key[i] = static_cast<unsigned char>(k >> (8 * (11 - i)));
    out.write(reinterpret_cast<const char*>(key), 12);
    bin::put(out, static_cast<std::uint8_t>(n.leaf ? 1 : 0));
    if (n.leaf) {
      bin::put(out, n.first);
      bin::put(out, n.last);
    }
  }
  if (!out) throw IoError("write failed on " + path.string());
}

Treetop load_treetop(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open treetop file " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("bad TTOP magic", 0);
  if (bin::get<std::uint32_t>(in, "TTOP version") != kVersion) throw ParseError("unsupported TTOP version", 4);
  const auto count = bin::get<std::uint64_t>(in, "TTOP node count");
  std::vector<TreetopNode> nodes;
  for (std::uint64_t i = 0; i < count; ++i) {
    unsigned char key[12];
    const auto offset = static_cast<std::uint64_t>(in.tellg());
    if (!in.read(reinterpret_cast<char*>(key), 12)) throw ParseError("truncated TTOP node", offset);
    u128 k = 0;
    for (int b = 0; b < 12; ++b) k = (k << 8) | key[b];
    TreetopNode n;
    n.code = MortonCode::from_key(k);
    n.leaf = bin::get<std::uint8_t>(in, "TTOP leaf flag") != 0;
    if (n.leaf) {
      n.first = bin::get<std::uint64_t>(in, "TTOP range");
      n.last = bin::get<std::uint64_t>(in, "TTOP range");
    }
    nodes.push_back(n);
  }
  return Treetop(std::move(nodes));
}

}  // namespace recon
