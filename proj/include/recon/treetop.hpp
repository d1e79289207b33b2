#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "recon/octree_file.hpp"

namespace recon {

struct TreetopNode {
  MortonCode code;
  bool leaf = false;
  std::uint64_t first = 0;  // record range [first, last), leaves only
  std::uint64_t last = 0;
};

/// Shallow subtree over a complete linear octree. Every leaf indexes a
/// consecutive record range holding fewer than the leaf budget of records.
class Treetop {
 public:
  Treetop() = default;
  explicit Treetop(std::vector<TreetopNode> preorder);

  const std::vector<TreetopNode>& nodes() const { return nodes_; }
  /// Leaf nodes in Z-order.
  const std::vector<TreetopNode>& leaves() const { return leaves_; }
  /// Index into leaves() of the leaf whose cube contains finest Z index `z`.
  std::size_t leaf_for_z(u128 z) const;
  /// Index into leaves() of the leaf whose range holds record `index`.
  std::size_t leaf_for_record(std::uint64_t index) const;

 private:
  std::vector<TreetopNode> nodes_;
  std::vector<TreetopNode> leaves_;
};

/// A node is split iff it holds at least `leaf_budget` records. Record counts
/// come from binary searches on the sorted file, so nothing but the treetop is
/// resident.
Treetop build_treetop(const CellSource& octree, std::uint64_t leaf_budget);

void save_treetop(const Treetop& t, const std::filesystem::path& path);
Treetop load_treetop(const std::filesystem::path& path);

}  // namespace recon
