#pragma once

#include <cstdint>
#include <vector>

#include "gnh/entry_oracle.hpp"

namespace gnh {

struct TreeNode {
  std::int64_t start = 0;  // position range [start, start + size) in the permutation
  std::int64_t size = 0;
  int left = -1;   // child node ids, -1 for leaves
  int right = -1;
  int parent = -1;
  int level = 0;
};

// Balanced binary partition of the weight indices. perm maps positions to
// original indices; every node owns a contiguous position range. Splits halve
// the range (ceil/floor), so the leaf level is ceil(log2(N/m)) for N > m.
class IndexTree {
 public:
  IndexTree() = default;
  IndexTree(std::vector<std::int64_t> perm, std::vector<TreeNode> nodes);

  std::int64_t size() const { return static_cast<std::int64_t>(perm_.size()); }
  const std::vector<std::int64_t>& perm() const { return perm_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  bool is_leaf(int id) const { return nodes_[static_cast<std::size_t>(id)].left < 0; }
  int depth() const;  // deepest leaf level; 0 when the root is a leaf
  std::vector<int> leaves() const;
  // original indices covered by a node, in position order
  std::vector<std::int64_t> node_indices(int id) const;

 private:
  std::vector<std::int64_t> perm_;
  std::vector<TreeNode> nodes_;
};

// Recursive farthest-point bisection under the chosen entry-driven distance.
// Two far-apart anchors are found per node (random start, two sweeps), and
// the range is sorted by the difference of anchor distances with the original
// index as the tie break, then cut in half. Deterministic for a fixed seed.
IndexTree build_tree(const EntryOracle& oracle, std::int64_t leaf_size,
                     DistanceMetric metric, std::uint64_t seed);

}  // namespace gnh
