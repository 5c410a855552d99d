#include "gnh/cluster_tree.hpp"

#include <algorithm>
#include <cmath>

#include "gnh/errors.hpp"
#include "gnh/rng.hpp"

namespace gnh {

IndexTree::IndexTree(std::vector<std::int64_t> perm, std::vector<TreeNode> nodes)
    : perm_(std::move(perm)), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ShapeError("index tree needs at least a root node");
}

int IndexTree::depth() const {
  int d = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].left < 0) d = std::max(d, nodes_[i].level);
  return d;
}

std::vector<int> IndexTree::leaves() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].left < 0) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<std::int64_t> IndexTree::node_indices(int id) const {
  const TreeNode& nd = nodes_[static_cast<std::size_t>(id)];
  return {perm_.begin() + nd.start, perm_.begin() + nd.start + nd.size};
}

namespace {

struct TreeBuilder {
  const EntryOracle& oracle;
  DistanceMetric metric;
  std::uint64_t seed;
  std::int64_t leaf_size;
  std::vector<std::int64_t> perm;
  std::vector<TreeNode> nodes;

  // distances from one anchor (original index) to a position range
  Eigen::VectorXd anchor_distances(std::int64_t anchor, std::int64_t start,
                                   std::int64_t size) const {
    const std::vector<std::int64_t> cols(perm.begin() + start, perm.begin() + start + size);
    const Eigen::MatrixXd row = oracle.block({anchor}, cols);
    const Eigen::VectorXd& diag = oracle.diagonal();
    const double haa = diag[anchor];
    if (!(haa > 0.0)) throw NumericError("cluster split needs positive diagonal entries");
    Eigen::VectorXd d(size);
    for (std::int64_t t = 0; t < size; ++t) {
      const std::int64_t j = cols[static_cast<std::size_t>(t)];
      const double hjj = diag[j];
      if (!(hjj > 0.0)) throw NumericError("cluster split needs positive diagonal entries");
      if (j == anchor) {
        d[t] = 0.0;
      } else if (metric == DistanceMetric::angle) {
        const double hij = row(0, t);
        d[t] = std::max(0.0, 1.0 - hij * hij / (haa * hjj));
      } else {
        const double v = haa - 2.0 * row(0, t) + hjj;
        d[t] = v > 0.0 ? std::sqrt(v) : 0.0;
      }
    }
    return d;
  }

  // farthest point from the anchor; ties go to the smaller original index
  std::int64_t farthest(const Eigen::VectorXd& d, std::int64_t start) const {
    std::int64_t best = 0;
    for (std::int64_t t = 1; t < d.size(); ++t) {
      const std::int64_t orig_t = perm[static_cast<std::size_t>(start + t)];
      const std::int64_t orig_b = perm[static_cast<std::size_t>(start + best)];
      if (d[t] > d[best] || (d[t] == d[best] && orig_t < orig_b)) best = t;
    }
    return perm[static_cast<std::size_t>(start + best)];
  }

  void split(int id) {
    const std::int64_t start = nodes[static_cast<std::size_t>(id)].start;
    const std::int64_t size = nodes[static_cast<std::size_t>(id)].size;
    if (size <= leaf_size) return;

    rng::Stream stream = rng::Stream::derive(seed, {static_cast<std::uint64_t>(id)});
    const std::int64_t a0 = perm[static_cast<std::size_t>(start + stream.below(size))];
    const std::int64_t p = farthest(anchor_distances(a0, start, size), start);
    const Eigen::VectorXd dp = anchor_distances(p, start, size);
    const std::int64_t q = farthest(dp, start);
    const Eigen::VectorXd dq = anchor_distances(q, start, size);

    // order by how much closer to p than to q; equal keys keep index order
    struct Item {
      double key;
      std::int64_t orig;
    };
    std::vector<Item> items(static_cast<std::size_t>(size));
    for (std::int64_t t = 0; t < size; ++t)
      items[static_cast<std::size_t>(t)] = {dp[t] - dq[t],
                                            perm[static_cast<std::size_t>(start + t)]};
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
      if (a.key != b.key) return a.key < b.key;
      return a.orig < b.orig;
    });
    for (std::int64_t t = 0; t < size; ++t)
      perm[static_cast<std::size_t>(start + t)] = items[static_cast<std::size_t>(t)].orig;

    const std::int64_t left_size = (size + 1) / 2;
    const int level = nodes[static_cast<std::size_t>(id)].level;
    TreeNode left{start, left_size, -1, -1, id, level + 1};
    TreeNode right{start + left_size, size - left_size, -1, -1, id, level + 1};
    const int lid = static_cast<int>(nodes.size());
    nodes.push_back(left);
    const int rid = static_cast<int>(nodes.size());
    nodes.push_back(right);
    nodes[static_cast<std::size_t>(id)].left = lid;
    nodes[static_cast<std::size_t>(id)].right = rid;
    split(lid);
    split(rid);
  }
};

}  // namespace

IndexTree build_tree(const EntryOracle& oracle, std::int64_t leaf_size, DistanceMetric metric,
                     std::uint64_t seed) {
  if (leaf_size < 1) throw ShapeError("leaf size must be at least 1");
  const std::int64_t n = oracle.size();
  TreeBuilder builder{oracle, metric, seed, leaf_size, {}, {}};
  builder.perm.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) builder.perm[static_cast<std::size_t>(i)] = i;
  builder.nodes.push_back(TreeNode{0, n, -1, -1, -1, 0});
  builder.split(0);
  return IndexTree(std::move(builder.perm), std::move(builder.nodes));
}

}  // namespace gnh
