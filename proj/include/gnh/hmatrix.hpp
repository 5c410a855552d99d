#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

#include "gnh/cluster_tree.hpp"
#include "gnh/entry_oracle.hpp"

namespace gnh {

struct HmatrixPreset {
  std::int64_t leaf_size = 128;
  std::int64_t max_rank = 128;
  double tol = 5e-2;       // relative pivot cutoff in the block factorization
  std::int64_t oversample = 10;

  static HmatrixPreset low() { return {128, 128, 5e-2, 10}; }
  static HmatrixPreset high() { return {1024, 1024, 1e-5, 10}; }
  // halve leaf size and rank cap until at least four leaves fit; small
  // problems otherwise degenerate to a single dense block
  HmatrixPreset scaled_for(std::int64_t n) const;
};

// Hierarchically off-diagonal low-rank representation over an IndexTree:
// dense blocks on the leaf diagonal, U V^T across every sibling pair, and the
// mirrored transpose below the diagonal so the whole matrix stays symmetric.
class HMatrix {
 public:
  struct NodeFactors {
    Eigen::MatrixXd u;  // rows of the left child
    Eigen::MatrixXd v;  // rows of the right child; block ~ u * v^T
  };

  HMatrix() = default;
  HMatrix(IndexTree tree, double lambda, std::vector<Eigen::MatrixXd> leaf_blocks,
          std::vector<NodeFactors> factors);

  std::int64_t size() const { return tree_.size(); }
  double lambda() const { return lambda_; }
  const IndexTree& tree() const { return tree_; }
  const Eigen::MatrixXd& leaf_block(int node_id) const;
  const NodeFactors& node_factors(int node_id) const;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;

  // scalars held in leaf blocks and factors
  std::uint64_t stored_entries() const;
  // stored entries relative to the N^2 dense count, in percent
  double storage_percent() const;
  int max_node_rank() const;

  Eigen::MatrixXd to_dense(std::int64_t max_size = 20000) const;

 private:
  IndexTree tree_;
  double lambda_ = 0.0;
  std::vector<Eigen::MatrixXd> leaf_blocks_;  // indexed by node id (empty for internals)
  std::vector<NodeFactors> factors_;          // indexed by node id (empty for leaves)
};

struct CompressStats {
  std::uint64_t oracle_entries = 0;
  int rank_capped_nodes = 0;
  std::vector<int> node_ranks;  // indexed by node id
  double tree_seconds = 0.0;    // filled by the caller when it also built the tree
  double compress_seconds = 0.0;
};

// Low-rank factors per off-diagonal block from randomized column sampling:
// draw max_rank + oversample columns, pivoted-QR them, truncate at tol
// relative to the leading pivot and cap at max_rank, then recover the row
// coefficients from a pivot-selected row subset. One leaf-sized dense block
// per leaf, O((rows + cols) * rank) oracle entries per off-diagonal block.
HMatrix compress(const EntryOracle& oracle, IndexTree tree, const HmatrixPreset& preset,
                 std::uint64_t seed, CompressStats* stats = nullptr);

// Relative Frobenius error against a reference operator measured through
// Gaussian probe blocks: ||(A - ref) X||_F / ||ref X||_F.
double probe_error(const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& approx,
                   const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& reference,
                   std::int64_t n, int probes, std::uint64_t seed);
double probe_error(const HMatrix& hm,
                   const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& reference,
                   int probes = 128, std::uint64_t seed = 0);

}  // namespace gnh
