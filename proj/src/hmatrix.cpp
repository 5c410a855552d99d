#include "gnh/hmatrix.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "gnh/errors.hpp"
#include "gnh/rng.hpp"

namespace gnh {

HmatrixPreset HmatrixPreset::scaled_for(std::int64_t n) const {
  HmatrixPreset p = *this;
  while (p.leaf_size > 2 && n < 4 * p.leaf_size) {
    p.leaf_size /= 2;
    p.max_rank = std::max<std::int64_t>(1, p.max_rank / 2);
  }
  return p;
}

HMatrix::HMatrix(IndexTree tree, double lambda, std::vector<Eigen::MatrixXd> leaf_blocks,
                 std::vector<NodeFactors> factors)
    : tree_(std::move(tree)), lambda_(lambda), leaf_blocks_(std::move(leaf_blocks)),
      factors_(std::move(factors)) {
  if (leaf_blocks_.size() != static_cast<std::size_t>(tree_.node_count()) ||
      factors_.size() != static_cast<std::size_t>(tree_.node_count()))
    throw ShapeError("H-matrix block tables must be indexed by node id");
}

const Eigen::MatrixXd& HMatrix::leaf_block(int node_id) const {
  return leaf_blocks_[static_cast<std::size_t>(node_id)];
}

const HMatrix::NodeFactors& HMatrix::node_factors(int node_id) const {
  return factors_[static_cast<std::size_t>(node_id)];
}

Eigen::MatrixXd HMatrix::apply(const Eigen::MatrixXd& x) const {
  if (x.rows() != size()) throw ShapeError("operand height does not match the matrix");
  // permute into tree order, apply blocks, permute back
  const std::vector<std::int64_t>& perm = tree_.perm();
  Eigen::MatrixXd xt(x.rows(), x.cols());
  for (std::int64_t pos = 0; pos < size(); ++pos)
    xt.row(pos) = x.row(perm[static_cast<std::size_t>(pos)]);

  Eigen::MatrixXd yt = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int id = 0; id < tree_.node_count(); ++id) {
    const TreeNode& nd = tree_.node(id);
    if (tree_.is_leaf(id)) {
      yt.middleRows(nd.start, nd.size).noalias() +=
          leaf_blocks_[static_cast<std::size_t>(id)] * xt.middleRows(nd.start, nd.size);
      continue;
    }
    const NodeFactors& f = factors_[static_cast<std::size_t>(id)];
    if (f.u.size() == 0) continue;  // rank-zero coupling
    const TreeNode& l = tree_.node(nd.left);
    const TreeNode& r = tree_.node(nd.right);
    yt.middleRows(l.start, l.size).noalias() +=
        f.u * (f.v.transpose() * xt.middleRows(r.start, r.size));
    yt.middleRows(r.start, r.size).noalias() +=
        f.v * (f.u.transpose() * xt.middleRows(l.start, l.size));
  }

  Eigen::MatrixXd y(x.rows(), x.cols());
  for (std::int64_t pos = 0; pos < size(); ++pos)
    y.row(perm[static_cast<std::size_t>(pos)]) = yt.row(pos);
  return y;
}

Eigen::VectorXd HMatrix::apply(const Eigen::VectorXd& x) const {
  return apply(Eigen::MatrixXd(x)).col(0);
}

std::uint64_t HMatrix::stored_entries() const {
  std::uint64_t total = 0;
  for (int id = 0; id < tree_.node_count(); ++id) {
    if (tree_.is_leaf(id)) {
      total += static_cast<std::uint64_t>(leaf_blocks_[static_cast<std::size_t>(id)].size());
    } else {
      const NodeFactors& f = factors_[static_cast<std::size_t>(id)];
      total += static_cast<std::uint64_t>(f.u.size()) + static_cast<std::uint64_t>(f.v.size());
    }
  }
  return total;
}

double HMatrix::storage_percent() const {
  const double dense = static_cast<double>(size()) * static_cast<double>(size());
  return 100.0 * static_cast<double>(stored_entries()) / dense;
}

int HMatrix::max_node_rank() const {
  int r = 0;
  for (int id = 0; id < tree_.node_count(); ++id)
    if (!tree_.is_leaf(id))
      r = std::max(r, static_cast<int>(factors_[static_cast<std::size_t>(id)].u.cols()));
  return r;
}

Eigen::MatrixXd HMatrix::to_dense(std::int64_t max_size) const {
  if (size() > max_size) {
    std::ostringstream msg;
    msg << "dense expansion of size " << size() << " exceeds the guard of " << max_size;
    throw ResourceError(msg.str());
  }
  Eigen::MatrixXd dt = Eigen::MatrixXd::Zero(size(), size());
  for (int id = 0; id < tree_.node_count(); ++id) {
    const TreeNode& nd = tree_.node(id);
    if (tree_.is_leaf(id)) {
      dt.block(nd.start, nd.start, nd.size, nd.size) =
          leaf_blocks_[static_cast<std::size_t>(id)];
      continue;
    }
    const NodeFactors& f = factors_[static_cast<std::size_t>(id)];
    if (f.u.size() == 0) continue;
    const TreeNode& l = tree_.node(nd.left);
    const TreeNode& r = tree_.node(nd.right);
    dt.block(l.start, r.start, l.size, r.size).noalias() = f.u * f.v.transpose();
    dt.block(r.start, l.start, r.size, l.size).noalias() = f.v * f.u.transpose();
  }
  // undo the permutation
  const std::vector<std::int64_t>& perm = tree_.perm();
  Eigen::MatrixXd d(size(), size());
  for (std::int64_t a = 0; a < size(); ++a)
    for (std::int64_t b = 0; b < size(); ++b)
      d(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]) = dt(a, b);
  return d;
}

namespace {

struct LowRankResult {
  Eigen::MatrixXd u, v;
  bool capped = false;
};

// Randomized interpolative factorization of the block rows x cols, reading
// O((|rows| + |cols|) * rank) oracle entries.
LowRankResult compress_block(const EntryOracle& oracle,
                             const std::vector<std::int64_t>& rows,
                             const std::vector<std::int64_t>& cols,
                             const HmatrixPreset& preset, rng::Stream& stream) {
  const std::int64_t nl = static_cast<std::int64_t>(rows.size());
  const std::int64_t nr = static_cast<std::int64_t>(cols.size());
  const std::int64_t s = std::min<std::int64_t>(preset.max_rank + preset.oversample, nr);

  // sampled column subset
  std::vector<std::int64_t> col_subset;
  if (s >= nr) {
    col_subset = cols;
  } else {
    const std::vector<std::int64_t> pick = stream.sample_without_replacement(nr, s);
    col_subset.reserve(static_cast<std::size_t>(s));
    for (std::int64_t t : pick) col_subset.push_back(cols[static_cast<std::size_t>(t)]);
  }
  const Eigen::MatrixXd c = oracle.block(rows, col_subset);

  // pivoted orthogonalization of the sampled columns
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c);
  const Eigen::VectorXd rdiag = qr.matrixR()
                                    .topLeftCorner(std::min(c.rows(), c.cols()),
                                                   std::min(c.rows(), c.cols()))
                                    .diagonal()
                                    .cwiseAbs();
  std::int64_t rank = 0;
  if (rdiag.size() > 0 && rdiag[0] > 0.0) {
    const double cutoff = preset.tol * rdiag[0];
    while (rank < rdiag.size() && rdiag[rank] >= cutoff) ++rank;
  }
  LowRankResult out;
  if (rank > preset.max_rank) {
    rank = preset.max_rank;
    out.capped = true;
  }
  if (rank == 0) return out;

  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(nl, rank);

  // pick interpolation rows with a pivoted QR on q^T, then fit coefficients
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_rows(q.transpose());
  const auto piv = qr_rows.colsPermutation().indices();
  std::vector<std::int64_t> row_subset(static_cast<std::size_t>(rank));
  Eigen::MatrixXd q_rows(rank, rank);
  for (std::int64_t t = 0; t < rank; ++t) {
    row_subset[static_cast<std::size_t>(t)] = rows[static_cast<std::size_t>(piv[t])];
    q_rows.row(t) = q.row(piv[t]);
  }
  const Eigen::MatrixXd a_rows = oracle.block(row_subset, cols);
  // q_rows is square and well conditioned by the pivot choice; COD still
  // keeps degenerate sampled blocks from blowing up
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(q_rows);
  out.u = std::move(q);
  out.v = cod.solve(a_rows).transpose();
  return out;
}

}  // namespace

HMatrix compress(const EntryOracle& oracle, IndexTree tree, const HmatrixPreset& preset,
                 std::uint64_t seed, CompressStats* stats) {
  if (tree.size() != oracle.size())
    throw ShapeError("tree and oracle disagree on the index count");
  if (preset.max_rank < 1 || preset.tol < 0.0 || preset.oversample < 0)
    throw ShapeError("invalid compression preset");

  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t reads_before = oracle.entries_read();
  const int count = tree.node_count();
  std::vector<Eigen::MatrixXd> leaf_blocks(static_cast<std::size_t>(count));
  std::vector<HMatrix::NodeFactors> factors(static_cast<std::size_t>(count));
  if (stats) stats->node_ranks.assign(static_cast<std::size_t>(count), 0);

  for (int id = 0; id < count; ++id) {
    if (tree.is_leaf(id)) {
      const std::vector<std::int64_t> idx = tree.node_indices(id);
      leaf_blocks[static_cast<std::size_t>(id)] = oracle.block(idx, idx);
      continue;
    }
    const TreeNode& nd = tree.node(id);
    const std::vector<std::int64_t> rows = tree.node_indices(nd.left);
    const std::vector<std::int64_t> cols = tree.node_indices(nd.right);
    rng::Stream stream = rng::Stream::derive(seed, {0x48u, static_cast<std::uint64_t>(id)});
    LowRankResult lr = compress_block(oracle, rows, cols, preset, stream);
    if (stats) {
      stats->node_ranks[static_cast<std::size_t>(id)] = static_cast<int>(lr.u.cols());
      if (lr.capped) ++stats->rank_capped_nodes;
    }
    factors[static_cast<std::size_t>(id)] = {std::move(lr.u), std::move(lr.v)};
  }

  if (stats) {
    stats->oracle_entries = oracle.entries_read() - reads_before;
    stats->compress_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return HMatrix(std::move(tree), oracle.lambda(), std::move(leaf_blocks), std::move(factors));
}

double probe_error(const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& approx,
                   const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& reference,
                   std::int64_t n, int probes, std::uint64_t seed) {
  if (probes < 1) throw ShapeError("probe error needs at least one probe");
  rng::Stream stream = rng::Stream::derive(seed, {0x70u});
  Eigen::MatrixXd x(n, probes);
  for (int c = 0; c < probes; ++c)
    for (std::int64_t r = 0; r < n; ++r) x(r, c) = stream.normal();
  const Eigen::MatrixXd ref = reference(x);
  const Eigen::MatrixXd diff = approx(x) - ref;
  const double denom = ref.norm();
  if (denom == 0.0) return diff.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff.norm() / denom;
}

double probe_error(const HMatrix& hm,
                   const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& reference,
                   int probes, std::uint64_t seed) {
  return probe_error([&hm](const Eigen::MatrixXd& x) { return hm.apply(x); }, reference,
                     hm.size(), probes, seed);
}

}  // namespace gnh
