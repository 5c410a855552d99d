#include "gnh/hodlr_solver.hpp"

#include <sstream>

#include "gnh/errors.hpp"

namespace gnh {

HFactorization::HFactorization(const HMatrix& hm) : tree_(hm.tree()) {
  nodes_.resize(static_cast<std::size_t>(tree_.node_count()));
  factor_node(hm, 0);
}

void HFactorization::factor_node(const HMatrix& hm, int id) {
  NodeData& data = nodes_[static_cast<std::size_t>(id)];
  const TreeNode& nd = tree_.node(id);

  if (tree_.is_leaf(id)) {
    data.leaf_llt.compute(hm.leaf_block(id));
    if (data.leaf_llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "leaf node " << id << " (rows " << nd.start << ".." << nd.start + nd.size
          << ") is not positive definite; increase lambda";
      throw DefinitenessError(msg.str());
    }
    return;
  }

  factor_node(hm, nd.left);
  factor_node(hm, nd.right);

  const HMatrix::NodeFactors& f = hm.node_factors(id);
  if (f.u.size() == 0) return;  // block-diagonal at this node
  data.has_coupling = true;
  data.u = f.u;
  data.v = f.v;

  // y = blkdiag(B_l, B_r)^{-1} W, one recursive solve per child
  const TreeNode& l = tree_.node(nd.left);
  const TreeNode& r = tree_.node(nd.right);
  data.yl = data.u;
  solve_node(nd.left, data.yl);
  data.yr = data.v;
  solve_node(nd.right, data.yr);

  const Eigen::Index rank = data.u.cols();
  Eigen::MatrixXd core = Eigen::MatrixXd::Identity(2 * rank, 2 * rank);
  core.topRightCorner(rank, rank).noalias() = data.v.transpose() * data.yr;
  core.bottomLeftCorner(rank, rank).noalias() = data.u.transpose() * data.yl;
  data.core.compute(core);
  (void)l;
  (void)r;
}

void HFactorization::solve_node(int id, Eigen::Ref<Eigen::MatrixXd> b) const {
  const NodeData& data = nodes_[static_cast<std::size_t>(id)];
  const TreeNode& nd = tree_.node(id);

  if (tree_.is_leaf(id)) {
    b = data.leaf_llt.solve(b);
    return;
  }

  const TreeNode& l = tree_.node(nd.left);
  const TreeNode& r = tree_.node(nd.right);
  auto bl = b.middleRows(l.start - nd.start, l.size);
  auto br = b.middleRows(r.start - nd.start, r.size);
  solve_node(nd.left, bl);
  solve_node(nd.right, br);
  if (!data.has_coupling) return;

  // Woodbury correction: x = t - Y core^{-1} (Z^T t)
  const Eigen::Index rank = data.u.cols();
  Eigen::MatrixXd s(2 * rank, b.cols());
  s.topRows(rank).noalias() = data.v.transpose() * br;
  s.bottomRows(rank).noalias() = data.u.transpose() * bl;
  const Eigen::MatrixXd w = data.core.solve(s);
  bl.noalias() -= data.yl * w.topRows(rank);
  br.noalias() -= data.yr * w.bottomRows(rank);
}

Eigen::MatrixXd HFactorization::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != size()) throw ShapeError("right-hand side height does not match");
  const std::vector<std::int64_t>& perm = tree_.perm();
  Eigen::MatrixXd bt(b.rows(), b.cols());
  for (std::int64_t pos = 0; pos < size(); ++pos)
    bt.row(pos) = b.row(perm[static_cast<std::size_t>(pos)]);
  solve_node(0, bt);
  Eigen::MatrixXd x(b.rows(), b.cols());
  for (std::int64_t pos = 0; pos < size(); ++pos)
    x.row(perm[static_cast<std::size_t>(pos)]) = bt.row(pos);
  return x;
}

Eigen::VectorXd HFactorization::solve(const Eigen::VectorXd& b) const {
  return solve(Eigen::MatrixXd(b)).col(0);
}

}  // namespace gnh
