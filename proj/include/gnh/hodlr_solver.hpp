#pragma once

#include <Eigen/Dense>

#include <vector>

#include "gnh/hmatrix.hpp"

namespace gnh {

// Direct factorization of the represented operator. Leaves get Cholesky
// factors; every internal node gets a Woodbury correction
//
//   H_v = blkdiag(H_l, H_r) + W Z^T,  W = blkdiag(U, V), Z = [0 U; V 0],
//
// so a solve is two child solves plus a 2r x 2r core solve. Applying the
// factorization costs O(N (leaf + rank)) per level. The factorization copies
// what it needs from the H-matrix, so the source may be discarded afterwards.
class HFactorization {
 public:
  explicit HFactorization(const HMatrix& hm);

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  std::int64_t size() const { return tree_.size(); }

 private:
  struct NodeData {
    Eigen::LLT<Eigen::MatrixXd> leaf_llt;       // leaves
    Eigen::MatrixXd u, v;                       // internal: coupling factors
    Eigen::MatrixXd yl, yr;                     // B_l^{-1} U and B_r^{-1} V
    Eigen::PartialPivLU<Eigen::MatrixXd> core;  // I + Z^T B^{-1} W
    bool has_coupling = false;
  };

  void factor_node(const HMatrix& hm, int id);
  void solve_node(int id, Eigen::Ref<Eigen::MatrixXd> b) const;

  IndexTree tree_;
  std::vector<NodeData> nodes_;
};

}  // namespace gnh
