#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "gnh/network.hpp"

namespace gnh {

struct KfacOptions {
  // Labels drawn per data point from the model's predictive distribution when
  // estimating the output factors. 0 takes the exact expectation instead.
  std::int64_t num_samples = 0;
  std::uint64_t seed = 0;
};

// Kronecker-factored block diagonal curvature approximation. Each layer
// contributes kron(A_l, G_l) where A_l is the second moment of the layer's
// (augmented) inputs and G_l the second moment of the backpropagated output
// derivatives under labels drawn from the model itself.
class KfacApprox {
 public:
  KfacApprox(ParamLayout layout, std::vector<Eigen::MatrixXd> input_factors,
             std::vector<Eigen::MatrixXd> output_factors);

  int layers() const { return layout_.layers(); }
  const ParamLayout& layout() const { return layout_; }
  // A_l, one per layer (layers are 0-based throughout)
  const Eigen::MatrixXd& input_factor(int layer) const;
  // G_l
  const Eigen::MatrixXd& output_factor(int layer) const;

  // Dense kron(A_l, G_l) for one layer, meant for small nets and tests.
  Eigen::MatrixXd layer_block(int layer) const;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  // Per layer (G + sqrt(shift) I)^{-1} Gbar (A + sqrt(shift) I)^{-1} where
  // Gbar is the layer's slice of g in matrix shape. shift = 0 requires both
  // factors to be positive definite.
  Eigen::VectorXd solve(const Eigen::VectorXd& g, double shift) const;

  std::uint64_t stored_entries() const;

 private:
  ParamLayout layout_;
  std::vector<Eigen::MatrixXd> input_factors_;
  std::vector<Eigen::MatrixXd> output_factors_;
};

KfacApprox kfac(const MlpNetwork& net, const Batch& batch, const KfacOptions& opts);

}  // namespace gnh
