#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "gnh/network.hpp"

namespace gnh {

// Activations and activation derivatives of one forward sweep, points as
// columns. activation(0) is the raw input; act_deriv(l) holds the diagonal
// of M^l = diag(s'(W_l x^{l-1})) for layer l = 1..L, stored at slot l-1.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;  // L+1 entries, d_l x n
  std::vector<Eigen::MatrixXd> act_derivs;   // L entries, d_l x n

  int points() const { return static_cast<int>(activations.front().cols()); }
  const Eigen::MatrixXd& activation(int l) const {
    return activations[static_cast<std::size_t>(l)];
  }
  const Eigen::MatrixXd& act_deriv(int layer) const {
    return act_derivs[static_cast<std::size_t>(layer - 1)];
  }
};

ForwardTrace forward(const MlpNetwork& net, const Eigen::MatrixXd& inputs);

// Per-point curvature of the mean loss at the network output:
//   Q_i = (1/n) * d2f/dx2 |_{x_i^L},   Q_i = R_i^T R_i.
// Mean-squared error gives Q_i = (1/n) I for every point, which is kept in
// the isotropic representation instead of n identical matrices; softmax
// cross-entropy gives a dense PSD block per point whose symmetric factor
// comes from an eigendecomposition with negative eigenvalues clamped to 0.
class LossCurvature {
 public:
  static LossCurvature isotropic(int n, int dim, double q_scale);
  static LossCurvature per_point(std::vector<Eigen::MatrixXd> r_factors, int n);

  bool is_isotropic() const { return r_factors_.empty(); }
  int points() const { return n_; }
  int dim() const { return dim_; }
  // sqrt(q_scale) when isotropic; meaningless otherwise
  double iso_r_scale() const { return iso_r_scale_; }

  Eigen::MatrixXd r_factor(int i) const;
  Eigen::MatrixXd q_block(int i) const;
  // applies Q_i to column i of xhat, for all points at once
  Eigen::MatrixXd apply_q(const Eigen::MatrixXd& xhat) const;

 private:
  int n_ = 0;
  int dim_ = 0;
  double iso_r_scale_ = 0.0;
  std::vector<Eigen::MatrixXd> r_factors_;
};

LossCurvature loss_curvature(const MlpNetwork& net, const ForwardTrace& trace);

// Mean loss F(w) = (1/n) sum_i f(x_i^L, y_i) and its gradient, layer blocks
// plus the flat view under the network's parameter layout.
double loss_value(const MlpNetwork& net, const ForwardTrace& trace,
                  const Eigen::MatrixXd& labels);

struct GradientResult {
  std::vector<Eigen::MatrixXd> layers;
  Eigen::VectorXd flat;
};

GradientResult gradient(const MlpNetwork& net, const Batch& batch);

// Gauss-Newton Hessian times a vector, H*what, without ever forming H:
// one linearized forward sweep, the curvature contraction at the output,
// and one backward sweep; O(n N) time, O(n max_l d_l) extra space.
Eigen::VectorXd gnh_matvec(const MlpNetwork& net, const ForwardTrace& trace,
                           const LossCurvature& curv, const Eigen::VectorXd& what);

// Column-by-column version for probe blocks.
Eigen::MatrixXd gnh_matvec(const MlpNetwork& net, const ForwardTrace& trace,
                           const LossCurvature& curv, const Eigen::MatrixXd& what);

// Reference H assembled from N matvecs against canonical basis vectors.
// Strictly a test/desk-scale oracle; refuses N beyond the guard.
Eigen::MatrixXd dense_gnh_oracle(const MlpNetwork& net, const ForwardTrace& trace,
                                 const LossCurvature& curv,
                                 std::int64_t max_params = 20000);

}  // namespace gnh
