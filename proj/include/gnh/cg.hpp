#pragma once

#include <Eigen/Dense>

#include <functional>

namespace gnh {

using MatvecFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct CgResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;  // ||(A + lambda I) x - b||
};

// Conjugate gradients on the shifted SPD system (A + lambda I) x = b.
// Stops when ||r|| <= tol * ||b||. An optional preconditioner supplies
// application of an approximate inverse of (A + lambda I).
CgResult cg_solve(const MatvecFn& matvec, const Eigen::VectorXd& b, double lambda,
                  double tol, int max_iterations, const MatvecFn& precond = nullptr);

}  // namespace gnh
