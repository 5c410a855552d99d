#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

namespace gnh {

// Rank-r eigenvalue sketch H ~ Z diag(lambda) Z^T of a symmetric PSD operator
// given only matvec access. apply/solve match the other approximations'
// interface so comparison harnesses can treat them uniformly.
struct RsvdApprox {
  Eigen::MatrixXd z;       // N x r, orthonormal columns
  Eigen::VectorXd lambda;  // r eigenvalues, descending, clamped at 0

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  // (Z diag(lambda) Z^T + shift I)^{-1} b, shift > 0
  Eigen::VectorXd solve(const Eigen::VectorXd& b, double shift) const;
  std::uint64_t stored_entries() const {
    return static_cast<std::uint64_t>(z.size()) + static_cast<std::uint64_t>(lambda.size());
  }
};

// Range finding with Gaussian probes through the operator, `power` extra
// subspace iterations (default one), then a small projected eigenproblem.
RsvdApprox rsvd(const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& matvec,
                std::int64_t n, std::int64_t rank, std::int64_t oversample,
                std::uint64_t seed, int power = 1);

}  // namespace gnh
