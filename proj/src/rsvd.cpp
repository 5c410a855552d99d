#include "gnh/rsvd.hpp"

#include <Eigen/Dense>

#include <algorithm>

#include "gnh/errors.hpp"
#include "gnh/rng.hpp"

namespace gnh {

Eigen::MatrixXd RsvdApprox::apply(const Eigen::MatrixXd& x) const {
  if (x.rows() != z.rows()) {
    throw ShapeError("rsvd apply: operand has " + std::to_string(x.rows()) +
                     " rows, approximation acts on dimension " + std::to_string(z.rows()));
  }
  return z * (lambda.asDiagonal() * (z.transpose() * x));
}

Eigen::VectorXd RsvdApprox::solve(const Eigen::VectorXd& b, double shift) const {
  if (b.size() != z.rows()) {
    throw ShapeError("rsvd solve: rhs has " + std::to_string(b.size()) +
                     " entries, approximation acts on dimension " + std::to_string(z.rows()));
  }
  if (!(shift > 0.0)) {
    // the low-rank part alone is singular, so without a shift there is
    // nothing to invert
    throw DefinitenessError("rsvd solve requires a positive shift, got " +
                            std::to_string(shift));
  }
  // Woodbury on Z diag(l) Z^T + shift I with orthonormal Z:
  //   inverse = (1/shift) (I - Z diag(l / (l + shift)) Z^T)
  Eigen::VectorXd scale = lambda.array() / (lambda.array() + shift);
  Eigen::VectorXd zt_b = z.transpose() * b;
  return (b - z * (scale.asDiagonal() * zt_b)) / shift;
}

RsvdApprox rsvd(const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& matvec,
                std::int64_t n, std::int64_t rank, std::int64_t oversample,
                std::uint64_t seed, int power) {
  if (n <= 0) throw ShapeError("rsvd: operator dimension must be positive");
  if (rank <= 0) throw ShapeError("rsvd: requested rank must be positive");
  rank = std::min(rank, n);
  const std::int64_t sketch = std::min(rank + std::max<std::int64_t>(oversample, 0), n);

  rng::Stream stream = rng::Stream::derive(seed, {0x52});
  Eigen::MatrixXd omega(n, sketch);
  for (std::int64_t j = 0; j < sketch; ++j) {
    for (std::int64_t i = 0; i < n; ++i) omega(i, j) = stream.normal();
  }

  Eigen::MatrixXd y = matvec(omega);
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(y).householderQ() *
                      Eigen::MatrixXd::Identity(n, sketch);
  for (int it = 0; it < power; ++it) {
    // One pass of subspace iteration sharpens the basis when the spectrum
    // decays slowly; re-orthogonalize to keep the columns well conditioned.
    Eigen::MatrixXd hy = matvec(q);
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(hy).householderQ() *
        Eigen::MatrixXd::Identity(n, sketch);
  }

  Eigen::MatrixXd small = q.transpose() * matvec(q);
  small = 0.5 * (small + small.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(small);
  if (eig.info() != Eigen::Success) {
    throw NumericError("rsvd: projected eigenproblem failed to converge");
  }

  // SelfAdjointEigenSolver sorts ascending; keep the top `rank` and clamp
  // small negative values introduced by projection noise.
  RsvdApprox out;
  out.z.resize(n, rank);
  out.lambda.resize(rank);
  for (std::int64_t j = 0; j < rank; ++j) {
    const std::int64_t src = sketch - 1 - j;
    out.z.col(j) = q * eig.eigenvectors().col(src);
    out.lambda(j) = std::max(eig.eigenvalues()(src), 0.0);
  }
  return out;
}

}  // namespace gnh
