#include "gnh/cg.hpp"

#include "gnh/errors.hpp"

namespace gnh {

CgResult cg_solve(const MatvecFn& matvec, const Eigen::VectorXd& b, double lambda,
                  double tol, int max_iterations, const MatvecFn& precond) {
  if (!matvec) throw ShapeError("cg_solve needs a matvec callback");
  if (tol <= 0.0) throw ShapeError("cg_solve tolerance must be positive");

  const auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd av = matvec(v);
    if (av.size() != v.size())
      throw ShapeError("matvec changed the vector length");
    if (lambda != 0.0) av += lambda * v;
    return av;
  };

  CgResult res;
  res.x = Eigen::VectorXd::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }

  Eigen::VectorXd r = b;  // r = b - A*0
  Eigen::VectorXd z = precond ? precond(r) : r;
  Eigen::VectorXd p = z;
  double rz = r.dot(z);

  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      // not positive definite along p; report what we have
      res.iterations = it;
      res.residual_norm = r.norm();
      return res;
    }
    const double alpha = rz / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    res.iterations = it + 1;
    if (r.norm() <= tol * bnorm) {
      res.converged = true;
      break;
    }
    z = precond ? precond(r) : r;
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  res.residual_norm = (b - apply(res.x)).norm();
  res.converged = res.converged && res.residual_norm <= tol * bnorm * 10.0;
  return res;
}

}  // namespace gnh
