#include "gnh/backprop.hpp"

#include <cmath>
#include <sstream>

namespace gnh {

namespace {

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    Eigen::VectorXd z = logits.col(i);
    z.array() -= z.maxCoeff();
    Eigen::VectorXd e = z.array().exp();
    p.col(i) = e / e.sum();
  }
  return p;
}

// z^L = (1/n) df/dx at the network output, one column per point
Eigen::MatrixXd output_adjoint(const MlpNetwork& net, const Eigen::MatrixXd& out,
                               const Eigen::MatrixXd& labels) {
  const double inv_n = 1.0 / static_cast<double>(out.cols());
  if (net.loss() == Loss::mean_squared) return inv_n * (out - labels);
  return inv_n * (softmax_columns(out) - labels);
}

void check_curvature_match(const LossCurvature& curv, const ForwardTrace& trace,
                           const MlpNetwork& net) {
  if (curv.points() != trace.points() || curv.dim() != net.output_dim())
    throw ShapeError("curvature object does not match network/trace dimensions");
}

}  // namespace

ForwardTrace forward(const MlpNetwork& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.input_dim())
    throw ShapeError("input dimension does not match the network's first layer");
  if (inputs.cols() < 1) throw ShapeError("forward pass needs at least one point");
  if (!inputs.allFinite()) throw NumericError("inputs contain non-finite values");

  ForwardTrace trace;
  trace.activations.reserve(static_cast<std::size_t>(net.depth()) + 1);
  trace.act_derivs.reserve(static_cast<std::size_t>(net.depth()));
  trace.activations.push_back(inputs);

  for (int l = 0; l < net.depth(); ++l) {
    const Eigen::MatrixXd z =
        net.weight(l) * augmented_input(trace.activations.back(), net.bias_mode());
    if (!z.allFinite()) {
      std::ostringstream msg;
      msg << "pre-activations of layer " << l << " are non-finite";
      throw NumericError(msg.str());
    }
    const Activation a = net.activation(l);
    trace.act_derivs.push_back(z.unaryExpr([a](double v) { return activate_deriv(a, v); }));
    trace.activations.push_back(z.unaryExpr([a](double v) { return activate(a, v); }));
  }
  return trace;
}

LossCurvature LossCurvature::isotropic(int n, int dim, double q_scale) {
  LossCurvature c;
  c.n_ = n;
  c.dim_ = dim;
  c.iso_r_scale_ = std::sqrt(q_scale);
  return c;
}

LossCurvature LossCurvature::per_point(std::vector<Eigen::MatrixXd> r_factors, int n) {
  LossCurvature c;
  c.n_ = n;
  c.dim_ = r_factors.empty() ? 0 : static_cast<int>(r_factors.front().cols());
  c.r_factors_ = std::move(r_factors);
  if (static_cast<int>(c.r_factors_.size()) != n)
    throw ShapeError("need one curvature factor per point");
  return c;
}

Eigen::MatrixXd LossCurvature::r_factor(int i) const {
  if (is_isotropic())
    return iso_r_scale_ * Eigen::MatrixXd::Identity(dim_, dim_);
  return r_factors_[static_cast<std::size_t>(i)];
}

Eigen::MatrixXd LossCurvature::q_block(int i) const {
  if (is_isotropic())
    return (iso_r_scale_ * iso_r_scale_) * Eigen::MatrixXd::Identity(dim_, dim_);
  const Eigen::MatrixXd& r = r_factors_[static_cast<std::size_t>(i)];
  return r.transpose() * r;
}

Eigen::MatrixXd LossCurvature::apply_q(const Eigen::MatrixXd& xhat) const {
  if (xhat.rows() != dim_ || static_cast<int>(xhat.cols()) != n_)
    throw ShapeError("curvature applied to a block of the wrong shape");
  if (is_isotropic()) return (iso_r_scale_ * iso_r_scale_) * xhat;
  Eigen::MatrixXd out(xhat.rows(), xhat.cols());
  for (int i = 0; i < n_; ++i) {
    const Eigen::MatrixXd& r = r_factors_[static_cast<std::size_t>(i)];
    out.col(i).noalias() = r.transpose() * (r * xhat.col(i));
  }
  return out;
}

LossCurvature loss_curvature(const MlpNetwork& net, const ForwardTrace& trace) {
  const int n = trace.points();
  const int d = net.output_dim();
  const Eigen::MatrixXd& out = trace.activation(net.depth());
  if (!out.allFinite()) throw NumericError("network output is non-finite");

  if (net.loss() == Loss::mean_squared)
    return LossCurvature::isotropic(n, d, 1.0 / static_cast<double>(n));

  // softmax cross-entropy: Q_i = (diag(p) - p p^T) / n, PSD with a zero
  // eigenvalue along p; clamp tiny negative eigenvalues from roundoff
  const Eigen::MatrixXd p = softmax_columns(out);
  std::vector<Eigen::MatrixXd> r(static_cast<std::size_t>(n));
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd pi = p.col(i);
    Eigen::MatrixXd q = inv_n * (Eigen::MatrixXd(pi.asDiagonal()) - pi * pi.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    r[static_cast<std::size_t>(i)] =
        lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  }
  return LossCurvature::per_point(std::move(r), n);
}

double loss_value(const MlpNetwork& net, const ForwardTrace& trace,
                  const Eigen::MatrixXd& labels) {
  const Eigen::MatrixXd& out = trace.activation(net.depth());
  if (out.rows() != labels.rows() || out.cols() != labels.cols())
    throw ShapeError("labels do not match network output");
  const double n = static_cast<double>(out.cols());
  if (net.loss() == Loss::mean_squared) return 0.5 * (out - labels).squaredNorm() / n;
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    Eigen::VectorXd z = out.col(i);
    const double zmax = z.maxCoeff();
    const double lse = zmax + std::log((z.array() - zmax).exp().sum());
    total += lse - z.dot(labels.col(i));
  }
  return total / n;
}

GradientResult gradient(const MlpNetwork& net, const Batch& batch) {
  batch.validate_against(net);
  const ForwardTrace trace = forward(net, batch.inputs);
  const int L = net.depth();

  GradientResult g;
  g.layers.resize(static_cast<std::size_t>(L));
  Eigen::MatrixXd z = output_adjoint(net, trace.activation(L), batch.labels);
  for (int l = L; l >= 1; --l) {
    const Eigen::MatrixXd t = trace.act_deriv(l).cwiseProduct(z);
    g.layers[static_cast<std::size_t>(l - 1)].noalias() =
        t * augmented_input(trace.activation(l - 1), net.bias_mode()).transpose();
    if (l > 1) z.noalias() = net.weight_linear(l - 1).transpose() * t;
  }

  const ParamLayout& layout = net.layout();
  g.flat.resize(layout.total());
  for (int l = 0; l < L; ++l) {
    const auto& gl = g.layers[static_cast<std::size_t>(l)];
    g.flat.segment(layout.offset(l), gl.size()) =
        Eigen::Map<const Eigen::VectorXd>(gl.data(), gl.size());
  }
  return g;
}

Eigen::VectorXd gnh_matvec(const MlpNetwork& net, const ForwardTrace& trace,
                           const LossCurvature& curv, const Eigen::VectorXd& what) {
  check_curvature_match(curv, trace, net);
  const ParamLayout& layout = net.layout();
  if (what.size() != layout.total())
    throw ShapeError("matvec operand length does not match the parameter count");
  const int L = net.depth();
  const int n = trace.points();

  // linearized forward sweep: xhat^0 = 0, xhat^l = M^l (W_l xhat^{l-1} + What_l x^{l-1})
  Eigen::MatrixXd xhat;
  for (int l = 1; l <= L; ++l) {
    const Eigen::Map<const Eigen::MatrixXd> what_l(what.data() + layout.offset(l - 1),
                                                   layout.rows(l - 1), layout.cols(l - 1));
    Eigen::MatrixXd term =
        what_l * augmented_input(trace.activation(l - 1), net.bias_mode());
    if (l > 1) term.noalias() += net.weight_linear(l - 1) * xhat;
    xhat = trace.act_deriv(l).cwiseProduct(term);
  }

  // curvature contraction and backward sweep, same shape as the gradient pass
  Eigen::MatrixXd zhat = curv.apply_q(xhat);
  Eigen::VectorXd result(layout.total());
  for (int l = L; l >= 1; --l) {
    const Eigen::MatrixXd t = trace.act_deriv(l).cwiseProduct(zhat);
    const Eigen::MatrixXd block =
        t * augmented_input(trace.activation(l - 1), net.bias_mode()).transpose();
    result.segment(layout.offset(l - 1), block.size()) =
        Eigen::Map<const Eigen::VectorXd>(block.data(), block.size());
    if (l > 1) zhat.noalias() = net.weight_linear(l - 1).transpose() * t;
  }
  (void)n;
  return result;
}

Eigen::MatrixXd gnh_matvec(const MlpNetwork& net, const ForwardTrace& trace,
                           const LossCurvature& curv, const Eigen::MatrixXd& what) {
  Eigen::MatrixXd out(what.rows(), what.cols());
  for (Eigen::Index c = 0; c < what.cols(); ++c)
    out.col(c) = gnh_matvec(net, trace, curv, Eigen::VectorXd(what.col(c)));
  return out;
}

Eigen::MatrixXd dense_gnh_oracle(const MlpNetwork& net, const ForwardTrace& trace,
                                 const LossCurvature& curv, std::int64_t max_params) {
  const std::int64_t n_params = net.num_params();
  if (n_params > max_params) {
    std::ostringstream msg;
    msg << "dense assembly of a " << n_params << "-parameter Hessian exceeds the guard of "
        << max_params;
    throw ResourceError(msg.str());
  }
  Eigen::MatrixXd h(n_params, n_params);
  for (std::int64_t m = 0; m < n_params; ++m) {
    const Eigen::VectorXd e_m = Eigen::VectorXd::Unit(n_params, m);
    h.col(m) = gnh_matvec(net, trace, curv, e_m);
  }
  return h;
}

}  // namespace gnh
