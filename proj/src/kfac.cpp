#include "gnh/kfac.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>

#include "gnh/backprop.hpp"
#include "gnh/errors.hpp"
#include "gnh/rng.hpp"

namespace gnh {
namespace {

// Unnormalized per-sample output derivative z^L for one drawn label, written
// into `out`. For mean squared loss the predictive model is a unit Gaussian
// around the output; for cross entropy a categorical over the softmax.
void sample_output_derivative(Loss loss, const Eigen::VectorXd& output,
                              rng::Stream& stream, Eigen::VectorXd& out) {
  const Eigen::Index dim = output.size();
  out.resize(dim);
  if (loss == Loss::mean_squared) {
    for (Eigen::Index a = 0; a < dim; ++a) out(a) = -stream.normal();
    return;
  }
  Eigen::VectorXd p = (output.array() - output.maxCoeff()).exp();
  p /= p.sum();
  double u = stream.uniform01();
  Eigen::Index drawn = dim - 1;
  double acc = 0.0;
  for (Eigen::Index a = 0; a < dim; ++a) {
    acc += p(a);
    if (u <= acc) {
      drawn = a;
      break;
    }
  }
  out = p;
  out(drawn) -= 1.0;
}

Eigen::MatrixXd output_covariance(Loss loss, const Eigen::VectorXd& output) {
  const Eigen::Index dim = output.size();
  if (loss == Loss::mean_squared) return Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd p = (output.array() - output.maxCoeff()).exp();
  p /= p.sum();
  Eigen::MatrixXd cov = -p * p.transpose();
  cov.diagonal() += p;
  return cov;
}

}  // namespace

KfacApprox::KfacApprox(ParamLayout layout, std::vector<Eigen::MatrixXd> input_factors,
                       std::vector<Eigen::MatrixXd> output_factors)
    : layout_(std::move(layout)),
      input_factors_(std::move(input_factors)),
      output_factors_(std::move(output_factors)) {
  if (static_cast<int>(input_factors_.size()) != layout_.layers() ||
      static_cast<int>(output_factors_.size()) != layout_.layers()) {
    throw ShapeError("kfac: one input and one output factor per layer required");
  }
  for (int l = 0; l < layout_.layers(); ++l) {
    const auto& a = input_factors_[static_cast<std::size_t>(l)];
    const auto& g = output_factors_[static_cast<std::size_t>(l)];
    if (a.rows() != a.cols() || a.rows() != layout_.cols(l)) {
      throw ShapeError("kfac: input factor for layer " + std::to_string(l) +
                       " must be " + std::to_string(layout_.cols(l)) + " square");
    }
    if (g.rows() != g.cols() || g.rows() != layout_.rows(l)) {
      throw ShapeError("kfac: output factor for layer " + std::to_string(l) +
                       " must be " + std::to_string(layout_.rows(l)) + " square");
    }
  }
}

const Eigen::MatrixXd& KfacApprox::input_factor(int layer) const {
  if (layer < 0 || layer >= layout_.layers()) {
    throw ShapeError("kfac: layer index " + std::to_string(layer) + " out of range");
  }
  return input_factors_[static_cast<std::size_t>(layer)];
}

const Eigen::MatrixXd& KfacApprox::output_factor(int layer) const {
  if (layer < 0 || layer >= layout_.layers()) {
    throw ShapeError("kfac: layer index " + std::to_string(layer) + " out of range");
  }
  return output_factors_[static_cast<std::size_t>(layer)];
}

Eigen::MatrixXd KfacApprox::layer_block(int layer) const {
  const Eigen::MatrixXd& a = input_factor(layer);
  const Eigen::MatrixXd& g = output_factor(layer);
  Eigen::MatrixXd block(a.rows() * g.rows(), a.cols() * g.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      block.block(i * g.rows(), j * g.cols(), g.rows(), g.cols()) = a(i, j) * g;
    }
  }
  return block;
}

Eigen::VectorXd KfacApprox::apply(const Eigen::VectorXd& x) const {
  if (x.size() != layout_.total()) {
    throw ShapeError("kfac apply: operand has " + std::to_string(x.size()) +
                     " entries, expected " + std::to_string(layout_.total()));
  }
  Eigen::VectorXd y(x.size());
  for (int l = 0; l < layout_.layers(); ++l) {
    const Eigen::Index rows = layout_.rows(l);
    const Eigen::Index cols = layout_.cols(l);
    Eigen::Map<const Eigen::MatrixXd> xm(x.data() + layout_.offset(l), rows, cols);
    Eigen::Map<Eigen::MatrixXd> ym(y.data() + layout_.offset(l), rows, cols);
    // kron(A, G) vec(X) = vec(G X A) since both factors are symmetric
    ym = output_factors_[static_cast<std::size_t>(l)] * xm *
         input_factors_[static_cast<std::size_t>(l)];
  }
  return y;
}

Eigen::VectorXd KfacApprox::solve(const Eigen::VectorXd& g, double shift) const {
  if (g.size() != layout_.total()) {
    throw ShapeError("kfac solve: rhs has " + std::to_string(g.size()) +
                     " entries, expected " + std::to_string(layout_.total()));
  }
  if (shift < 0.0) throw NumericError("kfac solve: shift must be nonnegative");
  const double per_factor = std::sqrt(shift);
  Eigen::VectorXd x(g.size());
  for (int l = 0; l < layout_.layers(); ++l) {
    const Eigen::Index rows = layout_.rows(l);
    const Eigen::Index cols = layout_.cols(l);
    Eigen::MatrixXd a = input_factors_[static_cast<std::size_t>(l)];
    Eigen::MatrixXd go = output_factors_[static_cast<std::size_t>(l)];
    a.diagonal().array() += per_factor;
    go.diagonal().array() += per_factor;
    Eigen::LLT<Eigen::MatrixXd> llt_a(a);
    Eigen::LLT<Eigen::MatrixXd> llt_g(go);
    if (llt_a.info() != Eigen::Success || llt_g.info() != Eigen::Success) {
      throw DefinitenessError("kfac solve: factor for layer " + std::to_string(l) +
                              " is not positive definite; use a positive shift");
    }
    Eigen::Map<const Eigen::MatrixXd> gm(g.data() + layout_.offset(l), rows, cols);
    Eigen::Map<Eigen::MatrixXd> xm(x.data() + layout_.offset(l), rows, cols);
    xm = llt_g.solve(llt_a.solve(gm.transpose()).transpose());
  }
  return x;
}

std::uint64_t KfacApprox::stored_entries() const {
  std::uint64_t total = 0;
  for (int l = 0; l < layout_.layers(); ++l) {
    total += static_cast<std::uint64_t>(input_factors_[static_cast<std::size_t>(l)].size()) +
             static_cast<std::uint64_t>(output_factors_[static_cast<std::size_t>(l)].size());
  }
  return total;
}

KfacApprox kfac(const MlpNetwork& net, const Batch& batch, const KfacOptions& opts) {
  batch.validate_against(net);
  if (opts.num_samples < 0) {
    throw ShapeError("kfac: num_samples must be nonnegative");
  }
  const int depth = net.depth();
  const Eigen::Index n = batch.n();
  const ForwardTrace trace = forward(net, batch.inputs);

  std::vector<Eigen::MatrixXd> input_factors(static_cast<std::size_t>(depth));
  std::vector<Eigen::MatrixXd> output_factors(static_cast<std::size_t>(depth));
  for (int l = 0; l < depth; ++l) {
    // activation(l) is the input of layer l
    Eigen::MatrixXd aug = augmented_input(trace.activation(l), net.bias_mode());
    input_factors[static_cast<std::size_t>(l)] =
        (aug * aug.transpose()) / static_cast<double>(n);
    output_factors[static_cast<std::size_t>(l)] =
        Eigen::MatrixXd::Zero(net.rows(l), net.rows(l));
  }

  // act_derivs[l] is the derivative mask M of layer l (0-based slot), and the
  // backward step from layer l+1 to layer l contracts with that layer's
  // linear weight: u^l = M^l .* (W_{l+1}^T u^{l+1}).
  if (opts.num_samples > 0) {
    rng::Stream stream = rng::Stream::derive(opts.seed, {0x4b});
    Eigen::VectorXd z;
    const double weight = 1.0 / static_cast<double>(n * opts.num_samples);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::int64_t t = 0; t < opts.num_samples; ++t) {
        sample_output_derivative(net.loss(), trace.activations.back().col(i), stream, z);
        Eigen::VectorXd u = trace.act_derivs.back().col(i).cwiseProduct(z);
        output_factors[static_cast<std::size_t>(depth - 1)]
            .selfadjointView<Eigen::Lower>()
            .rankUpdate(u, weight);
        for (int l = depth - 2; l >= 0; --l) {
          u = trace.act_derivs[static_cast<std::size_t>(l)].col(i).cwiseProduct(
              (net.weight_linear(l + 1).transpose() * u).eval());
          output_factors[static_cast<std::size_t>(l)]
              .selfadjointView<Eigen::Lower>()
              .rankUpdate(u, weight);
        }
      }
    }
    for (int l = 0; l < depth; ++l) {
      output_factors[static_cast<std::size_t>(l)] =
          output_factors[static_cast<std::size_t>(l)].selfadjointView<Eigen::Lower>();
    }
  } else {
    // Exact expectation: propagate the map from output derivatives to each
    // layer's statistic and sandwich the per-point output covariance.
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::MatrixXd cov = output_covariance(net.loss(), trace.activations.back().col(i));
      Eigen::MatrixXd p = trace.act_derivs.back().col(i).asDiagonal();
      output_factors[static_cast<std::size_t>(depth - 1)] +=
          p * cov * p.transpose() / static_cast<double>(n);
      for (int l = depth - 2; l >= 0; --l) {
        p = trace.act_derivs[static_cast<std::size_t>(l)].col(i).asDiagonal() *
            (net.weight_linear(l + 1).transpose() * p).eval();
        output_factors[static_cast<std::size_t>(l)] +=
            p * cov * p.transpose() / static_cast<double>(n);
      }
    }
  }

  return KfacApprox(net.layout(), std::move(input_factors), std::move(output_factors));
}

}  // namespace gnh
