#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <vector>

#include "gnh/backprop.hpp"
#include "gnh/errors.hpp"
#include "gnh/network.hpp"
#include "gnh/precompute.hpp"
#include "gnh/rng.hpp"
#include "gnh/synthetic.hpp"

using namespace gnh;

namespace {

struct Problem {
  MlpNetwork net;
  Batch batch;
  ForwardTrace trace;
  LossCurvature curv;
};

Problem make_problem(const NetworkSpec& spec, int n, std::uint64_t seed) {
  MlpNetwork net = random_network(spec, seed);
  Batch batch = random_batch(net, n, false, seed + 1);
  ForwardTrace trace = forward(net, batch.inputs);
  LossCurvature curv = loss_curvature(net, trace);
  return Problem{std::move(net), std::move(batch), std::move(trace), std::move(curv)};
}

// per-point output Jacobian through central differences, independent of any
// backward-pass code
Eigen::MatrixXd fd_jacobian(MlpNetwork net, const Eigen::MatrixXd& inputs, int point,
                            double h) {
  const Eigen::VectorXd w0 = net.to_vector();
  Eigen::MatrixXd jac(net.output_dim(), w0.size());
  for (Eigen::Index k = 0; k < w0.size(); ++k) {
    Eigen::VectorXd w = w0;
    w(k) = w0(k) + h;
    net.set_from_vector(w);
    const Eigen::VectorXd up = forward(net, inputs).activations.back().col(point);
    w(k) = w0(k) - h;
    net.set_from_vector(w);
    const Eigen::VectorXd down = forward(net, inputs).activations.back().col(point);
    jac.col(k) = (up - down) / (2.0 * h);
  }
  return jac;
}

}  // namespace

TEST_CASE("stored tensors satisfy the backward recurrence") {
  NetworkSpec spec;
  spec.dims = {3, 4, 3, 2};
  spec.activations = {Activation::softplus, Activation::sigmoid, Activation::identity};
  spec.loss = Loss::cross_entropy;
  const Problem p = make_problem(spec, 5, 7);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);

  const int depth = p.net.depth();
  for (int i = 0; i < p.batch.n(); ++i) {
    // top level: the loss factor masked by the last activation derivative
    const Eigen::MatrixXd top_expected =
        p.curv.r_factor(i) * p.trace.act_derivs.back().col(i).asDiagonal();
    CHECK((pre.c_matrix(depth - 1, i) - top_expected).cwiseAbs().maxCoeff() < 1e-12);
    // every lower level peels one linear map and one derivative mask
    for (int l = depth - 2; l >= 0; --l) {
      const Eigen::MatrixXd expected = pre.c_matrix(l + 1, i) * p.net.weight_linear(l + 1) *
                                       p.trace.act_derivs[static_cast<std::size_t>(l)]
                                           .col(i)
                                           .asDiagonal();
      CHECK((pre.c_matrix(l, i) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("v vectors match a finite-difference Jacobian slice") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::softplus, Activation::identity};
  const Problem p = make_problem(spec, 3, 17);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);

  for (int i = 0; i < p.batch.n(); ++i) {
    const Eigen::MatrixXd jac = fd_jacobian(p.net, p.batch.inputs, i, 1e-5);
    const Eigen::MatrixXd r = p.curv.r_factor(i);
    for (const std::int64_t flat : {0, 5, 11, 17, 25}) {
      const WeightIndex k = pre.layout().unflatten(flat);
      const Eigen::VectorXd expected = r * jac.col(flat);
      const Eigen::VectorXd got = pre.v_vector(k, i);
      CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("exact entries reproduce the dense reference matrix") {
  for (const Loss loss : {Loss::mean_squared, Loss::cross_entropy}) {
    NetworkSpec spec;
    spec.dims = {3, 5, 4, 2};
    spec.activations = {Activation::relu, Activation::sigmoid, Activation::identity};
    spec.loss = loss;
    const Problem p = make_problem(spec, 6, 23);
    const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
    const Eigen::MatrixXd h = dense_gnh_oracle(p.net, p.trace, p.curv);
    const double scale = h.cwiseAbs().maxCoeff();
    for (std::int64_t k = 0; k < pre.num_params(); ++k) {
      for (std::int64_t m = k; m < pre.num_params(); m += 7) {
        CHECK(std::abs(pre.entry_exact(k, m) - h(k, m)) < 1e-10 * scale);
      }
    }
  }
}

TEST_CASE("a single linear layer yields the Gram-matrix Hessian") {
  NetworkSpec spec;
  spec.dims = {3, 2};
  spec.activations = {Activation::identity};
  spec.bias = BiasMode::none;
  const Problem p = make_problem(spec, 5, 31);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
  const Eigen::MatrixXd gram = p.batch.inputs * p.batch.inputs.transpose() / 5.0;
  const ParamLayout& layout = pre.layout();
  for (int c1 = 0; c1 < 3; ++c1)
    for (int r1 = 0; r1 < 2; ++r1)
      for (int c2 = 0; c2 < 3; ++c2)
        for (int r2 = 0; r2 < 2; ++r2) {
          const double expected = (r1 == r2) ? gram(c1, c2) : 0.0;
          const double got = pre.entry_exact(layout.flatten(0, r1, c1),
                                             layout.flatten(0, r2, c2));
          CHECK(got == doctest::Approx(expected).epsilon(1e-12));
        }
}

TEST_CASE("exact entries are symmetric in their arguments") {
  NetworkSpec spec;
  spec.dims = {4, 3, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  const Problem p = make_problem(spec, 4, 37);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
  rng::Stream stream(38);
  for (int t = 0; t < 50; ++t) {
    const std::int64_t k = static_cast<std::int64_t>(stream.below(
        static_cast<std::uint64_t>(pre.num_params())));
    const std::int64_t m = static_cast<std::int64_t>(stream.below(
        static_cast<std::uint64_t>(pre.num_params())));
    CHECK(pre.entry_exact(k, m) == doctest::Approx(pre.entry_exact(m, k)).epsilon(1e-14));
  }
}

TEST_CASE("column norms agree with the stored tensor columns") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::softplus, Activation::identity};
  spec.loss = Loss::cross_entropy;
  const Problem p = make_problem(spec, 5, 41);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
  for (int l = 0; l < pre.layers(); ++l) {
    for (int i = 0; i < pre.points(); ++i) {
      const Eigen::MatrixXd c = pre.c_matrix(l, i);
      for (int mu = 0; mu < c.cols(); ++mu) {
        CHECK(pre.column_norms(l)(mu, i) ==
              doctest::Approx(c.col(mu).norm()).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("norms factor the v vector magnitudes without touching tensors") {
  NetworkSpec spec;
  spec.dims = {4, 3, 2};
  spec.activations = {Activation::relu, Activation::identity};
  const Problem p = make_problem(spec, 6, 43);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
  for (std::int64_t flat = 0; flat < pre.num_params(); flat += 3) {
    const WeightIndex k = pre.layout().unflatten(flat);
    const Eigen::VectorXd norms = pre.v_norms(k);
    double diag = 0.0;
    for (int i = 0; i < pre.points(); ++i) {
      CHECK(pre.v_norm(k, i) == doctest::Approx(pre.v_vector(k, i).norm()).epsilon(1e-12));
      CHECK(norms(i) == doctest::Approx(pre.v_norm(k, i)).epsilon(1e-14));
      diag += norms(i) * norms(i);
    }
    // the diagonal entry is exactly the sum of squared v norms
    CHECK(std::abs(pre.entry_exact(flat, flat) - diag) <
          1e-11 * std::max(1.0, std::abs(diag)));
  }
}

TEST_CASE("a dead relu unit zeroes its norms and diagonal entries") {
  NetworkSpec spec;
  spec.dims = {2, 3, 1};
  spec.activations = {Activation::relu, Activation::identity};
  spec.bias = BiasMode::augmented;
  MlpNetwork net = random_network(spec, 47);
  net.weight(0).row(1).setZero();
  net.weight(0)(1, 2) = -50.0;  // the bias keeps unit 1 off for every input
  const Batch batch = random_batch(net, 8, false, 48);
  const ForwardTrace trace = forward(net, batch.inputs);
  const LossCurvature curv = loss_curvature(net, trace);
  const GnhPrecomp pre(net, batch, curv, trace);

  for (int c = 0; c < 3; ++c) {
    const std::int64_t flat = net.layout().flatten(0, 1, c);
    CHECK(pre.v_norms(net.layout().unflatten(flat)).maxCoeff() == 0.0);
    CHECK(pre.entry_exact(flat, flat) == 0.0);
  }
}

TEST_CASE("stacked v columns turn blocks into one matrix product") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  spec.loss = Loss::cross_entropy;
  const Problem p = make_problem(spec, 5, 53);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
  const std::vector<std::int64_t> idx{0, 3, 7, 12, 19, 25};
  Eigen::MatrixXd cols;
  pre.fill_v_columns(idx, cols);
  CHECK(cols.rows() == pre.points() * pre.out_dim());
  const Eigen::MatrixXd block = cols.transpose() * cols;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = 0; b < idx.size(); ++b) {
      CHECK(block(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) ==
            doctest::Approx(pre.entry_exact(idx[a], idx[b])).epsilon(1e-12));
    }
  }
}

TEST_CASE("32-bit storage halves the tensor footprint") {
  NetworkSpec spec;
  spec.dims = {4, 6, 3};
  spec.activations = {Activation::softplus, Activation::identity};
  const Problem p = make_problem(spec, 10, 59);
  const GnhPrecomp full(p.net, p.batch, p.curv, p.trace);
  PrecomputeOptions opts;
  opts.precision = StoragePrecision::f32;
  const GnhPrecomp half(p.net, p.batch, p.curv, p.trace, opts);
  CHECK(full.storage_scalars() == half.storage_scalars());
  CHECK(half.tensor_bytes() * 2 == full.tensor_bytes());

  // accumulation stays in 64-bit, so entries only lose storage precision
  const Eigen::MatrixXd h = dense_gnh_oracle(p.net, p.trace, p.curv);
  const double scale = h.cwiseAbs().maxCoeff();
  for (std::int64_t k = 0; k < full.num_params(); k += 5) {
    for (std::int64_t m = k; m < full.num_params(); m += 9) {
      CHECK(std::abs(half.entry_exact(k, m) - full.entry_exact(k, m)) < 1e-5 * scale);
    }
  }
}

TEST_CASE("the build refuses to exceed its byte budget") {
  NetworkSpec spec;
  spec.dims = {4, 6, 3};
  spec.activations = {Activation::softplus, Activation::identity};
  const Problem p = make_problem(spec, 10, 61);
  PrecomputeOptions opts;
  opts.max_bytes = 64;
  CHECK_THROWS_AS(GnhPrecomp(p.net, p.batch, p.curv, p.trace, opts), ResourceError);
}

TEST_CASE("entry cost depends on the batch, not the parameter count") {
  NetworkSpec narrow, wide;
  narrow.dims = {4, 8, 2};
  narrow.activations = {Activation::sigmoid, Activation::identity};
  wide.dims = {4, 64, 2};
  wide.activations = {Activation::sigmoid, Activation::identity};
  const Problem pa = make_problem(narrow, 12, 67);
  const Problem pb = make_problem(wide, 12, 68);
  const GnhPrecomp a(pa.net, pa.batch, pa.curv, pa.trace);
  const GnhPrecomp b(pb.net, pb.batch, pb.curv, pb.trace);
  CHECK(b.num_params() > 6 * a.num_params());

  WorkCounter wa, wb;
  a.entry_exact(std::int64_t{0}, std::int64_t{3}, &wa);
  b.entry_exact(std::int64_t{0}, std::int64_t{3}, &wb);
  CHECK(wa.exact_entry_ops == wb.exact_entry_ops);

  // doubling the batch doubles the per-entry work
  const Problem pc = make_problem(narrow, 24, 69);
  const GnhPrecomp c(pc.net, pc.batch, pc.curv, pc.trace);
  WorkCounter wcounter;
  c.entry_exact(std::int64_t{0}, std::int64_t{3}, &wcounter);
  CHECK(wcounter.exact_entry_ops == 2 * wa.exact_entry_ops);
}

TEST_CASE("rebuilding from raw tables reproduces every entry") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::softplus, Activation::identity};
  const Problem p = make_problem(spec, 4, 71);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);

  std::vector<Eigen::MatrixXd> c64, norms, acts;
  for (int l = 0; l < pre.layers(); ++l) {
    c64.push_back(pre.tensor_f64(l));
    norms.push_back(pre.column_norms(l));
    acts.push_back(pre.input_activation(l));
  }
  std::vector<int> dims;
  for (int l = 0; l < pre.layers(); ++l) dims.push_back(pre.layout().rows(l));
  const GnhPrecomp copy(pre.layout(), dims, pre.points(), pre.out_dim(),
                        StoragePrecision::f64, std::move(c64), {}, std::move(norms),
                        std::move(acts));
  for (std::int64_t k = 0; k < pre.num_params(); k += 2) {
    for (std::int64_t m = 0; m < pre.num_params(); m += 5) {
      CHECK(copy.entry_exact(k, m) == pre.entry_exact(k, m));
    }
  }
}

TEST_CASE("mismatched raw tables are rejected") {
  NetworkSpec spec;
  spec.dims = {3, 2};
  spec.activations = {Activation::identity};
  const Problem p = make_problem(spec, 4, 73);
  const GnhPrecomp pre(p.net, p.batch, p.curv, p.trace);
  std::vector<Eigen::MatrixXd> c64{pre.tensor_f64(0)};
  std::vector<Eigen::MatrixXd> norms{pre.column_norms(0)};
  std::vector<Eigen::MatrixXd> acts{pre.input_activation(0)};
  std::vector<Eigen::MatrixXd> bad_norms{Eigen::MatrixXd::Zero(3, 4)};  // wrong row count
  CHECK_THROWS_AS(GnhPrecomp(pre.layout(), {2}, 4, 2, StoragePrecision::f64, c64, {},
                             bad_norms, acts),
                  ShapeError);
  CHECK_THROWS_AS(GnhPrecomp(pre.layout(), {2}, 4, 2, StoragePrecision::f32, c64, {}, norms,
                             acts),
                  ShapeError);
}
