#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "gnh/backprop.hpp"
#include "gnh/errors.hpp"
#include "gnh/kfac.hpp"
#include "gnh/network.hpp"
#include "gnh/rng.hpp"
#include "gnh/rsvd.hpp"
#include "gnh/synthetic.hpp"

using namespace gnh;

namespace {

Eigen::MatrixXd random_orthogonal(int n, std::uint64_t seed) {
  rng::Stream stream(seed);
  Eigen::MatrixXd m(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) m(i, j) = stream.normal();
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

Eigen::MatrixXd psd_with_spectrum(const Eigen::VectorXd& eigs, std::uint64_t seed) {
  const Eigen::MatrixXd q = random_orthogonal(static_cast<int>(eigs.size()), seed);
  return q * eigs.asDiagonal() * q.transpose();
}

}  // namespace

TEST_CASE("the sketch recovers a matrix of exactly matching rank") {
  const int n = 30;
  Eigen::VectorXd eigs = Eigen::VectorXd::Zero(n);
  eigs(0) = 5.0;
  eigs(1) = 2.0;
  eigs(2) = 0.5;
  const Eigen::MatrixXd h = psd_with_spectrum(eigs, 3);
  const auto matvec = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return h * x; };
  const RsvdApprox approx = rsvd(matvec, n, 3, 10, 7);
  CHECK(approx.lambda.size() == 3);
  CHECK(approx.lambda(0) == doctest::Approx(5.0).epsilon(1e-10));
  CHECK(approx.lambda(1) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(approx.lambda(2) == doctest::Approx(0.5).epsilon(1e-10));
  const Eigen::MatrixXd rebuilt =
      approx.z * approx.lambda.asDiagonal() * approx.z.transpose();
  CHECK((rebuilt - h).cwiseAbs().maxCoeff() < 1e-10 * h.cwiseAbs().maxCoeff());
  // columns come back orthonormal
  const Eigen::MatrixXd gram = approx.z.transpose() * approx.z;
  CHECK((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a full-size sketch reproduces any symmetric matrix") {
  const int n = 12;
  Eigen::VectorXd eigs(n);
  for (int i = 0; i < n; ++i) eigs(i) = std::pow(0.5, i);
  const Eigen::MatrixXd h = psd_with_spectrum(eigs, 11);
  const auto matvec = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return h * x; };
  const RsvdApprox approx = rsvd(matvec, n, n, 4, 13);
  const Eigen::MatrixXd rebuilt =
      approx.z * approx.lambda.asDiagonal() * approx.z.transpose();
  CHECK((rebuilt - h).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("sketch error decreases as the rank grows") {
  const int n = 40;
  Eigen::VectorXd eigs(n);
  for (int i = 0; i < n; ++i) eigs(i) = std::pow(0.7, i);
  const Eigen::MatrixXd h = psd_with_spectrum(eigs, 17);
  const auto matvec = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return h * x; };
  double prev = 1e30;
  for (const std::int64_t rank : {2, 4, 8, 16}) {
    const RsvdApprox approx = rsvd(matvec, n, rank, 10, 19);
    const Eigen::MatrixXd rebuilt =
        approx.z * approx.lambda.asDiagonal() * approx.z.transpose();
    const double err = (rebuilt - h).norm() / h.norm();
    CHECK(err < prev * 1.001);  // monotone up to randomized wiggle
    prev = err;
    // with this spectrum the best rank-r error is about 0.7^r
    CHECK(err < 4.0 * std::pow(0.7, static_cast<double>(rank)));
  }
}

TEST_CASE("the sketch matvec matches its own reconstruction") {
  const int n = 20;
  Eigen::VectorXd eigs(n);
  for (int i = 0; i < n; ++i) eigs(i) = n - i;
  const Eigen::MatrixXd h = psd_with_spectrum(eigs, 23);
  const auto matvec = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return h * x; };
  const RsvdApprox approx = rsvd(matvec, n, 6, 6, 29);
  rng::Stream stream(31);
  Eigen::MatrixXd x(n, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < n; ++i) x(i, j) = stream.normal();
  const Eigen::MatrixXd rebuilt =
      approx.z * approx.lambda.asDiagonal() * approx.z.transpose();
  CHECK((approx.apply(x) - rebuilt * x).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("the sketch solve inverts the shifted low-rank operator") {
  const int n = 25;
  Eigen::VectorXd eigs = Eigen::VectorXd::Zero(n);
  eigs.head(4) << 9.0, 4.0, 1.0, 0.25;
  const Eigen::MatrixXd h = psd_with_spectrum(eigs, 37);
  const auto matvec = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return h * x; };
  const RsvdApprox approx = rsvd(matvec, n, 4, 8, 41);
  const double shift = 0.5;
  rng::Stream stream(43);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = stream.normal();
  const Eigen::VectorXd x = approx.solve(b, shift);
  const Eigen::MatrixXd rebuilt =
      approx.z * approx.lambda.asDiagonal() * approx.z.transpose() +
      shift * Eigen::MatrixXd::Identity(n, n);
  CHECK((rebuilt * x - b).cwiseAbs().maxCoeff() < 1e-10 * b.cwiseAbs().maxCoeff());
  CHECK_THROWS_AS(approx.solve(b, 0.0), DefinitenessError);
}

TEST_CASE("identical seeds reproduce the sketch bitwise") {
  const int n = 15;
  Eigen::VectorXd eigs(n);
  for (int i = 0; i < n; ++i) eigs(i) = 1.0 / (1 + i);
  const Eigen::MatrixXd h = psd_with_spectrum(eigs, 47);
  const auto matvec = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return h * x; };
  const RsvdApprox a = rsvd(matvec, n, 5, 5, 53);
  const RsvdApprox b = rsvd(matvec, n, 5, 5, 53);
  CHECK((a.z - b.z).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.lambda - b.lambda).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one linear layer with one point has an exact Kronecker block") {
  // with a single point the layer block kron(A, G) is not an approximation:
  // A = aug(x) aug(x)^T / 1 and G carries the exact output curvature
  NetworkSpec spec;
  spec.dims = {3, 2};
  spec.activations = {Activation::identity};
  spec.bias = BiasMode::augmented;
  const MlpNetwork net = random_network(spec, 59);
  const Batch batch = random_batch(net, 1, false, 61);

  KfacOptions opts;  // num_samples = 0 takes the exact expectation
  const KfacApprox approx = kfac(net, batch, opts);

  const ForwardTrace trace = forward(net, batch.inputs);
  const LossCurvature curv = loss_curvature(net, trace);
  const Eigen::MatrixXd h = dense_gnh_oracle(net, trace, curv);
  const Eigen::MatrixXd block = approx.layer_block(0);
  CHECK((block - h).cwiseAbs().maxCoeff() < 1e-10 * h.cwiseAbs().maxCoeff());
}

TEST_CASE("the input factors are the second moments of the layer inputs") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  spec.bias = BiasMode::augmented;
  const MlpNetwork net = random_network(spec, 67);
  const Batch batch = random_batch(net, 9, false, 71);
  const KfacApprox approx = kfac(net, batch, KfacOptions{});

  const ForwardTrace trace = forward(net, batch.inputs);
  for (int l = 0; l < net.depth(); ++l) {
    const Eigen::MatrixXd aug = augmented_input(trace.activation(l), net.bias_mode());
    const Eigen::MatrixXd expected = aug * aug.transpose() / batch.n();
    CHECK((approx.input_factor(l) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("sampled output factors approach the exact expectation") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  spec.loss = Loss::cross_entropy;
  const MlpNetwork net = random_network(spec, 73);
  const Batch batch = random_batch(net, 6, false, 79);

  const KfacApprox exact = kfac(net, batch, KfacOptions{});
  KfacOptions sampled;
  sampled.num_samples = 20000;
  sampled.seed = 83;
  const KfacApprox mc = kfac(net, batch, sampled);

  for (int l = 0; l < net.depth(); ++l) {
    const double scale = exact.output_factor(l).cwiseAbs().maxCoeff();
    CHECK((mc.output_factor(l) - exact.output_factor(l)).cwiseAbs().maxCoeff() <
          0.05 * scale);
    // input factors do not depend on the labels at all
    CHECK((mc.input_factor(l) - exact.input_factor(l)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("the apply routine materializes the block-diagonal product") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::softplus, Activation::identity};
  const MlpNetwork net = random_network(spec, 89);
  const Batch batch = random_batch(net, 5, false, 97);
  const KfacApprox approx = kfac(net, batch, KfacOptions{});

  rng::Stream stream(101);
  Eigen::VectorXd x(net.num_params());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = stream.normal();

  Eigen::VectorXd expected(net.num_params());
  const ParamLayout& layout = net.layout();
  for (int l = 0; l < approx.layers(); ++l) {
    const Eigen::MatrixXd block = approx.layer_block(l);
    const std::int64_t len = layout.rows(l) * layout.cols(l);
    expected.segment(layout.offset(l), len) = block * x.segment(layout.offset(l), len);
  }
  CHECK((approx.apply(x) - expected).cwiseAbs().maxCoeff() <
        1e-11 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
}

TEST_CASE("the Kronecker solve inverts the shifted block product") {
  NetworkSpec spec;
  spec.dims = {3, 3, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  const MlpNetwork net = random_network(spec, 103);
  const Batch batch = random_batch(net, 8, false, 107);
  const KfacApprox approx = kfac(net, batch, KfacOptions{});

  rng::Stream stream(109);
  Eigen::VectorXd g(net.num_params());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = stream.normal();
  const double shift = 1e-2;
  const Eigen::VectorXd x = approx.solve(g, shift);

  // verify per layer: (G + sqrt(shift)) X (A + sqrt(shift)) == Gbar
  const ParamLayout& layout = net.layout();
  const double root = std::sqrt(shift);
  for (int l = 0; l < approx.layers(); ++l) {
    const std::int64_t len = layout.rows(l) * layout.cols(l);
    Eigen::MatrixXd xm = Eigen::Map<const Eigen::MatrixXd>(
        x.segment(layout.offset(l), len).data(), layout.rows(l), layout.cols(l));
    Eigen::MatrixXd gm = Eigen::Map<const Eigen::MatrixXd>(
        g.segment(layout.offset(l), len).data(), layout.rows(l), layout.cols(l));
    Eigen::MatrixXd a = approx.input_factor(l);
    Eigen::MatrixXd gg = approx.output_factor(l);
    a.diagonal().array() += root;
    gg.diagonal().array() += root;
    CHECK((gg * xm * a - gm).cwiseAbs().maxCoeff() < 1e-9 * gm.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("a dominant shift reduces the Kronecker solve to scaling") {
  NetworkSpec spec;
  spec.dims = {4, 3};
  spec.activations = {Activation::identity};
  const MlpNetwork net = random_network(spec, 113);
  const Batch batch = random_batch(net, 6, false, 127);
  const KfacApprox approx = kfac(net, batch, KfacOptions{});
  rng::Stream stream(131);
  Eigen::VectorXd g(net.num_params());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = stream.normal();
  const double shift = 1e12;
  // (G + sqrt(s))^{-1} Gbar (A + sqrt(s))^{-1} ~ Gbar / s for huge s; the
  // factor norms leak in at order 1/sqrt(s), so the tolerance sits well above
  // that
  const Eigen::VectorXd x = approx.solve(g, shift);
  CHECK((x - g / shift).cwiseAbs().maxCoeff() < 1e-4 * (g.cwiseAbs().maxCoeff() / shift));
}

TEST_CASE("an unshifted solve with singular factors is refused") {
  // a feature that is zero on every point zeroes a full row of the input
  // factor, so its unshifted Cholesky hits an exactly zero pivot
  NetworkSpec spec;
  spec.dims = {4, 2};
  spec.activations = {Activation::identity};
  spec.bias = BiasMode::augmented;
  const MlpNetwork net = random_network(spec, 137);
  Batch batch = random_batch(net, 6, false, 139);
  batch.inputs.row(2).setZero();
  const KfacApprox approx = kfac(net, batch, KfacOptions{});
  rng::Stream stream(149);
  Eigen::VectorXd g(net.num_params());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = stream.normal();
  CHECK_THROWS_AS(approx.solve(g, 0.0), DefinitenessError);
}

TEST_CASE("factor shapes are validated on construction") {
  ParamLayout layout({2}, {3});
  std::vector<Eigen::MatrixXd> good_a{Eigen::MatrixXd::Identity(3, 3)};
  std::vector<Eigen::MatrixXd> good_g{Eigen::MatrixXd::Identity(2, 2)};
  CHECK_NOTHROW(KfacApprox(layout, good_a, good_g));
  std::vector<Eigen::MatrixXd> bad_a{Eigen::MatrixXd::Identity(2, 2)};
  CHECK_THROWS_AS(KfacApprox(layout, bad_a, good_g), ShapeError);
  std::vector<Eigen::MatrixXd> bad_g{Eigen::MatrixXd::Identity(3, 3)};
  CHECK_THROWS_AS(KfacApprox(layout, good_a, bad_g), ShapeError);
  CHECK_THROWS_AS(KfacApprox(layout, {}, good_g), ShapeError);
}

TEST_CASE("identical seeds reproduce sampled factors bitwise") {
  NetworkSpec spec;
  spec.dims = {3, 2};
  spec.activations = {Activation::identity};
  spec.loss = Loss::cross_entropy;
  const MlpNetwork net = random_network(spec, 151);
  const Batch batch = random_batch(net, 5, false, 157);
  KfacOptions opts;
  opts.num_samples = 50;
  opts.seed = 163;
  const KfacApprox a = kfac(net, batch, opts);
  const KfacApprox b = kfac(net, batch, opts);
  CHECK((a.output_factor(0) - b.output_factor(0)).cwiseAbs().maxCoeff() == 0.0);
  opts.seed = 167;
  const KfacApprox c = kfac(net, batch, opts);
  CHECK((a.output_factor(0) - c.output_factor(0)).cwiseAbs().maxCoeff() != 0.0);
}

TEST_CASE("stored entries count the factor scalars") {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  spec.bias = BiasMode::augmented;
  const MlpNetwork net = random_network(spec, 173);
  const Batch batch = random_batch(net, 4, false, 179);
  const KfacApprox approx = kfac(net, batch, KfacOptions{});
  // layer 0: A is 4x4, G is 4x4; layer 1: A is 5x5, G is 2x2
  CHECK(approx.stored_entries() == 16u + 16u + 25u + 4u);
}
