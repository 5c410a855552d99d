#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "gnh/backprop.hpp"
#include "gnh/errors.hpp"
#include "gnh/network.hpp"
#include "gnh/precompute.hpp"
#include "gnh/rng.hpp"
#include "gnh/sampler.hpp"
#include "gnh/synthetic.hpp"

using namespace gnh;

namespace {

GnhPrecomp make_precomp(const NetworkSpec& spec, int n, std::uint64_t seed) {
  const MlpNetwork net = random_network(spec, seed);
  const Batch batch = random_batch(net, n, false, seed + 1);
  const ForwardTrace trace = forward(net, batch.inputs);
  const LossCurvature curv = loss_curvature(net, trace);
  return GnhPrecomp(net, batch, curv, trace);
}

NetworkSpec small_spec() {
  NetworkSpec spec;
  spec.dims = {3, 4, 2};
  spec.activations = {Activation::sigmoid, Activation::identity};
  spec.loss = Loss::cross_entropy;
  return spec;
}

}  // namespace

TEST_CASE("the sampling distribution is proportional to the norm products") {
  Eigen::VectorXd vk(3), vm(3);
  vk << 1, 2, 3;
  vm << 1, 1, 1;
  const SamplingDistribution dist = distribution_from_norms(vk, vm);
  CHECK_FALSE(dist.degenerate);
  CHECK(dist.total_mass == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(dist.probs(0) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(dist.probs(1) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
  CHECK(dist.probs(2) == doctest::Approx(3.0 / 6.0).epsilon(1e-15));
  CHECK(dist.cumulative(2) == 1.0);  // pinned exactly
  CHECK(dist.norm_k == doctest::Approx(vk.norm()).epsilon(1e-15));
  CHECK(dist.norm_m == doctest::Approx(vm.norm()).epsilon(1e-15));
}

TEST_CASE("zero norms mark the distribution degenerate") {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
  CHECK(distribution_from_norms(zero, ones).degenerate);
  CHECK_FALSE(distribution_from_norms(ones, ones).degenerate);
}

TEST_CASE("samples land in proportion to the masses") {
  Eigen::VectorXd vk(3), vm(3);
  vk << 1, 2, 3;
  vm << 1, 1, 1;
  const SamplingDistribution dist = distribution_from_norms(vk, vm);
  rng::Stream stream(99);
  Eigen::Vector3d counts = Eigen::Vector3d::Zero();
  const int draws = 60000;
  for (int t = 0; t < draws; ++t) counts(dist.sample(stream)) += 1.0;
  counts /= draws;
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(counts(j) - dist.probs(j)) < 0.01);
  }
}

TEST_CASE("a single data point makes every estimate exact") {
  const GnhPrecomp pre = make_precomp(small_spec(), 1, 5);
  EstimatorConfig cfg;
  cfg.c = 3;
  cfg.seed = 11;
  const EntryEstimate est = entry_estimate(pre, std::int64_t{1}, std::int64_t{7}, cfg);
  CHECK(std::abs(est.value - pre.entry_exact(std::int64_t{1}, std::int64_t{7})) < 1e-13);
}

TEST_CASE("diagonal requests return the exact entry from one sample") {
  const GnhPrecomp pre = make_precomp(small_spec(), 8, 7);
  EstimatorConfig cfg;
  cfg.c = 5;
  cfg.seed = 13;
  for (std::int64_t k = 0; k < pre.num_params(); k += 4) {
    const EntryEstimate est = entry_estimate(pre, k, k, cfg);
    CHECK(est.exact);
    CHECK(est.c_used == 1);
    CHECK(est.bound == 0.0);
    CHECK(std::abs(est.value - pre.entry_exact(k, k)) <
          1e-12 * std::max(1.0, std::abs(est.value)));
  }
}

TEST_CASE("the estimator is unbiased over many independent runs") {
  const GnhPrecomp pre = make_precomp(small_spec(), 16, 17);
  const std::int64_t k = 2, m = 21;
  const double exact = pre.entry_exact(k, m);
  EstimatorConfig cfg;
  cfg.c = 16;
  const int runs = 4000;
  double mean = 0.0, second = 0.0;
  for (int r = 0; r < runs; ++r) {
    cfg.seed = static_cast<std::uint64_t>(r) + 1;
    const EntryEstimate est = entry_estimate(pre, k, m, cfg);
    mean += est.value;
    second += est.value * est.value;
  }
  mean /= runs;
  const double var = second / runs - mean * mean;
  const double se = std::sqrt(var / runs);
  // four standard errors around the truth
  CHECK(std::abs(mean - exact) < 4.0 * se + 1e-12);
}

TEST_CASE("the stated bound dominates the sample standard deviation") {
  const GnhPrecomp pre = make_precomp(small_spec(), 16, 19);
  const std::int64_t k = 3, m = 17;
  EstimatorConfig cfg;
  cfg.c = 32;
  cfg.delta = 0.05;
  const int runs = 2000;
  double bound = 0.0, second = 0.0, mean = 0.0;
  for (int r = 0; r < runs; ++r) {
    cfg.seed = static_cast<std::uint64_t>(r) + 1;
    const EntryEstimate est = entry_estimate(pre, k, m, cfg);
    mean += est.value;
    second += est.value * est.value;
    bound = est.bound;
  }
  mean /= runs;
  const double sd = std::sqrt(second / runs - mean * mean);
  // eta(0.05) is above 4, so the bound should exceed several standard deviations
  CHECK(bound > sd);
}

TEST_CASE("estimation error shrinks like the square root of the sample count") {
  const GnhPrecomp pre = make_precomp(small_spec(), 32, 23);
  const std::int64_t k = 1, m = 14;
  const double exact = pre.entry_exact(k, m);
  const int runs = 400;
  std::vector<double> rms;
  for (const std::int64_t c : {16, 256}) {
    EstimatorConfig cfg;
    cfg.c = c;
    double acc = 0.0;
    for (int r = 0; r < runs; ++r) {
      cfg.seed = static_cast<std::uint64_t>(r) + 1;
      const double err = entry_estimate(pre, k, m, cfg).value - exact;
      acc += err * err;
    }
    rms.push_back(std::sqrt(acc / runs));
  }
  // 16x more samples should cut the error by about 4x; allow wide slack
  const double ratio = rms[0] / rms[1];
  CHECK(ratio > 2.0);
  CHECK(ratio < 8.0);
}

TEST_CASE("concentration failures stay below the promised probability") {
  const GnhPrecomp pre = make_precomp(small_spec(), 16, 29);
  const WeightIndex k = pre.layout().unflatten(2);
  const WeightIndex m = pre.layout().unflatten(19);
  EstimatorConfig cfg;
  cfg.c = 64;
  cfg.delta = 0.1;
  cfg.seed = 31;
  const double failures = concentration_test(pre, k, m, cfg, 2000);
  CHECK(failures <= cfg.delta);
}

TEST_CASE("equal masses make the uniform and weighted estimators coincide") {
  // one linear layer, four points with unit-magnitude entries: every point
  // mass is exactly 0.25 under both schemes, so the draws and the division
  // agree bitwise
  std::vector<Eigen::MatrixXd> weights{Eigen::MatrixXd::Identity(2, 3)};
  const MlpNetwork net(std::move(weights), {Activation::identity}, Loss::mean_squared,
                       BiasMode::none);
  Batch batch;
  batch.inputs.resize(3, 4);
  batch.inputs << 1, -1, 1, -1,
                  1, 1, -1, -1,
                  -1, 1, 1, -1;
  batch.labels = Eigen::MatrixXd::Zero(2, 4);
  const ForwardTrace trace = forward(net, batch.inputs);
  const LossCurvature curv = loss_curvature(net, trace);
  const GnhPrecomp pre(net, batch, curv, trace);

  EstimatorConfig cfg;
  cfg.c = 40;
  cfg.seed = 39;
  // off-diagonal pair sharing the same output row
  const WeightIndex k = net.layout().unflatten(net.layout().flatten(0, 0, 0));
  const WeightIndex m = net.layout().unflatten(net.layout().flatten(0, 0, 1));
  const EntryEstimate weighted = entry_estimate(pre, k, m, cfg);
  const EntryEstimate uniform = uniform_baseline_estimate(pre, k, m, cfg);
  CHECK(weighted.value == uniform.value);  // same draws, same masses, bitwise
  CHECK(std::isinf(uniform.bound));
  CHECK(std::isfinite(weighted.bound));
}

TEST_CASE("the uniform baseline takes no diagonal shortcut") {
  const GnhPrecomp pre = make_precomp(small_spec(), 12, 41);
  EstimatorConfig cfg;
  cfg.c = 6;
  cfg.seed = 43;
  const WeightIndex k = pre.layout().unflatten(5);
  const EntryEstimate est = uniform_baseline_estimate(pre, k, k, cfg);
  CHECK_FALSE(est.exact);
  CHECK(est.c_used == 6);
}

TEST_CASE("identical seeds reproduce estimates bitwise") {
  const GnhPrecomp pre = make_precomp(small_spec(), 16, 47);
  EstimatorConfig cfg;
  cfg.c = 25;
  cfg.seed = 1234;
  const EntryEstimate a = entry_estimate(pre, std::int64_t{4}, std::int64_t{11}, cfg);
  const EntryEstimate b = entry_estimate(pre, std::int64_t{4}, std::int64_t{11}, cfg);
  CHECK(a.value == b.value);
  CHECK(a.bound == b.bound);
  // the entry stream is symmetric in (k, m)
  const EntryEstimate swapped = entry_estimate(pre, std::int64_t{11}, std::int64_t{4}, cfg);
  CHECK(swapped.value == a.value);
  // a different seed moves the draw
  cfg.seed = 1235;
  const EntryEstimate other = entry_estimate(pre, std::int64_t{4}, std::int64_t{11}, cfg);
  CHECK(other.value != a.value);
}

TEST_CASE("matrix estimates are symmetric with an exact diagonal") {
  const GnhPrecomp pre = make_precomp(small_spec(), 10, 53);
  std::vector<std::int64_t> idx{0, 2, 5, 9, 13, 20};
  EstimatorConfig cfg;
  cfg.c = 20;
  cfg.seed = 55;
  const Eigen::MatrixXd est = matrix_estimate(pre, idx, cfg);
  CHECK(est.rows() == 6);
  CHECK((est - est.transpose()).cwiseAbs().maxCoeff() == 0.0);
  for (int a = 0; a < 6; ++a) {
    CHECK(std::abs(est(a, a) - pre.entry_exact(idx[static_cast<std::size_t>(a)],
                                               idx[static_cast<std::size_t>(a)])) <
          1e-12 * std::max(1.0, std::abs(est(a, a))));
  }
}

TEST_CASE("matrix estimates converge to the exact block as samples grow") {
  const GnhPrecomp pre = make_precomp(small_spec(), 24, 59);
  std::vector<std::int64_t> idx{1, 3, 8, 15, 22};
  Eigen::MatrixXd exact(5, 5);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      exact(a, b) = pre.entry_exact(idx[static_cast<std::size_t>(a)],
                                    idx[static_cast<std::size_t>(b)]);
  const double scale = exact.cwiseAbs().maxCoeff();

  EstimatorConfig coarse, fine;
  coarse.c = 20;
  coarse.seed = 61;
  fine.c = 20000;
  fine.seed = 61;
  const double err_coarse =
      (matrix_estimate(pre, idx, coarse) - exact).cwiseAbs().maxCoeff() / scale;
  const double err_fine =
      (matrix_estimate(pre, idx, fine) - exact).cwiseAbs().maxCoeff() / scale;
  CHECK(err_fine < err_coarse);
  CHECK(err_fine < 0.05);
}

TEST_CASE("the exact diagonal helper matches entry queries") {
  const GnhPrecomp pre = make_precomp(small_spec(), 9, 67);
  std::vector<std::int64_t> idx;
  for (std::int64_t k = 0; k < pre.num_params(); ++k) idx.push_back(k);
  const Eigen::VectorXd diag = diagonal_estimate(pre, idx);
  for (std::int64_t k = 0; k < pre.num_params(); ++k) {
    CHECK(diag(k) == doctest::Approx(pre.entry_exact(k, k)).epsilon(1e-12));
  }
}

TEST_CASE("invalid estimator configurations are rejected") {
  EstimatorConfig cfg;
  cfg.c = 0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg.c = 10;
  cfg.delta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg.delta = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg.delta = 0.5;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("sampling work scales with the sample count, not the batch") {
  const GnhPrecomp pre = make_precomp(small_spec(), 16, 71);
  EstimatorConfig cfg;
  cfg.c = 10;
  cfg.seed = 73;
  WorkCounter w10, w20;
  entry_estimate(pre, std::int64_t{1}, std::int64_t{9}, cfg, &w10);
  cfg.c = 20;
  entry_estimate(pre, std::int64_t{1}, std::int64_t{9}, cfg, &w20);
  CHECK(w20.sample_ops == 2 * w10.sample_ops);
  CHECK(w10.dist_build_ops == static_cast<std::uint64_t>(pre.points()));
}
