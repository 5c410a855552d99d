#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <vector>

#include "gnh/precompute.hpp"
#include "gnh/sampler.hpp"

namespace gnh {

// Read-only view of the regularized Hessian H + lambda*I for structure-aware
// algorithms that touch individual entries or index blocks. Three backends:
//   exact    entries via the O(n d_L) formula, blocks via one stacked GEMM
//   sampled  entries via the importance estimator, keyed by (seed, k, m) so
//            repeated reads and (k,m)/(m,k) reads agree bitwise; diagonal
//            entries come out exact
//   dense    a materialized matrix, for tests and constructed cases
// All backends are symmetric by construction and add lambda on the diagonal.
class EntryOracle {
 public:
  static EntryOracle exact(std::shared_ptr<const GnhPrecomp> pre, double lambda);
  static EntryOracle sampled(std::shared_ptr<const GnhPrecomp> pre, EstimatorConfig cfg,
                             double lambda);
  static EntryOracle dense(Eigen::MatrixXd h, double lambda = 0.0);

  std::int64_t size() const;
  double lambda() const;
  double entry(std::int64_t i, std::int64_t j) const;
  // diagonal is cached once; it anchors both distances and admissibility
  const Eigen::VectorXd& diagonal() const;
  Eigen::MatrixXd block(const std::vector<std::int64_t>& rows,
                        const std::vector<std::int64_t>& cols) const;
  // entries served so far, for build statistics
  std::uint64_t entries_read() const;

  // default regularization: lambda^2 is about double-precision roundoff
  static constexpr double kDefaultLambda = 1.4901161193847656e-08;  // 2^-26

 private:
  struct Impl;
  explicit EntryOracle(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

enum class DistanceMetric { angle, euclidean };

// Pairwise index distance driven by oracle entries:
//   angle      1 - H_ij^2 / (H_ii H_jj), clamped into [0, 1]
//   euclidean  sqrt(H_ii - 2 H_ij + H_jj)
double index_distance(const EntryOracle& oracle, std::int64_t i, std::int64_t j,
                      DistanceMetric metric);

}  // namespace gnh
