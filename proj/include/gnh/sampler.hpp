#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "gnh/precompute.hpp"
#include "gnh/rng.hpp"

namespace gnh {

struct EstimatorConfig {
  std::int64_t c = 100;    // samples per entry
  double delta = 0.05;     // failure probability of the concentration bound
  std::uint64_t seed = 0;  // base seed; per-entry streams derive from (seed, k, m)

  // concentration constant: |H_km - est| <= eta/sqrt(c) * ||v_k|| ||v_m||
  // holds with probability >= 1 - delta
  double eta() const;
  void validate() const;
};

// Importance distribution over data points for one entry (k, m):
//   P(t) = ||v_k(t)|| ||v_m(t)|| / sum_j ||v_k(j)|| ||v_m(j)||.
// Entirely norm-driven, so building it costs O(n) and never touches the
// backprop tensors themselves.
struct SamplingDistribution {
  Eigen::VectorXd probs;
  Eigen::VectorXd cumulative;  // last element pinned to exactly 1
  double total_mass = 0.0;     // sum_j ||v_k(j)|| ||v_m(j)||
  double norm_k = 0.0;         // ||v_k|| over all points
  double norm_m = 0.0;
  bool degenerate = false;     // all masses zero: the entry is exactly 0

  int points() const { return static_cast<int>(probs.size()); }
  std::int64_t sample(rng::Stream& stream) const;
};

SamplingDistribution distribution_from_norms(const Eigen::VectorXd& vk_norms,
                                             const Eigen::VectorXd& vm_norms);
SamplingDistribution build_distribution(const GnhPrecomp& pre, const WeightIndex& k,
                                        const WeightIndex& m, WorkCounter* wc = nullptr);

struct EntryEstimate {
  double value = 0.0;
  std::int64_t c_used = 0;
  double bound = 0.0;  // eta/sqrt(c) * ||v_k|| ||v_m||; 0 when exact
  bool exact = false;
};

// Unbiased importance-sampled estimate of H_km with c draws (with
// replacement). Diagonal requests short-circuit: under this distribution a
// single sample already reproduces H_kk exactly, so the diagonal is returned
// exactly. Zero total mass also short-circuits to the exact value 0.
EntryEstimate entry_estimate(const GnhPrecomp& pre, const WeightIndex& k,
                             const WeightIndex& m, const EstimatorConfig& cfg,
                             WorkCounter* wc = nullptr);
EntryEstimate entry_estimate(const GnhPrecomp& pre, std::int64_t k, std::int64_t m,
                             const EstimatorConfig& cfg, WorkCounter* wc = nullptr);

// Same estimator with P(t) = 1/n. No diagonal shortcut: the single-sample
// exactness is a property of the norm-proportional distribution only, and
// this baseline exists to show what uniform sampling actually delivers.
EntryEstimate uniform_baseline_estimate(const GnhPrecomp& pre, const WeightIndex& k,
                                        const WeightIndex& m, const EstimatorConfig& cfg,
                                        WorkCounter* wc = nullptr);

enum class SamplingScheme { importance, uniform };

// Symmetric estimated Hessian over a subset of weight indices (empty subset
// means all N). Each unordered pair is estimated once from its own stream and
// mirrored; diagonal entries are exact under the importance scheme.
Eigen::MatrixXd matrix_estimate(const GnhPrecomp& pre, const std::vector<std::int64_t>& idx,
                                const EstimatorConfig& cfg,
                                SamplingScheme scheme = SamplingScheme::importance,
                                std::uint64_t max_bytes = 4ull << 30);

// Exact diagonal from the norms table (the c = 1 shortcut applied to all k).
Eigen::VectorXd diagonal_estimate(const GnhPrecomp& pre, const std::vector<std::int64_t>& idx);

// Fraction of independent trials in which |estimate - exact| exceeds the
// stated bound; the bound promises this stays below cfg.delta.
double concentration_test(const GnhPrecomp& pre, const WeightIndex& k, const WeightIndex& m,
                          const EstimatorConfig& cfg, int trials);

}  // namespace gnh
