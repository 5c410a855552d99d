#include "gnh/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gnh/errors.hpp"

namespace gnh {

double EstimatorConfig::eta() const { return 1.0 + std::sqrt(8.0 * std::log(1.0 / delta)); }

void EstimatorConfig::validate() const {
  if (c < 1) throw ShapeError("estimator needs at least one sample");
  if (!(delta > 0.0 && delta < 1.0)) throw ShapeError("delta must lie in (0, 1)");
}

std::int64_t SamplingDistribution::sample(rng::Stream& stream) const {
  const double u = stream.uniform01();
  const double* begin = cumulative.data();
  const double* end = begin + cumulative.size();
  // first position with cumulative > u; the pinned final 1.0 catches u -> 1
  const double* it = std::upper_bound(begin, end, u);
  if (it == end) --it;
  return it - begin;
}

SamplingDistribution distribution_from_norms(const Eigen::VectorXd& vk_norms,
                                             const Eigen::VectorXd& vm_norms) {
  if (vk_norms.size() != vm_norms.size())
    throw ShapeError("norm vectors disagree on the number of points");
  const Eigen::Index n = vk_norms.size();
  SamplingDistribution dist;
  dist.norm_k = vk_norms.norm();
  dist.norm_m = vm_norms.norm();

  Eigen::VectorXd mass = vk_norms.cwiseProduct(vm_norms);
  dist.total_mass = mass.sum();
  if (dist.total_mass <= 0.0) {
    dist.degenerate = true;
    dist.probs = Eigen::VectorXd::Zero(n);
    dist.cumulative = Eigen::VectorXd::Ones(n);
    return dist;
  }
  dist.probs = mass / dist.total_mass;
  dist.cumulative.resize(n);
  double run = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    run += dist.probs[t];
    dist.cumulative[t] = run;
  }
  dist.cumulative[n - 1] = 1.0;
  return dist;
}

SamplingDistribution build_distribution(const GnhPrecomp& pre, const WeightIndex& k,
                                        const WeightIndex& m, WorkCounter* wc) {
  const Eigen::VectorXd nk = pre.v_norms(k);
  const Eigen::VectorXd nm = pre.v_norms(m);
  if (wc) wc->dist_build_ops += static_cast<std::uint64_t>(pre.points());
  return distribution_from_norms(nk, nm);
}

namespace {

// log2-ish cost of one table search, charged per draw
std::uint64_t search_cost(int n) {
  std::uint64_t c = 1;
  while (n > 1) {
    n >>= 1;
    ++c;
  }
  return c;
}

EntryEstimate estimate_from_distribution(const GnhPrecomp& pre, const WeightIndex& k,
                                         const WeightIndex& m, const EstimatorConfig& cfg,
                                         const SamplingDistribution& dist,
                                         std::uint64_t salt, WorkCounter* wc) {
  EntryEstimate est;
  est.bound = cfg.eta() / std::sqrt(static_cast<double>(cfg.c)) * dist.norm_k * dist.norm_m;

  // streams are keyed by the unordered pair so H~ is symmetric by construction
  const std::uint64_t a = static_cast<std::uint64_t>(std::min(k.flat, m.flat));
  const std::uint64_t b = static_cast<std::uint64_t>(std::max(k.flat, m.flat));
  rng::Stream stream = rng::Stream::derive(cfg.seed, {a, b, salt});

  double acc = 0.0;
  for (std::int64_t j = 0; j < cfg.c; ++j) {
    const std::int64_t t = dist.sample(stream);
    acc += pre.v_dot(k, m, static_cast<int>(t)) / dist.probs[t];
  }
  est.value = acc / static_cast<double>(cfg.c);
  est.c_used = cfg.c;
  if (wc)
    wc->sample_ops += static_cast<std::uint64_t>(cfg.c) *
                      (search_cost(dist.points()) + static_cast<std::uint64_t>(pre.out_dim()) + 2);
  return est;
}

EntryEstimate entry_estimate_salted(const GnhPrecomp& pre, const WeightIndex& k,
                                    const WeightIndex& m, const EstimatorConfig& cfg,
                                    std::uint64_t salt, WorkCounter* wc) {
  cfg.validate();
  if (k.flat == m.flat) {
    // one draw under the importance distribution returns ||v_k||^2 = H_kk
    // regardless of which point it lands on, so skip the draw altogether
    EntryEstimate est;
    const Eigen::VectorXd norms = pre.v_norms(k);
    est.value = norms.squaredNorm();
    est.c_used = 1;
    est.exact = true;
    if (wc) wc->dist_build_ops += static_cast<std::uint64_t>(pre.points());
    return est;
  }
  const SamplingDistribution dist = build_distribution(pre, k, m, wc);
  if (dist.degenerate) {
    EntryEstimate est;
    est.exact = true;  // all v products vanish, the entry is exactly zero
    return est;
  }
  return estimate_from_distribution(pre, k, m, cfg, dist, salt, wc);
}

}  // namespace

EntryEstimate entry_estimate(const GnhPrecomp& pre, const WeightIndex& k,
                             const WeightIndex& m, const EstimatorConfig& cfg,
                             WorkCounter* wc) {
  return entry_estimate_salted(pre, k, m, cfg, 0, wc);
}

EntryEstimate entry_estimate(const GnhPrecomp& pre, std::int64_t k, std::int64_t m,
                             const EstimatorConfig& cfg, WorkCounter* wc) {
  return entry_estimate_salted(pre, pre.layout().unflatten(k), pre.layout().unflatten(m),
                               cfg, 0, wc);
}

EntryEstimate uniform_baseline_estimate(const GnhPrecomp& pre, const WeightIndex& k,
                                        const WeightIndex& m, const EstimatorConfig& cfg,
                                        WorkCounter* wc) {
  cfg.validate();
  const int n = pre.points();
  // same machinery, flat masses; keeps draw-for-draw parity with the
  // importance path when the true masses happen to be constant
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  SamplingDistribution dist = distribution_from_norms(ones, ones);
  // report the honest norms so the caller can compare bounds if it wants to
  dist.norm_k = pre.v_norms(k).norm();
  dist.norm_m = pre.v_norms(m).norm();
  if (wc) wc->dist_build_ops += static_cast<std::uint64_t>(n);
  EntryEstimate est = estimate_from_distribution(pre, k, m, cfg, dist, 0, wc);
  // the eta/sqrt(c) concentration bound is only proven for the norm-weighted
  // distribution; claim nothing here
  est.bound = std::numeric_limits<double>::infinity();
  return est;
}

Eigen::MatrixXd matrix_estimate(const GnhPrecomp& pre, const std::vector<std::int64_t>& idx,
                                const EstimatorConfig& cfg, SamplingScheme scheme,
                                std::uint64_t max_bytes) {
  cfg.validate();
  std::vector<std::int64_t> indices = idx;
  if (indices.empty()) {
    indices.resize(static_cast<std::size_t>(pre.num_params()));
    for (std::size_t k = 0; k < indices.size(); ++k)
      indices[k] = static_cast<std::int64_t>(k);
  }
  const std::size_t nn = indices.size();
  const std::uint64_t need = static_cast<std::uint64_t>(nn) * nn * 8;
  if (need > max_bytes) {
    std::ostringstream msg;
    msg << "estimated matrix over " << nn << " indices needs " << need
        << " bytes (budget " << max_bytes << ")";
    throw ResourceError(msg.str());
  }

  std::vector<WeightIndex> w(nn);
  for (std::size_t a = 0; a < nn; ++a) w[a] = pre.layout().unflatten(indices[a]);

  Eigen::MatrixXd h(static_cast<Eigen::Index>(nn), static_cast<Eigen::Index>(nn));
  for (std::size_t a = 0; a < nn; ++a) {
    for (std::size_t b = a; b < nn; ++b) {
      const EntryEstimate est = scheme == SamplingScheme::importance
                                    ? entry_estimate(pre, w[a], w[b], cfg)
                                    : uniform_baseline_estimate(pre, w[a], w[b], cfg);
      h(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = est.value;
      h(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = est.value;
    }
  }
  return h;
}

Eigen::VectorXd diagonal_estimate(const GnhPrecomp& pre, const std::vector<std::int64_t>& idx) {
  std::vector<std::int64_t> indices = idx;
  if (indices.empty()) {
    indices.resize(static_cast<std::size_t>(pre.num_params()));
    for (std::size_t k = 0; k < indices.size(); ++k)
      indices[k] = static_cast<std::int64_t>(k);
  }
  Eigen::VectorXd d(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t a = 0; a < indices.size(); ++a)
    d[static_cast<Eigen::Index>(a)] = pre.v_norms(pre.layout().unflatten(indices[a])).squaredNorm();
  return d;
}

double concentration_test(const GnhPrecomp& pre, const WeightIndex& k, const WeightIndex& m,
                          const EstimatorConfig& cfg, int trials) {
  cfg.validate();
  if (trials < 1) throw ShapeError("concentration test needs at least one trial");
  const double exact = pre.entry_exact(k, m);
  const SamplingDistribution dist = build_distribution(pre, k, m, nullptr);
  if (k.flat == m.flat || dist.degenerate) return 0.0;  // exact cases never fail

  int failures = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const EntryEstimate est = estimate_from_distribution(
        pre, k, m, cfg, dist, static_cast<std::uint64_t>(trial), nullptr);
    if (std::abs(est.value - exact) > est.bound) ++failures;
  }
  return static_cast<double>(failures) / static_cast<double>(trials);
}

}  // namespace gnh
