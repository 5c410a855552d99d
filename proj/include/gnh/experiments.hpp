#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "gnh/entry_oracle.hpp"
#include "gnh/hmatrix.hpp"
#include "gnh/network.hpp"
#include "gnh/precompute.hpp"

namespace gnh {

// Flat key=value run configuration: optional file, then overrides. Every
// experiment output embeds the resolved items so results stay traceable to
// their parameters.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  const std::map<std::string, std::string>& items() const { return items_; }
  // "# key=value" lines, one per item, for CSV preambles
  void write_preamble(std::ostream& out) const;

 private:
  std::map<std::string, std::string> items_;
};

// Estimator error versus sample count, norm-weighted sampling against the
// uniform baseline on a shared set of off-diagonal entries.
struct ConvergenceOptions {
  std::vector<std::int64_t> c_values = {100, 1000, 10000};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::int64_t pairs = 200;  // entries measured per cell; 0 = every off-diagonal pair
  double delta = 0.05;
  std::uint64_t pair_seed = 1;  // selection of the measured entries
};

struct ConvergenceCell {
  std::int64_t c = 0;
  std::uint64_t seed = 0;
  double err_weighted = 0.0;  // relative RMS over the measured entries
  double err_uniform = 0.0;
};

struct ConvergenceResult {
  std::vector<ConvergenceCell> cells;
  // least-squares slope of log10(mean err) against log10(c)
  double slope_weighted = 0.0;
  double slope_uniform = 0.0;
  // fraction of seeds whose geometric-mean error over the c grid is lower
  // with norm-weighted sampling than with uniform sampling
  double weighted_win_fraction = 0.0;
};

ConvergenceResult run_convergence(const GnhPrecomp& pre, const ConvergenceOptions& opts);
void write_convergence_csv(std::ostream& out, const KeyValueConfig& config,
                           const ConvergenceResult& result);

// One row per approximation method on the same operator.
struct MethodReport {
  std::string method;
  double build_seconds = 0.0;
  double matvec_seconds = 0.0;       // median of repeated applications
  double storage_percent = 0.0;      // stored scalars relative to N^2
  std::uint64_t stored_entries = 0;
  double rel_error = 0.0;            // probe-block Frobenius error vs the exact operator
  std::int64_t rank_or_samples = 0;  // max node rank / sketch rank / label draws
};

struct CompareOptions {
  HmatrixPreset low = HmatrixPreset::low();
  HmatrixPreset high = HmatrixPreset::high();
  DistanceMetric metric = DistanceMetric::angle;
  double lambda = 0.0;
  int probes = 32;
  int matvec_reps = 5;
  std::uint64_t seed = 0;
};

// Hierarchical compression at both presets plus the sketching and Kronecker
// baselines at matched storage; errors are measured against the matrix-free
// exact operator.
std::vector<MethodReport> run_compare(const MlpNetwork& net, const Batch& batch,
                                      const CompareOptions& opts);
void write_compare_csv(std::ostream& out, const KeyValueConfig& config,
                       const std::vector<MethodReport>& rows);

struct MemoryReport {
  std::int64_t num_params = 0;
  int points = 0;
  std::uint64_t table_bytes = 0;      // precomputed entry tables
  std::uint64_t dense_f32_bytes = 0;  // single-precision dense matrix of the same operator
  double ratio = 0.0;                 // table_bytes / dense_f32_bytes
};

MemoryReport memory_report(const GnhPrecomp& pre);
void write_memory_csv(std::ostream& out, const KeyValueConfig& config, const MemoryReport& r);

}  // namespace gnh
