#include "gnh/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <utility>

#include "gnh/backprop.hpp"
#include "gnh/cluster_tree.hpp"
#include "gnh/errors.hpp"
#include "gnh/kfac.hpp"
#include "gnh/rng.hpp"
#include "gnh/rsvd.hpp"
#include "gnh/sampler.hpp"

namespace gnh {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// median wall time of `reps` evaluations of fn
template <typename Fn>
double median_seconds(int reps, Fn&& fn) {
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(seconds_since(t0));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

// least-squares slope of y against x
double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw NumericError("slope fit needs at least two distinct x values");
  return (n * sxy - sx * sy) / denom;
}

// pair id in the row-major upper triangle (a < b) back to coordinates
std::pair<std::int64_t, std::int64_t> decode_pair(std::int64_t id, std::int64_t n) {
  std::int64_t a = 0;
  std::int64_t row_len = n - 1;
  while (id >= row_len) {
    id -= row_len;
    ++a;
    --row_len;
  }
  return {a, a + 1 + id};
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open for reading");
  KeyValueConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path + ": expected 'key = value' on line " + std::to_string(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw FormatError(path + ": empty key on line " + std::to_string(line_no));
    }
    cfg.items_[key] = value;
  }
  return cfg;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  items_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return items_.count(key) > 0; }

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = items_.find(key);
  return it == items_.end() ? fallback : it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return fallback;
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "' holds '" + it->second +
                      "', expected an integer");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "' holds '" + it->second + "', expected a number");
  }
}

void KeyValueConfig::write_preamble(std::ostream& out) const {
  for (const auto& [key, value] : items_) out << "# " << key << "=" << value << "\n";
}

ConvergenceResult run_convergence(const GnhPrecomp& pre, const ConvergenceOptions& opts) {
  if (opts.c_values.empty() || opts.seeds.empty()) {
    throw ShapeError("convergence run needs at least one sample count and one seed");
  }
  const std::int64_t n = pre.num_params();
  if (n < 2) throw ShapeError("convergence run needs at least two weight coordinates");
  const std::int64_t total_pairs = n * (n - 1) / 2;

  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  if (opts.pairs <= 0 || opts.pairs >= total_pairs) {
    pairs.reserve(static_cast<std::size_t>(total_pairs));
    for (std::int64_t a = 0; a < n; ++a)
      for (std::int64_t b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
  } else {
    rng::Stream stream = rng::Stream::derive(opts.pair_seed, {0x50});
    for (const std::int64_t id : stream.sample_without_replacement(total_pairs, opts.pairs)) {
      pairs.push_back(decode_pair(id, n));
    }
  }

  std::vector<double> exact(pairs.size());
  double denom_sq = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    exact[p] = pre.entry_exact(pairs[p].first, pairs[p].second);
    denom_sq += exact[p] * exact[p];
  }
  if (denom_sq == 0.0) {
    throw NumericError("all measured entries are exactly zero; relative error is undefined");
  }

  ConvergenceResult result;
  std::map<std::int64_t, std::pair<double, double>> err_sum_by_c;  // weighted, uniform
  std::map<std::uint64_t, std::pair<double, double>> log_err_by_seed;
  for (const std::int64_t c : opts.c_values) {
    for (const std::uint64_t seed : opts.seeds) {
      EstimatorConfig cfg;
      cfg.c = c;
      cfg.delta = opts.delta;
      cfg.seed = seed;
      double sq_w = 0.0, sq_u = 0.0;
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const WeightIndex k = pre.layout().unflatten(pairs[p].first);
        const WeightIndex m = pre.layout().unflatten(pairs[p].second);
        const double ew = entry_estimate(pre, k, m, cfg).value - exact[p];
        const double eu = uniform_baseline_estimate(pre, k, m, cfg).value - exact[p];
        sq_w += ew * ew;
        sq_u += eu * eu;
      }
      ConvergenceCell cell;
      cell.c = c;
      cell.seed = seed;
      cell.err_weighted = std::sqrt(sq_w / denom_sq);
      cell.err_uniform = std::sqrt(sq_u / denom_sq);
      result.cells.push_back(cell);
      err_sum_by_c[c].first += cell.err_weighted;
      err_sum_by_c[c].second += cell.err_uniform;
      // zero error would mean every estimate matched exactly; floor it so the
      // geometric mean stays defined
      log_err_by_seed[seed].first += std::log(std::max(cell.err_weighted, 1e-300));
      log_err_by_seed[seed].second += std::log(std::max(cell.err_uniform, 1e-300));
    }
  }

  std::vector<double> logc, logw, logu;
  const auto seeds_n = static_cast<double>(opts.seeds.size());
  for (const auto& [c, sums] : err_sum_by_c) {
    logc.push_back(std::log10(static_cast<double>(c)));
    logw.push_back(std::log10(std::max(sums.first / seeds_n, 1e-300)));
    logu.push_back(std::log10(std::max(sums.second / seeds_n, 1e-300)));
  }
  result.slope_weighted = fit_slope(logc, logw);
  result.slope_uniform = fit_slope(logc, logu);

  int wins = 0;
  for (const auto& [seed, sums] : log_err_by_seed) {
    if (sums.first < sums.second) ++wins;
  }
  result.weighted_win_fraction = static_cast<double>(wins) / seeds_n;
  return result;
}

void write_convergence_csv(std::ostream& out, const KeyValueConfig& config,
                           const ConvergenceResult& result) {
  config.write_preamble(out);
  out << std::setprecision(10);
  out << "# slope_weighted=" << result.slope_weighted << "\n";
  out << "# slope_uniform=" << result.slope_uniform << "\n";
  out << "# weighted_win_fraction=" << result.weighted_win_fraction << "\n";
  out << "c,seed,err_weighted,err_uniform\n";
  for (const ConvergenceCell& cell : result.cells) {
    out << cell.c << ',' << cell.seed << ',' << cell.err_weighted << ',' << cell.err_uniform
        << "\n";
  }
}

std::vector<MethodReport> run_compare(const MlpNetwork& net, const Batch& batch,
                                      const CompareOptions& opts) {
  const ForwardTrace trace = forward(net, batch.inputs);
  const LossCurvature curv = loss_curvature(net, trace);
  auto pre = std::make_shared<const GnhPrecomp>(net, batch, curv, trace);
  const std::int64_t n = pre->num_params();
  const double lambda = opts.lambda;

  const auto reference = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    return gnh_matvec(net, trace, curv, x) + lambda * x;
  };

  rng::Stream probe_stream = rng::Stream::derive(opts.seed, {0x4d});
  Eigen::VectorXd probe(n);
  for (std::int64_t i = 0; i < n; ++i) probe(i) = probe_stream.normal();

  const EntryOracle oracle = EntryOracle::exact(pre, lambda);
  std::vector<MethodReport> rows;

  double high_percent = 100.0;
  for (const bool is_high : {false, true}) {
    const HmatrixPreset preset = (is_high ? opts.high : opts.low).scaled_for(n);
    MethodReport row;
    row.method = is_high ? "hmatrix-high" : "hmatrix-low";
    const auto t0 = std::chrono::steady_clock::now();
    IndexTree tree = build_tree(oracle, preset.leaf_size, opts.metric, opts.seed);
    const HMatrix hm = compress(oracle, std::move(tree), preset, opts.seed);
    row.build_seconds = seconds_since(t0);
    row.matvec_seconds = median_seconds(opts.matvec_reps, [&] { (void)hm.apply(probe); });
    row.storage_percent = hm.storage_percent();
    row.stored_entries = hm.stored_entries();
    row.rel_error = probe_error(hm, reference, opts.probes, opts.seed);
    row.rank_or_samples = hm.max_node_rank();
    if (is_high) high_percent = row.storage_percent;
    rows.push_back(std::move(row));
  }

  // sketch and Kronecker baselines at storage matched to the accurate preset
  const std::int64_t matched =
      std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(high_percent / 100.0 *
                                                                   static_cast<double>(n))),
                               1, n);
  {
    MethodReport row;
    row.method = "rsvd";
    const auto t0 = std::chrono::steady_clock::now();
    const RsvdApprox sketch =
        rsvd([&](const Eigen::MatrixXd& x) { return gnh_matvec(net, trace, curv, x); }, n,
             matched, 10, opts.seed);
    row.build_seconds = seconds_since(t0);
    row.matvec_seconds = median_seconds(opts.matvec_reps, [&] {
      (void)(sketch.apply(probe) + lambda * probe).eval();
    });
    row.storage_percent = 100.0 * static_cast<double>(sketch.stored_entries()) /
                          (static_cast<double>(n) * static_cast<double>(n));
    row.stored_entries = sketch.stored_entries();
    row.rel_error = probe_error(
        [&](const Eigen::MatrixXd& x) { return (sketch.apply(x) + lambda * x).eval(); },
        reference, n, opts.probes, opts.seed);
    row.rank_or_samples = matched;
    rows.push_back(std::move(row));
  }
  {
    MethodReport row;
    row.method = "kfac";
    KfacOptions kopts;
    kopts.num_samples = matched;
    kopts.seed = opts.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const KfacApprox factors = kfac(net, batch, kopts);
    row.build_seconds = seconds_since(t0);
    const auto apply_block = [&](const Eigen::MatrixXd& x) {
      Eigen::MatrixXd y(x.rows(), x.cols());
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        y.col(j) = factors.apply(x.col(j)) + lambda * x.col(j);
      }
      return y;
    };
    row.matvec_seconds = median_seconds(opts.matvec_reps, [&] {
      (void)(factors.apply(probe) + lambda * probe).eval();
    });
    row.storage_percent = 100.0 * static_cast<double>(factors.stored_entries()) /
                          (static_cast<double>(n) * static_cast<double>(n));
    row.stored_entries = factors.stored_entries();
    row.rel_error = probe_error(apply_block, reference, n, opts.probes, opts.seed);
    row.rank_or_samples = matched;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_compare_csv(std::ostream& out, const KeyValueConfig& config,
                       const std::vector<MethodReport>& rows) {
  config.write_preamble(out);
  out << std::setprecision(10);
  out << "method,build_seconds,matvec_seconds,storage_percent,stored_entries,rel_error,"
         "rank_or_samples\n";
  for (const MethodReport& r : rows) {
    out << r.method << ',' << r.build_seconds << ',' << r.matvec_seconds << ','
        << r.storage_percent << ',' << r.stored_entries << ',' << r.rel_error << ','
        << r.rank_or_samples << "\n";
  }
}

MemoryReport memory_report(const GnhPrecomp& pre) {
  MemoryReport r;
  r.num_params = pre.num_params();
  r.points = pre.points();
  r.table_bytes = pre.storage_bytes();
  r.dense_f32_bytes =
      4ull * static_cast<std::uint64_t>(r.num_params) * static_cast<std::uint64_t>(r.num_params);
  r.ratio = static_cast<double>(r.table_bytes) / static_cast<double>(r.dense_f32_bytes);
  return r;
}

void write_memory_csv(std::ostream& out, const KeyValueConfig& config, const MemoryReport& r) {
  config.write_preamble(out);
  out << std::setprecision(10);
  out << "num_params,points,table_bytes,dense_f32_bytes,ratio\n";
  out << r.num_params << ',' << r.points << ',' << r.table_bytes << ',' << r.dense_f32_bytes
      << ',' << r.ratio << "\n";
}

}  // namespace gnh
