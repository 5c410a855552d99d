// Command-line frontend: generate or ingest problems, precompute entry
// tables, read exact and sampled Hessian entries, compress, factorize, solve,
// and run the comparison studies. Every command prints a JSON stats object to
// stdout; bulk results go to CSV or container files named by --out flags.
//
// Exit codes: 0 ok, 2 malformed file, 3 shape mismatch, 4 resource limit,
// 5 lost positive definiteness, 6 numeric failure, 1 anything else.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gnh/backprop.hpp"
#include "gnh/cg.hpp"
#include "gnh/cluster_tree.hpp"
#include "gnh/containers.hpp"
#include "gnh/datasets.hpp"
#include "gnh/entry_oracle.hpp"
#include "gnh/errors.hpp"
#include "gnh/experiments.hpp"
#include "gnh/hmatrix.hpp"
#include "gnh/hodlr_solver.hpp"
#include "gnh/kfac.hpp"
#include "gnh/network.hpp"
#include "gnh/precompute.hpp"
#include "gnh/rng.hpp"
#include "gnh/rsvd.hpp"
#include "gnh/sampler.hpp"
#include "gnh/synthetic.hpp"

namespace {

using json = nlohmann::json;
using namespace gnh;

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::vector<std::int64_t> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError(what + ": '" + tok + "' is not an integer");
    }
  }
  if (out.empty()) throw FormatError(what + ": empty list");
  return out;
}

Eigen::VectorXd read_vector_file(const std::string& path, std::int64_t expected) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  if (!in.eof()) {
    throw FormatError(path + ": non-numeric token after " + std::to_string(values.size()) +
                      " values");
  }
  if (static_cast<std::int64_t>(values.size()) != expected) {
    throw ShapeError(path + ": holds " + std::to_string(values.size()) + " values, expected " +
                     std::to_string(expected));
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Eigen::Index>(values.size()));
}

void write_vector_file(const std::string& path, const Eigen::VectorXd& x) {
  std::ofstream out(path);
  if (!out) throw ResourceError(path + ": cannot open for writing");
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < x.size(); ++i) out << x(i) << "\n";
  if (!out) throw ResourceError(path + ": write failed");
}

std::ofstream open_text_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ResourceError(path + ": cannot open for writing");
  return out;
}

// (net, batch) pair behind most commands, with the stamp used to pin caches
struct Problem {
  MlpNetwork net;
  Batch batch;
  PrecompStamp stamp;
};

Problem load_problem(const std::string& net_path, const std::string& batch_path) {
  Problem p{load_network(net_path), load_batch(batch_path), {}};
  p.batch.validate_against(p.net);
  p.stamp.net_hash = fnv1a64_file(net_path);
  p.stamp.batch_hash = fnv1a64_file(batch_path);
  return p;
}

std::shared_ptr<const GnhPrecomp> precompute_shared(const MlpNetwork& net, const Batch& batch,
                                                    const PrecomputeOptions& opts = {}) {
  const ForwardTrace trace = forward(net, batch.inputs);
  const LossCurvature curv = loss_curvature(net, trace);
  return std::make_shared<const GnhPrecomp>(net, batch, curv, trace, opts);
}

// stamp-checked load when the source files are supplied alongside --pre
std::shared_ptr<const GnhPrecomp> load_pre_checked(const std::string& pre_path,
                                                   const std::string& net_path,
                                                   const std::string& batch_path) {
  std::optional<PrecompStamp> expect;
  if (!net_path.empty() || !batch_path.empty()) {
    if (net_path.empty() || batch_path.empty()) {
      throw ShapeError("--net and --batch must be given together to validate the cache");
    }
    expect = PrecompStamp{fnv1a64_file(net_path), fnv1a64_file(batch_path)};
  }
  return std::make_shared<const GnhPrecomp>(load_precomp(pre_path, expect));
}

DistanceMetric metric_from_string(const std::string& s) {
  if (s == "angle") return DistanceMetric::angle;
  if (s == "euclidean") return DistanceMetric::euclidean;
  throw FormatError("unknown distance metric '" + s + "' (angle, euclidean)");
}

// config resolution: defaults < --config file < --set pairs < explicit flags
void apply_set_pairs(KeyValueConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError("--set needs key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

template <typename T>
void claim_flag(KeyValueConfig& cfg, const CLI::Option* opt, const std::string& key,
                const T& value) {
  if (opt != nullptr && opt->count() > 0) {
    if constexpr (std::is_same_v<T, double>) {
      cfg.set(key, format_double(value));
    } else if constexpr (std::is_same_v<T, std::string>) {
      cfg.set(key, value);
    } else {
      cfg.set(key, std::to_string(value));
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact, sampled, and compressed access to the Gauss-Newton Hessian of an MLP"};
  app.require_subcommand(1);

  // gen ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a random network and optional batch");
  struct {
    std::vector<int> dims;
    std::vector<std::string> acts{"relu"};
    std::string loss = "mean-squared";
    std::string bias = "augmented";
    std::uint64_t seed = 0;
    std::string net_out;
    int points = 0;
    std::string batch_out;
    bool autoencoder = false;
  } g;
  gen->add_option("--dims", g.dims, "layer widths d0,...,dL")->required()->delimiter(',');
  gen->add_option("--activations", g.acts,
                  "one per layer, or a single one applied everywhere")
      ->delimiter(',');
  gen->add_option("--loss", g.loss, "mean-squared | cross-entropy");
  gen->add_option("--bias", g.bias, "none | augmented");
  gen->add_option("--seed", g.seed, "rng seed")->required();
  gen->add_option("--net", g.net_out, "output network container")->required();
  gen->add_option("--points", g.points, "also draw a batch of this many points");
  gen->add_option("--batch", g.batch_out, "output batch container (with --points)");
  gen->add_flag("--autoencoder", g.autoencoder, "labels equal inputs");
  gen->callback([&] {
    NetworkSpec spec;
    spec.dims = g.dims;
    if (spec.dims.size() < 2) throw ShapeError("--dims needs at least input and output widths");
    const std::size_t layers = spec.dims.size() - 1;
    if (g.acts.size() == 1) {
      spec.activations.assign(layers, activation_from_string(g.acts[0]));
    } else {
      for (const std::string& a : g.acts) spec.activations.push_back(activation_from_string(a));
    }
    spec.loss = loss_from_string(g.loss);
    spec.bias = bias_mode_from_string(g.bias);
    const MlpNetwork net = random_network(spec, g.seed);
    save_network(g.net_out, net);
    json j{{"command", "gen"},
           {"net", g.net_out},
           {"num_params", net.num_params()},
           {"seed", g.seed}};
    if (g.points > 0) {
      if (g.batch_out.empty()) throw ShapeError("--points needs --batch for the output path");
      const Batch batch = random_batch(net, g.points, g.autoencoder, g.seed);
      save_batch(g.batch_out, batch);
      j["batch"] = g.batch_out;
      j["points"] = g.points;
    }
    emit(j);
  });

  // ingest -------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "convert a dataset into a batch container");
  struct {
    std::string format;
    std::string images, labels, data;
    int classes = 10;
    std::string out;
    std::int64_t count = 0;
    std::uint64_t seed = 0;
    bool autoencoder = false;
  } in_;
  ingest->add_option("--format", in_.format, "idx | cifar10")->required();
  ingest->add_option("--images", in_.images, "idx image file");
  ingest->add_option("--labels", in_.labels, "idx label file");
  ingest->add_option("--data", in_.data, "cifar10 binary batch file");
  ingest->add_option("--classes", in_.classes, "one-hot width for idx labels");
  ingest->add_option("--out", in_.out, "output batch container")->required();
  ingest->add_option("--count", in_.count, "subsample this many points (0 = all)");
  auto* ingest_seed = ingest->add_option("--seed", in_.seed, "subsample seed");
  ingest->add_flag("--autoencoder", in_.autoencoder, "labels equal inputs");
  ingest->callback([&] {
    if (in_.count > 0 && ingest_seed->count() == 0) {
      throw CLI::ValidationError("--seed is required when --count subsamples the data");
    }
    SubsetSpec subset{in_.count, in_.seed};
    Batch batch;
    if (in_.format == "idx") {
      if (in_.images.empty()) throw ShapeError("idx ingest needs --images");
      if (!in_.autoencoder && in_.labels.empty()) {
        throw ShapeError("idx ingest needs --labels unless --autoencoder is set");
      }
      batch = load_idx(in_.images, in_.labels, in_.classes, in_.autoencoder, subset);
    } else if (in_.format == "cifar10") {
      if (in_.data.empty()) throw ShapeError("cifar10 ingest needs --data");
      batch = load_cifar10(in_.data, in_.autoencoder, subset);
    } else {
      throw FormatError("unknown --format '" + in_.format + "' (idx, cifar10)");
    }
    save_batch(in_.out, batch);
    emit(json{{"command", "ingest"},
              {"out", in_.out},
              {"points", batch.n()},
              {"input_dim", batch.inputs.rows()},
              {"label_dim", batch.labels.rows()}});
  });

  // train ----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "short SGD warmup on a batch");
  struct {
    std::string net, batch, out;
    TrainOptions opts;
  } tr;
  train->add_option("--net", tr.net, "input network container")->required();
  train->add_option("--batch", tr.batch, "batch container")->required();
  train->add_option("--out", tr.out, "output network container")->required();
  train->add_option("--steps", tr.opts.steps, "mini-batch steps");
  train->add_option("--batch-size", tr.opts.batch_size, "mini-batch size");
  train->add_option("--lr", tr.opts.learning_rate, "learning rate");
  train->add_option("--seed", tr.opts.seed, "shuffle seed")->required();
  train->callback([&] {
    Problem p = load_problem(tr.net, tr.batch);
    const double initial = loss_value(p.net, forward(p.net, p.batch.inputs), p.batch.labels);
    const double final_loss = warmup_train(p.net, p.batch, tr.opts);
    save_network(tr.out, p.net);
    emit(json{{"command", "train"},
              {"out", tr.out},
              {"steps", tr.opts.steps},
              {"initial_loss", initial},
              {"final_loss", final_loss}});
  });

  // precompute ---------------------------------------------------------
  auto* prec = app.add_subcommand("precompute", "build and store the entry tables");
  struct {
    std::string net, batch, out;
    bool f32 = false;
    double max_gb = 4.0;
  } pc;
  prec->add_option("--net", pc.net, "network container")->required();
  prec->add_option("--batch", pc.batch, "batch container")->required();
  prec->add_option("--out", pc.out, "output table container")->required();
  prec->add_flag("--f32", pc.f32, "store tensors in single precision");
  prec->add_option("--max-gb", pc.max_gb, "refuse to build tables larger than this");
  prec->callback([&] {
    Problem p = load_problem(pc.net, pc.batch);
    PrecomputeOptions opts;
    opts.precision = pc.f32 ? StoragePrecision::f32 : StoragePrecision::f64;
    opts.max_bytes = static_cast<std::uint64_t>(pc.max_gb * (1ull << 30));
    auto pre = precompute_shared(p.net, p.batch, opts);
    save_precomp(pc.out, *pre, p.stamp);
    emit(json{{"command", "precompute"},
              {"out", pc.out},
              {"num_params", pre->num_params()},
              {"points", pre->points()},
              {"out_dim", pre->out_dim()},
              {"precision", pc.f32 ? "f32" : "f64"},
              {"table_bytes", pre->storage_bytes()}});
  });

  // entry ----------------------------------------------------------------
  auto* entry = app.add_subcommand("entry", "exact Hessian entry from the tables");
  struct {
    std::string pre, net, batch;
    std::int64_t k = 0, m = 0;
    double lambda = 0.0;
  } en;
  entry->add_option("--pre", en.pre, "table container")->required();
  entry->add_option("--net", en.net, "validate the cache against this network file");
  entry->add_option("--batch", en.batch, "validate the cache against this batch file");
  entry->add_option("--k", en.k, "row index (0-based flat weight index)")->required();
  entry->add_option("--m", en.m, "column index")->required();
  entry->add_option("--lambda", en.lambda, "diagonal shift added when k == m");
  entry->callback([&] {
    auto pre = load_pre_checked(en.pre, en.net, en.batch);
    const EntryOracle oracle = EntryOracle::exact(pre, en.lambda);
    emit(json{{"command", "entry"},
              {"k", en.k},
              {"m", en.m},
              {"lambda", en.lambda},
              {"value", oracle.entry(en.k, en.m)}});
  });

  // sample ---------------------------------------------------------------
  auto* sample = app.add_subcommand("sample", "Monte Carlo estimate of one entry");
  struct {
    std::string pre, scheme = "weighted";
    std::int64_t k = 0, m = 0;
    EstimatorConfig cfg;
  } sm;
  sample->add_option("--pre", sm.pre, "table container")->required();
  sample->add_option("--k", sm.k, "row index")->required();
  sample->add_option("--m", sm.m, "column index")->required();
  sample->add_option("--c", sm.cfg.c, "number of draws");
  sample->add_option("--delta", sm.cfg.delta, "bound failure probability");
  sample->add_option("--seed", sm.cfg.seed, "estimator seed")->required();
  sample->add_option("--scheme", sm.scheme, "weighted | uniform");
  sample->callback([&] {
    auto pre = load_pre_checked(sm.pre, "", "");
    const WeightIndex k = pre->layout().unflatten(sm.k);
    const WeightIndex m = pre->layout().unflatten(sm.m);
    EntryEstimate est;
    if (sm.scheme == "weighted") {
      est = entry_estimate(*pre, k, m, sm.cfg);
    } else if (sm.scheme == "uniform") {
      est = uniform_baseline_estimate(*pre, k, m, sm.cfg);
    } else {
      throw FormatError("unknown --scheme '" + sm.scheme + "' (weighted, uniform)");
    }
    json j{{"command", "sample"}, {"k", sm.k},         {"m", sm.m},
           {"scheme", sm.scheme}, {"value", est.value}, {"c_used", est.c_used},
           {"exact", est.exact},  {"seed", sm.cfg.seed}};
    // the uniform baseline carries no finite guarantee; keep JSON finite
    if (std::isfinite(est.bound)) {
      j["bound"] = est.bound;
    } else {
      j["bound"] = nullptr;
    }
    emit(j);
  });

  // build-hmatrix --------------------------------------------------------
  auto* build = app.add_subcommand("build-hmatrix", "compress the operator hierarchically");
  struct {
    std::string pre, out, preset = "low", metric = "angle";
    double lambda = EntryOracle::kDefaultLambda;
    std::uint64_t seed = 0;
    std::int64_t leaf_size = 0, max_rank = 0;
    double tol = -1.0;
    bool sampled = false;
    std::int64_t c = 400;
    double delta = 0.05;
  } bh;
  build->add_option("--pre", bh.pre, "table container")->required();
  build->add_option("--out", bh.out, "output matrix container")->required();
  build->add_option("--preset", bh.preset, "low | high");
  build->add_option("--leaf-size", bh.leaf_size, "override the preset leaf size");
  build->add_option("--max-rank", bh.max_rank, "override the preset rank cap");
  build->add_option("--tol", bh.tol, "override the preset pivot tolerance");
  build->add_option("--metric", bh.metric, "angle | euclidean");
  build->add_option("--lambda", bh.lambda, "diagonal shift baked into the blocks");
  build->add_option("--seed", bh.seed, "tree and compression seed")->required();
  build->add_flag("--sampled", bh.sampled, "serve oracle entries from the estimator");
  build->add_option("--c", bh.c, "draws per sampled entry (with --sampled)");
  build->add_option("--delta", bh.delta, "estimator delta (with --sampled)");
  build->callback([&] {
    auto pre = load_pre_checked(bh.pre, "", "");
    EntryOracle oracle = [&] {
      if (!bh.sampled) return EntryOracle::exact(pre, bh.lambda);
      EstimatorConfig cfg;
      cfg.c = bh.c;
      cfg.delta = bh.delta;
      cfg.seed = bh.seed;
      return EntryOracle::sampled(pre, cfg, bh.lambda);
    }();
    HmatrixPreset preset =
        (bh.preset == "high" ? HmatrixPreset::high() : HmatrixPreset::low())
            .scaled_for(pre->num_params());
    if (bh.preset != "low" && bh.preset != "high") {
      throw FormatError("unknown --preset '" + bh.preset + "' (low, high)");
    }
    if (bh.leaf_size > 0) preset.leaf_size = bh.leaf_size;
    if (bh.max_rank > 0) preset.max_rank = bh.max_rank;
    if (bh.tol >= 0.0) preset.tol = bh.tol;

    const auto t0 = std::chrono::steady_clock::now();
    IndexTree tree = build_tree(oracle, preset.leaf_size, metric_from_string(bh.metric), bh.seed);
    const double tree_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CompressStats stats;
    stats.tree_seconds = tree_seconds;
    const auto t1 = std::chrono::steady_clock::now();
    const HMatrix hm = compress(oracle, std::move(tree), preset, bh.seed, &stats);
    stats.compress_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    save_hmatrix(bh.out, hm);
    emit(json{{"command", "build-hmatrix"},
              {"out", bh.out},
              {"size", hm.size()},
              {"lambda", hm.lambda()},
              {"preset", bh.preset},
              {"leaf_size", preset.leaf_size},
              {"max_rank_cap", preset.max_rank},
              {"tol", preset.tol},
              {"metric", bh.metric},
              {"seed", bh.seed},
              {"sampled_oracle", bh.sampled},
              {"storage_percent", hm.storage_percent()},
              {"stored_entries", hm.stored_entries()},
              {"max_node_rank", hm.max_node_rank()},
              {"rank_capped_nodes", stats.rank_capped_nodes},
              {"oracle_entries", stats.oracle_entries},
              {"tree_seconds", stats.tree_seconds},
              {"compress_seconds", stats.compress_seconds}});
  });

  // probe ----------------------------------------------------------------
  auto* probe = app.add_subcommand("probe", "relative error of a compressed matrix");
  struct {
    std::string hmatrix, net, batch;
    int probes = 64;
    std::uint64_t seed = 0;
  } pr;
  probe->add_option("--hmatrix", pr.hmatrix, "matrix container")->required();
  probe->add_option("--net", pr.net, "network the matrix was built from")->required();
  probe->add_option("--batch", pr.batch, "batch the matrix was built from")->required();
  probe->add_option("--probes", pr.probes, "Gaussian probe columns");
  probe->add_option("--seed", pr.seed, "probe seed")->required();
  probe->callback([&] {
    const HMatrix hm = load_hmatrix(pr.hmatrix);
    Problem p = load_problem(pr.net, pr.batch);
    if (hm.size() != p.net.num_params()) {
      throw ShapeError("matrix size " + std::to_string(hm.size()) +
                       " does not match the network's " + std::to_string(p.net.num_params()) +
                       " weights");
    }
    const ForwardTrace trace = forward(p.net, p.batch.inputs);
    const LossCurvature curv = loss_curvature(p.net, trace);
    const double lambda = hm.lambda();
    const double err = probe_error(
        hm,
        [&](const Eigen::MatrixXd& x) {
          return (gnh_matvec(p.net, trace, curv, x) + lambda * x).eval();
        },
        pr.probes, pr.seed);
    emit(json{{"command", "probe"},
              {"hmatrix", pr.hmatrix},
              {"probes", pr.probes},
              {"lambda", lambda},
              {"rel_error", err}});
  });

  // solve ----------------------------------------------------------------
  auto* solve = app.add_subcommand("solve", "factorize and solve against a right-hand side");
  struct {
    std::string hmatrix, rhs, out, net, batch;
    std::uint64_t rhs_seed = 0;
    bool compare_cg = false;
    double tol = 1e-10;
    int max_iters = 2000;
  } so;
  solve->add_option("--hmatrix", so.hmatrix, "matrix container")->required();
  auto* rhs_opt = solve->add_option("--rhs", so.rhs, "text file, one value per line");
  auto* rhs_seed_opt =
      solve->add_option("--rhs-seed", so.rhs_seed, "draw a Gaussian right-hand side");
  solve->add_option("--out", so.out, "write the solution as text");
  solve->add_flag("--compare-cg", so.compare_cg,
                  "also run plain and preconditioned CG on the exact operator");
  solve->add_option("--net", so.net, "network file (with --compare-cg)");
  solve->add_option("--batch", so.batch, "batch file (with --compare-cg)");
  solve->add_option("--tol", so.tol, "CG relative residual tolerance");
  solve->add_option("--max-iters", so.max_iters, "CG iteration cap");
  solve->callback([&] {
    if ((rhs_opt->count() > 0) == (rhs_seed_opt->count() > 0)) {
      throw CLI::ValidationError("give exactly one of --rhs and --rhs-seed");
    }
    const HMatrix hm = load_hmatrix(so.hmatrix);
    Eigen::VectorXd b;
    if (rhs_opt->count() > 0) {
      b = read_vector_file(so.rhs, hm.size());
    } else {
      rng::Stream stream = rng::Stream::derive(so.rhs_seed, {0x72});
      b.resize(hm.size());
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = stream.normal();
    }
    const HFactorization fact(hm);
    const Eigen::VectorXd x = fact.solve(b);
    const double bnorm = b.norm();
    const double residual =
        bnorm == 0.0 ? (hm.apply(x) - b).norm() : (hm.apply(x) - b).norm() / bnorm;
    json j{{"command", "solve"},
           {"size", hm.size()},
           {"lambda", hm.lambda()},
           {"residual", residual}};
    if (!so.out.empty()) {
      write_vector_file(so.out, x);
      j["out"] = so.out;
    }
    if (so.compare_cg) {
      if (so.net.empty() || so.batch.empty()) {
        throw ShapeError("--compare-cg needs --net and --batch for the exact operator");
      }
      Problem p = load_problem(so.net, so.batch);
      if (p.net.num_params() != hm.size()) {
        throw ShapeError("network weight count does not match the matrix size");
      }
      const ForwardTrace trace = forward(p.net, p.batch.inputs);
      const LossCurvature curv = loss_curvature(p.net, trace);
      const MatvecFn matvec = [&](const Eigen::VectorXd& v) {
        return gnh_matvec(p.net, trace, curv, v);
      };
      const CgResult plain = cg_solve(matvec, b, hm.lambda(), so.tol, so.max_iters);
      const CgResult pcg = cg_solve(matvec, b, hm.lambda(), so.tol, so.max_iters,
                                    [&](const Eigen::VectorXd& r) { return fact.solve(r); });
      j["cg_iterations"] = plain.iterations;
      j["cg_converged"] = plain.converged;
      j["pcg_iterations"] = pcg.iterations;
      j["pcg_converged"] = pcg.converged;
    }
    emit(j);
  });

  // convergence ----------------------------------------------------------
  auto* conv = app.add_subcommand("convergence",
                                  "estimator error against sample count, both schemes");
  struct {
    std::string net, batch, out, config;
    std::vector<std::string> sets;
    std::string c_list = "100,1000,10000";
    std::int64_t seeds = 5;
    std::uint64_t seed0 = 0;
    std::int64_t pairs = 200;
    double delta = 0.05;
    std::uint64_t pair_seed = 1;
  } cv;
  auto* cv_net = conv->add_option("--net", cv.net, "network container");
  auto* cv_batch = conv->add_option("--batch", cv.batch, "batch container");
  auto* cv_out = conv->add_option("--out", cv.out, "output CSV path");
  conv->add_option("--config", cv.config, "key=value config file");
  conv->add_option("--set", cv.sets, "override one config key (key=value)");
  auto* cv_c = conv->add_option("--c", cv.c_list, "comma list of sample counts");
  auto* cv_seeds = conv->add_option("--seeds", cv.seeds, "number of estimator seeds");
  auto* cv_seed0 = conv->add_option("--seed0", cv.seed0, "first estimator seed");
  auto* cv_pairs = conv->add_option("--pairs", cv.pairs, "entries measured (0 = all)");
  auto* cv_delta = conv->add_option("--delta", cv.delta, "bound failure probability");
  auto* cv_pair_seed = conv->add_option("--pair-seed", cv.pair_seed, "entry selection seed");
  conv->callback([&] {
    KeyValueConfig cfg;
    if (!cv.config.empty()) cfg = KeyValueConfig::from_file(cv.config);
    apply_set_pairs(cfg, cv.sets);
    claim_flag(cfg, cv_net, "net", cv.net);
    claim_flag(cfg, cv_batch, "batch", cv.batch);
    claim_flag(cfg, cv_out, "out", cv.out);
    claim_flag(cfg, cv_c, "c_values", cv.c_list);
    claim_flag(cfg, cv_seeds, "seeds", cv.seeds);
    claim_flag(cfg, cv_seed0, "seed0", static_cast<std::int64_t>(cv.seed0));
    claim_flag(cfg, cv_pairs, "pairs", cv.pairs);
    claim_flag(cfg, cv_delta, "delta", cv.delta);
    claim_flag(cfg, cv_pair_seed, "pair_seed", static_cast<std::int64_t>(cv.pair_seed));
    if (cv_seed0->count() == 0 && !cfg.has("seed0")) {
      throw CLI::ValidationError("--seed0 (or config key seed0) is required");
    }
    const std::string net_path = cfg.get("net", "");
    const std::string batch_path = cfg.get("batch", "");
    const std::string out_path = cfg.get("out", "");
    if (net_path.empty() || batch_path.empty() || out_path.empty()) {
      throw ShapeError("convergence needs net, batch, and out (flags or config)");
    }

    ConvergenceOptions opts;
    opts.c_values = parse_int_list(cfg.get("c_values", "100,1000,10000"), "c_values");
    opts.pairs = cfg.get_int("pairs", 200);
    opts.delta = cfg.get_double("delta", 0.05);
    opts.pair_seed = static_cast<std::uint64_t>(cfg.get_int("pair_seed", 1));
    const std::int64_t seeds = cfg.get_int("seeds", 5);
    const std::int64_t seed0 = cfg.get_int("seed0", 0);
    if (seeds < 1) throw ShapeError("seeds must be positive");
    opts.seeds.clear();
    for (std::int64_t s = 0; s < seeds; ++s) {
      opts.seeds.push_back(static_cast<std::uint64_t>(seed0 + s));
    }

    Problem p = load_problem(net_path, batch_path);
    auto pre = precompute_shared(p.net, p.batch);
    const ConvergenceResult result = run_convergence(*pre, opts);
    std::ofstream out = open_text_output(out_path);
    write_convergence_csv(out, cfg, result);
    emit(json{{"command", "convergence"},
              {"out", out_path},
              {"cells", result.cells.size()},
              {"slope_weighted", result.slope_weighted},
              {"slope_uniform", result.slope_uniform},
              {"weighted_win_fraction", result.weighted_win_fraction}});
  });

  // compare --------------------------------------------------------------
  auto* cmp = app.add_subcommand("compare",
                                 "hierarchical presets against sketch and Kronecker baselines");
  struct {
    std::string net, batch, out, config, metric = "angle";
    std::vector<std::string> sets;
    double lambda = 0.0;
    int probes = 32;
    std::uint64_t seed = 0;
  } cp;
  auto* cp_net = cmp->add_option("--net", cp.net, "network container");
  auto* cp_batch = cmp->add_option("--batch", cp.batch, "batch container");
  auto* cp_out = cmp->add_option("--out", cp.out, "output CSV path");
  cmp->add_option("--config", cp.config, "key=value config file");
  cmp->add_option("--set", cp.sets, "override one config key (key=value)");
  auto* cp_metric = cmp->add_option("--metric", cp.metric, "angle | euclidean");
  auto* cp_lambda = cmp->add_option("--lambda", cp.lambda, "diagonal shift");
  auto* cp_probes = cmp->add_option("--probes", cp.probes, "error probe columns");
  auto* cp_seed = cmp->add_option("--seed", cp.seed, "run seed");
  cmp->callback([&] {
    KeyValueConfig cfg;
    if (!cp.config.empty()) cfg = KeyValueConfig::from_file(cp.config);
    apply_set_pairs(cfg, cp.sets);
    claim_flag(cfg, cp_net, "net", cp.net);
    claim_flag(cfg, cp_batch, "batch", cp.batch);
    claim_flag(cfg, cp_out, "out", cp.out);
    claim_flag(cfg, cp_metric, "metric", cp.metric);
    claim_flag(cfg, cp_lambda, "lambda", cp.lambda);
    claim_flag(cfg, cp_probes, "probes", static_cast<std::int64_t>(cp.probes));
    claim_flag(cfg, cp_seed, "seed", static_cast<std::int64_t>(cp.seed));
    if (cp_seed->count() == 0 && !cfg.has("seed")) {
      throw CLI::ValidationError("--seed (or config key seed) is required");
    }
    const std::string net_path = cfg.get("net", "");
    const std::string batch_path = cfg.get("batch", "");
    const std::string out_path = cfg.get("out", "");
    if (net_path.empty() || batch_path.empty() || out_path.empty()) {
      throw ShapeError("compare needs net, batch, and out (flags or config)");
    }

    CompareOptions opts;
    opts.metric = metric_from_string(cfg.get("metric", "angle"));
    opts.lambda = cfg.get_double("lambda", 0.0);
    opts.probes = static_cast<int>(cfg.get_int("probes", 32));
    opts.matvec_reps = static_cast<int>(cfg.get_int("matvec_reps", 5));
    opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    opts.low.leaf_size = cfg.get_int("low_leaf_size", opts.low.leaf_size);
    opts.low.max_rank = cfg.get_int("low_max_rank", opts.low.max_rank);
    opts.low.tol = cfg.get_double("low_tol", opts.low.tol);
    opts.high.leaf_size = cfg.get_int("high_leaf_size", opts.high.leaf_size);
    opts.high.max_rank = cfg.get_int("high_max_rank", opts.high.max_rank);
    opts.high.tol = cfg.get_double("high_tol", opts.high.tol);

    Problem p = load_problem(net_path, batch_path);
    const std::vector<MethodReport> rows = run_compare(p.net, p.batch, opts);
    std::ofstream out = open_text_output(out_path);
    write_compare_csv(out, cfg, rows);
    json jrows = json::array();
    for (const MethodReport& r : rows) {
      jrows.push_back(json{{"method", r.method},
                           {"build_seconds", r.build_seconds},
                           {"matvec_seconds", r.matvec_seconds},
                           {"storage_percent", r.storage_percent},
                           {"rel_error", r.rel_error},
                           {"rank_or_samples", r.rank_or_samples}});
    }
    emit(json{{"command", "compare"}, {"out", out_path}, {"methods", jrows}});
  });

  // memory ---------------------------------------------------------------
  auto* mem = app.add_subcommand("memory", "table footprint against a dense matrix");
  struct {
    std::string pre, out;
  } me;
  mem->add_option("--pre", me.pre, "table container")->required();
  mem->add_option("--out", me.out, "also write a CSV here");
  mem->callback([&] {
    auto pre = load_pre_checked(me.pre, "", "");
    const MemoryReport r = memory_report(*pre);
    if (!me.out.empty()) {
      KeyValueConfig cfg;
      cfg.set("pre", me.pre);
      std::ofstream out = open_text_output(me.out);
      write_memory_csv(out, cfg, r);
    }
    json j{{"command", "memory"},
           {"num_params", r.num_params},
           {"points", r.points},
           {"table_bytes", r.table_bytes},
           {"dense_f32_bytes", r.dense_f32_bytes},
           {"ratio", r.ratio}};
    if (!me.out.empty()) j["out"] = me.out;
    emit(j);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ResourceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DefinitenessError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 6;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
