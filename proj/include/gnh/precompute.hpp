#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "gnh/backprop.hpp"
#include "gnh/network.hpp"

namespace gnh {

// Multiply-add tallies for the entry-level operations. The asymptotics are
// part of the contract (independent of the total parameter count N), so the
// tests assert on these counters rather than on wall clock.
struct WorkCounter {
  std::uint64_t exact_entry_ops = 0;  // inner-product work in exact entries
  std::uint64_t dist_build_ops = 0;   // per-point mass products when building a distribution
  std::uint64_t sample_ops = 0;       // per-draw work (table search + inner product)
};

enum class StoragePrecision { f64, f32 };

struct PrecomputeOptions {
  StoragePrecision precision = StoragePrecision::f64;
  // refuse to build a store larger than this (bytes)
  std::uint64_t max_bytes = 4ull << 30;
};

// Per-point backpropagation tensors C_i^l = R_i M_i^L W_L ... M_i^l together
// with their column norms and the (augmented) layer inputs. Holding these
// makes any Hessian entry an O(n d_L) inner product:
//
//   H_km = sum_i v_k(i)^T v_m(i),   v_k(i) = C_i^tau(:, mu) * x_i^{tau-1}(nu)
//
// for k = (tau, mu, nu), and the column norms give ||v_k(i)|| without touching
// the tensors. Storage is Theta(n d_L sum_l d_l) scalars for the tensors plus
// Theta(n sum_l d_l) for norms and activations; 32-bit tensor storage halves
// the footprint while all accumulation stays in 64-bit.
class GnhPrecomp {
 public:
  GnhPrecomp(const MlpNetwork& net, const Batch& batch, const LossCurvature& curv,
             const ForwardTrace& trace, const PrecomputeOptions& opts = {});

  // Rebuild from previously computed tables (a cache file). Exactly one of
  // c64/c32 must be populated, matching `precision`; all shapes are checked.
  GnhPrecomp(ParamLayout layout, std::vector<int> dims, int points, int out_dim,
             StoragePrecision precision, std::vector<Eigen::MatrixXd> c64,
             std::vector<Eigen::MatrixXf> c32, std::vector<Eigen::MatrixXd> col_norms,
             std::vector<Eigen::MatrixXd> input_acts);

  int layers() const { return static_cast<int>(dims_.size()); }
  int points() const { return n_; }
  int out_dim() const { return d_out_; }
  const ParamLayout& layout() const { return layout_; }
  std::int64_t num_params() const { return layout_.total(); }
  StoragePrecision precision() const { return precision_; }

  // C_i^l as a dense d_L x d_l matrix (layer is 0-based)
  Eigen::MatrixXd c_matrix(int layer, int i) const;
  // whole per-layer tensor store, d_L x (n * d_l); only the table matching
  // precision() is populated
  const Eigen::MatrixXd& tensor_f64(int layer) const {
    return c64_[static_cast<std::size_t>(layer)];
  }
  const Eigen::MatrixXf& tensor_f32(int layer) const {
    return c32_[static_cast<std::size_t>(layer)];
  }
  // augmented input of layer l for all points, (fan_in + bias) x n
  const Eigen::MatrixXd& input_activation(int layer) const {
    return input_acts_[static_cast<std::size_t>(layer)];
  }
  // column norms ||C_i^l(:, mu)|| as a d_l x n table
  const Eigen::MatrixXd& column_norms(int layer) const {
    return col_norms_[static_cast<std::size_t>(layer)];
  }

  // v_k(i) = R_i J_i e_k, the length-d_L slice the entry formula consumes
  Eigen::VectorXd v_vector(const WeightIndex& k, int i) const;
  double v_norm(const WeightIndex& k, int i) const;
  // all points at once: element i is ||v_k(i)||
  Eigen::VectorXd v_norms(const WeightIndex& k) const;
  // v_k(i)^T v_m(i) for one point
  double v_dot(const WeightIndex& k, const WeightIndex& m, int i) const;

  // H_km, exact, O(n d_L)
  double entry_exact(const WeightIndex& k, const WeightIndex& m,
                     WorkCounter* wc = nullptr) const;
  double entry_exact(std::int64_t k, std::int64_t m, WorkCounter* wc = nullptr) const;

  // Stacked v-columns for a set of weight indices: out has n*d_L rows and one
  // column per index, so that H(I, J) = fill(I)^T fill(J) as a single product.
  // This is what makes block extraction GEMM-bound instead of loop-bound.
  void fill_v_columns(const std::vector<std::int64_t>& idx, Eigen::MatrixXd& out) const;

  std::uint64_t storage_scalars() const { return c_scalars_; }
  std::uint64_t storage_bytes() const;
  std::uint64_t tensor_bytes() const;

 private:
  template <typename Mat>
  void build_tensors(const MlpNetwork& net, const LossCurvature& curv,
                     const ForwardTrace& trace, std::vector<Mat>& store);

  ParamLayout layout_;
  std::vector<int> dims_;  // d_l per layer (rows of W_l)
  int n_ = 0;
  int d_out_ = 0;
  StoragePrecision precision_;
  // per layer: d_L x (n * d_l), column (i * d_l + mu) holds C_i^l(:, mu)
  std::vector<Eigen::MatrixXd> c64_;
  std::vector<Eigen::MatrixXf> c32_;
  std::vector<Eigen::MatrixXd> col_norms_;   // d_l x n
  std::vector<Eigen::MatrixXd> input_acts_;  // (fan_in + bias) x n
  std::uint64_t c_scalars_ = 0;
};

GnhPrecomp precompute(const MlpNetwork& net, const Batch& batch, const LossCurvature& curv,
                      const ForwardTrace& trace, const PrecomputeOptions& opts = {});

}  // namespace gnh
