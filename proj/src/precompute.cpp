#include "gnh/precompute.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "gnh/errors.hpp"

namespace gnh {

namespace {

// dot of two tensor columns with 64-bit accumulation regardless of storage width
template <typename Scalar>
double column_dot(const Scalar* a, const Scalar* b, int len) {
  double acc = 0.0;
  for (int j = 0; j < len; ++j)
    acc += static_cast<double>(a[j]) * static_cast<double>(b[j]);
  return acc;
}

}  // namespace

template <typename Mat>
void GnhPrecomp::build_tensors(const MlpNetwork& net, const LossCurvature& curv,
                               const ForwardTrace& trace, std::vector<Mat>& store) {
  using Scalar = typename Mat::Scalar;
  const int L = net.depth();
  store.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    store[static_cast<std::size_t>(l)].resize(d_out_,
                                              static_cast<Eigen::Index>(n_) * dims_[static_cast<std::size_t>(l)]);

  // C_i^L = R_i M_i^L, then C_i^{l-1} = C_i^l W_l M_i^{l-1} walking backwards.
  // The recurrence runs in f64 per point; storage casts at the end of each layer.
  const Eigen::MatrixXd& m_last = trace.act_deriv(L);
  Eigen::MatrixXd cur(d_out_, dims_.back());
  for (int i = 0; i < n_; ++i) {
    if (curv.is_isotropic()) {
      cur.setZero();
      cur.diagonal() = curv.iso_r_scale() * m_last.col(i);
    } else {
      cur = curv.r_factor(i) * m_last.col(i).asDiagonal();
    }
    store[static_cast<std::size_t>(L - 1)]
        .middleCols(static_cast<Eigen::Index>(i) * dims_.back(), dims_.back()) =
        cur.template cast<Scalar>();
  }

  for (int l = L - 1; l >= 1; --l) {
    const int dl = dims_[static_cast<std::size_t>(l)];
    const int dprev = dims_[static_cast<std::size_t>(l - 1)];
    const Eigen::MatrixXd& m_prev = trace.act_deriv(l);
    const auto w_lin = net.weight_linear(l);
    Eigen::MatrixXd next(d_out_, dprev);
    for (int i = 0; i < n_; ++i) {
      const Eigen::MatrixXd ci =
          store[static_cast<std::size_t>(l)]
              .middleCols(static_cast<Eigen::Index>(i) * dl, dl)
              .template cast<double>();
      next.noalias() = ci * w_lin;
      next = next * m_prev.col(i).asDiagonal();
      store[static_cast<std::size_t>(l - 1)]
          .middleCols(static_cast<Eigen::Index>(i) * dprev, dprev) =
          next.template cast<Scalar>();
    }
  }
}

GnhPrecomp::GnhPrecomp(const MlpNetwork& net, const Batch& batch, const LossCurvature& curv,
                       const ForwardTrace& trace, const PrecomputeOptions& opts)
    : layout_(net.layout()), precision_(opts.precision) {
  batch.validate_against(net);
  if (curv.points() != batch.n() || trace.points() != batch.n())
    throw ShapeError("curvature/trace do not match the batch");
  if (curv.dim() != net.output_dim())
    throw ShapeError("curvature dimension does not match the network output");

  const int L = net.depth();
  n_ = batch.n();
  d_out_ = net.output_dim();
  dims_.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) dims_[static_cast<std::size_t>(l)] = net.rows(l);

  // size the store up front and enforce the budget before allocating
  std::uint64_t act_scalars = 0;
  c_scalars_ = 0;
  for (int l = 0; l < L; ++l) {
    c_scalars_ += static_cast<std::uint64_t>(d_out_) * dims_[static_cast<std::size_t>(l)] * n_;
    act_scalars += static_cast<std::uint64_t>(net.cols(l)) * n_;
  }
  std::uint64_t norm_scalars = 0;
  for (int l = 0; l < L; ++l)
    norm_scalars += static_cast<std::uint64_t>(dims_[static_cast<std::size_t>(l)]) * n_;
  const std::uint64_t elem = precision_ == StoragePrecision::f32 ? 4 : 8;
  const std::uint64_t bytes = c_scalars_ * elem + (act_scalars + norm_scalars) * 8;
  if (bytes > opts.max_bytes) {
    std::ostringstream msg;
    msg << "precompute store would need " << bytes << " bytes (budget " << opts.max_bytes
        << "); reduce the batch or switch to 32-bit storage";
    throw ResourceError(msg.str());
  }

  if (precision_ == StoragePrecision::f64)
    build_tensors(net, curv, trace, c64_);
  else
    build_tensors(net, curv, trace, c32_);

  // column norms of each C_i^l
  col_norms_.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const int dl = dims_[static_cast<std::size_t>(l)];
    Eigen::MatrixXd norms(dl, n_);
    for (int i = 0; i < n_; ++i) {
      for (int mu = 0; mu < dl; ++mu) {
        const Eigen::Index col = static_cast<Eigen::Index>(i) * dl + mu;
        norms(mu, i) = precision_ == StoragePrecision::f64
                           ? c64_[static_cast<std::size_t>(l)].col(col).norm()
                           : std::sqrt(column_dot(
                                 c32_[static_cast<std::size_t>(l)].col(col).data(),
                                 c32_[static_cast<std::size_t>(l)].col(col).data(), d_out_));
      }
    }
    col_norms_[static_cast<std::size_t>(l)] = std::move(norms);
  }

  // augmented layer inputs, x^{l-1} with the homogeneous row when biased
  input_acts_.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    input_acts_[static_cast<std::size_t>(l)] =
        augmented_input(trace.activation(l), net.bias_mode());
}

GnhPrecomp::GnhPrecomp(ParamLayout layout, std::vector<int> dims, int points, int out_dim,
                       StoragePrecision precision, std::vector<Eigen::MatrixXd> c64,
                       std::vector<Eigen::MatrixXf> c32, std::vector<Eigen::MatrixXd> col_norms,
                       std::vector<Eigen::MatrixXd> input_acts)
    : layout_(std::move(layout)),
      dims_(std::move(dims)),
      n_(points),
      d_out_(out_dim),
      precision_(precision),
      c64_(std::move(c64)),
      c32_(std::move(c32)),
      col_norms_(std::move(col_norms)),
      input_acts_(std::move(input_acts)) {
  const std::size_t L = dims_.size();
  if (L == 0 || static_cast<int>(L) != layout_.layers())
    throw ShapeError("precompute tables: layer count does not match the layout");
  if (n_ <= 0 || d_out_ <= 0) throw ShapeError("precompute tables: empty batch or output");
  const bool f64 = precision_ == StoragePrecision::f64;
  if ((f64 ? c64_.size() : c32_.size()) != L || (f64 ? !c32_.empty() : !c64_.empty()))
    throw ShapeError("precompute tables: tensor store does not match the precision tag");
  if (col_norms_.size() != L || input_acts_.size() != L)
    throw ShapeError("precompute tables: one norm and activation table per layer required");
  c_scalars_ = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const int dl = dims_[l];
    if (dl != layout_.rows(static_cast<int>(l)))
      throw ShapeError("precompute tables: layer dimension disagrees with the layout");
    const Eigen::Index tr = f64 ? c64_[l].rows() : c32_[l].rows();
    const Eigen::Index tc = f64 ? c64_[l].cols() : c32_[l].cols();
    if (tr != d_out_ || tc != static_cast<Eigen::Index>(n_) * dl)
      throw ShapeError("precompute tables: tensor shape mismatch at layer " +
                       std::to_string(l));
    if (col_norms_[l].rows() != dl || col_norms_[l].cols() != n_)
      throw ShapeError("precompute tables: norm table shape mismatch at layer " +
                       std::to_string(l));
    if (input_acts_[l].rows() != layout_.cols(static_cast<int>(l)) ||
        input_acts_[l].cols() != n_)
      throw ShapeError("precompute tables: activation shape mismatch at layer " +
                       std::to_string(l));
    c_scalars_ += static_cast<std::uint64_t>(d_out_) * dl * n_;
  }
}

Eigen::MatrixXd GnhPrecomp::c_matrix(int layer, int i) const {
  const int dl = dims_[static_cast<std::size_t>(layer)];
  const Eigen::Index base = static_cast<Eigen::Index>(i) * dl;
  if (precision_ == StoragePrecision::f64)
    return c64_[static_cast<std::size_t>(layer)].middleCols(base, dl);
  return c32_[static_cast<std::size_t>(layer)].middleCols(base, dl).cast<double>();
}

Eigen::VectorXd GnhPrecomp::v_vector(const WeightIndex& k, int i) const {
  const int dl = dims_[static_cast<std::size_t>(k.layer)];
  const double x = input_acts_[static_cast<std::size_t>(k.layer)](k.col, i);
  const Eigen::Index col = static_cast<Eigen::Index>(i) * dl + k.row;
  if (precision_ == StoragePrecision::f64)
    return x * c64_[static_cast<std::size_t>(k.layer)].col(col);
  return x * c32_[static_cast<std::size_t>(k.layer)].col(col).cast<double>();
}

double GnhPrecomp::v_norm(const WeightIndex& k, int i) const {
  return col_norms_[static_cast<std::size_t>(k.layer)](k.row, i) *
         std::abs(input_acts_[static_cast<std::size_t>(k.layer)](k.col, i));
}

Eigen::VectorXd GnhPrecomp::v_norms(const WeightIndex& k) const {
  return (col_norms_[static_cast<std::size_t>(k.layer)].row(k.row).array() *
          input_acts_[static_cast<std::size_t>(k.layer)].row(k.col).array().abs())
      .transpose();
}

double GnhPrecomp::v_dot(const WeightIndex& k, const WeightIndex& m, int i) const {
  const int dk = dims_[static_cast<std::size_t>(k.layer)];
  const int dm = dims_[static_cast<std::size_t>(m.layer)];
  const Eigen::Index ck = static_cast<Eigen::Index>(i) * dk + k.row;
  const Eigen::Index cm = static_cast<Eigen::Index>(i) * dm + m.row;
  const double scale = input_acts_[static_cast<std::size_t>(k.layer)](k.col, i) *
                       input_acts_[static_cast<std::size_t>(m.layer)](m.col, i);
  if (scale == 0.0) return 0.0;
  double dot;
  if (precision_ == StoragePrecision::f64) {
    dot = column_dot(c64_[static_cast<std::size_t>(k.layer)].col(ck).data(),
                     c64_[static_cast<std::size_t>(m.layer)].col(cm).data(), d_out_);
  } else {
    dot = column_dot(c32_[static_cast<std::size_t>(k.layer)].col(ck).data(),
                     c32_[static_cast<std::size_t>(m.layer)].col(cm).data(), d_out_);
  }
  return scale * dot;
}

double GnhPrecomp::entry_exact(const WeightIndex& k, const WeightIndex& m,
                               WorkCounter* wc) const {
  double acc = 0.0;
  for (int i = 0; i < n_; ++i) acc += v_dot(k, m, i);
  if (wc)
    wc->exact_entry_ops +=
        static_cast<std::uint64_t>(n_) * (static_cast<std::uint64_t>(d_out_) + 2);
  return acc;
}

double GnhPrecomp::entry_exact(std::int64_t k, std::int64_t m, WorkCounter* wc) const {
  return entry_exact(layout_.unflatten(k), layout_.unflatten(m), wc);
}

void GnhPrecomp::fill_v_columns(const std::vector<std::int64_t>& idx,
                                Eigen::MatrixXd& out) const {
  out.resize(static_cast<Eigen::Index>(n_) * d_out_, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const WeightIndex k = layout_.unflatten(idx[j]);
    const int dl = dims_[static_cast<std::size_t>(k.layer)];
    const auto& acts = input_acts_[static_cast<std::size_t>(k.layer)];
    for (int i = 0; i < n_; ++i) {
      const double x = acts(k.col, i);
      const Eigen::Index col = static_cast<Eigen::Index>(i) * dl + k.row;
      auto dst = out.block(static_cast<Eigen::Index>(i) * d_out_, static_cast<Eigen::Index>(j),
                           d_out_, 1);
      if (x == 0.0) {
        dst.setZero();
      } else if (precision_ == StoragePrecision::f64) {
        dst = x * c64_[static_cast<std::size_t>(k.layer)].col(col);
      } else {
        dst = x * c32_[static_cast<std::size_t>(k.layer)].col(col).cast<double>();
      }
    }
  }
}

std::uint64_t GnhPrecomp::tensor_bytes() const {
  return c_scalars_ * (precision_ == StoragePrecision::f32 ? 4 : 8);
}

std::uint64_t GnhPrecomp::storage_bytes() const {
  std::uint64_t bytes = tensor_bytes();
  for (const auto& m : col_norms_) bytes += static_cast<std::uint64_t>(m.size()) * 8;
  for (const auto& m : input_acts_) bytes += static_cast<std::uint64_t>(m.size()) * 8;
  return bytes;
}

GnhPrecomp precompute(const MlpNetwork& net, const Batch& batch, const LossCurvature& curv,
                      const ForwardTrace& trace, const PrecomputeOptions& opts) {
  return GnhPrecomp(net, batch, curv, trace, opts);
}

}  // namespace gnh
