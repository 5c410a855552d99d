#include "gnh/entry_oracle.hpp"

#include <atomic>
#include <cmath>

#include "gnh/errors.hpp"

namespace gnh {

struct EntryOracle::Impl {
  enum class Kind { exact, sampled, dense } kind;
  std::shared_ptr<const GnhPrecomp> pre;
  EstimatorConfig cfg;
  Eigen::MatrixXd h;  // dense backend only
  double lambda = 0.0;
  std::int64_t n = 0;
  Eigen::VectorXd diag;
  mutable std::atomic<std::uint64_t> reads{0};

  double raw_entry(std::int64_t i, std::int64_t j) const {
    switch (kind) {
      case Kind::exact:
        return pre->entry_exact(i, j);
      case Kind::sampled: {
        if (i == j) return pre->v_norms(pre->layout().unflatten(i)).squaredNorm();
        return entry_estimate(*pre, i, j, cfg).value;
      }
      case Kind::dense:
        return h(i, j);
    }
    return 0.0;
  }
};

EntryOracle EntryOracle::exact(std::shared_ptr<const GnhPrecomp> pre, double lambda) {
  if (!pre) throw ShapeError("entry oracle needs a precompute store");
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::exact;
  impl->pre = std::move(pre);
  impl->lambda = lambda;
  impl->n = impl->pre->num_params();
  impl->diag = diagonal_estimate(*impl->pre, {});
  impl->diag.array() += lambda;
  return EntryOracle(std::move(impl));
}

EntryOracle EntryOracle::sampled(std::shared_ptr<const GnhPrecomp> pre, EstimatorConfig cfg,
                                 double lambda) {
  if (!pre) throw ShapeError("entry oracle needs a precompute store");
  cfg.validate();
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::sampled;
  impl->pre = std::move(pre);
  impl->cfg = cfg;
  impl->lambda = lambda;
  impl->n = impl->pre->num_params();
  impl->diag = diagonal_estimate(*impl->pre, {});
  impl->diag.array() += lambda;
  return EntryOracle(std::move(impl));
}

EntryOracle EntryOracle::dense(Eigen::MatrixXd h, double lambda) {
  if (h.rows() != h.cols()) throw ShapeError("dense oracle needs a square matrix");
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::dense;
  impl->h = std::move(h);
  impl->lambda = lambda;
  impl->n = impl->h.rows();
  impl->diag = impl->h.diagonal();
  impl->diag.array() += lambda;
  return EntryOracle(std::move(impl));
}

std::int64_t EntryOracle::size() const { return impl_->n; }
double EntryOracle::lambda() const { return impl_->lambda; }
const Eigen::VectorXd& EntryOracle::diagonal() const { return impl_->diag; }
std::uint64_t EntryOracle::entries_read() const { return impl_->reads.load(); }

double EntryOracle::entry(std::int64_t i, std::int64_t j) const {
  if (i < 0 || i >= impl_->n || j < 0 || j >= impl_->n)
    throw ShapeError("oracle index out of range");
  impl_->reads.fetch_add(1, std::memory_order_relaxed);
  if (i == j) return impl_->diag[i];
  return impl_->raw_entry(i, j);
}

Eigen::MatrixXd EntryOracle::block(const std::vector<std::int64_t>& rows,
                                   const std::vector<std::int64_t>& cols) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(cols.size()));
  impl_->reads.fetch_add(rows.size() * cols.size(), std::memory_order_relaxed);

  if (impl_->kind == Impl::Kind::exact) {
    // one tall GEMM instead of |rows|*|cols| scalar loops; slab the row side
    // to bound the gather buffer
    const Eigen::Index tall =
        static_cast<Eigen::Index>(impl_->pre->points()) * impl_->pre->out_dim();
    const std::size_t slab = std::max<std::size_t>(
        1, static_cast<std::size_t>((64ull << 20) / (static_cast<std::uint64_t>(tall) * 8)));
    Eigen::MatrixXd vc;
    impl_->pre->fill_v_columns(cols, vc);
    Eigen::MatrixXd vr;
    for (std::size_t r0 = 0; r0 < rows.size(); r0 += slab) {
      const std::size_t r1 = std::min(rows.size(), r0 + slab);
      const std::vector<std::int64_t> sub(rows.begin() + static_cast<std::ptrdiff_t>(r0),
                                          rows.begin() + static_cast<std::ptrdiff_t>(r1));
      impl_->pre->fill_v_columns(sub, vr);
      out.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(sub.size()))
          .noalias() = vr.transpose() * vc;
    }
    if (impl_->lambda != 0.0) {
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b)
          if (rows[a] == cols[b])
            out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += impl_->lambda;
    }
    return out;
  }

  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < cols.size(); ++b) {
      const std::int64_t i = rows[a];
      const std::int64_t j = cols[b];
      double v = i == j ? impl_->diag[i] : impl_->raw_entry(i, j);
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
    }
  }
  return out;
}

double index_distance(const EntryOracle& oracle, std::int64_t i, std::int64_t j,
                      DistanceMetric metric) {
  const double hii = oracle.diagonal()[i];
  const double hjj = oracle.diagonal()[j];
  if (!(hii > 0.0) || !(hjj > 0.0))
    throw NumericError("index distance needs positive diagonal entries");
  if (i == j) return 0.0;
  const double hij = oracle.entry(i, j);
  if (metric == DistanceMetric::angle) {
    const double d = 1.0 - (hij * hij) / (hii * hjj);
    return d < 0.0 ? 0.0 : d;
  }
  const double d = hii - 2.0 * hij + hjj;
  return d > 0.0 ? std::sqrt(d) : 0.0;
}

}  // namespace gnh
