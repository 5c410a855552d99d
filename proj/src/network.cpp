#include "gnh/network.hpp"

#include <cmath>
#include <sstream>

namespace gnh {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

const char* to_string(Loss l) {
  return l == Loss::mean_squared ? "mean-squared" : "cross-entropy";
}

const char* to_string(BiasMode b) {
  return b == BiasMode::augmented ? "augmented" : "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "sigmoid") return Activation::sigmoid;
  throw FormatError("unknown activation '" + s + "'");
}

Loss loss_from_string(const std::string& s) {
  if (s == "mean-squared" || s == "mse") return Loss::mean_squared;
  if (s == "cross-entropy" || s == "ce") return Loss::cross_entropy;
  throw FormatError("unknown loss '" + s + "'");
}

BiasMode bias_mode_from_string(const std::string& s) {
  if (s == "none") return BiasMode::none;
  if (s == "augmented") return BiasMode::augmented;
  throw FormatError("unknown bias mode '" + s + "'");
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::softplus:
      // log(1+e^z); for large z the direct form overflows, use z + log1p(e^-z)
      return z > 30.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case Activation::sigmoid:
      return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                      : std::exp(z) / (1.0 + std::exp(z));
  }
  return z;
}

double activate_deriv(Activation a, double z) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::softplus: return activate(Activation::sigmoid, z);
    case Activation::sigmoid: {
      const double s = activate(Activation::sigmoid, z);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

ParamLayout::ParamLayout(std::vector<int> rows, std::vector<int> cols)
    : rows_(std::move(rows)), cols_(std::move(cols)) {
  if (rows_.size() != cols_.size())
    throw ShapeError("layout needs one (rows, cols) pair per layer");
  offsets_.resize(rows_.size());
  total_ = 0;
  for (std::size_t l = 0; l < rows_.size(); ++l) {
    if (rows_[l] <= 0 || cols_[l] <= 0) throw ShapeError("layer dimensions must be positive");
    offsets_[l] = total_;
    total_ += static_cast<std::int64_t>(rows_[l]) * cols_[l];
  }
}

WeightIndex ParamLayout::unflatten(std::int64_t k) const {
  if (k < 0 || k >= total_) {
    std::ostringstream msg;
    msg << "weight index " << k << " out of range [0, " << total_ << ")";
    throw ShapeError(msg.str());
  }
  int layer = layers() - 1;
  while (offsets_[static_cast<std::size_t>(layer)] > k) --layer;
  const std::int64_t within = k - offsets_[static_cast<std::size_t>(layer)];
  const int r = rows_[static_cast<std::size_t>(layer)];
  WeightIndex idx;
  idx.flat = k;
  idx.layer = layer;
  idx.col = static_cast<int>(within / r);
  idx.row = static_cast<int>(within % r);
  return idx;
}

std::int64_t ParamLayout::flatten(int layer, int row, int col) const {
  if (layer < 0 || layer >= layers()) throw ShapeError("layer index out of range");
  const int r = rows_[static_cast<std::size_t>(layer)];
  const int c = cols_[static_cast<std::size_t>(layer)];
  if (row < 0 || row >= r || col < 0 || col >= c)
    throw ShapeError("weight coordinate out of range for layer");
  return offsets_[static_cast<std::size_t>(layer)] + static_cast<std::int64_t>(col) * r + row;
}

WeightIndex ParamLayout::at(int layer, int row, int col) const {
  WeightIndex idx;
  idx.flat = flatten(layer, row, col);
  idx.layer = layer;
  idx.row = row;
  idx.col = col;
  return idx;
}

MlpNetwork::MlpNetwork(std::vector<Eigen::MatrixXd> weights,
                       std::vector<Activation> activations, Loss loss, BiasMode bias)
    : weights_(std::move(weights)), activations_(std::move(activations)), loss_(loss),
      bias_(bias) {
  if (weights_.empty()) throw ShapeError("network needs at least one layer");
  if (activations_.size() != weights_.size())
    throw ShapeError("need exactly one activation per layer");
  const int extra = has_bias() ? 1 : 0;
  for (std::size_t l = 1; l < weights_.size(); ++l) {
    if (weights_[l].cols() != weights_[l - 1].rows() + extra) {
      std::ostringstream msg;
      msg << "layer " << l << " expects " << weights_[l].cols() << " inputs but layer "
          << l - 1 << " produces " << weights_[l - 1].rows() << " (+" << extra
          << " bias)";
      throw ShapeError(msg.str());
    }
  }
  for (const auto& w : weights_) {
    if (!w.allFinite()) throw NumericError("network weights contain non-finite values");
  }
  std::vector<int> rows, cols;
  rows.reserve(weights_.size());
  cols.reserve(weights_.size());
  for (const auto& w : weights_) {
    rows.push_back(static_cast<int>(w.rows()));
    cols.push_back(static_cast<int>(w.cols()));
  }
  layout_ = ParamLayout(std::move(rows), std::move(cols));
}

Eigen::Ref<const Eigen::MatrixXd> MlpNetwork::weight_linear(int layer) const {
  const Eigen::MatrixXd& w = weights_[static_cast<std::size_t>(layer)];
  return w.leftCols(fan_in(layer));
}

Eigen::VectorXd MlpNetwork::to_vector() const {
  Eigen::VectorXd w(layout_.total());
  for (int l = 0; l < depth(); ++l) {
    const auto& wl = weights_[static_cast<std::size_t>(l)];
    w.segment(layout_.offset(l), wl.size()) =
        Eigen::Map<const Eigen::VectorXd>(wl.data(), wl.size());
  }
  return w;
}

void MlpNetwork::set_from_vector(const Eigen::VectorXd& w) {
  if (w.size() != layout_.total())
    throw ShapeError("weight vector length does not match network");
  if (!w.allFinite()) throw NumericError("weight vector contains non-finite values");
  for (int l = 0; l < depth(); ++l) {
    auto& wl = weights_[static_cast<std::size_t>(l)];
    Eigen::Map<Eigen::VectorXd>(wl.data(), wl.size()) = w.segment(layout_.offset(l), wl.size());
  }
}

void Batch::validate_against(const MlpNetwork& net) const {
  if (inputs.cols() != labels.cols())
    throw ShapeError("inputs and labels disagree on the number of points");
  if (inputs.cols() < 1) throw ShapeError("batch is empty");
  if (inputs.rows() != net.input_dim())
    throw ShapeError("input dimension does not match the network's first layer");
  if (labels.rows() != net.output_dim())
    throw ShapeError("label dimension does not match the network's last layer");
  if (!inputs.allFinite() || !labels.allFinite())
    throw NumericError("batch contains non-finite values");
}

Eigen::MatrixXd augmented_input(const Eigen::MatrixXd& x, BiasMode bias) {
  if (bias == BiasMode::none) return x;
  Eigen::MatrixXd out(x.rows() + 1, x.cols());
  out.topRows(x.rows()) = x;
  out.row(x.rows()).setOnes();
  return out;
}

}  // namespace gnh
