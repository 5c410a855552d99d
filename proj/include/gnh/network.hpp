#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "gnh/errors.hpp"

namespace gnh {

enum class Activation { identity, relu, softplus, sigmoid };
enum class Loss { mean_squared, cross_entropy };
enum class BiasMode { none, augmented };

const char* to_string(Activation a);
const char* to_string(Loss l);
const char* to_string(BiasMode b);
Activation activation_from_string(const std::string& s);
Loss loss_from_string(const std::string& s);
BiasMode bias_mode_from_string(const std::string& s);

double activate(Activation a, double z);
double activate_deriv(Activation a, double z);  // relu derivative at 0 is 0

// One weight coordinate, addressed both ways: flat position k in the
// vectorized weight vector and (layer, row, col) within that layer's matrix.
struct WeightIndex {
  std::int64_t flat = 0;
  int layer = 0;  // 0-based
  int row = 0;
  int col = 0;    // with augmented bias the last column is the bias column
};

// Weights are vectorized layer by layer, each layer column-major. Every
// component (entry evaluation, sampling, cluster trees, file payloads)
// addresses weights through this one ordering.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(std::vector<int> rows, std::vector<int> cols);

  int layers() const { return static_cast<int>(rows_.size()); }
  std::int64_t total() const { return total_; }
  int rows(int layer) const { return rows_[static_cast<std::size_t>(layer)]; }
  int cols(int layer) const { return cols_[static_cast<std::size_t>(layer)]; }
  std::int64_t offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

  WeightIndex unflatten(std::int64_t k) const;
  std::int64_t flatten(int layer, int row, int col) const;
  WeightIndex at(int layer, int row, int col) const;

 private:
  std::vector<int> rows_, cols_;
  std::vector<std::int64_t> offsets_;
  std::int64_t total_ = 0;
};

// Feed-forward multilayer perceptron: x^l = s_l(W_l x^{l-1}), l = 1..L.
// With BiasMode::augmented every layer input gets a homogeneous coordinate
// of value one appended, and W_l absorbs the bias as its last column.
class MlpNetwork {
 public:
  MlpNetwork(std::vector<Eigen::MatrixXd> weights, std::vector<Activation> activations,
             Loss loss, BiasMode bias);

  int depth() const { return static_cast<int>(weights_.size()); }
  int input_dim() const { return fan_in(0); }
  int output_dim() const { return static_cast<int>(weights_.back().rows()); }
  std::int64_t num_params() const { return layout_.total(); }

  const Eigen::MatrixXd& weight(int layer) const {
    return weights_[static_cast<std::size_t>(layer)];
  }
  Eigen::MatrixXd& weight(int layer) { return weights_[static_cast<std::size_t>(layer)]; }
  // weight matrix without the bias column (equal to weight() when bias is none)
  Eigen::Ref<const Eigen::MatrixXd> weight_linear(int layer) const;

  Activation activation(int layer) const {
    return activations_[static_cast<std::size_t>(layer)];
  }
  const std::vector<Activation>& activations() const { return activations_; }
  Loss loss() const { return loss_; }
  BiasMode bias_mode() const { return bias_; }
  bool has_bias() const { return bias_ == BiasMode::augmented; }

  // layer l maps fan_in(l)-vectors to rows(l)-vectors; cols(l) includes the bias column
  int rows(int layer) const { return static_cast<int>(weights_[static_cast<std::size_t>(layer)].rows()); }
  int cols(int layer) const { return static_cast<int>(weights_[static_cast<std::size_t>(layer)].cols()); }
  int fan_in(int layer) const { return cols(layer) - (has_bias() ? 1 : 0); }

  const ParamLayout& layout() const { return layout_; }

  Eigen::VectorXd to_vector() const;
  void set_from_vector(const Eigen::VectorXd& w);

 private:
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Activation> activations_;
  Loss loss_;
  BiasMode bias_;
  ParamLayout layout_;
};

// Training data, points stored as columns. For cross-entropy the labels are
// one-hot columns; for autoencoder setups labels simply equal inputs.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd labels;

  int n() const { return static_cast<int>(inputs.cols()); }
  void validate_against(const MlpNetwork& net) const;
};

// Appends the homogeneous ones-row when bias is augmented, else returns a copy.
Eigen::MatrixXd augmented_input(const Eigen::MatrixXd& x, BiasMode bias);

}  // namespace gnh
