#include "gnh/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "gnh/backprop.hpp"
#include "gnh/errors.hpp"
#include "gnh/rng.hpp"

namespace gnh {

MlpNetwork random_network(const NetworkSpec& spec, std::uint64_t seed) {
  const std::size_t L = spec.activations.size();
  if (spec.dims.size() != L + 1 || L == 0) {
    throw ShapeError("network spec needs one activation per layer and dims for every boundary");
  }
  const bool biased = spec.bias == BiasMode::augmented;
  rng::Stream stream = rng::Stream::derive(seed, {0x4e});
  std::vector<Eigen::MatrixXd> weights(L);
  for (std::size_t l = 0; l < L; ++l) {
    const int fan_in = spec.dims[l];
    const int fan_out = spec.dims[l + 1];
    if (fan_in < 1 || fan_out < 1) throw ShapeError("network spec dims must be positive");
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(fan_out, fan_in + (biased ? 1 : 0));
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int c = 0; c < fan_in; ++c) {
      for (int r = 0; r < fan_out; ++r) w(r, c) = scale * stream.normal();
    }
    weights[l] = std::move(w);
  }
  return MlpNetwork(std::move(weights), spec.activations, spec.loss, spec.bias);
}

Batch random_batch(const MlpNetwork& net, int n, bool autoencoder, std::uint64_t seed) {
  if (n < 1) throw ShapeError("batch size must be positive");
  if (autoencoder && net.output_dim() != net.input_dim()) {
    throw ShapeError("autoencoder batches need output width equal to input width");
  }
  rng::Stream stream = rng::Stream::derive(seed, {0x42});
  Batch batch;
  batch.inputs.resize(net.input_dim(), n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < net.input_dim(); ++i) batch.inputs(i, j) = stream.normal();
  }
  if (autoencoder) {
    batch.labels = batch.inputs;
    return batch;
  }
  batch.labels.resize(net.output_dim(), n);
  if (net.loss() == Loss::cross_entropy) {
    batch.labels.setZero();
    for (int j = 0; j < n; ++j) {
      batch.labels(static_cast<Eigen::Index>(stream.below(net.output_dim())), j) = 1.0;
    }
  } else {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < net.output_dim(); ++i) batch.labels(i, j) = stream.normal();
    }
  }
  return batch;
}

double warmup_train(MlpNetwork& net, const Batch& data, const TrainOptions& opts) {
  data.validate_against(net);
  if (opts.steps < 0) throw ShapeError("step count must be nonnegative");
  if (opts.batch_size < 1) throw ShapeError("mini-batch size must be positive");
  if (!(opts.learning_rate > 0.0)) throw NumericError("learning rate must be positive");

  const int n = data.n();
  const int bs = std::min(opts.batch_size, n);
  const double initial = loss_value(net, forward(net, data.inputs), data.labels);
  if (opts.steps == 0) return initial;

  rng::Stream stream = rng::Stream::derive(opts.seed, {0x54});
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  int cursor = n;  // forces a shuffle on the first step

  Batch mini;
  mini.inputs.resize(data.inputs.rows(), bs);
  mini.labels.resize(data.labels.rows(), bs);
  for (int step = 0; step < opts.steps; ++step) {
    if (cursor + bs > n) {
      for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(stream.below(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
      }
      cursor = 0;
    }
    for (int j = 0; j < bs; ++j) {
      const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(cursor + j)]);
      mini.inputs.col(j) = data.inputs.col(src);
      mini.labels.col(j) = data.labels.col(src);
    }
    cursor += bs;

    const GradientResult grad = gradient(net, mini);
    for (int l = 0; l < net.depth(); ++l) {
      net.weight(l) -= opts.learning_rate * grad.layers[static_cast<std::size_t>(l)];
    }
    if (!net.weight(net.depth() - 1).allFinite()) {
      throw NumericError("training diverged at step " + std::to_string(step) +
                         "; lower the learning rate");
    }
  }

  const double final_loss = loss_value(net, forward(net, data.inputs), data.labels);
  if (!std::isfinite(final_loss)) {
    throw NumericError("training diverged: final loss is non-finite");
  }
  if (final_loss > initial) {
    std::cerr << "warning: warmup left the loss higher than it started (" << initial << " -> "
              << final_loss << "); consider a smaller learning rate\n";
  }
  return final_loss;
}

}  // namespace gnh
