#pragma once

#include <cstdint>
#include <vector>

#include "gnh/network.hpp"

namespace gnh {

struct NetworkSpec {
  std::vector<int> dims;                  // d_0 .. d_L
  std::vector<Activation> activations;    // one per layer
  Loss loss = Loss::mean_squared;
  BiasMode bias = BiasMode::augmented;
};

// Linear weights drawn N(0, 1/fan_in), bias columns zero. Deterministic in seed.
MlpNetwork random_network(const NetworkSpec& spec, std::uint64_t seed);

// Gaussian inputs. Labels follow the loss: uniform one-hot classes for cross
// entropy, standard Gaussian targets for mean squared error, or the inputs
// themselves when autoencoder is set (requires matching output width).
Batch random_batch(const MlpNetwork& net, int n, bool autoencoder, std::uint64_t seed);

struct TrainOptions {
  int steps = 100;           // mini-batch SGD steps
  int batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

// Plain SGD over reshuffled mini-batches, used to move curvature studies off
// the random initialization. Returns the final full-batch loss; throws
// NumericError if the iteration diverges and warns on stderr when the loss
// failed to decrease.
double warmup_train(MlpNetwork& net, const Batch& data, const TrainOptions& opts);

}  // namespace gnh
