#pragma once

#include <cstdint>
#include <string>

#include "gnh/network.hpp"

namespace gnh {

// Optional subsampling applied after a dataset is decoded: `count` points
// drawn without replacement (0 keeps everything), deterministic in `seed`.
struct SubsetSpec {
  std::int64_t count = 0;
  std::uint64_t seed = 0;
};

// IDX image/label pair (the MNIST container): big-endian 32-bit magic and
// shape fields, then raw unsigned bytes. Pixels are scaled to [0, 1] and each
// image becomes one column in file byte order; labels are one-hot encoded to
// `classes` rows. With autoencoder = true the label file is ignored (may be
// empty) and the labels equal the inputs.
Batch load_idx(const std::string& image_path, const std::string& label_path, int classes,
               bool autoencoder, const SubsetSpec& subset = {});

// CIFAR-10 binary batch: records of one label byte followed by 3072 pixel
// bytes. Same scaling and encoding conventions as load_idx, 10 classes.
Batch load_cifar10(const std::string& path, bool autoencoder, const SubsetSpec& subset = {});

}  // namespace gnh
