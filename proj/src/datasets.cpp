#include "gnh/datasets.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include "gnh/errors.hpp"
#include "gnh/rng.hpp"

namespace gnh {
namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::int64_t kCifarRecordBytes = 3073;  // 1 label byte + 32*32*3 pixels
constexpr int kCifarPixels = 3072;
constexpr int kCifarClasses = 10;

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  return in;
}

std::uint32_t read_be32(std::istream& in, const std::string& path, const std::string& what) {
  unsigned char b[4];
  const std::streampos at = in.tellg();
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    std::ostringstream msg;
    msg << path << ": truncated while reading " << what << " at byte offset "
        << static_cast<long long>(at);
    throw FormatError(msg.str());
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::vector<unsigned char> read_bytes(std::istream& in, const std::string& path,
                                      std::int64_t count, const std::string& what) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(count));
  const std::streampos at = in.tellg();
  in.read(reinterpret_cast<char*>(buf.data()), count);
  if (in.gcount() != count) {
    std::ostringstream msg;
    msg << path << ": truncated while reading " << what << " at byte offset "
        << static_cast<long long>(at) << " (wanted " << count << " bytes, got " << in.gcount()
        << ")";
    throw FormatError(msg.str());
  }
  return buf;
}

std::vector<std::int64_t> subset_indices(std::int64_t total, const SubsetSpec& subset,
                                         const std::string& path) {
  if (subset.count < 0) throw ShapeError("subset count must be nonnegative");
  if (subset.count == 0 || subset.count >= total) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  if (total == 0) throw FormatError(path + ": dataset holds no points");
  rng::Stream stream = rng::Stream::derive(subset.seed, {0x44});
  return stream.sample_without_replacement(total, subset.count);
}

Eigen::MatrixXd one_hot(const std::vector<unsigned char>& labels,
                        const std::vector<std::int64_t>& pick, int classes,
                        const std::string& path) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(classes, static_cast<Eigen::Index>(pick.size()));
  for (std::size_t j = 0; j < pick.size(); ++j) {
    const unsigned char c = labels[static_cast<std::size_t>(pick[j])];
    if (c >= classes) {
      std::ostringstream msg;
      msg << path << ": label value " << int(c) << " outside the " << classes
          << "-class range at record " << pick[j];
      throw FormatError(msg.str());
    }
    out(c, static_cast<Eigen::Index>(j)) = 1.0;
  }
  return out;
}

}  // namespace

Batch load_idx(const std::string& image_path, const std::string& label_path, int classes,
               bool autoencoder, const SubsetSpec& subset) {
  if (!autoencoder && classes < 1) throw ShapeError("idx: class count must be positive");

  std::ifstream img = open_binary(image_path);
  const std::uint32_t magic = read_be32(img, image_path, "magic");
  if (magic != kIdxImagesMagic) {
    std::ostringstream msg;
    msg << image_path << ": bad image magic 0x" << std::hex << magic << ", expected 0x"
        << kIdxImagesMagic;
    throw FormatError(msg.str());
  }
  const std::int64_t count = read_be32(img, image_path, "image count");
  const std::int64_t rows = read_be32(img, image_path, "row count");
  const std::int64_t cols = read_be32(img, image_path, "column count");
  if (count < 1 || rows < 1 || cols < 1) {
    throw FormatError(image_path + ": empty image set or degenerate shape");
  }
  const std::int64_t pixels = rows * cols;
  const std::vector<unsigned char> raw =
      read_bytes(img, image_path, count * pixels, "pixel data");

  const std::vector<std::int64_t> pick = subset_indices(count, subset, image_path);
  Batch batch;
  batch.inputs.resize(pixels, static_cast<Eigen::Index>(pick.size()));
  for (std::size_t j = 0; j < pick.size(); ++j) {
    const unsigned char* src = raw.data() + pick[j] * pixels;
    for (std::int64_t p = 0; p < pixels; ++p) {
      batch.inputs(p, static_cast<Eigen::Index>(j)) = static_cast<double>(src[p]) / 255.0;
    }
  }

  if (autoencoder) {
    batch.labels = batch.inputs;
    return batch;
  }

  std::ifstream lab = open_binary(label_path);
  const std::uint32_t lmagic = read_be32(lab, label_path, "magic");
  if (lmagic != kIdxLabelsMagic) {
    std::ostringstream msg;
    msg << label_path << ": bad label magic 0x" << std::hex << lmagic << ", expected 0x"
        << kIdxLabelsMagic;
    throw FormatError(msg.str());
  }
  const std::int64_t lcount = read_be32(lab, label_path, "label count");
  if (lcount != count) {
    std::ostringstream msg;
    msg << label_path << ": holds " << lcount << " labels but " << image_path << " holds "
        << count << " images";
    throw FormatError(msg.str());
  }
  const std::vector<unsigned char> labels = read_bytes(lab, label_path, lcount, "label data");
  batch.labels = one_hot(labels, pick, classes, label_path);
  return batch;
}

Batch load_cifar10(const std::string& path, bool autoencoder, const SubsetSpec& subset) {
  std::ifstream in = open_binary(path);
  in.seekg(0, std::ios::end);
  const std::int64_t bytes = in.tellg();
  in.seekg(0, std::ios::beg);
  if (bytes == 0 || bytes % kCifarRecordBytes != 0) {
    std::ostringstream msg;
    msg << path << ": size " << bytes << " is not a multiple of the " << kCifarRecordBytes
        << "-byte record (truncated after byte offset "
        << (bytes / kCifarRecordBytes) * kCifarRecordBytes << "?)";
    throw FormatError(msg.str());
  }
  const std::int64_t count = bytes / kCifarRecordBytes;
  const std::vector<unsigned char> raw = read_bytes(in, path, bytes, "records");

  const std::vector<std::int64_t> pick = subset_indices(count, subset, path);
  Batch batch;
  batch.inputs.resize(kCifarPixels, static_cast<Eigen::Index>(pick.size()));
  std::vector<unsigned char> labels(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    labels[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i * kCifarRecordBytes)];
  }
  for (std::size_t j = 0; j < pick.size(); ++j) {
    const unsigned char* src = raw.data() + pick[j] * kCifarRecordBytes + 1;
    for (int p = 0; p < kCifarPixels; ++p) {
      batch.inputs(p, static_cast<Eigen::Index>(j)) = static_cast<double>(src[p]) / 255.0;
    }
  }

  if (autoencoder) {
    batch.labels = batch.inputs;
  } else {
    batch.labels = one_hot(labels, pick, kCifarClasses, path);
  }
  return batch;
}

}  // namespace gnh
