#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "gnh/hmatrix.hpp"
#include "gnh/network.hpp"
#include "gnh/precompute.hpp"

namespace gnh {

// All on-disk containers share one layout: an ASCII header of "key value"
// lines, opened by "<MAGIC> <version>" and closed by a lone "end", followed
// by a raw little-endian binary payload of column-major matrices. Loaders
// throw FormatError with the offending line or byte offset.
//
//   GNHNET 1    network weights plus activations/loss/bias metadata
//   GNHBATCH 1  inputs and labels, points as columns
//   GNHPRE 1    precomputed entry tables, stamped with source file hashes
//   GNHHMAT 1   compressed hierarchical matrix (tree, leaf blocks, factors)

std::uint64_t fnv1a64(const void* data, std::size_t len);
// hash of a file's full byte content, used to bind caches to their sources
std::uint64_t fnv1a64_file(const std::string& path);

void save_network(const std::string& path, const MlpNetwork& net);
MlpNetwork load_network(const std::string& path);

void save_batch(const std::string& path, const Batch& batch);
Batch load_batch(const std::string& path);

struct PrecompStamp {
  std::uint64_t net_hash = 0;
  std::uint64_t batch_hash = 0;
};

void save_precomp(const std::string& path, const GnhPrecomp& pre, const PrecompStamp& stamp);
// When `expect` is given the stored stamp must match or the load fails; the
// stamp found in the file is returned through `stamp_out` when non-null.
GnhPrecomp load_precomp(const std::string& path,
                        const std::optional<PrecompStamp>& expect = std::nullopt,
                        PrecompStamp* stamp_out = nullptr);

void save_hmatrix(const std::string& path, const HMatrix& hm);
HMatrix load_hmatrix(const std::string& path);

}  // namespace gnh
