#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace gnh::rng {

// Counter-based generator in the splitmix64 family: the state is a plain
// counter advanced by the golden-ratio increment and each output is an
// avalanching mix (Stafford variant 13) of the counter. Two properties
// matter here:
//   * streams derived from different (seed, id...) tuples are independent
//     for our purposes, so every sampled Hessian entry can own a stream
//     keyed by (seed, k, m) and reproduce bitwise regardless of evaluation
//     order or thread count;
//   * the whole thing is integer arithmetic, so results are identical
//     across platforms (no reliance on libstdc++ distribution internals).

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

class Stream {
 public:
  explicit Stream(std::uint64_t state) : state_(state) {}

  // Domain separation: fold each id into the state with one mix round.
  static Stream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t s = mix64(seed + kGolden);
    for (std::uint64_t id : ids) s = mix64(s ^ (id + kGolden));
    return Stream(s);
  }

  std::uint64_t next() {
    state_ += kGolden;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53 random mantissa bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1], safe as a log argument.
  double uniform_pos() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the pair's second value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n). Lemire's multiply-shift; the modulo bias is
  // below 2^-64 * n which is irrelevant at our range sizes, and unlike
  // rejection sampling it consumes exactly one draw, keeping streams aligned.
  std::int64_t below(std::int64_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next()) *
                                   static_cast<unsigned __int128>(n);
    return static_cast<std::int64_t>(wide >> 64);
  }

  // First k entries of a random permutation of {0, .., n-1}.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::vector<std::int64_t> Stream::sample_without_replacement(std::int64_t n,
                                                                    std::int64_t k) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (k > n) k = n;
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t j = i + below(n - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace gnh::rng
