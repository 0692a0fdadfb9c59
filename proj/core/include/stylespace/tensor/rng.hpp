#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "stylespace/tensor/tensor.hpp"

namespace stylespace {

/// Counter-based random stream (Philox4x32-10). The output sequence is a pure
/// function of (seed, stream, counter), so any draw can be replayed by
/// reconstructing the stream at the recorded position.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Standard normal draw (Box-Muller, one block of 128 bits per draw).
  double normal();

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static std::array<std::uint32_t, 4> philox(std::uint64_t seed, std::uint64_t stream,
                                             std::uint64_t counter);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

/// Stable stream id for a named purpose and index, e.g. ("dropout", step).
std::uint64_t stream_id(std::string_view purpose, std::uint64_t index = 0);

template <typename T>
Tensor<T> sample_gaussian(RngStream& rng, const Shape& shape);

template <typename T>
Tensor<T> sample_uniform(RngStream& rng, const Shape& shape, T lo, T hi);

}  // namespace stylespace
