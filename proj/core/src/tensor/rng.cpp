#include "stylespace/tensor/rng.hpp"

#include <cmath>
#include <numbers>

namespace stylespace {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> RngStream::philox(std::uint64_t seed, std::uint64_t stream,
                                               std::uint64_t counter) {
  std::array<std::uint32_t, 4> c = {
      static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t k0 = static_cast<std::uint32_t>(seed);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return c;
}

void RngStream::refill() {
  block_ = philox(seed_, stream_, counter_++);
  used_ = 0;
}

std::uint32_t RngStream::next_u32() {
  if (used_ >= 4) refill();
  return block_[used_++];
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t RngStream::index(std::size_t n) {
  const unsigned __int128 p = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(p >> 64);
}

double RngStream::normal() {
  // Both uniforms come from one fresh block so draw k depends only on counter k.
  refill();
  const std::uint64_t a = (static_cast<std::uint64_t>(block_[0]) << 32) | block_[1];
  const std::uint64_t b = (static_cast<std::uint64_t>(block_[2]) << 32) | block_[3];
  used_ = 4;
  const double u1 = (static_cast<double>(a >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t stream_id(std::string_view purpose, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char ch : purpose) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ull;
  }
  return splitmix(h ^ splitmix(index));
}

template <typename T>
Tensor<T> sample_gaussian(RngStream& rng, const Shape& shape) {
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
Tensor<T> sample_uniform(RngStream& rng, const Shape& shape, T lo, T hi) {
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template Tensor<float> sample_gaussian<float>(RngStream&, const Shape&);
template Tensor<double> sample_gaussian<double>(RngStream&, const Shape&);
template Tensor<float> sample_uniform<float>(RngStream&, const Shape&, float, float);
template Tensor<double> sample_uniform<double>(RngStream&, const Shape&, double, double);

}  // namespace stylespace
