#pragma once

#include <cstddef>
#include <vector>

#include "stylespace/tensor/tape.hpp"

namespace stylespace {

// Elementwise. Binary ops broadcast with right-aligned extents of 1.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> neg(const Var<T>& x);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& x, T c);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);

// Reductions.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// Sums out one axis (the axis is removed from the shape).
template <typename T> Var<T> sum_axis(const Var<T>& x, std::size_t axis);
template <typename T> Var<T> mean_axis(const Var<T>& x, std::size_t axis);

// Shape manipulation.
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Projection onto the first d entries of the last axis.
template <typename T> Var<T> slice_prefix(const Var<T>& x, std::size_t d);

// Dense layers.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x[N,in] * W[out,in]^T + bias[out]. Pass a default Var for no bias.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Direct convolution of x[N,C,H,W] with kernel[O,C,kh,kw], plus optional bias[O].
/// Output extents are floor((H + 2*pad - kh)/stride) + 1.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t pad);
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride, std::size_t pad) {
  return conv2d(x, kernel, Var<T>{}, stride, pad);
}

/// gain[o] * direction[o,...] / ||direction[o,...]|| for every output unit o.
template <typename T> Var<T> weight_normalize(const Var<T>& direction, const Var<T>& gain);

enum class ResampleMode { kDownscale2xAvg, kUpscale2xNearest };
template <typename T> Var<T> resample(const Var<T>& x, ResampleMode mode);
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

struct PatchPos {
  std::size_t image = 0;
  std::size_t y = 0;
  std::size_t x = 0;
};
/// Gathers square patches from x[N,C,H,W] into [P,C,size,size].
template <typename T>
Var<T> crop_patches(const Var<T>& x, const std::vector<PatchPos>& patches, std::size_t size);

/// Cumulative prefix squared distances: out[n,m,d] = sum_{k<=d} (a[n,k]-b[m,k])^2
/// for a[N,D], b[M,D].
template <typename T> Var<T> prefix_sq_dist(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }

// Plain tensor kernels shared with non-differentiable code paths.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                         std::size_t stride, std::size_t pad);
template <typename T> Tensor<T> downscale2x(const Tensor<T>& x);
template <typename T> Tensor<T> upscale2x(const Tensor<T>& x);

}  // namespace stylespace
