#include "stylespace/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace stylespace {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <typename T>
bool present(const Var<T>& v) {
  return v.tape != nullptr;
}

template <typename T>
bool tracked(const Var<T>& v) {
  return v.tape != nullptr && v.requires_grad();
}

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ShapeError(std::string(op) + ": operands recorded on different tapes");
  }
  return *a.tape;
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, const char* op, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(y), x.requires_grad(),
      [xi, df](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(xi);
        const Tensor<T>& yv = t.value(self);
        Tensor<T>& gx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
      },
      op);
}

// Right-aligned broadcasting of two shapes into one output shape.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
  bool b_scalar = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  std::size_t sa = 1;
  std::size_t sb = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t axis = rank - 1 - k;
    const std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
    }
    p.out[axis] = std::max(ea, eb);
    p.stride_a[axis] = ea == 1 ? 0 : sa;
    p.stride_b[axis] = eb == 1 ? 0 : sb;
    sa *= ea;
    sb *= eb;
  }
  p.b_scalar = shape_size(b) == 1;
  return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = shape_size(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  const std::size_t last = rank - 1;
  const std::size_t inner = p.out[last];
  const std::size_t da = p.stride_a[last];
  const std::size_t db = p.stride_b[last];
  for (std::size_t i = 0; i < n; i += inner) {
    std::size_t a = ia;
    std::size_t b = ib;
    for (std::size_t j = 0; j < inner; ++j, a += da, b += db) f(i + j, a, b);
    // Advance the odometer over all but the innermost axis.
    for (std::size_t axis = last; axis-- > 0;) {
      ++idx[axis];
      ia += p.stride_a[axis];
      ib += p.stride_b[axis];
      if (idx[axis] < p.out[axis]) break;
      ia -= p.stride_a[axis] * idx[axis];
      ib -= p.stride_b[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
}

template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* op, F f, DA da, DB db) {
  Tape<T>& tape = same_tape(a, b, op);
  const Broadcast plan = plan_broadcast(a.shape(), b.shape(), op);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> y(plan.out);
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    y[i] = f(av[ia], bv[ib]);
  });
  const std::size_t ai = a.id;
  const std::size_t bi = b.id;
  const bool ra = a.requires_grad();
  const bool rb = b.requires_grad();
  return tape.push(
      std::move(y), ra || rb,
      [plan, ai, bi, ra, rb, da, db](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& av = t.value(ai);
        const Tensor<T>& bv = t.value(bi);
        if (ra) {
          Tensor<T>& ga = t.grad(ai);
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += g[i] * da(av[ia], bv[ib]);
          });
        }
        if (rb) {
          Tensor<T>& gb = t.grad(bi);
          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += g[i] * db(av[ia], bv[ib]);
          });
        }
      },
      op);
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t k = 0; k < axis; ++k) r.outer *= s[k];
  r.extent = s[axis];
  for (std::size_t k = axis + 1; k < s.size(); ++k) r.inner *= s[k];
  return r;
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(s));
  }
}

template <typename T>
void im2col(const T* x, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
            std::size_t wo, T* cols) {
  const std::size_t plane = ho * wo;
  const std::size_t row_len = n * plane;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* dst = cols + ((ci * kh + ki) * kw + kj) * row_len;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* src = x + (ni * c + ci) * h * w;
          T* out = dst + ni * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                      static_cast<std::ptrdiff_t>(pad);
            T* orow = out + oh * wo;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(orow, orow + wo, T(0));
              continue;
            }
            const T* irow = src + static_cast<std::size_t>(ih) * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                        static_cast<std::ptrdiff_t>(pad);
              orow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                             ? T(0)
                             : irow[static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
            std::size_t wo, T* gx) {
  const std::size_t plane = ho * wo;
  const std::size_t row_len = n * plane;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* src = cols + ((ci * kh + ki) * kw + kj) * row_len;
        for (std::size_t ni = 0; ni < n; ++ni) {
          T* dst = gx + (ni * c + ci) * h * w;
          const T* in = src + ni * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            T* drow = dst + static_cast<std::size_t>(ih) * w;
            const T* irow = in + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              drow[static_cast<std::size_t>(iw)] += irow[ow];
            }
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
};

template <typename T>
ConvGeometry conv_geometry(const Shape& xs, const Shape& ks, std::size_t stride, std::size_t pad) {
  require_rank(xs, 4, "conv2d input");
  require_rank(ks, 4, "conv2d kernel");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (xs[1] != ks[1]) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) + " != kernel channels " +
                     std::to_string(ks[1]));
  }
  const std::size_t ph = xs[2] + 2 * pad;
  const std::size_t pw = xs[3] + 2 * pad;
  if (ks[2] > ph || ks[3] > pw) {
    throw ShapeError("conv2d: kernel " + shape_string(ks) + " larger than padded input " +
                     shape_string(xs));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], 0, 0};
  g.ho = (ph - g.kh) / stride + 1;
  g.wo = (pw - g.kw) / stride + 1;
  return g;
}

// Y[O, N*P] laid out per image as out[N, O, P].
template <typename T>
void scatter_output(const RowMat<T>& y, std::size_t n, std::size_t o, std::size_t plane, T* out) {
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t oi = 0; oi < o; ++oi) {
      const T* src = y.data() + oi * n * plane + ni * plane;
      std::copy(src, src + plane, out + (ni * o + oi) * plane);
    }
  }
}

template <typename T>
RowMat<T> gather_output(const T* g, std::size_t n, std::size_t o, std::size_t plane) {
  RowMat<T> y(o, n * plane);
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t oi = 0; oi < o; ++oi) {
      const T* src = g + (ni * o + oi) * plane;
      std::copy(src, src + plane, y.data() + oi * n * plane + ni * plane);
    }
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return unary(
      x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, "sigmoid",
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary(
      x, "leaky_relu", [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return unary(
      x, "clamp", [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1); });
}

// ----------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  T acc = 0;
  for (const T v : xv.data()) acc += v;
  const std::size_t xi = x.id;
  return x.tape->push(
      Tensor<T>::scalar(acc), x.requires_grad(),
      [xi](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (auto& v : t.grad(xi).data()) v += g;
      },
      "sum");
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range for " + shape_string(s));
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k != axis) out_shape.push_back(s[k]);
  }
  const Tensor<T>& xv = x.value();
  Tensor<T> y(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const T* src = xv.raw() + (o * sp.extent + e) * sp.inner;
      T* dst = y.raw() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(y), x.requires_grad(),
      [xi, sp](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xi);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t e = 0; e < sp.extent; ++e) {
            T* dst = gx.raw() + (o * sp.extent + e) * sp.inner;
            const T* src = g.raw() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
          }
        }
      },
      "sum_axis");
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis) {
  if (axis >= x.shape().size()) throw ShapeError("mean_axis: axis out of range");
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(x.shape()[axis]));
}

// ---------------------------------------------------------------------- shape

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(y), x.requires_grad(),
      [xi](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.tape != parts.front().tape) throw ShapeError("concat: operands on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != axis && s[k] != first[k]) {
        throw ShapeError("concat: shape mismatch " + shape_string(s) + " vs " +
                         shape_string(first));
      }
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
    any_grad = any_grad || p.requires_grad();
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor<T> y(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = parts[k].value();
    const std::size_t chunk = extents[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.raw() + o * chunk, chunk, y.raw() + o * sp.extent * sp.inner + offset);
    }
    offset += chunk;
  }
  std::vector<std::size_t> ids;
  std::vector<bool> needs;
  for (const auto& p : parts) {
    ids.push_back(p.id);
    needs.push_back(p.requires_grad());
  }
  return parts.front().tape->push(
      std::move(y), any_grad,
      [ids, needs, extents, sp](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t chunk = extents[k] * sp.inner;
          if (needs[k]) {
            Tensor<T>& gp = t.grad(ids[k]);
            for (std::size_t o = 0; o < sp.outer; ++o) {
              const T* src = g.raw() + o * sp.extent * sp.inner + offset;
              T* dst = gp.raw() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          offset += chunk;
        }
      },
      "concat");
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("slice: axis out of range");
  if (begin > end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(s[axis]));
  }
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor<T> y(out_shape);
  const std::size_t chunk = (end - begin) * sp.inner;
  const Tensor<T>& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.raw() + (o * sp.extent + begin) * sp.inner, chunk, y.raw() + o * chunk);
  }
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(y), x.requires_grad(),
      [xi, sp, begin, chunk](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xi);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          T* dst = gx.raw() + (o * sp.extent + begin) * sp.inner;
          const T* src = g.raw() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

template <typename T>
Var<T> slice_prefix(const Var<T>& x, std::size_t d) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("slice_prefix: scalar input");
  if (d > s.back()) {
    throw ShapeError("slice_prefix: prefix " + std::to_string(d) + " exceeds extent " +
                     std::to_string(s.back()));
  }
  return slice(x, s.size() - 1, 0, d);
}

// ---------------------------------------------------------------------- dense

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = same_tape(a, b, "matmul");
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor<T> y(Shape{m, n});
  MapMat<T>(y.raw(), m, n).noalias() =
      MapConstMat<T>(a.value().raw(), m, k) * MapConstMat<T>(b.value().raw(), k, n);
  const std::size_t ai = a.id, bi = b.id;
  const bool ra = a.requires_grad(), rb = b.requires_grad();
  return tape.push(
      std::move(y), ra || rb,
      [=](Tape<T>& t, std::size_t self) {
        MapConstMat<T> g(t.grad(self).raw(), m, n);
        if (ra) {
          MapMat<T>(t.grad(ai).raw(), m, k).noalias() +=
              g * MapConstMat<T>(t.value(bi).raw(), k, n).transpose();
        }
        if (rb) {
          MapMat<T>(t.grad(bi).raw(), k, n).noalias() +=
              MapConstMat<T>(t.value(ai).raw(), m, k).transpose() * g;
        }
      },
      "matmul");
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  Tape<T>& tape = same_tape(x, weight, "linear");
  require_rank(x.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const bool has_bias = present(bias);
  if (has_bias && bias.value().size() != out) throw ShapeError("linear: bias length mismatch");
  Tensor<T> y(Shape{n, out});
  MapMat<T> ym(y.raw(), n, out);
  ym.noalias() = MapConstMat<T>(x.value().raw(), n, in) *
                 MapConstMat<T>(weight.value().raw(), out, in).transpose();
  if (has_bias) {
    const T* b = bias.value().raw();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < out; ++c) ym(r, c) += b[c];
    }
  }
  const std::size_t xi = x.id, wi = weight.id, bi = has_bias ? bias.id : 0;
  const bool rx = x.requires_grad(), rw = weight.requires_grad();
  const bool rbias = has_bias && bias.requires_grad();
  return tape.push(
      std::move(y), rx || rw || rbias,
      [=](Tape<T>& t, std::size_t self) {
        MapConstMat<T> g(t.grad(self).raw(), n, out);
        if (rx) {
          MapMat<T>(t.grad(xi).raw(), n, in).noalias() +=
              g * MapConstMat<T>(t.value(wi).raw(), out, in);
        }
        if (rw) {
          MapMat<T>(t.grad(wi).raw(), out, in).noalias() +=
              g.transpose() * MapConstMat<T>(t.value(xi).raw(), n, in);
        }
        if (rbias) {
          T* gb = t.grad(bi).raw();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < out; ++c) gb[c] += g(r, c);
          }
        }
      },
      "linear");
}

// ---------------------------------------------------------------- convolution

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                         std::size_t stride, std::size_t pad) {
  const ConvGeometry g = conv_geometry<T>(x.shape(), kernel.shape(), stride, pad);
  const std::size_t plane = g.ho * g.wo;
  const std::size_t ckk = g.c * g.kh * g.kw;
  RowMat<T> cols(ckk, g.n * plane);
  im2col(x.raw(), g.n, g.c, g.h, g.w, g.kh, g.kw, stride, pad, g.ho, g.wo, cols.data());
  RowMat<T> ym(g.o, g.n * plane);
  ym.noalias() = MapConstMat<T>(kernel.raw(), g.o, ckk) * cols;
  Tensor<T> y(Shape{g.n, g.o, g.ho, g.wo});
  scatter_output(ym, g.n, g.o, plane, y.raw());
  if (bias != nullptr) {
    for (std::size_t ni = 0; ni < g.n; ++ni) {
      for (std::size_t oi = 0; oi < g.o; ++oi) {
        T* p = y.raw() + (ni * g.o + oi) * plane;
        const T b = (*bias)[oi];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
    }
  }
  return y;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  Tape<T>& tape = same_tape(x, kernel, "conv2d");
  const ConvGeometry g = conv_geometry<T>(x.shape(), kernel.shape(), stride, pad);
  const bool has_bias = present(bias);
  if (has_bias && bias.value().size() != g.o) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t plane = g.ho * g.wo;
  const std::size_t ckk = g.c * g.kh * g.kw;

  auto cols = std::make_shared<RowMat<T>>(ckk, g.n * plane);
  im2col(x.value().raw(), g.n, g.c, g.h, g.w, g.kh, g.kw, stride, pad, g.ho, g.wo, cols->data());
  RowMat<T> ym(g.o, g.n * plane);
  ym.noalias() = MapConstMat<T>(kernel.value().raw(), g.o, ckk) * (*cols);
  Tensor<T> y(Shape{g.n, g.o, g.ho, g.wo});
  scatter_output(ym, g.n, g.o, plane, y.raw());
  if (has_bias) {
    const T* b = bias.value().raw();
    for (std::size_t ni = 0; ni < g.n; ++ni) {
      for (std::size_t oi = 0; oi < g.o; ++oi) {
        T* p = y.raw() + (ni * g.o + oi) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[oi];
      }
    }
  }

  const std::size_t xi = x.id, ki = kernel.id, bi = has_bias ? bias.id : 0;
  const bool rx = x.requires_grad(), rk = kernel.requires_grad();
  const bool rb = has_bias && bias.requires_grad();
  if (!rk) cols.reset();  // only the kernel gradient needs the unfolded input
  return tape.push(
      std::move(y), rx || rk || rb,
      [=](Tape<T>& t, std::size_t self) {
        const RowMat<T> gy = gather_output(t.grad(self).raw(), g.n, g.o, plane);
        if (rk) {
          MapMat<T>(t.grad(ki).raw(), g.o, ckk).noalias() += gy * cols->transpose();
        }
        if (rx) {
          RowMat<T> gcols(ckk, g.n * plane);
          gcols.noalias() = MapConstMat<T>(t.value(ki).raw(), g.o, ckk).transpose() * gy;
          col2im(gcols.data(), g.n, g.c, g.h, g.w, g.kh, g.kw, stride, pad, g.ho, g.wo,
                 t.grad(xi).raw());
        }
        if (rb) {
          T* gb = t.grad(bi).raw();
          for (std::size_t oi = 0; oi < g.o; ++oi) gb[oi] += gy.row(oi).sum();
        }
      },
      "conv2d");
}

template <typename T>
Var<T> weight_normalize(const Var<T>& direction, const Var<T>& gain) {
  Tape<T>& tape = same_tape(direction, gain, "weight_normalize");
  const Shape& s = direction.shape();
  if (s.empty()) throw ShapeError("weight_normalize: direction must have an output axis");
  const std::size_t units = s[0];
  if (gain.value().size() != units) {
    throw ShapeError("weight_normalize: " + std::to_string(units) + " output units but " +
                     std::to_string(gain.value().size()) + " gains");
  }
  const std::size_t fan = units == 0 ? 0 : direction.value().size() / units;
  const Tensor<T>& v = direction.value();
  const Tensor<T>& gv = gain.value();
  std::vector<T> norms(units);
  Tensor<T> w(s);
  for (std::size_t o = 0; o < units; ++o) {
    const T* row = v.raw() + o * fan;
    T sq = 0;
    for (std::size_t i = 0; i < fan; ++i) sq += row[i] * row[i];
    if (!(sq > 0)) {
      throw NumericError("weight_normalize: zero-norm direction for output unit " +
                         std::to_string(o));
    }
    norms[o] = std::sqrt(sq);
    const T f = gv[o] / norms[o];
    for (std::size_t i = 0; i < fan; ++i) w[o * fan + i] = f * row[i];
  }
  const std::size_t di = direction.id, gi = gain.id;
  const bool rd = direction.requires_grad(), rg = gain.requires_grad();
  return tape.push(
      std::move(w), rd || rg,
      [=](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& v = t.value(di);
        const Tensor<T>& gv = t.value(gi);
        for (std::size_t o = 0; o < units; ++o) {
          const T* row = v.raw() + o * fan;
          const T* grow = g.raw() + o * fan;
          T dot = 0;
          for (std::size_t i = 0; i < fan; ++i) dot += grow[i] * row[i];
          const T inv = T(1) / norms[o];
          if (rg) t.grad(gi)[o] += dot * inv;
          if (rd) {
            T* dst = t.grad(di).raw() + o * fan;
            const T a = gv[o] * inv;
            const T b = a * dot * inv * inv;
            for (std::size_t i = 0; i < fan; ++i) dst[i] += a * grow[i] - b * row[i];
          }
        }
      },
      "weight_normalize");
}

template <typename T>
Tensor<T> downscale2x(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "downscale");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("downscale2x: odd spatial extent in " + shape_string(x.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> y(Shape{n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = y.raw() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const T* a = src + 2 * i * w + 2 * j;
        dst[i * wo + j] = (a[0] + a[1] + a[w] + a[w + 1]) * T(0.25);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upscale2x(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "upscale");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = y.raw() + p * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return y;
}

template <typename T>
Var<T> resample(const Var<T>& x, ResampleMode mode) {
  const std::size_t xi = x.id;
  const Shape in_shape = x.shape();
  if (mode == ResampleMode::kDownscale2xAvg) {
    return x.tape->push(
        downscale2x(x.value()), x.requires_grad(),
        [xi, in_shape](Tape<T>& t, std::size_t self) {
          const Tensor<T>& g = t.grad(self);
          Tensor<T>& gx = t.grad(xi);
          const std::size_t h = in_shape[2], w = in_shape[3], ho = h / 2, wo = w / 2;
          for (std::size_t p = 0; p < in_shape[0] * in_shape[1]; ++p) {
            const T* src = g.raw() + p * ho * wo;
            T* dst = gx.raw() + p * h * w;
            for (std::size_t i = 0; i < h; ++i) {
              for (std::size_t j = 0; j < w; ++j) dst[i * w + j] += src[(i / 2) * wo + j / 2] * T(0.25);
            }
          }
        },
        "downscale2x");
  }
  return x.tape->push(
      upscale2x(x.value()), x.requires_grad(),
      [xi, in_shape](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xi);
        const std::size_t h = in_shape[2], w = in_shape[3];
        for (std::size_t p = 0; p < in_shape[0] * in_shape[1]; ++p) {
          const T* src = g.raw() + p * 4 * h * w;
          T* dst = gx.raw() + p * h * w;
          for (std::size_t i = 0; i < 2 * h; ++i) {
            for (std::size_t j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
          }
        }
      },
      "upscale2x");
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> y(Shape{x.dim(0), x.dim(1)});
  const Tensor<T>& xv = x.value();
  for (std::size_t p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i];
    y[p] = acc / static_cast<T>(plane);
  }
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(y), x.requires_grad(),
      [xi, nc, plane](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xi);
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t p = 0; p < nc; ++p) {
          for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += g[p] * inv;
        }
      },
      "global_avg_pool");
}

template <typename T>
Var<T> crop_patches(const Var<T>& x, const std::vector<PatchPos>& patches, std::size_t size) {
  require_rank(x.shape(), 4, "crop_patches");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (const auto& p : patches) {
    if (p.image >= n || p.y + size > h || p.x + size > w) {
      throw ShapeError("crop_patches: patch at (" + std::to_string(p.y) + "," +
                       std::to_string(p.x) + ") size " + std::to_string(size) +
                       " outside input " + shape_string(x.shape()));
    }
  }
  Tensor<T> y(Shape{patches.size(), c, size, size});
  const Tensor<T>& xv = x.value();
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const PatchPos& p = patches[k];
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < size; ++i) {
        const T* src = xv.raw() + ((p.image * c + ci) * h + p.y + i) * w + p.x;
        std::copy_n(src, size, y.raw() + ((k * c + ci) * size + i) * size);
      }
    }
  }
  const std::size_t xi = x.id;
  return x.tape->push(
      std::move(y), x.requires_grad(),
      [xi, patches, size, c, h, w](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xi);
        for (std::size_t k = 0; k < patches.size(); ++k) {
          const PatchPos& p = patches[k];
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t i = 0; i < size; ++i) {
              T* dst = gx.raw() + ((p.image * c + ci) * h + p.y + i) * w + p.x;
              const T* src = g.raw() + ((k * c + ci) * size + i) * size;
              for (std::size_t j = 0; j < size; ++j) dst[j] += src[j];
            }
          }
        }
      },
      "crop_patches");
}

template <typename T>
Var<T> prefix_sq_dist(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = same_tape(a, b, "prefix_sq_dist");
  require_rank(a.shape(), 2, "prefix_sq_dist lhs");
  require_rank(b.shape(), 2, "prefix_sq_dist rhs");
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) {
    throw ShapeError("prefix_sq_dist: code lengths " + std::to_string(d) + " and " +
                     std::to_string(b.dim(1)) + " differ");
  }
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> y(Shape{n, m, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T acc = 0;
      T* out = y.raw() + (i * m + j) * d;
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = av[i * d + k] - bv[j * d + k];
        acc += diff * diff;
        out[k] = acc;
      }
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  const bool ra = a.requires_grad(), rb = b.requires_grad();
  return tape.push(
      std::move(y), ra || rb,
      [=](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& av = t.value(ai);
        const Tensor<T>& bv = t.value(bi);
        T* ga = ra ? t.grad(ai).raw() : nullptr;
        T* gb = rb ? t.grad(bi).raw() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            const T* gr = g.raw() + (i * m + j) * d;
            T tail = 0;
            for (std::size_t k = d; k-- > 0;) {
              tail += gr[k];
              const T diff = T(2) * (av[i * d + k] - bv[j * d + k]) * tail;
              if (ga) ga[i * d + k] += diff;
              if (gb) gb[j * d + k] -= diff;
            }
          }
        }
      },
      "prefix_sq_dist");
}

#define STYLESPACE_INSTANTIATE_OPS(T)                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> div(const Var<T>&, const Var<T>&);                                          \
  template Var<T> neg(const Var<T>&);                                                         \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> add_scalar(const Var<T>&, T);                                               \
  template Var<T> exp(const Var<T>&);                                                         \
  template Var<T> log(const Var<T>&);                                                         \
  template Var<T> square(const Var<T>&);                                                      \
  template Var<T> tanh(const Var<T>&);                                                        \
  template Var<T> sigmoid(const Var<T>&);                                                     \
  template Var<T> leaky_relu(const Var<T>&, T);                                               \
  template Var<T> clamp(const Var<T>&, T, T);                                                 \
  template Var<T> sum(const Var<T>&);                                                         \
  template Var<T> mean(const Var<T>&);                                                        \
  template Var<T> sum_axis(const Var<T>&, std::size_t);                                       \
  template Var<T> mean_axis(const Var<T>&, std::size_t);                                      \
  template Var<T> reshape(const Var<T>&, Shape);                                              \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                            \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);               \
  template Var<T> slice_prefix(const Var<T>&, std::size_t);                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,            \
                         std::size_t);                                                        \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,     \
                                    std::size_t, std::size_t);                                \
  template Var<T> weight_normalize(const Var<T>&, const Var<T>&);                             \
  template Tensor<T> downscale2x(const Tensor<T>&);                                           \
  template Tensor<T> upscale2x(const Tensor<T>&);                                             \
  template Var<T> resample(const Var<T>&, ResampleMode);                                      \
  template Var<T> global_avg_pool(const Var<T>&);                                             \
  template Var<T> crop_patches(const Var<T>&, const std::vector<PatchPos>&, std::size_t);     \
  template Var<T> prefix_sq_dist(const Var<T>&, const Var<T>&);

STYLESPACE_INSTANTIATE_OPS(float)
STYLESPACE_INSTANTIATE_OPS(double)

#undef STYLESPACE_INSTANTIATE_OPS

}  // namespace stylespace
