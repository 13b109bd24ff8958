#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vana/runtime.hpp"

namespace vana {

using Shape = std::vector<std::int64_t>;

// Shape/extent violations (mismatched operands, bad reshape, window overrun).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad scalar arguments and out-of-domain values (non-positive scale,
// out-of-range labels, non-finite inputs in checked builds).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline Shape row_major_strides(const Shape& s) {
  Shape st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  return st;
}

// Dense row-major N-d array. The value type is float or double; tests and
// gradient checks run in double, benchmarks in float.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        strides_(row_major_strides(shape_)),
        data_(static_cast<std::size_t>(shape_numel(shape_)), T(0)) {
    if (std::any_of(shape_.begin(), shape_.end(), [](std::int64_t e) { return e < 0; }))
      throw ShapeError("tensor: negative extent in shape " + shape_str(shape_));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), strides_(row_major_strides(shape_)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
      throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  const Shape& strides() const { return strides_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... Ix>
  T& operator()(Ix... ix) {
    return data_[static_cast<std::size_t>(offset_of(ix...))];
  }
  template <typename... Ix>
  const T& operator()(Ix... ix) const {
    return data_[static_cast<std::size_t>(offset_of(ix...))];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Contiguous reinterpretation; element count must be preserved.
  Tensor reshape(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    out.strides_ = row_major_strides(out.shape_);
    return out;
  }

  // Materialized axis permutation.
  Tensor transpose(const std::vector<int>& perm) const {
    const auto r = static_cast<std::size_t>(rank());
    if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch");
    Shape out_shape(r);
    for (std::size_t a = 0; a < r; ++a) out_shape[a] = shape_[static_cast<std::size_t>(perm[a])];
    Tensor out(out_shape);
    Shape idx(r, 0);
    for (std::int64_t flat = 0; flat < size(); ++flat) {
      std::int64_t src = 0;
      for (std::size_t a = 0; a < r; ++a)
        src += idx[a] * strides_[static_cast<std::size_t>(perm[a])];
      out.data_[static_cast<std::size_t>(flat)] = data_[static_cast<std::size_t>(src)];
      for (int a = static_cast<int>(r) - 1; a >= 0; --a) {
        if (++idx[static_cast<std::size_t>(a)] < out_shape[static_cast<std::size_t>(a)]) break;
        idx[static_cast<std::size_t>(a)] = 0;
      }
    }
    return out;
  }

 private:
  template <typename... Ix>
  std::int64_t offset_of(Ix... ix) const {
    const std::int64_t idx[] = {static_cast<std::int64_t>(ix)...};
    std::int64_t off = 0;
    for (std::size_t a = 0; a < sizeof...(Ix); ++a) off += idx[a] * strides_[a];
    return off;
  }

  Shape shape_;
  Shape strides_;
  std::vector<T> data_;
};

template <typename T>
inline Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expected rank-2, got " + shape_str(a.shape()));
  return a.transpose({1, 0});
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
#ifdef VANA_CHECKS
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i]))
      throw ValueError(std::string(op) + ": non-finite input value at flat index " +
                       std::to_string(i));
#else
  (void)t;
  (void)op;
#endif
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// Broadcast batch extents (all axes except the trailing two).
inline Shape broadcast_batch(const Shape& a, const Shape& b, const char* op) {
  const std::size_t ra = a.size() - 2, rb = b.size() - 2;
  const std::size_t r = std::max(ra, rb);
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t ea = i < r - ra ? 1 : a[i - (r - ra)];
    std::int64_t eb = i < r - rb ? 1 : b[i - (r - rb)];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Flat offset of one batch element, clamping broadcast (extent-1) axes.
inline std::int64_t batch_offset(const Shape& batch_idx, const Shape& shape,
                                 std::int64_t mat_elems) {
  const std::size_t rb = shape.size() - 2;
  std::int64_t off = 0, stride = mat_elems;
  for (std::size_t i = rb; i-- > 0;) {
    const std::int64_t e = shape[i];
    const std::int64_t ix = e == 1 ? 0 : batch_idx[batch_idx.size() - (rb - i)];
    off += ix * stride;
    stride *= e;
  }
  return off;
}

inline void advance(Shape& idx, const Shape& extents) {
  for (int a = static_cast<int>(extents.size()) - 1; a >= 0; --a) {
    auto ua = static_cast<std::size_t>(a);
    if (++idx[ua] < extents[ua]) return;
    idx[ua] = 0;
  }
}

}  // namespace detail

// Standard matrix product on the trailing two axes; leading axes broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must be at least rank-2: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::int64_t m = a.dim(a.rank() - 2), p = a.dim(a.rank() - 1);
  const std::int64_t p2 = b.dim(b.rank() - 2), q = b.dim(b.rank() - 1);
  if (p != p2)
    throw ShapeError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const Shape batch = detail::broadcast_batch(a.shape(), b.shape(), "matmul");
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(q);
  Tensor<T> out(out_shape);

  const std::int64_t n_batch = shape_numel(batch);
  Shape idx(batch.size(), 0);
  for (std::int64_t bi = 0; bi < n_batch; ++bi) {
    const T* pa = a.data() + detail::batch_offset(idx, a.shape(), m * p);
    const T* pb = b.data() + detail::batch_offset(idx, b.shape(), p * q);
    T* po = out.data() + bi * m * q;
    parallel_for(m, [&](std::int64_t r0, std::int64_t r1) {
      for (std::int64_t i = r0; i < r1; ++i)
        for (std::int64_t j = 0; j < q; ++j) {
          T acc = 0;
          for (std::int64_t kk = 0; kk < p; ++kk) acc += pa[i * p + kk] * pb[kk * q + j];
          po[i * q + j] = acc;
        }
    });
    detail::advance(idx, batch);
  }
  return out;
}

// aᵀ b without materializing the transpose; rank-2 only.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("matmul_tn: incompatible " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::int64_t n = a.dim(0), m = a.dim(1), q = b.dim(1);
  Tensor<T> out({m, q});
  for (std::int64_t i = 0; i < n; ++i) {
    const T* pa = a.data() + i * m;
    const T* pb = b.data() + i * q;
    for (std::int64_t r = 0; r < m; ++r) {
      T* po = out.data() + r * q;
      const T av = pa[r];
      for (std::int64_t c = 0; c < q; ++c) po[c] += av * pb[c];
    }
  }
  return out;
}

// a bᵀ without materializing the transpose; rank-2 only.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: incompatible " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::int64_t m = a.dim(0), p = a.dim(1), n = b.dim(0);
  Tensor<T> out({m, n});
  parallel_for(m, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        T acc = 0;
        const T* pa = a.data() + i * p;
        const T* pb = b.data() + j * p;
        for (std::int64_t kk = 0; kk < p; ++kk) acc += pa[kk] * pb[kk];
        out(i, j) = acc;
      }
  });
  return out;
}

// Reverse-mode gradients of matmul: dA = dY Bᵀ, dB = Aᵀ dY, with broadcast
// batch axes summed back out.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> matmul_vjp(const Tensor<T>& a, const Tensor<T>& b,
                                           const Tensor<T>& dy) {
  const std::int64_t m = a.dim(a.rank() - 2), p = a.dim(a.rank() - 1);
  const std::int64_t q = b.dim(b.rank() - 1);
  const Shape batch = detail::broadcast_batch(a.shape(), b.shape(), "matmul_vjp");
  Shape y_shape = batch;
  y_shape.push_back(m);
  y_shape.push_back(q);
  if (dy.shape() != y_shape)
    throw ShapeError("matmul_vjp: upstream gradient shape " + shape_str(dy.shape()) +
                     " does not match product shape " + shape_str(y_shape));

  Tensor<T> da(a.shape()), db(b.shape());
  const std::int64_t n_batch = shape_numel(batch);
  Shape idx(batch.size(), 0);
  for (std::int64_t bi = 0; bi < n_batch; ++bi) {
    const T* pa = a.data() + detail::batch_offset(idx, a.shape(), m * p);
    const T* pb = b.data() + detail::batch_offset(idx, b.shape(), p * q);
    const T* pdy = dy.data() + bi * m * q;
    T* pda = da.data() + detail::batch_offset(idx, a.shape(), m * p);
    T* pdb = db.data() + detail::batch_offset(idx, b.shape(), p * q);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t kk = 0; kk < p; ++kk) {
        T acc = 0;
        for (std::int64_t j = 0; j < q; ++j) acc += pdy[i * q + j] * pb[kk * q + j];
        pda[i * p + kk] += acc;
      }
    for (std::int64_t kk = 0; kk < p; ++kk)
      for (std::int64_t j = 0; j < q; ++j) {
        T acc = 0;
        for (std::int64_t i = 0; i < m; ++i) acc += pa[i * p + kk] * pdy[i * q + j];
        pdb[kk * q + j] += acc;
      }
    detail::advance(idx, batch);
  }
  return {std::move(da), std::move(db)};
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Row-wise softmax along the last axis of x / scale, max-shifted for
// stability. scale is the softmax temperature (√d_h in attention).
template <typename T>
Tensor<T> softmax_scaled(const Tensor<T>& x, T scale) {
  check_finite(x, "softmax_scaled");
  if (!(scale > T(0))) throw ValueError("softmax_scaled: scale must be positive");
  if (x.rank() < 1) throw ShapeError("softmax_scaled: rank-0 input");
  const std::int64_t n = x.dim(x.rank() - 1);
  const std::int64_t rows = n == 0 ? 0 : x.size() / n;
  Tensor<T> y(x.shape());
  parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const T* px = x.data() + r * n;
      T* py = y.data() + r * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, px[i] / scale);
      T z = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        py[i] = std::exp(px[i] / scale - mx);
        z += py[i];
      }
      for (std::int64_t i = 0; i < n; ++i) py[i] /= z;
    }
  });
  return y;
}

// dX from saved probabilities: dX_i = y_i (dY_i − Σ_j y_j dY_j) / scale.
template <typename T>
Tensor<T> softmax_scaled_vjp(const Tensor<T>& y, const Tensor<T>& dy, T scale) {
  if (!y.same_shape(dy))
    throw ShapeError("softmax_scaled_vjp: shape mismatch " + shape_str(y.shape()) + " vs " +
                     shape_str(dy.shape()));
  const std::int64_t n = y.dim(y.rank() - 1);
  const std::int64_t rows = n == 0 ? 0 : y.size() / n;
  Tensor<T> dx(y.shape());
  parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const T* py = y.data() + r * n;
      const T* pdy = dy.data() + r * n;
      T* pdx = dx.data() + r * n;
      T dot = 0;
      for (std::int64_t i = 0; i < n; ++i) dot += py[i] * pdy[i];
      for (std::int64_t i = 0; i < n; ++i) pdx[i] = py[i] * (pdy[i] - dot) / scale;
    }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// conv2d / maxpool2d
// ---------------------------------------------------------------------------

inline std::int64_t conv_out_extent(std::int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Cross-correlation (no kernel flip), zero padding.
// x: [C,H,W], kernels: [F,C,k,k] -> [F,H',W'].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, int stride, int pad) {
  check_finite(x, "conv2d");
  check_finite(kernels, "conv2d");
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3))
    throw ShapeError("conv2d: kernels must be [F,C,k,k], got " + shape_str(kernels.shape()));
  if (stride < 1) throw ValueError("conv2d: stride must be positive");
  if (pad < 0) throw ValueError("conv2d: pad must be non-negative");
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::int64_t F = kernels.dim(0);
  const int k = static_cast<int>(kernels.dim(2));
  if (kernels.dim(1) != C)
    throw ShapeError("conv2d: channel mismatch: input " + shape_str(x.shape()) + " vs kernels " +
                     shape_str(kernels.shape()));
  if (k > H + 2 * pad || k > W + 2 * pad)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                     shape_str({C, H + 2 * pad, W + 2 * pad}));
  const std::int64_t Ho = conv_out_extent(H, k, stride, pad);
  const std::int64_t Wo = conv_out_extent(W, k, stride, pad);
  Tensor<T> y({F, Ho, Wo});
  parallel_for(F, [&](std::int64_t f0, std::int64_t f1) {
    for (std::int64_t f = f0; f < f1; ++f) {
      T* yf = y.data() + f * Ho * Wo;
      for (std::int64_t c = 0; c < C; ++c) {
        const T* xc = x.data() + c * H * W;
        const T* kc = kernels.data() + (f * C + c) * k * k;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          T* yrow = yf + oh * Wo;
          const std::int64_t ih0 = oh * stride - pad;
          for (int kh = 0; kh < k; ++kh) {
            const std::int64_t ih = ih0 + kh;
            if (ih < 0 || ih >= H) continue;
            const T* xrow = xc + ih * W;
            const T* krow = kc + kh * k;
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
              const std::int64_t iw0 = ow * stride - pad;
              const int kw_lo = static_cast<int>(std::max<std::int64_t>(0, -iw0));
              const int kw_hi = static_cast<int>(std::min<std::int64_t>(k - 1, W - 1 - iw0));
              T acc = 0;
              for (int kw = kw_lo; kw <= kw_hi; ++kw) acc += xrow[iw0 + kw] * krow[kw];
              yrow[ow] += acc;
            }
          }
        }
      }
    }
  }, 1);
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> conv2d_vjp(const Tensor<T>& x, const Tensor<T>& kernels,
                                           int stride, int pad, const Tensor<T>& dy) {
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::int64_t F = kernels.dim(0);
  const int k = static_cast<int>(kernels.dim(2));
  const std::int64_t Ho = conv_out_extent(H, k, stride, pad);
  const std::int64_t Wo = conv_out_extent(W, k, stride, pad);
  if (dy.shape() != Shape{F, Ho, Wo})
    throw ShapeError("conv2d_vjp: upstream gradient " + shape_str(dy.shape()) +
                     " does not match output " + shape_str({F, Ho, Wo}));
  Tensor<T> dx(x.shape()), dk(kernels.shape());
  parallel_for(F, [&](std::int64_t f0, std::int64_t f1) {
    for (std::int64_t f = f0; f < f1; ++f) {
      const T* dyf = dy.data() + f * Ho * Wo;
      for (std::int64_t c = 0; c < C; ++c) {
        const T* xc = x.data() + c * H * W;
        T* dkfc = dk.data() + (f * C + c) * k * k;
        for (int kh = 0; kh < k; ++kh)
          for (int kw = 0; kw < k; ++kw) {
            T acc = 0;
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
              const std::int64_t ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xc + ih * W;
              const T* dyrow = dyf + oh * Wo;
              for (std::int64_t ow = 0; ow < Wo; ++ow) {
                const std::int64_t iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= W) continue;
                acc += dyrow[ow] * xrow[iw];
              }
            }
            dkfc[kh * k + kw] = acc;
          }
      }
    }
  }, 1);
  // Scatter per input channel so rows stay single-writer.
  parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      T* dxc = dx.data() + c * H * W;
      for (std::int64_t f = 0; f < F; ++f) {
        const T* dyf = dy.data() + f * Ho * Wo;
        const T* kfc = kernels.data() + (f * C + c) * k * k;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          const T* dyrow = dyf + oh * Wo;
          const std::int64_t ih0 = oh * stride - pad;
          for (int kh = 0; kh < k; ++kh) {
            const std::int64_t ih = ih0 + kh;
            if (ih < 0 || ih >= H) continue;
            T* dxrow = dxc + ih * W;
            const T* krow = kfc + kh * k;
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
              const T g = dyrow[ow];
              const std::int64_t iw0 = ow * stride - pad;
              const int kw_lo = static_cast<int>(std::max<std::int64_t>(0, -iw0));
              const int kw_hi = static_cast<int>(std::min<std::int64_t>(k - 1, W - 1 - iw0));
              for (int kw = kw_lo; kw <= kw_hi; ++kw) dxrow[iw0 + kw] += g * krow[kw];
            }
          }
        }
      }
    }
  }, 1);
  return {std::move(dx), std::move(dk)};
}

// Per-window maximum; padding acts as a -inf sentinel so it never wins.
// pad <= k/2 keeps every window overlapping the input.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride, int pad) {
  check_finite(x, "maxpool2d");
  if (x.rank() != 3)
    throw ShapeError("maxpool2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (k < 1 || stride < 1) throw ValueError("maxpool2d: kernel and stride must be positive");
  if (pad < 0 || pad > k / 2)
    throw ValueError("maxpool2d: pad must be in [0, k/2], got " + std::to_string(pad));
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (k > H + 2 * pad || k > W + 2 * pad)
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds padded input " +
                     shape_str({C, H + 2 * pad, W + 2 * pad}));
  const std::int64_t Ho = conv_out_extent(H, k, stride, pad);
  const std::int64_t Wo = conv_out_extent(W, k, stride, pad);
  Tensor<T> y({C, Ho, Wo});
  parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const T* xc = x.data() + c * H * W;
      T* yc = y.data() + c * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        const std::int64_t ih0 = oh * stride - pad;
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          const std::int64_t iw0 = ow * stride - pad;
          const int kw_lo = static_cast<int>(std::max<std::int64_t>(0, -iw0));
          const int kw_hi = static_cast<int>(std::min<std::int64_t>(k - 1, W - 1 - iw0));
          T best = -std::numeric_limits<T>::infinity();
          for (int kh = 0; kh < k; ++kh) {
            const std::int64_t ih = ih0 + kh;
            if (ih < 0 || ih >= H) continue;
            const T* xrow = xc + ih * W + iw0;
            for (int kw = kw_lo; kw <= kw_hi; ++kw) best = std::max(best, xrow[kw]);
          }
          yc[oh * Wo + ow] = best;
        }
      }
    }
  }, 1);
  return y;
}

// Routes each output gradient to the first argmax of its window.
template <typename T>
Tensor<T> maxpool2d_vjp(const Tensor<T>& x, int k, int stride, int pad, const Tensor<T>& dy) {
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::int64_t Ho = conv_out_extent(H, k, stride, pad);
  const std::int64_t Wo = conv_out_extent(W, k, stride, pad);
  if (dy.shape() != Shape{C, Ho, Wo})
    throw ShapeError("maxpool2d_vjp: upstream gradient " + shape_str(dy.shape()) +
                     " does not match output " + shape_str({C, Ho, Wo}));
  Tensor<T> dx(x.shape());
  parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c)
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t bh = -1, bw = -1;
          for (int kh = 0; kh < k; ++kh) {
            const std::int64_t ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < k; ++kw) {
              const std::int64_t iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= W) continue;
              if (x(c, ih, iw) > best) {
                best = x(c, ih, iw);
                bh = ih;
                bw = iw;
              }
            }
          }
          if (bh >= 0) dx(c, bh, bw) += dy(c, oh, ow);
        }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  check_finite(x, "relu");
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = std::max(x[i], T(0));
  return y;
}

template <typename T>
Tensor<T> relu_vjp(const Tensor<T>& x, const Tensor<T>& dy) {
  if (!x.same_shape(dy))
    throw ShapeError("relu_vjp: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(dy.shape()));
  Tensor<T> dx(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, T c) {
  check_finite(x, "add");
  Tensor<T> y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] += c;
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, T c) {
  check_finite(x, "mul");
  Tensor<T> y = x;
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] *= c;
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  check_finite(x, "add");
  check_finite(y, "add");
  if (!x.same_shape(y))
    throw ShapeError("add: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  Tensor<T> out = x;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  check_finite(x, "mul");
  check_finite(y, "mul");
  if (!x.same_shape(y))
    throw ShapeError("mul: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  Tensor<T> out = x;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return out;
}

// Gradients of the binary elementwise ops; the scalar variants pass dy
// through (add) or scale it (mul).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> add_vjp(const Tensor<T>& x, const Tensor<T>& y,
                                        const Tensor<T>& dy) {
  if (!x.same_shape(y) || !x.same_shape(dy))
    throw ShapeError("add_vjp: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(dy.shape()));
  return {dy, dy};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mul_vjp(const Tensor<T>& x, const Tensor<T>& y,
                                        const Tensor<T>& dy) {
  if (!x.same_shape(y) || !x.same_shape(dy))
    throw ShapeError("mul_vjp: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(dy.shape()));
  return {mul(dy, y), mul(dy, x)};
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], evaluated in log space.
template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  check_finite(logits, "cross_entropy");
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be [batch, classes], got " +
                     shape_str(logits.shape()));
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b)
    throw ShapeError("cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(b));
  if (b == 0) throw ValueError("cross_entropy: empty batch");
  T loss = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c)
      throw ValueError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                       std::to_string(c) + " classes");
    const T* row = logits.data() + i * c;
    T mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    loss += mx + std::log(z) - row[label];
  }
  return loss / static_cast<T>(b);
}

// dLoss/dLogits = (softmax - onehot) / batch.
template <typename T>
Tensor<T> cross_entropy_vjp(const Tensor<T>& logits, std::span<const int> labels) {
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  Tensor<T> dl(logits.shape());
  for (std::int64_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * c;
    T* out = dl.data() + i * c;
    T mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::int64_t j = 0; j < c; ++j) out[j] = std::exp(row[j] - mx) / z / static_cast<T>(b);
    out[labels[static_cast<std::size_t>(i)]] -= T(1) / static_cast<T>(b);
  }
  return dl;
}

// ---------------------------------------------------------------------------
// small reductions used throughout
// ---------------------------------------------------------------------------

template <typename T>
T sum(const Tensor<T>& t) {
  T s = 0;
  for (std::int64_t i = 0; i < t.size(); ++i) s += t[i];
  return s;
}

template <typename T>
T max_abs(const Tensor<T>& t) {
  T m = 0;
  for (std::int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  T m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vana
