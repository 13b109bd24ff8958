#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "vana/rng.hpp"
#include "vana/tensor.hpp"

namespace vana {

struct ConvBlockSpec {
  int filters = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

struct PoolSpec {
  int kernel = 3;
  int stride = 2;
  int pad = 1;
};

// Overlapping conv -> relu -> maxpool stack. The last block's filter count is
// the transformer embedding dimension. Any input that survives every stage is
// accepted, so image sizes and aspect ratios are unconstrained.
struct TokenizerConfig {
  std::vector<ConvBlockSpec> blocks;
  PoolSpec pool;

  int embed_dim() const { return blocks.empty() ? 0 : blocks.back().filters; }

  bool fits(std::int64_t h, std::int64_t w) const {
    for (const auto& b : blocks) {
      if (b.kernel > h + 2 * b.pad || b.kernel > w + 2 * b.pad) return false;
      h = conv_out_extent(h, b.kernel, b.stride, b.pad);
      w = conv_out_extent(w, b.kernel, b.stride, b.pad);
      if (pool.kernel > h + 2 * pool.pad || pool.kernel > w + 2 * pool.pad) return false;
      h = conv_out_extent(h, pool.kernel, pool.stride, pool.pad);
      w = conv_out_extent(w, pool.kernel, pool.stride, pool.pad);
      if (h < 1 || w < 1) return false;
    }
    return !blocks.empty();
  }

  // Token-grid extents for an accepted input, by the composed floor formulas.
  std::pair<std::int64_t, std::int64_t> grid_shape(std::int64_t h, std::int64_t w) const {
    for (const auto& b : blocks) {
      h = conv_out_extent(h, b.kernel, b.stride, b.pad);
      w = conv_out_extent(w, b.kernel, b.stride, b.pad);
      h = conv_out_extent(h, pool.kernel, pool.stride, pool.pad);
      w = conv_out_extent(w, pool.kernel, pool.stride, pool.pad);
    }
    return {h, w};
  }

  // Smallest square input the stack accepts.
  int min_extent() const {
    for (int e = 1; e <= 4096; ++e)
      if (fits(e, e)) return e;
    return -1;
  }
};

template <typename T>
struct TokenizerWeights {
  std::vector<Tensor<T>> kernels;  // per block: [filters, in_channels, k, k]
};

template <typename T>
TokenizerWeights<T> init_tokenizer_weights(const TokenizerConfig& cfg, int in_channels, Rng& rng,
                                           T sigma) {
  TokenizerWeights<T> w;
  int c = in_channels;
  for (const auto& b : cfg.blocks) {
    w.kernels.push_back(randn<T>({b.filters, c, b.kernel, b.kernel}, rng, sigma));
    c = b.filters;
  }
  return w;
}

// image: [C,H,W] -> tokens [n, d] with n = H'*W' flattened row-major.
template <typename T>
Tensor<T> conv_tokenize(const Tensor<T>& image, const TokenizerConfig& cfg,
                        const TokenizerWeights<T>& weights) {
  if (image.rank() != 3)
    throw ShapeError("conv_tokenize: image must be [C,H,W], got " + shape_str(image.shape()));
  if (cfg.blocks.empty()) throw ValueError("conv_tokenize: tokenizer has no blocks");
  if (weights.kernels.size() != cfg.blocks.size())
    throw ShapeError("conv_tokenize: " + std::to_string(weights.kernels.size()) +
                     " kernel tensors for " + std::to_string(cfg.blocks.size()) + " blocks");
  if (!cfg.fits(image.dim(1), image.dim(2)))
    throw ShapeError("conv_tokenize: image " + shape_str(image.shape()) +
                     " smaller than the configured minimum (" +
                     std::to_string(cfg.min_extent()) + ")");
  Tensor<T> x = image;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const auto& b = cfg.blocks[i];
    x = conv2d(x, weights.kernels[i], b.stride, b.pad);
    x = relu(x);
    x = maxpool2d(x, cfg.pool.kernel, cfg.pool.stride, cfg.pool.pad);
  }
  const std::int64_t d = x.dim(0), n = x.dim(1) * x.dim(2);
  // [d,H',W'] -> [n,d] row-major over the spatial grid.
  return x.reshape({d, n}).transpose({1, 0});
}

template <typename T>
struct TokenizeGrads {
  Tensor<T> dimage;
  std::vector<Tensor<T>> dkernels;
};

// Recomputes the stage activations and backpropagates dtokens ([n, d]).
template <typename T>
TokenizeGrads<T> conv_tokenize_vjp(const Tensor<T>& image, const TokenizerConfig& cfg,
                                   const TokenizerWeights<T>& weights, const Tensor<T>& dtokens) {
  std::vector<Tensor<T>> conv_in;     // input to each conv
  std::vector<Tensor<T>> conv_out;    // pre-relu conv output
  std::vector<Tensor<T>> pool_in;     // post-relu
  Tensor<T> x = image;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const auto& b = cfg.blocks[i];
    conv_in.push_back(x);
    Tensor<T> y = conv2d(x, weights.kernels[i], b.stride, b.pad);
    conv_out.push_back(y);
    Tensor<T> r = relu(y);
    pool_in.push_back(r);
    x = maxpool2d(r, cfg.pool.kernel, cfg.pool.stride, cfg.pool.pad);
  }
  const std::int64_t d = x.dim(0), n = x.dim(1) * x.dim(2);
  if (dtokens.shape() != Shape{n, d})
    throw ShapeError("conv_tokenize_vjp: upstream gradient " + shape_str(dtokens.shape()) +
                     " does not match tokens " + shape_str({n, d}));

  Tensor<T> dx = dtokens.transpose({1, 0}).reshape(x.shape());
  TokenizeGrads<T> grads;
  grads.dkernels.resize(cfg.blocks.size());
  for (std::size_t i = cfg.blocks.size(); i-- > 0;) {
    const auto& b = cfg.blocks[i];
    dx = maxpool2d_vjp(pool_in[i], cfg.pool.kernel, cfg.pool.stride, cfg.pool.pad, dx);
    dx = relu_vjp(conv_out[i], dx);
    auto [dxi, dki] = conv2d_vjp(conv_in[i], weights.kernels[i], b.stride, b.pad, dx);
    grads.dkernels[i] = std::move(dki);
    dx = std::move(dxi);
  }
  grads.dimage = std::move(dx);
  return grads;
}

// Non-overlapping baseline: the image is evenly divided into patches of
// extent `patch` per axis, each flattened and linearly projected.
// projection: [C*patch*patch, d].
template <typename T>
Tensor<T> patch_tokenize(const Tensor<T>& image, int patch, const Tensor<T>& projection) {
  if (image.rank() != 3)
    throw ShapeError("patch_tokenize: image must be [C,H,W], got " + shape_str(image.shape()));
  if (patch < 1) throw ValueError("patch_tokenize: patch must be positive");
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H % patch != 0 || W % patch != 0)
    throw ShapeError("patch_tokenize: image " + shape_str(image.shape()) +
                     " not divisible into " + std::to_string(patch) + "-pixel patches");
  const std::int64_t flat = C * patch * patch;
  if (projection.rank() != 2 || projection.dim(0) != flat)
    throw ShapeError("patch_tokenize: projection " + shape_str(projection.shape()) +
                     " does not accept flattened patches of " + std::to_string(flat));
  const std::int64_t gh = H / patch, gw = W / patch;
  Tensor<T> patches({gh * gw, flat});
  for (std::int64_t ph = 0; ph < gh; ++ph)
    for (std::int64_t pw = 0; pw < gw; ++pw) {
      T* row = patches.data() + (ph * gw + pw) * flat;
      std::int64_t o = 0;
      for (std::int64_t c = 0; c < C; ++c)
        for (int r = 0; r < patch; ++r)
          for (int col = 0; col < patch; ++col)
            row[o++] = image(c, ph * patch + r, pw * patch + col);
    }
  return matmul(patches, projection);
}

template <typename T>
struct PatchTokenizeGrads {
  Tensor<T> dimage;
  Tensor<T> dprojection;
};

template <typename T>
PatchTokenizeGrads<T> patch_tokenize_vjp(const Tensor<T>& image, int patch,
                                         const Tensor<T>& projection, const Tensor<T>& dtokens) {
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::int64_t flat = C * patch * patch;
  const std::int64_t gh = H / patch, gw = W / patch;
  if (dtokens.shape() != Shape{gh * gw, projection.dim(1)})
    throw ShapeError("patch_tokenize_vjp: upstream gradient " + shape_str(dtokens.shape()) +
                     " does not match tokens " + shape_str({gh * gw, projection.dim(1)}));
  Tensor<T> patches({gh * gw, flat});
  for (std::int64_t ph = 0; ph < gh; ++ph)
    for (std::int64_t pw = 0; pw < gw; ++pw) {
      T* row = patches.data() + (ph * gw + pw) * flat;
      std::int64_t o = 0;
      for (std::int64_t c = 0; c < C; ++c)
        for (int r = 0; r < patch; ++r)
          for (int col = 0; col < patch; ++col)
            row[o++] = image(c, ph * patch + r, pw * patch + col);
    }
  auto [dpatches, dproj] = matmul_vjp(patches, projection, dtokens);
  PatchTokenizeGrads<T> grads;
  grads.dprojection = std::move(dproj);
  grads.dimage = Tensor<T>(image.shape());
  for (std::int64_t ph = 0; ph < gh; ++ph)
    for (std::int64_t pw = 0; pw < gw; ++pw) {
      const T* row = dpatches.data() + (ph * gw + pw) * flat;
      std::int64_t o = 0;
      for (std::int64_t c = 0; c < C; ++c)
        for (int r = 0; r < patch; ++r)
          for (int col = 0; col < patch; ++col)
            grads.dimage(c, ph * patch + r, pw * patch + col) = row[o++];
    }
  return grads;
}

// Learned convex pooling of a token sequence: scores s = x·g + offset are
// softmaxed over the sequence and used as weights. x: [b,n,d] -> [b,d].
template <typename T>
Tensor<T> seqpool(const Tensor<T>& x, const Tensor<T>& g, T offset) {
  check_finite(x, "seqpool");
  if (x.rank() != 3)
    throw ShapeError("seqpool: input must be [b,n,d], got " + shape_str(x.shape()));
  const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (n < 1) throw ValueError("seqpool: empty sequence");
  if (g.shape() != Shape{d})
    throw ShapeError("seqpool: scorer " + shape_str(g.shape()) + " does not match token dim " +
                     std::to_string(d));
  Tensor<T> out({b, d});
  std::vector<T> w(static_cast<std::size_t>(n));
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const T* px = x.data() + bi * n * d;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t i = 0; i < n; ++i) {
      T s = offset;
      for (std::int64_t c = 0; c < d; ++c) s += px[i * d + c] * g[c];
      w[static_cast<std::size_t>(i)] = s;
      mx = std::max(mx, s);
    }
    T z = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      w[static_cast<std::size_t>(i)] = std::exp(w[static_cast<std::size_t>(i)] - mx);
      z += w[static_cast<std::size_t>(i)];
    }
    T* po = out.data() + bi * d;
    for (std::int64_t i = 0; i < n; ++i) {
      const T wi = w[static_cast<std::size_t>(i)] / z;
      for (std::int64_t c = 0; c < d; ++c) po[c] += wi * px[i * d + c];
    }
  }
  return out;
}

// The convex weights seqpool applies, [b, n]; rows sum to 1.
template <typename T>
Tensor<T> seqpool_weights(const Tensor<T>& x, const Tensor<T>& g, T offset) {
  if (x.rank() != 3)
    throw ShapeError("seqpool_weights: input must be [b,n,d], got " + shape_str(x.shape()));
  const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (n < 1) throw ValueError("seqpool_weights: empty sequence");
  Tensor<T> w({b, n});
  for (std::int64_t bi = 0; bi < b; ++bi) {
    T* pw = w.data() + bi * n;
    const T* px = x.data() + bi * n * d;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t i = 0; i < n; ++i) {
      T s = offset;
      for (std::int64_t c = 0; c < d; ++c) s += px[i * d + c] * g[c];
      pw[i] = s;
      mx = std::max(mx, s);
    }
    T z = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      pw[i] = std::exp(pw[i] - mx);
      z += pw[i];
    }
    for (std::int64_t i = 0; i < n; ++i) pw[i] /= z;
  }
  return w;
}

template <typename T>
struct SeqpoolGrads {
  Tensor<T> dx;
  Tensor<T> dg;
  T doffset = 0;
};

template <typename T>
SeqpoolGrads<T> seqpool_vjp(const Tensor<T>& x, const Tensor<T>& g, T offset,
                            const Tensor<T>& dy) {
  const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (dy.shape() != Shape{b, d})
    throw ShapeError("seqpool_vjp: upstream gradient " + shape_str(dy.shape()) +
                     " does not match output " + shape_str({b, d}));
  SeqpoolGrads<T> grads;
  grads.dx = Tensor<T>(x.shape());
  grads.dg = Tensor<T>(g.shape());
  std::vector<T> w(static_cast<std::size_t>(n)), dw(static_cast<std::size_t>(n));
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const T* px = x.data() + bi * n * d;
    const T* pdy = dy.data() + bi * d;
    T* pdx = grads.dx.data() + bi * n * d;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t i = 0; i < n; ++i) {
      T s = offset;
      for (std::int64_t c = 0; c < d; ++c) s += px[i * d + c] * g[c];
      w[static_cast<std::size_t>(i)] = s;
      mx = std::max(mx, s);
    }
    T z = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      w[static_cast<std::size_t>(i)] = std::exp(w[static_cast<std::size_t>(i)] - mx);
      z += w[static_cast<std::size_t>(i)];
    }
    for (std::int64_t i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] /= z;

    // dOut/dw_i = x_i; dOut/dx_i += w_i dY; softmax backward onto scores.
    T dot = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      T dwi = 0;
      for (std::int64_t c = 0; c < d; ++c) {
        dwi += pdy[c] * px[i * d + c];
        pdx[i * d + c] += w[static_cast<std::size_t>(i)] * pdy[c];
      }
      dw[static_cast<std::size_t>(i)] = dwi;
      dot += w[static_cast<std::size_t>(i)] * dwi;
    }
    for (std::int64_t i = 0; i < n; ++i) {
      const T ds = w[static_cast<std::size_t>(i)] * (dw[static_cast<std::size_t>(i)] - dot);
      grads.doffset += ds;
      for (std::int64_t c = 0; c < d; ++c) {
        grads.dg[c] += ds * px[i * d + c];
        pdx[i * d + c] += ds * g[c];
      }
    }
  }
  return grads;
}

enum class PositionalKind { None, Sinusoidal, Learnable };

// Positional table [n, d]. Sinusoidal entries depend only on (position, dim),
// so a shorter table is always a prefix of a longer one. Learnable tables are
// seeded N(0, 0.02) draws returned as trainable state.
template <typename T>
Tensor<T> positional_embedding(PositionalKind kind, std::int64_t n, int d, Rng* rng = nullptr) {
  if (n < 0 || d < 1) throw ValueError("positional_embedding: bad table extents");
  switch (kind) {
    case PositionalKind::None:
      return Tensor<T>({n, d});
    case PositionalKind::Sinusoidal: {
      if (d % 2 != 0)
        throw ValueError("positional_embedding: sinusoidal tables need even dim, got " +
                         std::to_string(d));
      Tensor<T> pe({n, d});
      for (std::int64_t p = 0; p < n; ++p)
        for (int i = 0; i < d / 2; ++i) {
          const T rate = std::pow(T(10000), T(2 * i) / static_cast<T>(d));
          pe(p, 2 * i) = std::sin(static_cast<T>(p) / rate);
          pe(p, 2 * i + 1) = std::cos(static_cast<T>(p) / rate);
        }
      return pe;
    }
    case PositionalKind::Learnable: {
      if (rng == nullptr)
        throw ValueError("positional_embedding: learnable tables need a seeded generator");
      return randn<T>({n, d}, *rng, T(0.02));
    }
  }
  throw ValueError("positional_embedding: unknown kind");
}

}  // namespace vana
