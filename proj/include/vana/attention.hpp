#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vana/nbhd.hpp"
#include "vana/rng.hpp"
#include "vana/tensor.hpp"

namespace vana {

// Ordered partition of a layer's heads into groups, each with its own
// receptive field. Concatenation order follows partition order.
struct HeadGroup {
  int heads = 1;
  NeighborhoodSpec spec;
};

struct HydraConfig {
  std::vector<HeadGroup> groups;

  int total_heads() const {
    int n = 0;
    for (const auto& g : groups) n += g.heads;
    return n;
  }
};

// Parses the head-group grammar "KxD:HEADS[,KxD:HEADS...]", e.g. "7x1:2,7x32:2".
HydraConfig parse_hydra_spec(const std::string& text);
std::string hydra_spec_str(const HydraConfig& config);

// Projections plus one relative positional bias table per head. Bias tables
// are [2k-1, 2k-1], indexed by the per-axis rank offset between key and query
// inside the dilation class.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;        // each [d_model, d_model]
  std::vector<Tensor<T>> bias;     // per head

  int d_model() const { return wq.rank() == 2 ? static_cast<int>(wq.dim(0)) : 0; }
};

template <typename T>
struct AttentionOutput {
  Tensor<T> y;
  // Saved attention probabilities, one tensor per head: [H, W, k*k] for
  // neighborhood variants, [n, n] for dense. This is the only forward state
  // the backward pass consumes; Q/K/V are recomputed from the inputs.
  std::vector<Tensor<T>> probs;
};

template <typename T>
struct AttentionGrads {
  Tensor<T> dx, dwq, dwk, dwv, dwo;
  std::vector<Tensor<T>> dbias;
};

inline std::int64_t bias_extent(int kernel) { return 2 * static_cast<std::int64_t>(kernel) - 1; }

template <typename T>
Tensor<T> zero_bias_table(int kernel) {
  return Tensor<T>({bias_extent(kernel), bias_extent(kernel)});
}

template <typename T>
std::vector<Tensor<T>> zero_bias_tables(const HydraConfig& config) {
  std::vector<Tensor<T>> tables;
  for (const auto& g : config.groups)
    for (int h = 0; h < g.heads; ++h) tables.push_back(zero_bias_table<T>(g.spec.kernel));
  return tables;
}

template <typename T>
AttentionParams<T> init_attention_params(int d_model, const HydraConfig& config, Rng& rng,
                                         T w_sigma, T b_sigma = T(0)) {
  AttentionParams<T> p;
  p.wq = randn<T>({d_model, d_model}, rng, w_sigma);
  p.wk = randn<T>({d_model, d_model}, rng, w_sigma);
  p.wv = randn<T>({d_model, d_model}, rng, w_sigma);
  p.wo = randn<T>({d_model, d_model}, rng, w_sigma);
  for (const auto& g : config.groups)
    for (int h = 0; h < g.heads; ++h) {
      p.bias.push_back(b_sigma > T(0)
                           ? randn<T>({bias_extent(g.spec.kernel), bias_extent(g.spec.kernel)},
                                      rng, b_sigma)
                           : zero_bias_table<T>(g.spec.kernel));
    }
  return p;
}

namespace detail {

// Flat token index and bias-table offset of each (query, window slot) pair.
struct GroupWindows {
  std::vector<std::int32_t> neighbor;     // [H*W * k*k]
  std::vector<std::int32_t> bias_offset;  // [H*W * k*k]
};

// Runs body with the head dimension as a compile-time constant for the
// common small sizes, so the per-channel loops unroll; 0 keeps it runtime.
template <typename Body>
void dispatch_head_dim(int d_head, Body&& body) {
  switch (d_head) {
    case 1: body(std::integral_constant<int, 1>{}); break;
    case 2: body(std::integral_constant<int, 2>{}); break;
    case 4: body(std::integral_constant<int, 4>{}); break;
    case 8: body(std::integral_constant<int, 8>{}); break;
    default: body(std::integral_constant<int, 0>{}); break;
  }
}

inline GroupWindows build_group_windows(int h, int w, const NeighborhoodSpec& spec) {
  const AxisWindows rows = build_axis_windows(h, spec);
  const AxisWindows cols = build_axis_windows(w, spec);
  const int kk = spec.kernel;
  const std::int64_t win = static_cast<std::int64_t>(kk) * kk;
  GroupWindows gw;
  gw.neighbor.resize(static_cast<std::size_t>(h) * w * win);
  gw.bias_offset.resize(gw.neighbor.size());
  const std::int64_t be = bias_extent(kk);
  std::int64_t slot = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int jr = 0; jr < kk; ++jr) {
        const std::int64_t nr = rows.index(r, jr);
        const std::int64_t br = rows.rel(r, jr) + kk - 1;
        for (int jc = 0; jc < kk; ++jc, ++slot) {
          gw.neighbor[static_cast<std::size_t>(slot)] =
              static_cast<std::int32_t>(nr * w + cols.index(c, jc));
          gw.bias_offset[static_cast<std::size_t>(slot)] =
              static_cast<std::int32_t>(br * be + cols.rel(c, jc) + kk - 1);
        }
      }
  return gw;
}

template <typename T>
void validate_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                        const HydraConfig& config, std::int64_t h, std::int64_t w) {
  const int d_model = static_cast<int>(x.dim(x.rank() - 1));
  const int heads = config.total_heads();
  if (config.groups.empty() || heads < 1)
    throw ShapeError("attention: head partition is empty");
  if (d_model % heads != 0)
    throw ShapeError("attention: d_model " + std::to_string(d_model) +
                     " not divisible by " + std::to_string(heads) + " heads");
  for (const auto& wmat : {&params.wq, &params.wk, &params.wv, &params.wo})
    if ((*wmat).shape() != Shape{d_model, d_model})
      throw ShapeError("attention: projection shape " + shape_str((*wmat).shape()) +
                       " does not match d_model " + std::to_string(d_model));
  if (static_cast<int>(params.bias.size()) != heads)
    throw ShapeError("attention: expected " + std::to_string(heads) + " bias tables, got " +
                     std::to_string(params.bias.size()));
  int head = 0;
  for (const auto& g : config.groups) {
    if (g.heads < 1) throw ShapeError("attention: head group with no heads");
    g.spec.require_valid(h);
    g.spec.require_valid(w);
    const std::int64_t be = bias_extent(g.spec.kernel);
    for (int i = 0; i < g.heads; ++i, ++head)
      if (params.bias[static_cast<std::size_t>(head)].shape() != Shape{be, be})
        throw ShapeError("attention: bias table for head " + std::to_string(head) + " is " +
                         shape_str(params.bias[static_cast<std::size_t>(head)].shape()) +
                         ", expected " + shape_str({be, be}) + " for kernel " +
                         std::to_string(g.spec.kernel));
  }
}

}  // namespace detail

// 2-D neighborhood attention with per-group receptive fields.
// x: [H, W, d_model]. Per head h in a group with spec (k, d): for each query
// position, logits over its k x k dilated window are Q·K + B(rel offset),
// softmaxed at temperature sqrt(d_h) and applied to the gathered values.
// Heads are concatenated in partition order and projected by W_O.
template <typename T>
AttentionOutput<T> hydra_forward_2d(const Tensor<T>& x, const AttentionParams<T>& params,
                                    const HydraConfig& config) {
  check_finite(x, "hydra_forward_2d");
  if (x.rank() != 3)
    throw ShapeError("hydra_forward_2d: input must be [H,W,d_model], got " +
                     shape_str(x.shape()));
  const std::int64_t H = x.dim(0), W = x.dim(1);
  const int d_model = static_cast<int>(x.dim(2));
  detail::validate_attention(x, params, config, H, W);
  const int heads = config.total_heads();
  const int d_head = d_model / heads;
  const std::int64_t n = H * W;

  const Tensor<T> flat = x.reshape({n, d_model});
  const Tensor<T> q = matmul(flat, params.wq);
  const Tensor<T> k = matmul(flat, params.wk);
  const Tensor<T> v = matmul(flat, params.wv);

  Tensor<T> concat({n, d_model});
  AttentionOutput<T> out;
  out.probs.resize(static_cast<std::size_t>(heads));

  const T scale = std::sqrt(static_cast<T>(d_head));
  int head_base = 0;
  for (const auto& group : config.groups) {
    const int kk = group.spec.kernel;
    const std::int64_t win = static_cast<std::int64_t>(kk) * kk;
    // Window geometry is identical for every head in the group; tabulate the
    // gathered token index and bias-table offset per (query, slot) once.
    const detail::GroupWindows gw =
        detail::build_group_windows(static_cast<int>(H), static_cast<int>(W), group.spec);
    for (int hg = 0; hg < group.heads; ++hg) {
      const int head = head_base + hg;
      const int off = head * d_head;
      const Tensor<T>& bias = params.bias[static_cast<std::size_t>(head)];
      Tensor<T>& probs = out.probs[static_cast<std::size_t>(head)];
      probs = Tensor<T>({H, W, win});
      detail::dispatch_head_dim(d_head, [&](auto dh_tag) {
        constexpr int DH = decltype(dh_tag)::value;
        const int dh = DH ? DH : d_head;
        parallel_for(n, [&](std::int64_t q0, std::int64_t q1) {
          std::vector<T> logits(static_cast<std::size_t>(win));
          for (std::int64_t qi = q0; qi < q1; ++qi) {
            const std::int32_t* nb = gw.neighbor.data() + qi * win;
            const std::int32_t* bo = gw.bias_offset.data() + qi * win;
            const T* pq = q.data() + qi * d_model + off;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::int64_t j = 0; j < win; ++j) {
              const T* pk = k.data() + static_cast<std::int64_t>(nb[j]) * d_model + off;
              T dot = 0;
              for (int ch = 0; ch < dh; ++ch) dot += pq[ch] * pk[ch];
              dot += bias[bo[j]];
              logits[static_cast<std::size_t>(j)] = dot;
              mx = std::max(mx, dot);
            }
            T z = 0;
            T* pp = probs.data() + qi * win;
            for (std::int64_t j = 0; j < win; ++j) {
              pp[j] = std::exp((logits[static_cast<std::size_t>(j)] - mx) / scale);
              z += pp[j];
            }
            T* po = concat.data() + qi * d_model + off;
            for (std::int64_t j = 0; j < win; ++j) {
              pp[j] /= z;
              const T* pv = v.data() + static_cast<std::int64_t>(nb[j]) * d_model + off;
              for (int ch = 0; ch < dh; ++ch) po[ch] += pp[j] * pv[ch];
            }
          }
        }, 8);
      });
    }
    head_base += group.heads;
  }
  out.y = matmul(concat, params.wo).reshape({H, W, d_model});
  return out;
}

template <typename T>
AttentionOutput<T> na_forward_2d(const Tensor<T>& x, const AttentionParams<T>& params, int heads,
                                 const NeighborhoodSpec& spec) {
  return hydra_forward_2d(x, params, HydraConfig{{{heads, spec}}});
}

// Dense multi-head attention on a flat sequence x: [n, d_model]; no bias
// tables. This is the reference the windowed variants generalize to.
template <typename T>
AttentionOutput<T> mha_dense(const Tensor<T>& x, const AttentionParams<T>& params, int heads) {
  check_finite(x, "mha_dense");
  if (x.rank() != 2)
    throw ShapeError("mha_dense: input must be [n,d_model], got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0);
  const int d_model = static_cast<int>(x.dim(1));
  if (heads < 1 || d_model % heads != 0)
    throw ShapeError("mha_dense: d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  const int d_head = d_model / heads;
  const T scale = std::sqrt(static_cast<T>(d_head));

  const Tensor<T> q = matmul(x, params.wq);
  const Tensor<T> k = matmul(x, params.wk);
  const Tensor<T> v = matmul(x, params.wv);

  Tensor<T> concat({n, d_model});
  AttentionOutput<T> out;
  out.probs.resize(static_cast<std::size_t>(heads));
  for (int head = 0; head < heads; ++head) {
    const int off = head * d_head;
    Tensor<T>& probs = out.probs[static_cast<std::size_t>(head)];
    probs = Tensor<T>({n, n});
    parallel_for(n, [&](std::int64_t r0, std::int64_t r1) {
      for (std::int64_t i = r0; i < r1; ++i) {
        const T* pq = q.data() + i * d_model + off;
        T* pp = probs.data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < n; ++j) {
          const T* pk = k.data() + j * d_model + off;
          T dot = 0;
          for (int ch = 0; ch < d_head; ++ch) dot += pq[ch] * pk[ch];
          pp[j] = dot;
          mx = std::max(mx, dot);
        }
        T z = 0;
        for (std::int64_t j = 0; j < n; ++j) {
          pp[j] = std::exp((pp[j] - mx) / scale);
          z += pp[j];
        }
        T* po = concat.data() + i * d_model + off;
        for (std::int64_t j = 0; j < n; ++j) {
          pp[j] /= z;
          const T* pv = v.data() + j * d_model + off;
          for (int ch = 0; ch < d_head; ++ch) po[ch] += pp[j] * pv[ch];
        }
      }
    }, 1);
  }
  out.y = matmul(concat, params.wo);
  return out;
}

// Exact reverse-mode gradients for hydra_forward_2d (and, via the degenerate
// single-partition config, na_forward_2d). `probs` must come from the
// matching forward call; Q/K/V and the pre-projection concat are recomputed.
template <typename T>
AttentionGrads<T> hydra_vjp(const Tensor<T>& x, const AttentionParams<T>& params,
                            const HydraConfig& config, const std::vector<Tensor<T>>& probs,
                            const Tensor<T>& dy) {
  const std::int64_t H = x.dim(0), W = x.dim(1);
  const int d_model = static_cast<int>(x.dim(2));
  detail::validate_attention(x, params, config, H, W);
  if (!dy.same_shape(x))
    throw ShapeError("hydra_vjp: upstream gradient " + shape_str(dy.shape()) +
                     " does not match output " + shape_str(x.shape()));
  const int heads = config.total_heads();
  if (static_cast<int>(probs.size()) != heads)
    throw ShapeError("hydra_vjp: saved state has " + std::to_string(probs.size()) +
                     " heads, config has " + std::to_string(heads));
  const int d_head = d_model / heads;
  const std::int64_t n = H * W;
  const T scale = std::sqrt(static_cast<T>(d_head));

  const Tensor<T> flat = x.reshape({n, d_model});
  const Tensor<T> q = matmul(flat, params.wq);
  const Tensor<T> k = matmul(flat, params.wk);
  const Tensor<T> v = matmul(flat, params.wv);

  // Rebuild the concatenated head outputs for dW_O.
  Tensor<T> concat({n, d_model});
  Tensor<T> dq({n, d_model}), dk({n, d_model}), dv({n, d_model});
  AttentionGrads<T> grads;
  grads.dbias.resize(static_cast<std::size_t>(heads));

  const Tensor<T> dflat = dy.reshape({n, d_model});
  const Tensor<T> dconcat = matmul_nt(dflat, params.wo);

  struct HeadCtx {
    const HeadGroup* group;
    const detail::GroupWindows* windows;
    int head;
  };
  std::vector<detail::GroupWindows> group_windows;
  group_windows.reserve(config.groups.size());
  std::vector<HeadCtx> ctx;
  for (const auto& group : config.groups) {
    group_windows.push_back(
        detail::build_group_windows(static_cast<int>(H), static_cast<int>(W), group.spec));
    for (int hg = 0; hg < group.heads; ++hg)
      ctx.push_back({&group, &group_windows.back(), static_cast<int>(ctx.size())});
  }

  for (const auto& hc : ctx) {
    const int kk = hc.group->spec.kernel;
    const std::int64_t win = static_cast<std::int64_t>(kk) * kk;
    const Tensor<T>& p = probs[static_cast<std::size_t>(hc.head)];
    if (p.shape() != Shape{H, W, win})
      throw ShapeError("hydra_vjp: saved probabilities for head " + std::to_string(hc.head) +
                       " are " + shape_str(p.shape()) + ", expected " +
                       shape_str({H, W, win}));
  }

  // Heads write disjoint channel slices of concat, so this is safe in
  // parallel; scatter-adds into dk/dv/dbias stay within the head's slice.
  parallel_for(heads, [&](std::int64_t h0, std::int64_t h1) {
    for (std::int64_t hi = h0; hi < h1; ++hi) {
      const HeadCtx& hc = ctx[static_cast<std::size_t>(hi)];
      const int kk = hc.group->spec.kernel;
      const std::int64_t win = static_cast<std::int64_t>(kk) * kk;
      const int off = hc.head * d_head;
      const Tensor<T>& p = probs[static_cast<std::size_t>(hc.head)];
      Tensor<T>& db = grads.dbias[static_cast<std::size_t>(hc.head)];
      db = zero_bias_table<T>(kk);

      detail::dispatch_head_dim(d_head, [&](auto dh_tag) {
        constexpr int DH = decltype(dh_tag)::value;
        const int dh = DH ? DH : d_head;
        std::vector<T> dp(static_cast<std::size_t>(win));
        for (std::int64_t qi = 0; qi < n; ++qi) {
          const std::int32_t* nb = hc.windows->neighbor.data() + qi * win;
          const std::int32_t* bo = hc.windows->bias_offset.data() + qi * win;
          const T* pp = p.data() + qi * win;
          const T* pdo = dconcat.data() + qi * d_model + off;
          T* pco = concat.data() + qi * d_model + off;

          // Recompute this head's output slice and dP in one sweep.
          T pdot = 0;
          for (std::int64_t j = 0; j < win; ++j) {
            const T* pv = v.data() + static_cast<std::int64_t>(nb[j]) * d_model + off;
            T d = 0;
            for (int ch = 0; ch < dh; ++ch) {
              pco[ch] += pp[j] * pv[ch];
              d += pdo[ch] * pv[ch];
            }
            dp[static_cast<std::size_t>(j)] = d;
            pdot += pp[j] * d;
          }
          const T* pq = q.data() + qi * d_model + off;
          T* pdq = dq.data() + qi * d_model + off;
          for (std::int64_t j = 0; j < win; ++j) {
            const T da = pp[j] * (dp[static_cast<std::size_t>(j)] - pdot) / scale;
            db[bo[j]] += da;
            const std::int64_t ni = nb[j];
            const T* pk = k.data() + ni * d_model + off;
            T* pdk = dk.data() + ni * d_model + off;
            T* pdv = dv.data() + ni * d_model + off;
            for (int ch = 0; ch < dh; ++ch) {
              pdq[ch] += da * pk[ch];
              pdk[ch] += da * pq[ch];
              pdv[ch] += pp[j] * pdo[ch];
            }
          }
        }
      });
    }
  }, 1);

  grads.dwo = matmul_tn(concat, dflat);
  grads.dwq = matmul_tn(flat, dq);
  grads.dwk = matmul_tn(flat, dk);
  grads.dwv = matmul_tn(flat, dv);
  Tensor<T> dxf = matmul_nt(dq, params.wq);
  dxf = add(dxf, matmul_nt(dk, params.wk));
  dxf = add(dxf, matmul_nt(dv, params.wv));
  grads.dx = dxf.reshape(x.shape());
  return grads;
}

template <typename T>
AttentionGrads<T> na_vjp(const Tensor<T>& x, const AttentionParams<T>& params, int heads,
                         const NeighborhoodSpec& spec, const std::vector<Tensor<T>>& probs,
                         const Tensor<T>& dy) {
  return hydra_vjp(x, params, HydraConfig{{{heads, spec}}}, probs, dy);
}

// Reverse-mode gradients for mha_dense. x: [n, d_model].
template <typename T>
AttentionGrads<T> mha_dense_vjp(const Tensor<T>& x, const AttentionParams<T>& params, int heads,
                                const std::vector<Tensor<T>>& probs, const Tensor<T>& dy) {
  const std::int64_t n = x.dim(0);
  const int d_model = static_cast<int>(x.dim(1));
  if (heads < 1 || d_model % heads != 0)
    throw ShapeError("mha_dense_vjp: d_model not divisible by heads");
  if (!dy.same_shape(x))
    throw ShapeError("mha_dense_vjp: upstream gradient " + shape_str(dy.shape()) +
                     " does not match output " + shape_str(x.shape()));
  if (static_cast<int>(probs.size()) != heads)
    throw ShapeError("mha_dense_vjp: saved state has " + std::to_string(probs.size()) +
                     " heads, expected " + std::to_string(heads));
  const int d_head = d_model / heads;
  const T scale = std::sqrt(static_cast<T>(d_head));

  const Tensor<T> q = matmul(x, params.wq);
  const Tensor<T> k = matmul(x, params.wk);
  const Tensor<T> v = matmul(x, params.wv);
  const Tensor<T> dconcat = matmul_nt(dy, params.wo);

  Tensor<T> concat({n, d_model});
  Tensor<T> dq({n, d_model}), dk({n, d_model}), dv({n, d_model});
  AttentionGrads<T> grads;

  parallel_for(heads, [&](std::int64_t h0, std::int64_t h1) {
    for (std::int64_t head = h0; head < h1; ++head) {
      const int off = static_cast<int>(head) * d_head;
      const Tensor<T>& p = probs[static_cast<std::size_t>(head)];
      if (p.shape() != Shape{n, n})
        throw ShapeError("mha_dense_vjp: saved probabilities are " + shape_str(p.shape()) +
                         ", expected " + shape_str({n, n}));
      std::vector<T> dp(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        const T* pp = p.data() + i * n;
        const T* pdo = dconcat.data() + i * d_model + off;
        T* pco = concat.data() + i * d_model + off;
        T pdot = 0;
        for (std::int64_t j = 0; j < n; ++j) {
          const T* pv = v.data() + j * d_model + off;
          T d = 0;
          for (int ch = 0; ch < d_head; ++ch) {
            pco[ch] += pp[j] * pv[ch];
            d += pdo[ch] * pv[ch];
          }
          dp[static_cast<std::size_t>(j)] = d;
          pdot += pp[j] * d;
        }
        const T* pq = q.data() + i * d_model + off;
        T* pdq = dq.data() + i * d_model + off;
        for (std::int64_t j = 0; j < n; ++j) {
          const T da = pp[j] * (dp[static_cast<std::size_t>(j)] - pdot) / scale;
          const T* pk = k.data() + j * d_model + off;
          T* pdk = dk.data() + j * d_model + off;
          T* pdv = dv.data() + j * d_model + off;
          for (int ch = 0; ch < d_head; ++ch) {
            pdq[ch] += da * pk[ch];
            pdk[ch] += da * pq[ch];
            pdv[ch] += pp[j] * pdo[ch];
          }
        }
      }
    }
  }, 1);

  grads.dwo = matmul_tn(concat, dy);
  grads.dwq = matmul_tn(x, dq);
  grads.dwk = matmul_tn(x, dk);
  grads.dwv = matmul_tn(x, dv);
  Tensor<T> dxf = matmul_nt(dq, params.wq);
  dxf = add(dxf, matmul_nt(dk, params.wk));
  dxf = add(dxf, matmul_nt(dv, params.wv));
  grads.dx = dxf;
  return grads;
}

// ---------------------------------------------------------------------------
// cost model
// ---------------------------------------------------------------------------

// Closed-form multiply-accumulate and attention-state counts for one layer.
// Projections (Q, K, V, O) cost the same across all attention kinds; the
// attention term scales with each head's window: n per key for dense, k*k
// for neighborhood windows. attn_state counts the saved probability scalars.
struct CostEstimate {
  std::uint64_t macs = 0;
  std::uint64_t attn_state = 0;
};

CostEstimate mha_dense_cost(std::int64_t n, int d_model, int heads);
CostEstimate na_cost(std::int64_t n, int d_model, int heads, int kernel);
CostEstimate hydra_cost(std::int64_t n, int d_model, const HydraConfig& config);

}  // namespace vana
