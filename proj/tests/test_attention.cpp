#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vana/attention.hpp"
#include "vana/gradcheck.hpp"
#include "vana/rng.hpp"

using vana::AttentionParams;
using vana::HydraConfig;
using vana::NeighborhoodSpec;
using vana::Tensor;
using T64 = Tensor<double>;

namespace {

T64 identity(int n) {
  T64 m({n, n});
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

// Hand-rolled projection so the oracle shares no kernel code.
T64 project(const T64& x, const T64& w) {
  const std::int64_t n = x.dim(0), d = x.dim(1);
  T64 y({n, d});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      for (std::int64_t k = 0; k < d; ++k) y(i, j) += x(i, k) * w(k, j);
  return y;
}

AttentionParams<double> random_params(int d_model, const HydraConfig& config, vana::Rng& rng,
                                      bool random_bias) {
  AttentionParams<double> p;
  p.wq = vana::rand_uniform<double>({d_model, d_model}, rng, -0.4, 0.4);
  p.wk = vana::rand_uniform<double>({d_model, d_model}, rng, -0.4, 0.4);
  p.wv = vana::rand_uniform<double>({d_model, d_model}, rng, -0.4, 0.4);
  p.wo = vana::rand_uniform<double>({d_model, d_model}, rng, -0.4, 0.4);
  for (const auto& g : config.groups)
    for (int h = 0; h < g.heads; ++h)
      p.bias.push_back(random_bias
                           ? vana::rand_uniform<double>({vana::bias_extent(g.spec.kernel),
                                                         vana::bias_extent(g.spec.kernel)},
                                                        rng, -0.3, 0.3)
                           : vana::zero_bias_table<double>(g.spec.kernel));
  return p;
}

// Gather/softmax loop oracle for one head group; neighborhood lists come from
// neighbors_2d and bias offsets from the (neighbor - query)/dilation ranks.
T64 na_naive(const T64& x, const AttentionParams<double>& p, int heads,
             const NeighborhoodSpec& spec) {
  const std::int64_t H = x.dim(0), W = x.dim(1);
  const int d_model = static_cast<int>(x.dim(2));
  const int d_head = d_model / heads;
  const std::int64_t n = H * W;
  const double scale = std::sqrt(static_cast<double>(d_head));
  const T64 flat = x.reshape({n, d_model});
  const T64 q = project(flat, p.wq), k = project(flat, p.wk), v = project(flat, p.wv);

  T64 concat({n, d_model});
  for (int head = 0; head < heads; ++head) {
    const int off = head * d_head;
    const T64& bias = p.bias[static_cast<std::size_t>(head)];
    for (std::int64_t r = 0; r < H; ++r)
      for (std::int64_t c = 0; c < W; ++c) {
        const auto nbrs = vana::neighbors_2d({static_cast<int>(r), static_cast<int>(c)},
                                             {static_cast<int>(H), static_cast<int>(W)}, spec);
        std::vector<double> logits(nbrs.size());
        for (std::size_t j = 0; j < nbrs.size(); ++j) {
          const std::int64_t ni = static_cast<std::int64_t>(nbrs[j].first) * W + nbrs[j].second;
          double dot = 0;
          for (int ch = 0; ch < d_head; ++ch)
            dot += q(r * W + c, off + ch) * k(ni, off + ch);
          const std::int64_t br = (nbrs[j].first - r) / spec.dilation + spec.kernel - 1;
          const std::int64_t bc = (nbrs[j].second - c) / spec.dilation + spec.kernel - 1;
          logits[j] = (dot + bias(br, bc)) / scale;
        }
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double z = 0;
        for (double& l : logits) {
          l = std::exp(l - mx);
          z += l;
        }
        for (std::size_t j = 0; j < nbrs.size(); ++j) {
          const std::int64_t ni = static_cast<std::int64_t>(nbrs[j].first) * W + nbrs[j].second;
          for (int ch = 0; ch < d_head; ++ch)
            concat(r * W + c, off + ch) += logits[j] / z * v(ni, off + ch);
        }
      }
  }
  return project(concat, p.wo).reshape({H, W, d_model});
}

T64 mha_naive(const T64& x, const AttentionParams<double>& p, int heads) {
  const std::int64_t n = x.dim(0);
  const int d_model = static_cast<int>(x.dim(1));
  const int d_head = d_model / heads;
  const double scale = std::sqrt(static_cast<double>(d_head));
  const T64 q = project(x, p.wq), k = project(x, p.wk), v = project(x, p.wv);
  T64 concat({n, d_model});
  for (int head = 0; head < heads; ++head) {
    const int off = head * d_head;
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<double> logits(static_cast<std::size_t>(n));
      for (std::int64_t j = 0; j < n; ++j) {
        double dot = 0;
        for (int ch = 0; ch < d_head; ++ch) dot += q(i, off + ch) * k(j, off + ch);
        logits[static_cast<std::size_t>(j)] = dot / scale;
      }
      double mx = logits[0];
      for (double l : logits) mx = std::max(mx, l);
      double z = 0;
      for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      for (std::int64_t j = 0; j < n; ++j)
        for (int ch = 0; ch < d_head; ++ch)
          concat(i, off + ch) += logits[static_cast<std::size_t>(j)] / z * v(j, off + ch);
    }
  }
  return project(concat, p.wo);
}

}  // namespace

TEST_CASE("mha_dense single token reduces to the value path") {
  vana::Rng rng(1);
  const HydraConfig cfg{{{2, {1, 1}}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, false);
  const T64 x = vana::rand_uniform<double>({1, 8}, rng, -1, 1);
  const T64 y = vana::mha_dense(x, p, 2).y;
  const T64 expect = project(project(x, p.wv), p.wo);
  CHECK(vana::max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("mha_dense with zero query/key weights averages the values") {
  vana::Rng rng(2);
  const int d = 4, n = 5;
  AttentionParams<double> p;
  p.wq = T64({d, d});
  p.wk = T64({d, d});
  p.wv = identity(d);
  p.wo = identity(d);
  const T64 x = vana::rand_uniform<double>({n, d}, rng, -1, 1);
  const T64 y = vana::mha_dense(x, p, 1).y;
  for (std::int64_t c = 0; c < d; ++c) {
    double mean = 0;
    for (std::int64_t i = 0; i < n; ++i) mean += x(i, c);
    mean /= n;
    for (std::int64_t i = 0; i < n; ++i) CHECK(y(i, c) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("mha_dense matches the per-head loop oracle") {
  vana::Rng rng(3);
  const HydraConfig cfg{{{2, {1, 1}}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, false);
  const T64 x = vana::rand_uniform<double>({6, 8}, rng, -1, 1);
  CHECK(vana::max_abs_diff(vana::mha_dense(x, p, 2).y, mha_naive(x, p, 2)) < 1e-10);
}

TEST_CASE("na_forward_2d with k=1 is the value path at every position") {
  vana::Rng rng(4);
  const HydraConfig cfg{{{2, {1, 1}}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, false);
  const T64 x = vana::rand_uniform<double>({4, 5, 8}, rng, -1, 1);
  const T64 y = vana::na_forward_2d(x, p, 2, {1, 1}).y;
  const T64 expect = project(project(x.reshape({20, 8}), p.wv), p.wo).reshape({4, 5, 8});
  CHECK(vana::max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("grid-covering window with zero bias equals dense attention") {
  vana::Rng rng(5);
  const HydraConfig cfg{{{2, {5, 1}}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, false);
  const T64 x = vana::rand_uniform<double>({5, 5, 8}, rng, -1, 1);
  const T64 windowed = vana::na_forward_2d(x, p, 2, {5, 1}).y;
  const T64 dense = vana::mha_dense(x.reshape({25, 8}), p, 2).y.reshape({5, 5, 8});
  CHECK(vana::max_abs_diff(windowed, dense) < 1e-10);
}

TEST_CASE("generalization to dense attention across sizes, dims and heads") {
  vana::Rng rng(6);
  for (int extent : {3, 5, 7})
    for (int d_model : {4, 8})
      for (int heads : {1, 2}) {
        const NeighborhoodSpec spec{extent, 1};
        const HydraConfig cfg{{{heads, spec}}};
        const AttentionParams<double> p = random_params(d_model, cfg, rng, false);
        const T64 x = vana::rand_uniform<double>({extent, extent, d_model}, rng, -1, 1);
        const T64 windowed = vana::na_forward_2d(x, p, heads, spec).y;
        const T64 dense = vana::mha_dense(x.reshape({extent * extent, d_model}), p, heads)
                              .y.reshape(x.shape());
        CHECK(vana::max_abs_diff(windowed, dense) < 1e-9);
      }
}

TEST_CASE("na_forward_2d matches the gather/softmax oracle, including bias and dilation") {
  vana::Rng rng(7);
  for (const NeighborhoodSpec spec : {NeighborhoodSpec{3, 1}, NeighborhoodSpec{3, 2}}) {
    const HydraConfig cfg{{{2, spec}}};
    const AttentionParams<double> p = random_params(8, cfg, rng, true);
    const T64 x = vana::rand_uniform<double>({6, 6, 8}, rng, -1, 1);
    const auto out = vana::na_forward_2d(x, p, 2, spec);
    CHECK(vana::max_abs_diff(out.y, na_naive(x, p, 2, spec)) < 1e-10);
  }
}

TEST_CASE("saved probability rows are normalized") {
  vana::Rng rng(8);
  const NeighborhoodSpec spec{3, 1};
  const HydraConfig cfg{{{2, spec}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, true);
  const T64 x = vana::rand_uniform<double>({5, 6, 8}, rng, -1, 1);
  const auto out = vana::na_forward_2d(x, p, 2, spec);
  for (const auto& head : out.probs)
    for (std::int64_t q = 0; q < 30; ++q) {
      double s = 0;
      for (std::int64_t j = 0; j < 9; ++j) {
        CHECK(head[q * 9 + j] >= 0.0);
        s += head[q * 9 + j];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("locality: perturbations outside the window leave the query untouched") {
  vana::Rng rng(9);
  const NeighborhoodSpec spec{3, 1};
  const HydraConfig cfg{{{1, spec}}};
  const AttentionParams<double> p = random_params(4, cfg, rng, true);
  T64 x = vana::rand_uniform<double>({6, 6, 4}, rng, -1, 1);
  const T64 before = vana::na_forward_2d(x, p, 1, spec).y;
  // (5,5) is outside the clamped 3x3 window of query (0,0).
  for (int ch = 0; ch < 4; ++ch) x(5, 5, ch) += 10.0;
  const T64 after = vana::na_forward_2d(x, p, 1, spec).y;
  for (int ch = 0; ch < 4; ++ch) CHECK(before(0, 0, ch) == after(0, 0, ch));
  // ...and a position inside some window did change.
  CHECK(vana::max_abs_diff(before, after) > 0.0);
}

TEST_CASE("interior translation equivariance is exact with zero bias") {
  vana::Rng rng(10);
  const NeighborhoodSpec spec{3, 1};
  const HydraConfig cfg{{{2, spec}}};
  const AttentionParams<double> p = random_params(4, cfg, rng, false);
  const T64 base = vana::rand_uniform<double>({9, 9, 4}, rng, -1, 1);
  const int dr = 2, dc = 1, extent = 6;
  T64 x1({extent, extent, 4}), x2({extent, extent, 4});
  for (int r = 0; r < extent; ++r)
    for (int c = 0; c < extent; ++c)
      for (int ch = 0; ch < 4; ++ch) {
        x1(r, c, ch) = base(r, c, ch);
        x2(r, c, ch) = base(r + dr, c + dc, ch);
      }
  const T64 y1 = vana::na_forward_2d(x1, p, 2, spec).y;
  const T64 y2 = vana::na_forward_2d(x2, p, 2, spec).y;
  // Queries whose windows are interior in both crops see identical inputs.
  for (int r = 1 + dr; r < extent - 1; ++r)
    for (int c = 1 + dc; c < extent - 1; ++c)
      for (int ch = 0; ch < 4; ++ch) CHECK(y1(r, c, ch) == y2(r - dr, c - dc, ch));
}

TEST_CASE("single-partition hydra reproduces na_forward_2d bit for bit") {
  vana::Rng rng(11);
  const NeighborhoodSpec spec{3, 1};
  const HydraConfig cfg{{{2, spec}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, true);
  const T64 x = vana::rand_uniform<double>({5, 5, 8}, rng, -1, 1);
  const T64 via_hydra = vana::hydra_forward_2d(x, p, cfg).y;
  const T64 via_na = vana::na_forward_2d(x, p, 2, spec).y;
  CHECK(vana::max_abs_diff(via_hydra, via_na) == 0.0);
}

TEST_CASE("hydra groups match running each receptive field separately") {
  vana::Rng rng(12);
  const int d_model = 4;  // 2 heads of dim 2
  const HydraConfig mixed{{{1, {1, 1}}, {1, {3, 1}}}};
  AttentionParams<double> p = random_params(d_model, mixed, rng, true);
  p.wo = identity(d_model);  // keep head channels separate in the output
  const T64 x = vana::rand_uniform<double>({3, 3, d_model}, rng, -1, 1);
  const T64 y = vana::hydra_forward_2d(x, p, mixed).y;

  const AttentionParams<double> pa{p.wq, p.wk, p.wv, p.wo, {p.bias[0], p.bias[0]}};
  const T64 ya = vana::na_forward_2d(x, pa, 2, {1, 1}).y;
  const AttentionParams<double> pb{p.wq, p.wk, p.wv, p.wo, {p.bias[1], p.bias[1]}};
  const T64 yb = vana::na_forward_2d(x, pb, 2, {3, 1}).y;
  for (std::int64_t q = 0; q < 9; ++q)
    for (int ch = 0; ch < d_model; ++ch) {
      const double expect = ch < 2 ? ya[q * d_model + ch] : yb[q * d_model + ch];
      CHECK(y[q * d_model + ch] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("mixed dense/dilated partition at extent 256 is legal and costed") {
  // Two heads on 7x7 windows at dilation 1, two at dilation 32; the dilated
  // group spans 7*32 = 224 of the 256 extent.
  const HydraConfig split{{{2, {7, 1}}, {2, {7, 32}}}};
  for (const auto& g : split.groups) {
    CHECK(g.spec.valid_for(256));
    CHECK(g.spec.dilation <= vana::max_dilation(256, 7));
  }
  CHECK(split.groups[1].spec.kernel * split.groups[1].spec.dilation == 224);
  const auto cost = vana::hydra_cost(256 * 256, 32, split);
  CHECK(cost.attn_state == 4ull * 256 * 256 * 49);
}

TEST_CASE("attention rejects inconsistent configurations") {
  vana::Rng rng(13);
  const HydraConfig cfg{{{2, {3, 1}}}};
  AttentionParams<double> p = random_params(8, cfg, rng, false);
  const T64 x = vana::rand_uniform<double>({4, 4, 8}, rng, -1, 1);
  // d_model not divisible by heads
  CHECK_THROWS_AS(vana::na_forward_2d(x, p, 3, {3, 1}), vana::ShapeError);
  // spec invalid for the grid
  CHECK_THROWS_AS(vana::na_forward_2d(x, p, 2, {5, 1}), vana::GeometryError);
  // bias table sized for the wrong kernel
  AttentionParams<double> bad = p;
  bad.bias[0] = vana::zero_bias_table<double>(5);
  CHECK_THROWS_AS(vana::na_forward_2d(x, bad, 2, {3, 1}), vana::ShapeError);
  // partition mismatch against saved state
  const auto out = vana::na_forward_2d(x, p, 2, {3, 1});
  std::vector<T64> stale = {out.probs[0]};
  CHECK_THROWS_AS(vana::na_vjp(x, p, 2, {3, 1}, stale, T64(x.shape())), vana::ShapeError);
}

TEST_CASE("na_vjp zero upstream gradient yields zero gradients") {
  vana::Rng rng(14);
  const NeighborhoodSpec spec{3, 1};
  const HydraConfig cfg{{{2, spec}}};
  const AttentionParams<double> p = random_params(8, cfg, rng, true);
  const T64 x = vana::rand_uniform<double>({4, 4, 8}, rng, -1, 1);
  const auto out = vana::na_forward_2d(x, p, 2, spec);
  const auto grads = vana::na_vjp(x, p, 2, spec, out.probs, T64(x.shape()));
  CHECK(vana::max_abs(grads.dx) == 0.0);
  CHECK(vana::max_abs(grads.dwq) == 0.0);
  CHECK(vana::max_abs(grads.dwo) == 0.0);
  for (const auto& db : grads.dbias) CHECK(vana::max_abs(db) == 0.0);
}

TEST_CASE("na_vjp linear path: k=1 with identity output projection") {
  vana::Rng rng(15);
  const int d = 4;
  const NeighborhoodSpec spec{1, 1};
  const HydraConfig cfg{{{1, spec}}};
  AttentionParams<double> p = random_params(d, cfg, rng, false);
  p.wo = identity(d);
  const T64 x = vana::rand_uniform<double>({3, 3, d}, rng, -1, 1);
  const T64 dy = vana::rand_uniform<double>({3, 3, d}, rng, -1, 1);
  const auto out = vana::na_forward_2d(x, p, 1, spec);
  const auto grads = vana::na_vjp(x, p, 1, spec, out.probs, dy);
  // y = x W_V exactly, so dW_V = X^T dY.
  const T64 expect =
      vana::matmul(vana::transpose2d(x.reshape({9, d})), dy.reshape({9, d}));
  CHECK(vana::max_abs_diff(grads.dwv, expect) < 1e-12);
}

TEST_CASE("hydra_vjp agrees with finite differences on a mixed partition") {
  vana::Rng rng(16);
  const HydraConfig cfg{{{1, {3, 1}}, {1, {1, 2}}}};
  AttentionParams<double> p;
  p.wq = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.wk = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.wv = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.wo = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.bias.push_back(vana::rand_uniform<double>({5, 5}, rng, -0.2, 0.2));
  p.bias.push_back(vana::rand_uniform<double>({1, 1}, rng, -0.2, 0.2));
  const T64 x = vana::rand_uniform<double>({4, 4, 4}, rng, -0.5, 0.5);
  const T64 c = vana::rand_uniform<double>({4, 4, 4}, rng, -1, 1);
  const auto out = vana::hydra_forward_2d(x, p, cfg);
  const auto grads = vana::hydra_vjp(x, p, cfg, out.probs, c);

  auto weighted = [&](const T64& y) {
    double s = 0;
    for (std::int64_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
    return s;
  };
  const T64 fd_x = vana::finite_diff_grad(
      [&](const T64& t) { return weighted(vana::hydra_forward_2d(t, p, cfg).y); }, x);
  CHECK(vana::rel_error(grads.dx, fd_x) < 1e-5);
  const T64 fd_wk = vana::finite_diff_grad(
      [&](const T64& t) {
        AttentionParams<double> q = p;
        q.wk = t;
        return weighted(vana::hydra_forward_2d(x, q, cfg).y);
      },
      p.wk);
  CHECK(vana::rel_error(grads.dwk, fd_wk) < 1e-5);
  const T64 fd_b0 = vana::finite_diff_grad(
      [&](const T64& t) {
        AttentionParams<double> q = p;
        q.bias[0] = t;
        return weighted(vana::hydra_forward_2d(x, q, cfg).y);
      },
      p.bias[0]);
  CHECK(vana::rel_error(grads.dbias[0], fd_b0) < 1e-5);
}

TEST_CASE("hydra spec grammar round-trips") {
  for (const std::string text : {"7x1:2,7x32:2", "3x1:1", "1x4:3,5x2:1,7x1:8"}) {
    const HydraConfig cfg = vana::parse_hydra_spec(text);
    CHECK(vana::hydra_spec_str(cfg) == text);
    CHECK(vana::hydra_spec_str(vana::parse_hydra_spec(vana::hydra_spec_str(cfg))) == text);
  }
  CHECK(vana::parse_hydra_spec("7x1:2,7x32:2").total_heads() == 4);
  CHECK_THROWS_AS(vana::parse_hydra_spec(""), vana::ValueError);
  CHECK_THROWS_AS(vana::parse_hydra_spec("7x1"), vana::ValueError);
  CHECK_THROWS_AS(vana::parse_hydra_spec("4x1:2"), vana::ValueError);   // even kernel
  CHECK_THROWS_AS(vana::parse_hydra_spec("3x0:2"), vana::ValueError);   // zero dilation
  CHECK_THROWS_AS(vana::parse_hydra_spec("3x1:2,"), vana::ValueError);  // trailing comma
}

TEST_CASE("cost model closed forms") {
  CHECK(vana::mha_dense_cost(256, 16, 1).attn_state == 65536);
  CHECK(vana::na_cost(256, 16, 1, 3).attn_state == 2304);
  CHECK(vana::na_cost(256, 16, 4, 3).attn_state == 4 * 2304);

  // A uniform hydra partition prices identically to plain NA.
  const HydraConfig uniform{{{2, {5, 2}}, {2, {5, 2}}}};
  const auto hydra = vana::hydra_cost(1024, 16, uniform);
  const auto na = vana::na_cost(1024, 16, 4, 5);
  CHECK(hydra.macs == na.macs);
  CHECK(hydra.attn_state == na.attn_state);

  // NA/dense state ratio is exactly k^2/n (integer identity).
  for (std::int64_t n : {64, 256, 1024})
    for (int k : {3, 5, 7})
      for (int heads : {1, 2, 4}) {
        const auto dense = vana::mha_dense_cost(n, 16, heads);
        const auto windowed = vana::na_cost(n, 16, heads, k);
        CHECK(windowed.attn_state * n ==
              dense.attn_state * static_cast<std::uint64_t>(k) * k);
      }
}
