#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vana/embed.hpp"
#include "vana/gradcheck.hpp"

using vana::Tensor;
using vana::TokenizerConfig;
using T64 = Tensor<double>;

namespace {

TokenizerConfig one_block_config(int filters) {
  TokenizerConfig cfg;
  cfg.blocks = {{filters, 3, 1, 1}};
  cfg.pool = {3, 2, 1};
  return cfg;
}

}  // namespace

TEST_CASE("conv_tokenize shape arithmetic accepts arbitrary aspect ratios") {
  const TokenizerConfig cfg = one_block_config(128);
  vana::Rng rng(1);
  const auto w = vana::init_tokenizer_weights<double>(cfg, 3, rng, 0.1);

  const T64 square = vana::rand_uniform<double>({3, 32, 32}, rng, -1, 1);
  const T64 tokens = vana::conv_tokenize(square, cfg, w);
  CHECK(tokens.shape() == vana::Shape{256, 128});
  CHECK(cfg.grid_shape(32, 32) == std::pair<std::int64_t, std::int64_t>{16, 16});

  const T64 wide = vana::rand_uniform<double>({3, 48, 32}, rng, -1, 1);
  CHECK(vana::conv_tokenize(wide, cfg, w).shape() == vana::Shape{384, 128});
}

TEST_CASE("conv_tokenize equals composing the primitives by hand") {
  TokenizerConfig cfg;
  cfg.blocks = {{4, 3, 1, 1}, {6, 3, 1, 1}};
  cfg.pool = {3, 2, 1};
  vana::Rng rng(2);
  const auto w = vana::init_tokenizer_weights<double>(cfg, 2, rng, 0.3);
  const T64 image = vana::rand_uniform<double>({2, 12, 10}, rng, -1, 1);

  T64 x = image;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    x = vana::maxpool2d(vana::relu(vana::conv2d(x, w.kernels[i], 1, 1)), 3, 2, 1);
  }
  const std::int64_t n = x.dim(1) * x.dim(2);
  T64 expect({n, x.dim(0)});
  for (std::int64_t c = 0; c < x.dim(0); ++c)
    for (std::int64_t i = 0; i < n; ++i) expect(i, c) = x[c * n + i];

  CHECK(vana::max_abs_diff(vana::conv_tokenize(image, cfg, w), expect) == 0.0);
}

TEST_CASE("conv_tokenize token counts follow the composed floor formulas") {
  const TokenizerConfig cfg = one_block_config(4);
  vana::Rng rng(3);
  const auto w = vana::init_tokenizer_weights<double>(cfg, 1, rng, 0.2);
  for (int h = 8; h <= 40; ++h)
    for (int wd = 8; wd <= 40; ++wd) {
      const T64 image({1, h, wd});
      const auto [gh, gw] = cfg.grid_shape(h, wd);
      CHECK(vana::conv_tokenize(image, cfg, w).shape() == vana::Shape{gh * gw, 4});
    }
}

TEST_CASE("conv_tokenize rejects images below the configured minimum") {
  const TokenizerConfig cfg = one_block_config(4);
  vana::Rng rng(4);
  const auto w = vana::init_tokenizer_weights<double>(cfg, 1, rng, 0.2);
  CHECK(cfg.min_extent() >= 1);
  CHECK_THROWS_AS(vana::conv_tokenize(T64({1, 0, 4}), cfg, w), vana::ShapeError);
}

TEST_CASE("patch_tokenize counting and divisibility") {
  vana::Rng rng(5);
  const T64 image = vana::rand_uniform<double>({3, 32, 32}, rng, -1, 1);
  const T64 proj = vana::rand_uniform<double>({3 * 16 * 16, 8}, rng, -0.1, 0.1);
  CHECK(vana::patch_tokenize(image, 16, proj).shape() == vana::Shape{4, 8});

  const T64 odd = vana::rand_uniform<double>({3, 33, 32}, rng, -1, 1);
  CHECK_THROWS_AS(vana::patch_tokenize(odd, 16, proj), vana::ShapeError);
}

TEST_CASE("patch_tokenize with patch 1 and identity projection returns the pixels") {
  vana::Rng rng(6);
  const int d = 3;
  const T64 image = vana::rand_uniform<double>({d, 4, 4}, rng, -1, 1);
  T64 proj({d, d});
  for (int i = 0; i < d; ++i) proj(i, i) = 1.0;
  const T64 tokens = vana::patch_tokenize(image, 1, proj);
  REQUIRE(tokens.shape() == vana::Shape{16, d});
  for (std::int64_t r = 0; r < 4; ++r)
    for (std::int64_t c = 0; c < 4; ++c)
      for (int ch = 0; ch < d; ++ch) CHECK(tokens(r * 4 + c, ch) == image(ch, r, c));
}

TEST_CASE("seqpool closed forms") {
  vana::Rng rng(7);
  // Singleton sequence: the output is the token itself.
  const T64 one = vana::rand_uniform<double>({2, 1, 3}, rng, -1, 1);
  const T64 g0({3});
  const T64 pooled = vana::seqpool(one, g0, 0.0);
  for (std::int64_t b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) CHECK(pooled(b, c) == doctest::Approx(one(b, 0, c)));

  // Zero scorer: uniform weights, so the mean token.
  const T64 x = vana::rand_uniform<double>({1, 5, 3}, rng, -1, 1);
  const T64 mean = vana::seqpool(x, g0, 0.3);
  for (int c = 0; c < 3; ++c) {
    double m = 0;
    for (int i = 0; i < 5; ++i) m += x(0, i, c);
    CHECK(mean(0, c) == doctest::Approx(m / 5).epsilon(1e-12));
  }

  // Scores (ln 3, 0) weight the tokens 3:1.
  T64 two({1, 2, 2}, {1, 0, 0, 1});
  const T64 g({2}, {std::log(3.0), 0.0});
  const T64 y = vana::seqpool(two, g, 0.0);
  CHECK(y(0, 0) == doctest::Approx(0.75));
  CHECK(y(0, 1) == doctest::Approx(0.25));

  CHECK_THROWS_AS(vana::seqpool(T64({1, 0, 3}), g0, 0.0), vana::ValueError);
}

TEST_CASE("seqpool outputs are convex combinations of the tokens") {
  vana::Rng rng(8);
  const T64 x = vana::rand_uniform<double>({3, 7, 4}, rng, -2, 2);
  const T64 g = vana::rand_uniform<double>({4}, rng, -1, 1);
  const T64 y = vana::seqpool(x, g, 0.2);
  for (std::int64_t b = 0; b < 3; ++b)
    for (int c = 0; c < 4; ++c) {
      double lo = x(b, 0, c), hi = x(b, 0, c);
      for (int i = 1; i < 7; ++i) {
        lo = std::min(lo, x(b, i, c));
        hi = std::max(hi, x(b, i, c));
      }
      CHECK(y(b, c) >= lo - 1e-12);
      CHECK(y(b, c) <= hi + 1e-12);
    }
}

TEST_CASE("patch_tokenize vjp agrees with finite differences") {
  vana::Rng rng(12);
  const T64 image = vana::rand_uniform<double>({2, 4, 4}, rng, -1, 1);
  const T64 proj = vana::rand_uniform<double>({2 * 2 * 2, 3}, rng, -0.5, 0.5);
  const T64 tokens = vana::patch_tokenize(image, 2, proj);
  const T64 c = vana::rand_uniform<double>(tokens.shape(), rng, -1, 1);
  const auto grads = vana::patch_tokenize_vjp(image, 2, proj, c);
  auto weighted = [&](const T64& y) {
    double s = 0;
    for (std::int64_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
    return s;
  };
  CHECK(vana::rel_error(grads.dimage,
                        vana::finite_diff_grad(
                            [&](const T64& t) { return weighted(vana::patch_tokenize(t, 2, proj)); },
                            image)) < 1e-6);
  CHECK(vana::rel_error(grads.dprojection,
                        vana::finite_diff_grad(
                            [&](const T64& t) { return weighted(vana::patch_tokenize(image, 2, t)); },
                            proj)) < 1e-6);
}

TEST_CASE("seqpool vjp agrees with finite differences") {
  vana::Rng rng(9);
  const T64 x = vana::rand_uniform<double>({2, 4, 3}, rng, -1, 1);
  const T64 g = vana::rand_uniform<double>({3}, rng, -0.5, 0.5);
  const double offset = 0.1;
  const T64 c = vana::rand_uniform<double>({2, 3}, rng, -1, 1);
  const auto grads = vana::seqpool_vjp(x, g, offset, c);
  auto weighted = [&](const T64& y) {
    double s = 0;
    for (std::int64_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
    return s;
  };
  const T64 fd_x = vana::finite_diff_grad(
      [&](const T64& t) { return weighted(vana::seqpool(t, g, offset)); }, x);
  CHECK(vana::rel_error(grads.dx, fd_x) < 1e-6);
  const T64 fd_g = vana::finite_diff_grad(
      [&](const T64& t) { return weighted(vana::seqpool(x, t, offset)); }, g);
  CHECK(vana::rel_error(grads.dg, fd_g) < 1e-6);
}

TEST_CASE("positional embeddings") {
  const T64 none = vana::positional_embedding<double>(vana::PositionalKind::None, 5, 4);
  CHECK(vana::max_abs(none) == 0.0);

  const T64 sin = vana::positional_embedding<double>(vana::PositionalKind::Sinusoidal, 8, 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(sin(0, 2 * i) == doctest::Approx(0.0));
    CHECK(sin(0, 2 * i + 1) == doctest::Approx(1.0));
  }

  // Resolution extensibility: the short table is a prefix of the long one.
  const T64 small = vana::positional_embedding<double>(vana::PositionalKind::Sinusoidal, 64, 8);
  const T64 large = vana::positional_embedding<double>(vana::PositionalKind::Sinusoidal, 256, 8);
  double diff = 0;
  for (std::int64_t i = 0; i < small.size(); ++i) diff = std::max(diff, std::abs(small[i] - large[i]));
  CHECK(diff == 0.0);

  CHECK_THROWS_AS(vana::positional_embedding<double>(vana::PositionalKind::Sinusoidal, 4, 5),
                  vana::ValueError);

  vana::Rng rng(10);
  const T64 learned =
      vana::positional_embedding<double>(vana::PositionalKind::Learnable, 128, 16, &rng);
  CHECK(learned.shape() == vana::Shape{128, 16});
  double var = 0;
  for (std::int64_t i = 0; i < learned.size(); ++i) var += learned[i] * learned[i];
  var /= static_cast<double>(learned.size());
  CHECK(var == doctest::Approx(0.02 * 0.02).epsilon(0.2));
  // Same seed, same table.
  vana::Rng rng2(10);
  const T64 again =
      vana::positional_embedding<double>(vana::PositionalKind::Learnable, 128, 16, &rng2);
  CHECK(vana::max_abs_diff(learned, again) == 0.0);
  CHECK_THROWS_AS(vana::positional_embedding<double>(vana::PositionalKind::Learnable, 4, 4),
                  vana::ValueError);
}

TEST_CASE("conv_tokenize vjp agrees with finite differences") {
  const TokenizerConfig cfg = one_block_config(3);
  vana::Rng rng(11);
  const auto w = vana::init_tokenizer_weights<double>(cfg, 1, rng, 0.4);
  const T64 image = vana::rand_uniform<double>({1, 8, 8}, rng, -1, 1);
  const T64 tokens = vana::conv_tokenize(image, cfg, w);
  const T64 c = vana::rand_uniform<double>(tokens.shape(), rng, -1, 1);
  const auto grads = vana::conv_tokenize_vjp(image, cfg, w, c);
  auto weighted = [&](const T64& y) {
    double s = 0;
    for (std::int64_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
    return s;
  };
  const T64 fd_img = vana::finite_diff_grad(
      [&](const T64& t) { return weighted(vana::conv_tokenize(t, cfg, w)); }, image);
  CHECK(vana::rel_error(grads.dimage, fd_img) < 1e-5);
  const T64 fd_k = vana::finite_diff_grad(
      [&](const T64& t) {
        auto w2 = w;
        w2.kernels[0] = t;
        return weighted(vana::conv_tokenize(image, cfg, w2));
      },
      w.kernels[0]);
  CHECK(vana::rel_error(grads.dkernels[0], fd_k) < 1e-5);
}
