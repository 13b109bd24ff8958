#include "vana/gradsuite.hpp"

#include "vana/attention.hpp"
#include "vana/embed.hpp"
#include "vana/rng.hpp"
#include "vana/tensor.hpp"

namespace vana {

namespace {

using T64 = Tensor<double>;

double weighted_sum(const T64& y, const T64& c) {
  double s = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
  return s;
}

// Keeps relu/maxpool kinks away from the finite-difference step.
T64 away_from_zero(T64 t, double margin) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? -margin : margin;
  return t;
}

struct Suite {
  GradSuiteOptions opt;
  std::vector<OpGradReport> reports;
  bool sabotage_pending = false;

  void merge(const std::string& op, GradReport r) {
    if (sabotage_pending) {
      r.max_rel_error += 1e-2;
      r.passed = r.max_rel_error < r.tolerance;
      sabotage_pending = false;
    }
    for (auto& entry : reports)
      if (entry.op == op) {
        entry.report = merge_reports(entry.report, r);
        return;
      }
    reports.push_back({op, r});
  }

  Rng op_rng(std::uint64_t op_index) const {
    return Rng(opt.seed * 0x9E3779B97F4A7C15ull + op_index + 1);
  }

  // Compares the analytic gradient of L(x) = sum(c * f(x)) against finite
  // differences on x.
  void check(const std::string& op, const std::function<double(const T64&)>& loss,
             const T64& x, const T64& analytic) {
    merge(op, grad_report(analytic, finite_diff_grad(loss, x, opt.eps), opt.tolerance));
  }

  void run_matmul(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const T64 a = rand_uniform<double>({3, 4}, rng, -1.0, 1.0);
      const T64 b = rand_uniform<double>({4, 2}, rng, -1.0, 1.0);
      const T64 c = rand_uniform<double>({3, 2}, rng, -1.0, 1.0);
      auto [da, db] = matmul_vjp(a, b, c);
      if (opt.sabotage && i == 0) sabotage_pending = true;
      check("matmul", [&](const T64& t) { return weighted_sum(matmul(t, b), c); }, a, da);
      check("matmul", [&](const T64& t) { return weighted_sum(matmul(a, t), c); }, b, db);
    }
  }

  void run_softmax(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const T64 x = rand_uniform<double>({2, 5}, rng, -3.0, 3.0);
      const double scale = std::uniform_real_distribution<double>(0.7, 2.0)(rng);
      const T64 c = rand_uniform<double>({2, 5}, rng, -1.0, 1.0);
      const T64 y = softmax_scaled(x, scale);
      const T64 dx = softmax_scaled_vjp(y, c, scale);
      check("softmax_scaled",
            [&](const T64& t) { return weighted_sum(softmax_scaled(t, scale), c); }, x, dx);
    }
  }

  void run_conv2d(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const int stride = 1 + i % 2, pad = i % 2;
      const T64 x = rand_uniform<double>({2, 5, 5}, rng, -1.0, 1.0);
      const T64 k = rand_uniform<double>({3, 2, 3, 3}, rng, -1.0, 1.0);
      const T64 y = conv2d(x, k, stride, pad);
      const T64 c = rand_uniform<double>(y.shape(), rng, -1.0, 1.0);
      auto [dx, dk] = conv2d_vjp(x, k, stride, pad, c);
      check("conv2d", [&](const T64& t) { return weighted_sum(conv2d(t, k, stride, pad), c); },
            x, dx);
      check("conv2d", [&](const T64& t) { return weighted_sum(conv2d(x, t, stride, pad), c); },
            k, dk);
    }
  }

  void run_maxpool(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const int k = 2 + i % 2, stride = 1 + i % 2, pad = (i % 3 == 0) ? k / 2 : 0;
      const T64 x = rand_uniform<double>({2, 6, 6}, rng, -1.0, 1.0);
      const T64 y = maxpool2d(x, k, stride, pad);
      const T64 c = rand_uniform<double>(y.shape(), rng, -1.0, 1.0);
      const T64 dx = maxpool2d_vjp(x, k, stride, pad, c);
      check("maxpool2d",
            [&](const T64& t) { return weighted_sum(maxpool2d(t, k, stride, pad), c); }, x, dx);
    }
  }

  void run_relu(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const T64 x = away_from_zero(rand_uniform<double>({4, 8}, rng, -1.0, 1.0), 1e-3);
      const T64 c = rand_uniform<double>({4, 8}, rng, -1.0, 1.0);
      check("relu", [&](const T64& t) { return weighted_sum(relu(t), c); }, x, relu_vjp(x, c));
    }
  }

  void run_cross_entropy(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const T64 logits = rand_uniform<double>({3, 4}, rng, -2.0, 2.0);
      std::vector<int> labels(3);
      for (auto& l : labels) l = static_cast<int>(rng() % 4);
      const std::span<const int> ls(labels);
      check("cross_entropy", [&](const T64& t) { return cross_entropy(t, ls); }, logits,
            cross_entropy_vjp(logits, ls));
    }
  }

  void attention_case(const std::string& op, Rng& rng, const HydraConfig& config, int d_model,
                      int extent) {
    const T64 x = rand_uniform<double>({extent, extent, d_model}, rng, -0.5, 0.5);
    AttentionParams<double> p;
    p.wq = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
    p.wk = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
    p.wv = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
    p.wo = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
    for (const auto& g : config.groups)
      for (int h = 0; h < g.heads; ++h)
        p.bias.push_back(rand_uniform<double>(
            {bias_extent(g.spec.kernel), bias_extent(g.spec.kernel)}, rng, -0.2, 0.2));
    const T64 c = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
    const auto fwd = hydra_forward_2d(x, p, config);
    const auto grads = hydra_vjp(x, p, config, fwd.probs, c);

    const auto loss_with = [&](const AttentionParams<double>& q) {
      return weighted_sum(hydra_forward_2d(x, q, config).y, c);
    };
    check(op, [&](const T64& t) { return weighted_sum(hydra_forward_2d(t, p, config).y, c); },
          x, grads.dx);
    for (auto [mat, grad, pick] :
         {std::tuple{&p.wq, &grads.dwq, 0}, std::tuple{&p.wk, &grads.dwk, 1},
          std::tuple{&p.wv, &grads.dwv, 2}, std::tuple{&p.wo, &grads.dwo, 3}}) {
      check(op,
            [&, pick = pick](const T64& t) {
              AttentionParams<double> q = p;
              (pick == 0 ? q.wq : pick == 1 ? q.wk : pick == 2 ? q.wv : q.wo) = t;
              return loss_with(q);
            },
            *mat, *grad);
    }
    for (std::size_t h = 0; h < p.bias.size(); ++h) {
      check(op,
            [&](const T64& t) {
              AttentionParams<double> q = p;
              q.bias[h] = t;
              return loss_with(q);
            },
            p.bias[h], grads.dbias[h]);
    }
  }

  void run_na(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const int d_model = i % 2 ? 8 : 4;
      const int heads = i % 2 ? 2 : 1;
      const NeighborhoodSpec spec = i % 3 == 2 ? NeighborhoodSpec{1, 2} : NeighborhoodSpec{3, 1};
      attention_case("na_forward_2d", rng, HydraConfig{{{heads, spec}}}, d_model, 4);
    }
  }

  void run_hydra(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      HydraConfig config{{{1, {3, 1}}, {1, {1, 2}}}};
      if (i % 2) config = HydraConfig{{{2, {3, 1}}, {2, {1, 1}}}};
      attention_case("hydra_forward_2d", rng, config, i % 2 ? 8 : 4, 4);
    }
  }

  void run_mha(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const int d_model = 4, heads = i % 2 ? 2 : 1, n = 5;
      const T64 x = rand_uniform<double>({n, d_model}, rng, -0.5, 0.5);
      AttentionParams<double> p;
      p.wq = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
      p.wk = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
      p.wv = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
      p.wo = rand_uniform<double>({d_model, d_model}, rng, -0.25, 0.25);
      const T64 c = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
      const auto fwd = mha_dense(x, p, heads);
      const auto grads = mha_dense_vjp(x, p, heads, fwd.probs, c);
      check("mha_dense",
            [&](const T64& t) { return weighted_sum(mha_dense(t, p, heads).y, c); }, x, grads.dx);
      check("mha_dense",
            [&](const T64& t) {
              AttentionParams<double> q = p;
              q.wo = t;
              return weighted_sum(mha_dense(x, q, heads).y, c);
            },
            p.wo, grads.dwo);
    }
  }

  void run_conv_tokenize(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      TokenizerConfig cfg;
      cfg.pool = {3, 2, 1};
      if (i % 2)
        cfg.blocks = {{3, 3, 1, 1}, {4, 3, 1, 1}};
      else
        cfg.blocks = {{3, 3, 1, 1}};
      TokenizerWeights<double> w;
      int channels = 1;
      for (const auto& b : cfg.blocks) {
        w.kernels.push_back(
            rand_uniform<double>({b.filters, channels, b.kernel, b.kernel}, rng, -0.5, 0.5));
        channels = b.filters;
      }
      const T64 image = rand_uniform<double>({1, 8, 8}, rng, -1.0, 1.0);
      const T64 tokens = conv_tokenize(image, cfg, w);
      const T64 c = rand_uniform<double>(tokens.shape(), rng, -1.0, 1.0);
      const auto grads = conv_tokenize_vjp(image, cfg, w, c);
      check("conv_tokenize",
            [&](const T64& t) { return weighted_sum(conv_tokenize(t, cfg, w), c); }, image,
            grads.dimage);
      for (std::size_t bi = 0; bi < w.kernels.size(); ++bi) {
        check("conv_tokenize",
              [&](const T64& t) {
                TokenizerWeights<double> w2 = w;
                w2.kernels[bi] = t;
                return weighted_sum(conv_tokenize(image, cfg, w2), c);
              },
              w.kernels[bi], grads.dkernels[bi]);
      }
    }
  }

  void run_seqpool(Rng rng) {
    for (int i = 0; i < opt.cases; ++i) {
      const T64 x = rand_uniform<double>({2, 5, 3}, rng, -1.0, 1.0);
      const T64 g = rand_uniform<double>({3}, rng, -0.5, 0.5);
      const double offset = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      const T64 c = rand_uniform<double>({2, 3}, rng, -1.0, 1.0);
      const auto grads = seqpool_vjp(x, g, offset, c);
      check("seqpool", [&](const T64& t) { return weighted_sum(seqpool(t, g, offset), c); }, x,
            grads.dx);
      check("seqpool", [&](const T64& t) { return weighted_sum(seqpool(x, t, offset), c); }, g,
            grads.dg);
      // The softmax shift invariance makes the offset inert; its gradient is
      // identically zero, so relative error degenerates. Compare absolutely.
      const T64 off_t({1}, {offset});
      const T64 fd_off = finite_diff_grad(
          [&](const T64& t) { return weighted_sum(seqpool(x, g, t[0]), c); }, off_t, opt.eps);
      GradReport r;
      r.tolerance = opt.tolerance;
      r.max_rel_error = std::abs(grads.doffset - fd_off[0]);
      r.worst_index = {0};
      r.passed = r.max_rel_error < r.tolerance;
      merge("seqpool", r);
    }
  }
};

}  // namespace

std::vector<OpGradReport> run_gradcheck_suite(const GradSuiteOptions& options) {
  Suite suite;
  suite.opt = options;
  if (options.cases <= 0) return {};
  suite.run_matmul(suite.op_rng(0));
  suite.run_softmax(suite.op_rng(1));
  suite.run_conv2d(suite.op_rng(2));
  suite.run_maxpool(suite.op_rng(3));
  suite.run_relu(suite.op_rng(4));
  suite.run_cross_entropy(suite.op_rng(5));
  suite.run_mha(suite.op_rng(6));
  suite.run_na(suite.op_rng(7));
  suite.run_hydra(suite.op_rng(8));
  suite.run_conv_tokenize(suite.op_rng(9));
  suite.run_seqpool(suite.op_rng(10));
  return suite.reports;
}

bool all_passed(const std::vector<OpGradReport>& reports) {
  for (const auto& r : reports)
    if (!r.report.passed) return false;
  return true;
}

}  // namespace vana
