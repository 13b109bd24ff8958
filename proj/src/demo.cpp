#include "vana/demo.hpp"

#include <cmath>

namespace vana {

StripesDataset StripesDataset::make(int count, std::uint64_t seed, int extent) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  StripesDataset data;
  data.samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    StripesSample s;
    s.label = i % 2;
    const int period = 2 + static_cast<int>(rng() % 3);
    const int phase = static_cast<int>(rng() % static_cast<std::uint64_t>(period));
    s.image = Tensor<double>({1, extent, extent});
    for (int r = 0; r < extent; ++r)
      for (int c = 0; c < extent; ++c) {
        const int along = s.label == 0 ? r : c;
        const double band = ((along + phase) % period) < (period + 1) / 2 ? 1.0 : -1.0;
        s.image(0, r, c) = band + noise(rng);
      }
    data.samples.push_back(std::move(s));
  }
  return data;
}

Tensor<double> make_structured_image(int extent, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Tensor<double> image({1, extent, extent});
  for (int r = 0; r < extent; ++r)
    for (int c = 0; c < extent; ++c) {
      const double gradient = (r + c) / (2.0 * extent);
      const double checker = ((r / 4 + c / 4) % 2 == 0) ? 0.5 : -0.5;
      image(0, r, c) = gradient + checker + noise(rng);
    }
  return image;
}

DemoModelConfig make_demo_config(const HydraConfig& hydra, int d_model, int image_extent) {
  DemoModelConfig cfg;
  cfg.d_model = d_model;
  cfg.image_extent = image_extent;
  cfg.hydra = hydra;
  cfg.tokenizer.blocks = {{d_model, 3, 1, 1}};
  cfg.tokenizer.pool = {3, 2, 1};
  return cfg;
}

DemoModel DemoModel::init(const DemoModelConfig& cfg, std::uint64_t seed) {
  const int heads = cfg.hydra.total_heads();
  if (heads < 1 || cfg.d_model % heads != 0)
    throw ValueError("demo model: d_model " + std::to_string(cfg.d_model) +
                     " not divisible by " + std::to_string(heads) + " heads");
  const auto [gh, gw] = cfg.tokenizer.grid_shape(cfg.image_extent, cfg.image_extent);
  for (const auto& g : cfg.hydra.groups) {
    g.spec.require_valid(gh);
    g.spec.require_valid(gw);
  }

  Rng rng(seed);
  DemoModel m;
  m.cfg = cfg;
  const double conv_sigma = 1.0 / std::sqrt(9.0 * cfg.in_channels);
  m.tokenizer = init_tokenizer_weights<double>(cfg.tokenizer, cfg.in_channels, rng, conv_sigma);
  const double w_sigma = 0.4 / std::sqrt(static_cast<double>(cfg.d_model));
  for (int b = 0; b < cfg.blocks; ++b)
    m.attn.push_back(init_attention_params<double>(cfg.d_model, cfg.hydra, rng, w_sigma));
  // Scoring starts at mean pooling and the head at zero logits, so the
  // initial loss is exactly ln(classes).
  m.pool_g = Tensor<double>({cfg.d_model});
  m.w_cls = Tensor<double>({cfg.d_model, cfg.classes});
  m.b_cls = Tensor<double>({cfg.classes});
  return m;
}

DemoModel::Forward DemoModel::forward(const Tensor<double>& image) const {
  const auto [gh, gw] = token_grid();
  Forward f;
  Tensor<double> x =
      conv_tokenize(image, cfg.tokenizer, tokenizer).reshape({gh, gw, cfg.d_model});
  for (int b = 0; b < cfg.blocks; ++b) {
    f.block_in.push_back(x);
    AttentionOutput<double> out = hydra_forward_2d(x, attn[static_cast<std::size_t>(b)],
                                                   cfg.hydra);
    x = add(x, out.y);
    f.block_attn.push_back(std::move(out));
  }
  f.pooled = seqpool(x.reshape({1, gh * gw, cfg.d_model}), pool_g, pool_offset);
  f.logits = add(matmul(f.pooled, w_cls), b_cls.reshape({1, cfg.classes}));
  return f;
}

DemoModel::Gradients DemoModel::zero_gradients() const {
  Gradients g;
  for (const auto& k : tokenizer.kernels) g.dkernels.push_back(Tensor<double>(k.shape()));
  for (const auto& p : attn) {
    AttentionGrads<double> a;
    a.dx = Tensor<double>();  // unused for parameters
    a.dwq = Tensor<double>(p.wq.shape());
    a.dwk = Tensor<double>(p.wk.shape());
    a.dwv = Tensor<double>(p.wv.shape());
    a.dwo = Tensor<double>(p.wo.shape());
    for (const auto& b : p.bias) a.dbias.push_back(Tensor<double>(b.shape()));
    g.dattn.push_back(std::move(a));
  }
  g.dpool_g = Tensor<double>(pool_g.shape());
  g.dw_cls = Tensor<double>(w_cls.shape());
  g.db_cls = Tensor<double>(b_cls.shape());
  return g;
}

namespace {

void axpy(Tensor<double>& acc, const Tensor<double>& t, double w) {
  for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += w * t[i];
}

}  // namespace

double DemoModel::accumulate_sample(const StripesSample& sample, double weight,
                                    Gradients& grads) const {
  const auto [gh, gw] = token_grid();
  const std::int64_t n = gh * gw;
  const Forward f = forward(sample.image);
  const int labels[1] = {sample.label};
  const double loss = cross_entropy(f.logits, labels);

  Tensor<double> dlogits = cross_entropy_vjp(f.logits, labels);
  // Linear head.
  auto [dpooled, dw_cls] = matmul_vjp(f.pooled, w_cls, dlogits);
  axpy(grads.dw_cls, dw_cls, weight);
  for (std::int64_t c = 0; c < cfg.classes; ++c) grads.db_cls[c] += weight * dlogits[c];

  // SeqPool.
  Tensor<double> last = add(f.block_in.back(), f.block_attn.back().y);
  const SeqpoolGrads<double> sp =
      seqpool_vjp(last.reshape({1, n, cfg.d_model}), pool_g, pool_offset, dpooled);
  axpy(grads.dpool_g, sp.dg, weight);
  grads.dpool_offset += weight * sp.doffset;

  // Residual attention blocks, in reverse.
  Tensor<double> dx = sp.dx.reshape({gh, gw, cfg.d_model});
  for (int b = cfg.blocks - 1; b >= 0; --b) {
    const auto bi = static_cast<std::size_t>(b);
    const AttentionGrads<double> ag =
        hydra_vjp(f.block_in[bi], attn[bi], cfg.hydra, f.block_attn[bi].probs, dx);
    axpy(grads.dattn[bi].dwq, ag.dwq, weight);
    axpy(grads.dattn[bi].dwk, ag.dwk, weight);
    axpy(grads.dattn[bi].dwv, ag.dwv, weight);
    axpy(grads.dattn[bi].dwo, ag.dwo, weight);
    for (std::size_t h = 0; h < ag.dbias.size(); ++h)
      axpy(grads.dattn[bi].dbias[h], ag.dbias[h], weight);
    dx = add(dx, ag.dx);  // residual path
  }

  // Tokenizer.
  const TokenizeGrads<double> tg =
      conv_tokenize_vjp(sample.image, cfg.tokenizer, tokenizer, dx.reshape({n, cfg.d_model}));
  for (std::size_t k = 0; k < tg.dkernels.size(); ++k)
    axpy(grads.dkernels[k], tg.dkernels[k], weight);
  return loss;
}

double DemoModel::batch_loss_and_gradients(const std::vector<StripesSample>& batch,
                                           Gradients& grads) const {
  const double w = 1.0 / static_cast<double>(batch.size());
  // Per-sample gradients are reduced in sample order regardless of worker
  // count, so training is deterministic for any --threads value.
  std::vector<Gradients> partial(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(static_cast<std::int64_t>(batch.size()), [&](std::int64_t b0, std::int64_t b1) {
    for (std::int64_t i = b0; i < b1; ++i) {
      partial[static_cast<std::size_t>(i)] = zero_gradients();
      losses[static_cast<std::size_t>(i)] =
          accumulate_sample(batch[static_cast<std::size_t>(i)], w,
                            partial[static_cast<std::size_t>(i)]);
    }
  }, 1);
  double loss = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += w * losses[i];
    const Gradients& p = partial[i];
    for (std::size_t k = 0; k < p.dkernels.size(); ++k) axpy(grads.dkernels[k], p.dkernels[k], 1);
    for (std::size_t b = 0; b < p.dattn.size(); ++b) {
      axpy(grads.dattn[b].dwq, p.dattn[b].dwq, 1);
      axpy(grads.dattn[b].dwk, p.dattn[b].dwk, 1);
      axpy(grads.dattn[b].dwv, p.dattn[b].dwv, 1);
      axpy(grads.dattn[b].dwo, p.dattn[b].dwo, 1);
      for (std::size_t h = 0; h < p.dattn[b].dbias.size(); ++h)
        axpy(grads.dattn[b].dbias[h], p.dattn[b].dbias[h], 1);
    }
    axpy(grads.dpool_g, p.dpool_g, 1);
    grads.dpool_offset += p.dpool_offset;
    axpy(grads.dw_cls, p.dw_cls, 1);
    axpy(grads.db_cls, p.db_cls, 1);
  }
  return loss;
}

void DemoModel::apply_sgd(const Gradients& grads, double lr) {
  for (std::size_t k = 0; k < tokenizer.kernels.size(); ++k)
    axpy(tokenizer.kernels[k], grads.dkernels[k], -lr);
  for (std::size_t b = 0; b < attn.size(); ++b) {
    axpy(attn[b].wq, grads.dattn[b].dwq, -lr);
    axpy(attn[b].wk, grads.dattn[b].dwk, -lr);
    axpy(attn[b].wv, grads.dattn[b].dwv, -lr);
    axpy(attn[b].wo, grads.dattn[b].dwo, -lr);
    for (std::size_t h = 0; h < attn[b].bias.size(); ++h)
      axpy(attn[b].bias[h], grads.dattn[b].dbias[h], -lr);
  }
  axpy(pool_g, grads.dpool_g, -lr);
  pool_offset -= lr * grads.dpool_offset;
  axpy(w_cls, grads.dw_cls, -lr);
  axpy(b_cls, grads.db_cls, -lr);
}

int DemoModel::predict(const Tensor<double>& image) const {
  const Forward f = forward(image);
  int best = 0;
  for (std::int64_t c = 1; c < cfg.classes; ++c)
    if (f.logits[c] > f.logits[best]) best = static_cast<int>(c);
  return best;
}

double DemoModel::accuracy(const std::vector<StripesSample>& batch) const {
  if (batch.empty()) return 0;
  std::vector<int> hits(batch.size());
  parallel_for(static_cast<std::int64_t>(batch.size()), [&](std::int64_t b0, std::int64_t b1) {
    for (std::int64_t i = b0; i < b1; ++i)
      hits[static_cast<std::size_t>(i)] =
          predict(batch[static_cast<std::size_t>(i)].image) ==
          batch[static_cast<std::size_t>(i)].label;
  }, 1);
  double correct = 0;
  for (int h : hits) correct += h;
  return correct / static_cast<double>(batch.size());
}

}  // namespace vana
