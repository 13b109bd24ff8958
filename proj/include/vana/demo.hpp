#pragma once

#include <cstdint>
#include <vector>

#include "vana/attention.hpp"
#include "vana/embed.hpp"

namespace vana {

// Built-in synthetic dataset: single-channel 16x16 images, class 0 carries
// horizontal stripes, class 1 vertical stripes, both with seeded N(0, 0.1)
// pixel noise and per-image stripe period/phase.
struct StripesSample {
  Tensor<double> image;  // [1, H, W]
  int label = 0;
};

struct StripesDataset {
  std::vector<StripesSample> samples;
  static StripesDataset make(int count, std::uint64_t seed, int extent = 16);
};

// Structured image (gradient + checkerboard + seeded noise) for the rollout
// demo.
Tensor<double> make_structured_image(int extent, std::uint64_t seed);

// Desk-scale classifier: conv tokenizer -> hydra attention blocks with
// residual connections -> seqpool -> linear head. Backward is hand-wired
// through the module VJPs.
struct DemoModelConfig {
  int in_channels = 1;
  int image_extent = 16;
  int d_model = 8;
  int blocks = 2;
  int classes = 2;
  HydraConfig hydra;
  TokenizerConfig tokenizer;
};

// One conv block (d_model filters, 3x3, stride 1, pad 1) + 3x3/2 pool, so a
// 16x16 image becomes an 8x8 token grid.
DemoModelConfig make_demo_config(const HydraConfig& hydra, int d_model = 8, int image_extent = 16);

struct DemoModel {
  DemoModelConfig cfg;
  TokenizerWeights<double> tokenizer;
  std::vector<AttentionParams<double>> attn;  // per block
  Tensor<double> pool_g;                      // [d_model]
  double pool_offset = 0;
  Tensor<double> w_cls;                       // [d_model, classes]
  Tensor<double> b_cls;                       // [classes]

  static DemoModel init(const DemoModelConfig& cfg, std::uint64_t seed);

  struct Forward {
    std::vector<Tensor<double>> block_in;               // [H',W',d] input per block
    std::vector<AttentionOutput<double>> block_attn;    // y + saved probs per block
    Tensor<double> pooled;                              // [1, d]
    Tensor<double> logits;                              // [1, classes]
  };
  Forward forward(const Tensor<double>& image) const;

  struct Gradients {
    std::vector<Tensor<double>> dkernels;
    std::vector<AttentionGrads<double>> dattn;
    Tensor<double> dpool_g;
    double dpool_offset = 0;
    Tensor<double> dw_cls;
    Tensor<double> db_cls;
  };
  Gradients zero_gradients() const;

  // Cross-entropy of one sample; gradients scaled by `weight` are accumulated
  // into `grads`.
  double accumulate_sample(const StripesSample& sample, double weight, Gradients& grads) const;

  double batch_loss_and_gradients(const std::vector<StripesSample>& batch,
                                  Gradients& grads) const;
  void apply_sgd(const Gradients& grads, double lr);

  int predict(const Tensor<double>& image) const;
  double accuracy(const std::vector<StripesSample>& batch) const;

  std::pair<std::int64_t, std::int64_t> token_grid() const {
    return cfg.tokenizer.grid_shape(cfg.image_extent, cfg.image_extent);
  }
};

}  // namespace vana
