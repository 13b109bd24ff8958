#pragma once

#include <filesystem>

#include "vana/nbhd.hpp"
#include "vana/tensor.hpp"

namespace vana {

// Per-head spatial attention density, max-normalized to [0,1] so sparse heads
// stay visible next to dense ones.
struct DensityMap {
  Tensor<double> values;  // [H, W]
  int layer = 0;
  int head = 0;
};

// Raw deposited mass: each query scatters its k*k probabilities onto the grid
// positions of its neighborhood. Rows must sum to 1 (within 1e-6) or be all
// zero, so the total raw mass equals the number of non-zero queries.
Tensor<double> scatter_probability_mass(const Tensor<double>& probs, const NeighborhoodSpec& spec);

// scatter_probability_mass followed by max-normalization; an all-zero input
// stays all zero. probs: [H, W, k*k] saved by the attention forward pass.
DensityMap accumulate_density(const Tensor<double>& probs, const NeighborhoodSpec& spec,
                              int layer = 0, int head = 0);

// 8-bit binary PGM ("P5\n<W> <H>\n255\n" + rows of round(255*v)); byte-exact
// given identical maps.
void write_pgm(const DensityMap& map, const std::filesystem::path& path);

}  // namespace vana
