#pragma once

#include <random>

#include "vana/tensor.hpp"

namespace vana {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, T sigma = T(1)) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<T> dist(T(0), sigma);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

template <typename T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, T lo, T hi) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<T> dist(lo, hi);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace vana
