#include "vana/rollout.hpp"

#include <cmath>
#include <fstream>

namespace vana {

Tensor<double> scatter_probability_mass(const Tensor<double>& probs,
                                        const NeighborhoodSpec& spec) {
  if (probs.rank() != 3)
    throw ShapeError("scatter_probability_mass: probabilities must be [H,W,k*k], got " +
                     shape_str(probs.shape()));
  const std::int64_t H = probs.dim(0), W = probs.dim(1);
  const int k = spec.kernel;
  const std::int64_t win = static_cast<std::int64_t>(k) * k;
  if (probs.dim(2) != win)
    throw ShapeError("scatter_probability_mass: window extent " + std::to_string(probs.dim(2)) +
                     " does not match kernel " + std::to_string(k));
  const AxisWindows rows = build_axis_windows(static_cast<int>(H), spec);
  const AxisWindows cols = build_axis_windows(static_cast<int>(W), spec);

  Tensor<double> raw({H, W});
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) {
      const double* p = probs.data() + (r * W + c) * win;
      double mass = 0;
      for (std::int64_t j = 0; j < win; ++j) mass += p[j];
      if (std::abs(mass - 1.0) > 1e-6 && mass != 0.0)
        throw ValueError("scatter_probability_mass: query (" + std::to_string(r) + "," +
                         std::to_string(c) + ") has probability mass " + std::to_string(mass));
      for (int jr = 0; jr < k; ++jr) {
        const std::int64_t nr = rows.index(static_cast<int>(r), jr);
        for (int jc = 0; jc < k; ++jc) {
          const std::int64_t nc = cols.index(static_cast<int>(c), jc);
          raw(nr, nc) += p[jr * k + jc];
        }
      }
    }
  return raw;
}

DensityMap accumulate_density(const Tensor<double>& probs, const NeighborhoodSpec& spec,
                              int layer, int head) {
  DensityMap map;
  map.layer = layer;
  map.head = head;
  map.values = scatter_probability_mass(probs, spec);
  const double peak = max_abs(map.values);
  if (peak > 0)
    for (std::int64_t i = 0; i < map.values.size(); ++i) map.values[i] /= peak;
  return map;
}

void write_pgm(const DensityMap& map, const std::filesystem::path& path) {
  if (map.values.rank() != 2)
    throw ShapeError("write_pgm: map must be [H,W], got " + shape_str(map.values.shape()));
  const std::int64_t H = map.values.dim(0), W = map.values.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << W << ' ' << H << "\n255\n";
  for (std::int64_t i = 0; i < map.values.size(); ++i) {
    const double v = map.values[i];
    if (v < 0.0 || v > 1.0)
      throw ValueError("write_pgm: value " + std::to_string(v) + " outside [0,1]");
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

}  // namespace vana
