#include "vana/nbhd.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace vana {

void NeighborhoodSpec::require_valid(std::int64_t length) const {
  if (!valid_for(length))
    throw GeometryError("neighborhood (k=" + std::to_string(kernel) +
                        ", d=" + std::to_string(dilation) + ") invalid for axis length " +
                        std::to_string(length) + ": need odd k >= 1, d >= 1, length >= k*d");
}

AxisWindows build_axis_windows(int length, const NeighborhoodSpec& spec) {
  spec.require_valid(length);
  const int k = spec.kernel, d = spec.dilation;
  AxisWindows w;
  w.kernel = k;
  w.dilation = d;
  w.first.resize(static_cast<std::size_t>(length));
  w.rel0.resize(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    const int g = i % d;                       // dilation class
    const int rank = (i - g) / d;              // position within the class
    const int class_size = (length - g + d - 1) / d;
    int start = rank - (k - 1) / 2;
    start = std::clamp(start, 0, class_size - k);
    w.first[static_cast<std::size_t>(i)] = g + d * start;
    w.rel0[static_cast<std::size_t>(i)] = start - rank;
  }
  return w;
}

std::vector<int> neighbors_1d(int i, int length, const NeighborhoodSpec& spec) {
  spec.require_valid(length);
  if (i < 0 || i >= length)
    throw GeometryError("neighbors_1d: index " + std::to_string(i) + " outside axis of length " +
                        std::to_string(length));
  const AxisWindows w = build_axis_windows(length, spec);
  std::vector<int> out(static_cast<std::size_t>(spec.kernel));
  for (int j = 0; j < spec.kernel; ++j) out[static_cast<std::size_t>(j)] = w.index(i, j);
  return out;
}

std::vector<std::pair<int, int>> neighbors_2d(std::pair<int, int> pos, std::pair<int, int> dims,
                                              const NeighborhoodSpec& spec) {
  const auto rows = neighbors_1d(pos.first, dims.first, spec);
  const auto cols = neighbors_1d(pos.second, dims.second, spec);
  std::vector<std::pair<int, int>> out;
  out.reserve(rows.size() * cols.size());
  for (int r : rows)
    for (int c : cols) out.emplace_back(r, c);
  return out;
}

int max_dilation(int resolution, int kernel) {
  if (kernel % 2 == 0)
    throw GeometryError("max_dilation: kernel must be odd, got " + std::to_string(kernel));
  if (kernel < 3 || kernel > resolution - 1)
    throw GeometryError("max_dilation: kernel " + std::to_string(kernel) +
                        " outside [3, " + std::to_string(resolution - 1) + "] for resolution " +
                        std::to_string(resolution));
  return resolution / kernel;
}

std::int64_t count_head_configs(int resolution) {
  if (resolution < 4 || resolution % 2 != 0)
    throw GeometryError("count_head_configs: resolution must be even and >= 4, got " +
                        std::to_string(resolution));
  std::int64_t total = 0;
  for (int i = 1; i <= resolution / 2 - 1; ++i) total += resolution / (2 * i + 1);
  return total;
}

std::int64_t count_head_configs_simplified(int resolution) {
  if (resolution < 4 || resolution % 4 != 0)
    throw GeometryError("count_head_configs_simplified: resolution must be divisible by 4, got " +
                        std::to_string(resolution));
  std::int64_t total = resolution / 4;
  for (int i = 1; i <= resolution / 4 - 1; ++i) total += resolution / (2 * i + 1);
  return total;
}

std::int64_t count_arch_configs(const std::vector<LevelSpec>& levels,
                                int transformers_per_level) {
  if (levels.empty()) throw GeometryError("count_arch_configs: empty layout");
  if (transformers_per_level < 1)
    throw GeometryError("count_arch_configs: transformers_per_level must be >= 1");
  std::int64_t total = 0;
  for (const auto& level : levels) {
    if (level.heads < 1)
      throw GeometryError("count_arch_configs: level at resolution " +
                          std::to_string(level.resolution) + " has no heads");
    total += static_cast<std::int64_t>(level.heads) * count_head_configs(level.resolution);
  }
  return total * transformers_per_level;
}

ArchLayout parse_layout_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("layout: cannot open " + path.string());
  ArchLayout layout;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw std::runtime_error("layout: missing '=' at " + path.string() + ":" +
                               std::to_string(lineno));
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), [](char c) { return c == ' ' || c == '\t'; }),
              key.end());
    std::istringstream value(line.substr(eq + 1));
    if (key == "transformers_per_level") {
      if (!(value >> layout.transformers_per_level) || layout.transformers_per_level < 1)
        throw std::runtime_error("layout: bad transformers_per_level at " + path.string() + ":" +
                                 std::to_string(lineno));
    } else if (key == "level") {
      LevelSpec level;
      if (!(value >> level.resolution >> level.heads) || level.resolution < 4 || level.heads < 1)
        throw std::runtime_error("layout: bad level (want 'level = <resolution> <heads>') at " +
                                 path.string() + ":" + std::to_string(lineno));
      layout.levels.push_back(level);
    } else {
      throw std::runtime_error("layout: unknown key '" + key + "' at " + path.string() + ":" +
                               std::to_string(lineno));
    }
  }
  if (layout.levels.empty())
    throw std::runtime_error("layout: no levels in " + path.string());
  return layout;
}

}  // namespace vana
