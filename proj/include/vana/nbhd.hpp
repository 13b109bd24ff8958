#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vana {

// A (kernel, dilation) pair invalid for the axis it is applied to.
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Receptive field of one attention head along one axis: kernel tokens spaced
// dilation apart. Valid for an axis of length L iff L >= kernel * dilation,
// which guarantees every dilation class holds at least kernel positions.
struct NeighborhoodSpec {
  int kernel = 3;
  int dilation = 1;

  bool valid_for(std::int64_t length) const {
    return kernel >= 1 && kernel % 2 == 1 && dilation >= 1 &&
           length >= static_cast<std::int64_t>(kernel) * dilation;
  }
  void require_valid(std::int64_t length) const;

  bool operator==(const NeighborhoodSpec&) const = default;
};

// The kernel indices of query i along an axis of length `length`: the window
// of `kernel` consecutive ranks inside i's dilation class, centered on i and
// shifted (never shrunk) to stay in bounds. Ascending; always contains i.
std::vector<int> neighbors_1d(int i, int length, const NeighborhoodSpec& spec);

// Cartesian product of the row and column windows, row-major.
std::vector<std::pair<int, int>> neighbors_2d(std::pair<int, int> pos, std::pair<int, int> dims,
                                              const NeighborhoodSpec& spec);

// Precomputed per-position windows for one axis, used by the attention
// kernels. Neighbor j of position i sits at index first[i] + dilation*j and
// at relative rank rel0[i] + j from the query's own rank (for bias lookup).
struct AxisWindows {
  std::vector<int> first;
  std::vector<int> rel0;
  int kernel = 0;
  int dilation = 1;

  int index(int i, int j) const { return first[static_cast<std::size_t>(i)] + dilation * j; }
  int rel(int i, int j) const { return rel0[static_cast<std::size_t>(i)] + j; }
};

AxisWindows build_axis_windows(int length, const NeighborhoodSpec& spec);

// Largest legal dilation for a kernel at resolution R: floor(R/k).
// Kernels are restricted to odd sizes in [3, R-1].
int max_dilation(int resolution, int kernel);

// Number of legal (kernel, dilation) head configurations at an even
// resolution R: sum over odd kernels k=3,5,...,R-1 of floor(R/k).
std::int64_t count_head_configs(int resolution);

// Algebraically equal form for R divisible by 4; every kernel above R/2
// admits exactly one dilation.
std::int64_t count_head_configs_simplified(int resolution);

struct LevelSpec {
  int heads = 0;
  int resolution = 0;
};

struct ArchLayout {
  std::vector<LevelSpec> levels;
  int transformers_per_level = 1;
};

// Total head configurations across an architecture:
// transformers_per_level * sum over levels of heads * N_c(resolution).
std::int64_t count_arch_configs(const std::vector<LevelSpec>& levels, int transformers_per_level);

// Layout files are line-oriented key/value pairs:
//   transformers_per_level = 2
//   level = <resolution> <heads>
// '#' starts a comment. Throws std::runtime_error on malformed input.
ArchLayout parse_layout_file(const std::filesystem::path& path);

}  // namespace vana
