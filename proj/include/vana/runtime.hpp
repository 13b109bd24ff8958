#pragma once

#include <cstdint>
#include <functional>

namespace vana {

// Kernel-level worker count. 1 (the default) runs everything inline on the
// calling thread, which is the deterministic mode used by tests.
int threads();
void set_threads(int n);
int hardware_threads();

// Splits [0, n) into contiguous chunks and runs body(begin, end) on each.
// Chunks never overlap, so writes to disjoint output rows need no locking.
// Results are identical for any worker count as long as each output element
// is produced by exactly one chunk. Loops shorter than `grain` run inline;
// pass grain 1 when each index is heavy (whole images, attention heads).
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& body,
                  std::int64_t grain = 256);

}  // namespace vana
