#include "vana/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace vana {

namespace {
std::atomic<int> g_threads{1};
thread_local bool g_in_worker = false;  // nested calls run inline
}  // namespace

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

int threads() { return g_threads.load(std::memory_order_relaxed); }

void set_threads(int n) { g_threads.store(std::max(1, n), std::memory_order_relaxed); }

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& body,
                  std::int64_t grain) {
  if (n <= 0) return;
  int workers = threads();
  if (workers <= 1 || g_in_worker || n < grain) {
    body(0, n);
    return;
  }
  workers = static_cast<int>(std::min<std::int64_t>(workers, n));
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  for (int w = 1; w < workers; ++w) {
    std::int64_t begin = w * chunk;
    std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] {
      g_in_worker = true;
      body(begin, end);
    });
  }
  struct WorkerFlag {
    WorkerFlag() { g_in_worker = true; }
    ~WorkerFlag() { g_in_worker = false; }
  };
  {
    WorkerFlag scope;
    body(0, std::min<std::int64_t>(chunk, n));
  }
  for (auto& t : pool) t.join();
}

}  // namespace vana
