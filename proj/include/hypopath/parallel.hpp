#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hypopath {

// Thread cap: HYPOPATH_THREADS env var wins, otherwise hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("HYPOPATH_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Index-parallel loop. Each index writes to its own slot on the caller side,
// so results are identical for any thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  int threads = max_threads();
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  int spawn = std::min<std::size_t>(threads, n);
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace hypopath
