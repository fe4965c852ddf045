#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace pollidar {

/// Process-wide worker count for pixel-parallel loops. 0 means hardware
/// concurrency. All parallel loops partition statically and write disjoint
/// outputs, so results are identical for every setting.
inline int& thread_count() {
  static int n = 0;
  return n;
}

inline int resolved_thread_count() {
  int n = thread_count();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(n, 1);
}

/// Runs fn(i) for i in [0, n) on resolved_thread_count() workers with a
/// static block partition.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = resolved_thread_count();
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pollidar
