#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mvmm {

// Splits [0, n) into at most `workers` contiguous chunks and runs
// fn(begin, end, chunk_index) on each. Chunk boundaries depend only on
// (n, workers), never on thread timing, so ordered reductions over the
// per-chunk partials are reproducible for a fixed worker count.
inline void parallel_chunks(
    std::size_t n, int workers,
    const std::function<void(std::size_t, std::size_t, int)>& fn) {
  if (n == 0) return;
  int w = std::max(1, workers);
  if (static_cast<std::size_t>(w) > n) w = static_cast<int>(n);
  if (w == 1 || n < 2048) {
    fn(0, n, 0);
    return;
  }
  const std::size_t chunk = (n + static_cast<std::size_t>(w) - 1) / w;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (int c = 0; c < w; ++c) {
    const std::size_t b = std::min(n, static_cast<std::size_t>(c) * chunk);
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, c] { fn(b, e, c); });
  }
  for (auto& t : pool) t.join();
}

// Number of chunks parallel_chunks will use; callers size partial buffers
// with this so reductions stay ordered.
inline int chunk_count(std::size_t n, int workers) {
  if (n == 0) return 0;
  int w = std::max(1, workers);
  if (static_cast<std::size_t>(w) > n) w = static_cast<int>(n);
  if (w == 1 || n < 2048) return 1;
  const std::size_t chunk = (n + static_cast<std::size_t>(w) - 1) / w;
  return static_cast<int>((n + chunk - 1) / chunk);
}

// Resolves the effective worker count: explicit request wins, then the
// MVMM_WORKERS environment variable, then single-threaded.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MVMM_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

}  // namespace mvmm
