#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace seqorder {

// Process-wide thread budget. Seeded from SEQORDER_THREADS, overridable by
// the CLI's --threads flag.
inline std::atomic<std::size_t>& thread_budget_storage() {
  static std::atomic<std::size_t> budget = [] {
    if (const char* env = std::getenv("SEQORDER_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v > 0) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return std::size_t{1};
  }();
  return budget;
}

inline std::size_t thread_budget() { return thread_budget_storage().load(); }
inline void set_thread_budget(std::size_t n) { thread_budget_storage().store(std::max<std::size_t>(1, n)); }

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is handled
// by exactly one chunk, so results are independent of the split as long as
// fn writes only to per-index outputs.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t min_chunk, Fn&& fn) {
  const std::size_t threads = std::min(thread_budget(), min_chunk ? n / min_chunk : n);
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * per, end = std::min(n, begin + per);
    if (begin < end) pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(n, per));
  for (auto& th : pool) th.join();
}

}  // namespace seqorder
