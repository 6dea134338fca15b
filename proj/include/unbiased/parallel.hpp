#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace unbiased {

/// Global worker count used by parallel_for; 1 runs inline.
inline int &thread_count() {
  static int count = 1;
  return count;
}

/// Calls fn(i) for i in [0, count) over contiguous chunks. Callers write results
/// by index, so output never depends on scheduling.
template <typename Fn> void parallel_for(std::size_t count, Fn &&fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, thread_count()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto &t : pool) t.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

} // namespace unbiased
