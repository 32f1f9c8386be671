// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace chela {

/// Worker count for parallel_for. Defaults to CHELA_THREADS (or 1).
std::size_t num_threads() noexcept;
void set_num_threads(std::size_t n) noexcept;

/// Runs f(i) for i in [0, n) split into contiguous ranges. Callers only use
/// it where iterations write disjoint outputs, so results do not depend on
/// the thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  const std::size_t per = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = w * per, hi = std::min(n, lo + per);
    pool.emplace_back([&f, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) f(i);
    });
  }
  for (std::size_t i = 0; i < std::min(n, per); ++i) f(i);
}

}  // namespace chela
