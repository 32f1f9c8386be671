// SPDX-License-Identifier: Apache-2.0
#include "chela/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace chela {
namespace {

std::size_t threads_from_env() noexcept {
  if (const char* env = std::getenv("CHELA_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return std::size_t(v);
    } catch (...) {
    }
  }
  return 1;
}

std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n{threads_from_env()};
  return n;
}

}  // namespace

std::size_t num_threads() noexcept { return thread_setting().load(std::memory_order_relaxed); }

void set_num_threads(std::size_t n) noexcept { thread_setting().store(n == 0 ? 1 : n); }

}  // namespace chela
