// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "chela/error.hpp"
#include "chela/kernels.hpp"

namespace chela::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(CHELA_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__)) && \
    (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() noexcept {
  if (const char* env = std::getenv("CHELA_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Backend::avx2;
  }
  return detect_backend();
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> b{initial_backend()};
  return b;
}

template <class T>
constexpr KernelTable<T> scalar_table{&scalar::gemm<T>, &scalar::dot<T>, &scalar::axpy<T>};

#if defined(CHELA_HAVE_AVX2)
template <class T>
KernelTable<T> make_avx2_table();
template <>
KernelTable<float> make_avx2_table<float>() {
  return {&avx2::gemm_f32, &avx2::dot_f32, &avx2::axpy_f32};
}
template <>
KernelTable<double> make_avx2_table<double>() {
  return {&avx2::gemm_f64, &avx2::dot_f64, &avx2::axpy_f64};
}
#endif

}  // namespace

std::string_view backend_name(Backend b) noexcept {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "unknown";
}

bool backend_supported(Backend b) noexcept {
  return b == Backend::scalar || (b == Backend::avx2 && cpu_has_avx2());
}

Backend detect_backend() noexcept { return cpu_has_avx2() ? Backend::avx2 : Backend::scalar; }

Backend active_backend() noexcept { return active().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (!backend_supported(b)) {
    throw ConfigError("kernel backend '" + std::string(backend_name(b)) + "' is not available");
  }
  active().store(b, std::memory_order_relaxed);
}

template <class T>
const KernelTable<T>& table(Backend b) {
#if defined(CHELA_HAVE_AVX2)
  static const KernelTable<T> avx2_table = make_avx2_table<T>();
  if (b == Backend::avx2) {
    if (!cpu_has_avx2()) throw ConfigError("avx2 kernels requested on a CPU without AVX2/FMA");
    return avx2_table;
  }
#else
  if (b == Backend::avx2) throw ConfigError("built without AVX2 kernels");
#endif
  return scalar_table<T>;
}

template <class T>
const KernelTable<T>& active_table() {
  return table<T>(active_backend());
}

template const KernelTable<float>& table<float>(Backend);
template const KernelTable<double>& table<double>(Backend);
template const KernelTable<float>& active_table<float>();
template const KernelTable<double>& active_table<double>();

}  // namespace chela::kernels
