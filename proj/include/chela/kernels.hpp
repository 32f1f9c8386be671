// SPDX-License-Identifier: Apache-2.0
//
// Dense inner-loop kernels. Every routine has a portable scalar reference
// and, on x86-64, an AVX2/FMA variant compiled in its own translation unit.
// The active backend is chosen once at startup from CPUID and can be pinned
// with CHELA_SIMD=scalar|avx2 or set_backend().
#pragma once

#include <cstddef>
#include <string_view>

namespace chela::kernels {

enum class Backend { scalar, avx2 };

enum class Trans { no, yes };

std::string_view backend_name(Backend b) noexcept;
bool backend_supported(Backend b) noexcept;
/// Best backend the running CPU supports.
Backend detect_backend() noexcept;
Backend active_backend() noexcept;
/// Throws ConfigError when `b` is not supported on this CPU or build.
void set_backend(Backend b);

/// Row-major C = alpha * op(A) * op(B) + beta * C with op(A): m x k,
/// op(B): k x n. When beta == 0, C is overwritten without being read.
template <class T>
using GemmFn = void (*)(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
                        const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
                        std::size_t ldc);
template <class T>
using DotFn = T (*)(const T* x, const T* y, std::size_t n);
/// y += alpha * x
template <class T>
using AxpyFn = void (*)(std::size_t n, T alpha, const T* x, T* y);

template <class T>
struct KernelTable {
  GemmFn<T> gemm;
  DotFn<T> dot;
  AxpyFn<T> axpy;
};

/// Table for a specific backend, for equivalence testing.
template <class T>
const KernelTable<T>& table(Backend b);

template <class T>
const KernelTable<T>& active_table();

template <class T>
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
                 std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  active_table<T>().gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
inline T dot(const T* x, const T* y, std::size_t n) {
  return active_table<T>().dot(x, y, n);
}

template <class T>
inline void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active_table<T>().axpy(n, alpha, x, y);
}

namespace scalar {
template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);
template <class T>
T dot(const T* x, const T* y, std::size_t n);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace scalar

namespace avx2 {
void gemm_f32(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
              const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
              std::size_t ldc);
void gemm_f64(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
              const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
              double* c, std::size_t ldc);
float dot_f32(const float* x, const float* y, std::size_t n);
double dot_f64(const double* x, const double* y, std::size_t n);
void axpy_f32(std::size_t n, float alpha, const float* x, float* y);
void axpy_f64(std::size_t n, double alpha, const double* x, double* y);
}  // namespace avx2

}  // namespace chela::kernels
