// SPDX-License-Identifier: Apache-2.0
//
// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after dispatch.cpp has confirmed CPU support.
#include <immintrin.h>

#include <cstddef>
#include <vector>

#include "chela/kernels.hpp"

namespace chela::kernels::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

// MR x (NV * W) register tile: acc += A[MR, k] * B[k, NV*W], then C = alpha*acc + beta*C.
template <class Tr, std::size_t MR, std::size_t NV>
inline void tile(std::size_t k, const typename Tr::T* a, std::size_t as, const typename Tr::T* b,
                 std::size_t bs, typename Tr::T alpha, typename Tr::T beta, typename Tr::T* c,
                 std::size_t cs) {
  using V = typename Tr::V;
  V acc[MR][NV];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = Tr::zero();
  for (std::size_t p = 0; p < k; ++p) {
    V bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = Tr::load(b + p * bs + v * Tr::W);
    for (std::size_t r = 0; r < MR; ++r) {
      const V ar = Tr::set1(a[r * as + p]);
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] = Tr::fmadd(ar, bv[v], acc[r][v]);
    }
  }
  const V va = Tr::set1(alpha);
  const V vb = Tr::set1(beta);
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t v = 0; v < NV; ++v) {
      typename Tr::T* dst = c + r * cs + v * Tr::W;
      V out = Tr::mul(va, acc[r][v]);
      if (beta != 0) out = Tr::fmadd(vb, Tr::load(dst), out);
      Tr::store(dst, out);
    }
  }
}

template <class Tr, std::size_t NV>
inline void column_panel(std::size_t m, std::size_t k, const typename Tr::T* a, std::size_t as,
                         const typename Tr::T* b, std::size_t bs, typename Tr::T alpha,
                         typename Tr::T beta, typename Tr::T* c, std::size_t cs) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) tile<Tr, 4, NV>(k, a + i * as, as, b, bs, alpha, beta, c + i * cs, cs);
  for (; i < m; ++i) tile<Tr, 1, NV>(k, a + i * as, as, b, bs, alpha, beta, c + i * cs, cs);
}

template <class Tr>
void gemm_impl(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, typename Tr::T alpha,
               const typename Tr::T* a, std::size_t lda, const typename Tr::T* b, std::size_t ldb,
               typename Tr::T beta, typename Tr::T* c, std::size_t ldc) {
  using T = typename Tr::T;
  if (m == 0 || n == 0) return;
  thread_local std::vector<T> pack_a;
  thread_local std::vector<T> pack_b;

  const T* A = a;
  std::size_t as = lda;
  if (ta == Trans::yes) {
    pack_a.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) pack_a[i * k + p] = a[p * lda + i];
    A = pack_a.data();
    as = k;
  }
  const T* B = b;
  std::size_t bs = ldb;
  if (tb == Trans::yes) {
    pack_b.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) pack_b[p * n + j] = b[j * ldb + p];
    B = pack_b.data();
    bs = n;
  }

  constexpr std::size_t W = Tr::W;
  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) column_panel<Tr, 2>(m, k, A, as, B + j, bs, alpha, beta, c + j, ldc);
  for (; j + W <= n; j += W) column_panel<Tr, 1>(m, k, A, as, B + j, bs, alpha, beta, c + j, ldc);
  for (; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * as + p] * B[p * bs + j];
      T& dst = c[i * ldc + j];
      dst = beta == T(0) ? alpha * s : alpha * s + beta * dst;
    }
  }
}

template <class Tr>
typename Tr::T dot_impl(const typename Tr::T* x, const typename Tr::T* y, std::size_t n) {
  constexpr std::size_t W = Tr::W;
  typename Tr::V s0 = Tr::zero(), s1 = Tr::zero(), s2 = Tr::zero(), s3 = Tr::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    s0 = Tr::fmadd(Tr::load(x + i), Tr::load(y + i), s0);
    s1 = Tr::fmadd(Tr::load(x + i + W), Tr::load(y + i + W), s1);
    s2 = Tr::fmadd(Tr::load(x + i + 2 * W), Tr::load(y + i + 2 * W), s2);
    s3 = Tr::fmadd(Tr::load(x + i + 3 * W), Tr::load(y + i + 3 * W), s3);
  }
  for (; i + W <= n; i += W) s0 = Tr::fmadd(Tr::load(x + i), Tr::load(y + i), s0);
  typename Tr::T s = Tr::hsum(Tr::add(Tr::add(s0, s1), Tr::add(s2, s3)));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class Tr>
void axpy_impl(std::size_t n, typename Tr::T alpha, const typename Tr::T* x, typename Tr::T* y) {
  constexpr std::size_t W = Tr::W;
  const typename Tr::V va = Tr::set1(alpha);
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    Tr::store(y + i, Tr::fmadd(va, Tr::load(x + i), Tr::load(y + i)));
    Tr::store(y + i + W, Tr::fmadd(va, Tr::load(x + i + W), Tr::load(y + i + W)));
  }
  for (; i + W <= n; i += W) Tr::store(y + i, Tr::fmadd(va, Tr::load(x + i), Tr::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void gemm_f32(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
              const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
              std::size_t ldc) {
  gemm_impl<F32>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f64(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
              const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
              double* c, std::size_t ldc) {
  gemm_impl<F64>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

float dot_f32(const float* x, const float* y, std::size_t n) { return dot_impl<F32>(x, y, n); }
double dot_f64(const double* x, const double* y, std::size_t n) { return dot_impl<F64>(x, y, n); }
void axpy_f32(std::size_t n, float alpha, const float* x, float* y) { axpy_impl<F32>(n, alpha, x, y); }
void axpy_f64(std::size_t n, double alpha, const double* x, double* y) {
  axpy_impl<F64>(n, alpha, x, y);
}

}  // namespace chela::kernels::avx2
