// SPDX-License-Identifier: Apache-2.0
#include <cstddef>

#include "chela/kernels.hpp"

namespace chela::kernels::scalar {

template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = alpha * (ta == Trans::no ? a[i * lda + p] : a[p * lda + i]);
      if (tb == Trans::no) {
        const T* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b[j * ldb + p];
      }
    }
  }
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

#define CHELA_INSTANTIATE(T)                                                                      \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, T, const T*,         \
                        std::size_t, const T*, std::size_t, T, T*, std::size_t);                  \
  template T dot<T>(const T*, const T*, std::size_t);                                             \
  template void axpy<T>(std::size_t, T, const T*, T*);

CHELA_INSTANTIATE(float)
CHELA_INSTANTIATE(double)
#undef CHELA_INSTANTIATE

}  // namespace chela::kernels::scalar
