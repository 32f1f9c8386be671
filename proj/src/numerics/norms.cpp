// SPDX-License-Identifier: Apache-2.0
#include "chela/norms.hpp"

#include <cmath>
#include <string>

#include "chela/error.hpp"

namespace chela {

template <class T>
void rms_norm_rows(const T* x, const T* gain, T eps, std::size_t rows, std::size_t d, T* y, T* inv_rms) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
    T ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
    const T ms = ss / T(d) + eps;
    // 0/0 for an exactly-zero row with eps == 0: define the output as zero.
    const T inv = ms > T(0) ? T(1) / std::sqrt(ms) : T(0);
    inv_rms[r] = inv;
    for (std::size_t i = 0; i < d; ++i) yr[i] = gain[i] * xr[i] * inv;
  }
}

template <class T>
void rms_norm_rows_backward(const T* x, const T* gain, const T* inv_rms, const T* dy, std::size_t rows,
                            std::size_t d, T* dx, T* dgain) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    const T* dyr = dy + r * d;
    T* dxr = dx + r * d;
    const T inv = inv_rms[r];
    T proj = 0;  // sum_i gain_i dy_i x_i
    for (std::size_t i = 0; i < d; ++i) {
      proj += gain[i] * dyr[i] * xr[i];
      dgain[i] += dyr[i] * xr[i] * inv;
    }
    const T coef = proj * inv * inv * inv / T(d);
    for (std::size_t i = 0; i < d; ++i) dxr[i] = gain[i] * dyr[i] * inv - xr[i] * coef;
  }
}

template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps, std::size_t rows, std::size_t d,
                     T* y, T* mean, T* inv_std) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var = var / T(d) + eps;
    const T inv = var > T(0) ? T(1) / std::sqrt(var) : T(0);
    mean[r] = mu;
    inv_std[r] = inv;
    for (std::size_t i = 0; i < d; ++i) yr[i] = gain[i] * (xr[i] - mu) * inv + bias[i];
  }
}

template <class T>
void layer_norm_rows_backward(const T* x, const T* gain, const T* mean, const T* inv_std, const T* dy,
                              std::size_t rows, std::size_t d, T* dx, T* dgain, T* dbias) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    const T* dyr = dy + r * d;
    T* dxr = dx + r * d;
    const T mu = mean[r];
    const T inv = inv_std[r];
    T sum_g = 0;
    T sum_gx = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const T xhat = (xr[i] - mu) * inv;
      const T g = dyr[i] * gain[i];
      sum_g += g;
      sum_gx += g * xhat;
      dgain[i] += dyr[i] * xhat;
      dbias[i] += dyr[i];
    }
    sum_g /= T(d);
    sum_gx /= T(d);
    for (std::size_t i = 0; i < d; ++i) {
      const T xhat = (xr[i] - mu) * inv;
      dxr[i] = inv * (dyr[i] * gain[i] - sum_g - xhat * sum_gx);
    }
  }
}

template <class T>
std::vector<T> rms_norm(std::span<const T> x, std::span<const T> gain, T eps) {
  if (x.size() != gain.size()) {
    throw ShapeError("rms_norm: length mismatch " + std::to_string(x.size()) + " vs " +
                     std::to_string(gain.size()));
  }
  if (x.empty()) throw ShapeError("rms_norm: empty input");
  std::vector<T> y(x.size());
  T inv;
  rms_norm_rows(x.data(), gain.data(), eps, 1, x.size(), y.data(), &inv);
  return y;
}

template <class T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps) {
  if (x.size() != gain.size() || x.size() != bias.size()) throw ShapeError("layer_norm: length mismatch");
  if (x.empty()) throw ShapeError("layer_norm: empty input");
  std::vector<T> y(x.size());
  T mean, inv;
  layer_norm_rows(x.data(), gain.data(), bias.data(), eps, 1, x.size(), y.data(), &mean, &inv);
  return y;
}

#define CHELA_INSTANTIATE(T)                                                                          \
  template void rms_norm_rows<T>(const T*, const T*, T, std::size_t, std::size_t, T*, T*);            \
  template void rms_norm_rows_backward<T>(const T*, const T*, const T*, const T*, std::size_t,        \
                                          std::size_t, T*, T*);                                       \
  template void layer_norm_rows<T>(const T*, const T*, const T*, T, std::size_t, std::size_t, T*, T*, \
                                   T*);                                                               \
  template void layer_norm_rows_backward<T>(const T*, const T*, const T*, const T*, const T*,         \
                                            std::size_t, std::size_t, T*, T*, T*);                    \
  template std::vector<T> rms_norm<T>(std::span<const T>, std::span<const T>, T);                     \
  template std::vector<T> layer_norm<T>(std::span<const T>, std::span<const T>, std::span<const T>, T);

CHELA_INSTANTIATE(float)
CHELA_INSTANTIATE(double)
#undef CHELA_INSTANTIATE

}  // namespace chela
