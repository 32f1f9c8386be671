// SPDX-License-Identifier: Apache-2.0
//
// Per-token normalizations over the trailing (feature) axis.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "chela/tensor.hpp"

namespace chela {

inline constexpr double kDefaultNormEps = 1e-6;

/// y_i = gain_i * x_i / sqrt(mean(x^2) + eps). A zero vector maps to zero even
/// when eps == 0.
template <class T>
std::vector<T> rms_norm(std::span<const T> x, std::span<const T> gain, T eps);

/// Standard mean/variance normalization (two-pass, biased variance) with affine.
template <class T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps);

// Row-wise kernels used by the layers: `rows` tokens of width `d`.
// The forward passes record 1/rms (resp. 1/std) per row for the backward.

template <class T>
void rms_norm_rows(const T* x, const T* gain, T eps, std::size_t rows, std::size_t d, T* y, T* inv_rms);

/// dx is overwritten; dgain is accumulated into.
template <class T>
void rms_norm_rows_backward(const T* x, const T* gain, const T* inv_rms, const T* dy, std::size_t rows,
                            std::size_t d, T* dx, T* dgain);

template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps, std::size_t rows, std::size_t d,
                     T* y, T* mean, T* inv_std);

/// dx is overwritten; dgain/dbias are accumulated into.
template <class T>
void layer_norm_rows_backward(const T* x, const T* gain, const T* mean, const T* inv_std, const T* dy,
                              std::size_t rows, std::size_t d, T* dx, T* dgain, T* dbias);

}  // namespace chela
