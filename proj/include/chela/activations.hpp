// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "chela/tensor.hpp"

namespace chela {

enum class Activation { silu, sigmoid };

template <class T>
inline T sigmoid(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
inline T silu(T x) noexcept {
  return x * sigmoid(x);
}

/// d silu / dx = s(x) * (1 + x * (1 - s(x)))
template <class T>
inline T silu_grad(T x) noexcept {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

template <class T>
inline T sigmoid_grad(T x) noexcept {
  const T s = sigmoid(x);
  return s * (T(1) - s);
}

/// Elementwise activation; throws NumericError on non-finite input.
template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);

/// Vector-Jacobian product of activation() at `x` with cotangent `dy`.
template <class T>
Tensor<T> activation_vjp(Activation kind, const Tensor<T>& x, const Tensor<T>& dy);

}  // namespace chela
