// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "chela/tensor.hpp"

namespace chela {

struct AdamWHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

template <class T>
struct OptimState {
  std::vector<Tensor<T>> m, v;  // one pair per slot, created lazily
  std::uint64_t step = 0;
};

template <class T>
struct OptimSlot {
  Tensor<T>* param;
  const Tensor<T>* grad;
  bool decay = true;
};

/// Bias-corrected AdamW with decoupled weight decay:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
/// Non-finite gradients abort the step (NumericError) before anything changes.
template <class T>
void adamw_step(std::span<const OptimSlot<T>> slots, OptimState<T>& state, const AdamWHyper& h);

/// Global L2 norm over all gradients.
template <class T>
double global_grad_norm(std::span<const OptimSlot<T>> slots);

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
template <class T>
double clip_grad_norm(std::span<Tensor<T>* const> grads, double max_norm);

/// Linear warmup to the base rate over `warmup` steps, then constant.
inline double warmup_lr(double base, std::uint64_t step, std::uint64_t warmup) {
  if (warmup == 0 || step >= warmup) return base;
  return base * double(step + 1) / double(warmup);
}

}  // namespace chela
