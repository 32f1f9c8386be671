// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "chela/tensor.hpp"

namespace chela {

template <class T>
struct LossResult {
  double loss = 0;
  Tensor<T> grad;  // d loss / d input, same shape as the input
  std::size_t count = 0;    // scored positions
  std::size_t correct = 0;  // argmax hits (classification only)
  double accuracy() const { return count ? double(correct) / double(count) : 0.0; }
};

/// Mean over unmasked rows of -log softmax(logits)[target]. Logits are
/// [N, V] or [B, L, V]; one target and mask flag per row. An empty mask (or
/// one selecting nothing) is a ConfigError. An empty mask span scores every row.
template <class T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> targets,
                            std::span<const std::uint8_t> mask);

/// Mean squared error of predictions [B, 1] against targets [B].
template <class T>
LossResult<T> mse_loss(const Tensor<T>& pred, std::span<const double> targets);

}  // namespace chela
