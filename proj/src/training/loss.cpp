// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "chela/error.hpp"
#include "chela/loss.hpp"

namespace chela {

template <class T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> targets,
                            std::span<const std::uint8_t> mask) {
  if (logits.empty()) throw ShapeError("cross_entropy: empty logits");
  const std::size_t V = logits.dim(logits.rank() - 1), rows = logits.size() / V;
  if (targets.size() != rows) throw ShapeError("cross_entropy: one target per row expected");
  if (!mask.empty() && mask.size() != rows) throw ShapeError("cross_entropy: mask length mismatch");

  LossResult<T> r;
  for (std::size_t i = 0; i < rows; ++i) r.count += mask.empty() || mask[i];
  if (r.count == 0) throw ConfigError("cross_entropy: mask selects no positions");
  r.grad = Tensor<T>(logits.shape());

  const double inv_n = 1.0 / double(r.count);
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (targets[i] >= V) throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " >= vocab");
    const T* z = logits.ptr() + i * V;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < V; ++j)
      if (z[j] > z[arg]) arg = j;
    const double mx = double(z[arg]);
    double sum = 0;
    for (std::size_t j = 0; j < V; ++j) sum += std::exp(double(z[j]) - mx);
    const double lse = mx + std::log(sum);
    total += lse - double(z[targets[i]]);
    r.correct += arg == targets[i];
    T* g = r.grad.ptr() + i * V;
    for (std::size_t j = 0; j < V; ++j) g[j] = T(std::exp(double(z[j]) - lse) * inv_n);
    g[targets[i]] -= T(inv_n);
  }
  r.loss = total * inv_n;
  if (!std::isfinite(r.loss)) throw NumericError("cross_entropy: non-finite loss");
  return r;
}

template <class T>
LossResult<T> mse_loss(const Tensor<T>& pred, std::span<const double> targets) {
  if (pred.size() != targets.size() || targets.empty()) {
    throw ShapeError("mse_loss: one prediction per target expected");
  }
  LossResult<T> r;
  r.count = targets.size();
  r.grad = Tensor<T>(pred.shape());
  const double inv_n = 1.0 / double(r.count);
  double total = 0;
  for (std::size_t i = 0; i < r.count; ++i) {
    const double e = double(pred[i]) - targets[i];
    total += e * e;
    r.grad[i] = T(2.0 * e * inv_n);
  }
  r.loss = total * inv_n;
  if (!std::isfinite(r.loss)) throw NumericError("mse_loss: non-finite loss");
  return r;
}

template LossResult<float> cross_entropy<float>(const Tensor<float>&, std::span<const std::uint32_t>,
                                                std::span<const std::uint8_t>);
template LossResult<double> cross_entropy<double>(const Tensor<double>&, std::span<const std::uint32_t>,
                                                  std::span<const std::uint8_t>);
template LossResult<float> mse_loss<float>(const Tensor<float>&, std::span<const double>);
template LossResult<double> mse_loss<double>(const Tensor<double>&, std::span<const double>);

}  // namespace chela
