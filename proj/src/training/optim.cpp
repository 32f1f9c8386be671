// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "chela/error.hpp"
#include "chela/optim.hpp"

namespace chela {

template <class T>
void adamw_step(std::span<const OptimSlot<T>> slots, OptimState<T>& st, const AdamWHyper& h) {
  for (std::size_t s = 0; s < slots.size(); ++s) {
    require_same_shape(*slots[s].param, *slots[s].grad, "adamw_step");
    if (!slots[s].grad->all_finite()) {
      throw NumericError("adamw_step: non-finite gradient in slot " + std::to_string(s) + " at step " +
                         std::to_string(st.step + 1) + "; step aborted");
    }
  }
  if (st.m.empty()) {
    for (const auto& slot : slots) {
      st.m.emplace_back(slot.param->shape());
      st.v.emplace_back(slot.param->shape());
    }
  }
  if (st.m.size() != slots.size()) throw ShapeError("adamw_step: optimizer state has a different slot count");

  ++st.step;
  const double c1 = 1.0 - std::pow(h.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(h.beta2, double(st.step));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Tensor<T>& p = *slots[s].param;
    const Tensor<T>& g = *slots[s].grad;
    Tensor<T>& m = st.m[s];
    Tensor<T>& v = st.v[s];
    const double wd = slots[s].decay ? h.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]);
      const double mi = h.beta1 * double(m[i]) + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * double(v[i]) + (1.0 - h.beta2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      const double mhat = mi / c1, denom = std::sqrt(vi / c2) + h.eps;
      const double adam = denom > 0 ? mhat / denom : 0.0;
      p[i] = T(double(p[i]) - h.lr * (adam + wd * double(p[i])));
    }
  }
}

template <class T>
double global_grad_norm(std::span<const OptimSlot<T>> slots) {
  double sq = 0;
  for (const auto& s : slots)
    for (std::size_t i = 0; i < s.grad->size(); ++i) sq += double((*s.grad)[i]) * double((*s.grad)[i]);
  return std::sqrt(sq);
}

template <class T>
double clip_grad_norm(std::span<Tensor<T>* const> grads, double max_norm) {
  double sq = 0;
  for (const Tensor<T>* g : grads)
    for (std::size_t i = 0; i < g->size(); ++i) sq += double((*g)[i]) * double((*g)[i]);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T scale = T(max_norm / norm);
    for (Tensor<T>* g : grads)
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] *= scale;
  }
  return norm;
}

template void adamw_step<float>(std::span<const OptimSlot<float>>, OptimState<float>&, const AdamWHyper&);
template void adamw_step<double>(std::span<const OptimSlot<double>>, OptimState<double>&, const AdamWHyper&);
template double global_grad_norm<float>(std::span<const OptimSlot<float>>);
template double global_grad_norm<double>(std::span<const OptimSlot<double>>);
template double clip_grad_norm<float>(std::span<Tensor<float>* const>, double);
template double clip_grad_norm<double>(std::span<Tensor<double>* const>, double);

}  // namespace chela
