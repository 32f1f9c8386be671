// SPDX-License-Identifier: Apache-2.0
#include "chela/activations.hpp"

namespace chela {

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  x.check_finite("activation input");
  Tensor<T> y = Tensor<T>::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = kind == Activation::silu ? silu(x[i]) : sigmoid(x[i]);
  }
  return y;
}

template <class T>
Tensor<T> activation_vjp(Activation kind, const Tensor<T>& x, const Tensor<T>& dy) {
  require_same_shape(x, dy, "activation_vjp");
  Tensor<T> dx = Tensor<T>::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] = dy[i] * (kind == Activation::silu ? silu_grad(x[i]) : sigmoid_grad(x[i]));
  }
  return dx;
}

template Tensor<float> activation(Activation, const Tensor<float>&);
template Tensor<double> activation(Activation, const Tensor<double>&);
template Tensor<float> activation_vjp(Activation, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> activation_vjp(Activation, const Tensor<double>&, const Tensor<double>&);

}  // namespace chela
