// SPDX-License-Identifier: Apache-2.0
//
// Causal depthwise convolutions: direct reference, FFT fast path, the
// short-long module and exact fusion of its short branches.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "chela/rng.hpp"
#include "chela/tensor.hpp"

namespace chela {

/// Odd width of the length-dependent short kernel: ceil(2*log10(L) + 1),
/// bumped to the next odd integer, never below 3.
std::size_t short_kernel_size(std::size_t L);

/// y_t = sum_{j <= min(t, k-1)} kernel_j * x_{t-j}. Kernel taps beyond len(x)
/// are ignored.
template <class T>
std::vector<T> causal_conv_direct(std::span<const T> kernel, std::span<const T> x);

/// Same result through zero-padded FFTs of size next_pow2(L + k - 1).
template <class T>
std::vector<T> causal_conv_fft(std::span<const T> kernel, std::span<const T> x);

/// `partitioned` is an FFT convolution over a dyadic split of the sequence in
/// which no output reads a later input, making causality exact bit for bit.
/// `automatic` picks direct for short kernels and partitioned otherwise.
enum class ConvPath { direct, fft, partitioned, automatic };

/// Depthwise causal convolution of x [B, L, d] with kernels [d, k].
template <class T>
Tensor<T> depthwise_causal_conv(const Tensor<T>& kernels, const Tensor<T>& x,
                                ConvPath path = ConvPath::automatic);

/// Returns dx and accumulates the kernel gradient into dkernels ([d, k]).
template <class T>
Tensor<T> depthwise_causal_conv_backward(const Tensor<T>& kernels, const Tensor<T>& x, const Tensor<T>& dy,
                                         Tensor<T>& dkernels, ConvPath path = ConvPath::automatic);

/// Parallel short kernels. An empty k3/kvar tensor means the branch is absent
/// (the long-conv-only ablation keeps only the identity).
template <class T>
struct ShortConvBank {
  Tensor<T> k3;    // [d, 3]
  Tensor<T> kvar;  // [d, short_kernel_size(L)]
  bool include_identity = true;
};

template <class T>
struct ShortLongConvParams {
  ShortConvBank<T> bank;
  Tensor<T> long_kernel;  // [d, L]

  std::size_t channels() const { return long_kernel.dim(0); }
  std::size_t max_len() const { return long_kernel.dim(1); }
};

template <class T>
struct FusedShortKernel {
  Tensor<T> kernel;  // [d, max(3, kvar width)] or [d, 1] for identity-only banks
};

/// conv(k3, x) + conv(kvar, x) + x (when include_identity), per channel.
template <class T>
Tensor<T> short_branch_forward(const ShortConvBank<T>& bank, const Tensor<T>& x);

/// Single kernel equal to the sum of the branches (exact by linearity).
template <class T>
FusedShortKernel<T> fuse_short_branches(const ShortConvBank<T>& bank, std::size_t channels);

/// Activations kept for short_long_backward.
template <class T>
struct ShortLongTape {
  Tensor<T> pre_act;  // short branch output
  Tensor<T> act;      // silu(pre_act)
};

template <class T>
struct ShortLongGrads {
  Tensor<T> k3;
  Tensor<T> kvar;
  Tensor<T> long_kernel;
};

/// Z = long_kernel * silu(short_branch(x)); the training path.
template <class T>
Tensor<T> short_long_forward(const ShortLongConvParams<T>& p, const Tensor<T>& x,
                             ShortLongTape<T>* tape = nullptr);

/// Inference path: fused short kernel, SiLU, long kernel.
template <class T>
Tensor<T> short_long_forward_fused(const FusedShortKernel<T>& fused, const Tensor<T>& long_kernel,
                                   const Tensor<T>& x);

/// Returns dX; parameter gradients are accumulated into `grads` (which must be
/// shaped like the parameters).
template <class T>
Tensor<T> short_long_backward(const ShortLongConvParams<T>& p, const Tensor<T>& x, const ShortLongTape<T>& tape,
                              const Tensor<T>& dz, ShortLongGrads<T>& grads);

struct ShortLongInit {
  bool short_branches = true;
  bool include_identity = true;
  /// Multiply the long kernel by exp(-decay * t) at init.
  bool decay_envelope = true;
  double decay = 0.01;
};

/// Long kernel ~ normal(0, 1/L) (times the envelope); short kernels ~ normal(0, 1/sqrt(k)).
template <class T>
ShortLongConvParams<T> init_short_long(std::size_t channels, std::size_t max_len, Rng& rng,
                                       const ShortLongInit& init = {});

}  // namespace chela
