// SPDX-License-Identifier: Apache-2.0
//
// Slow reference implementations used only for verification. They share no
// code with the kernels they check: plain loops, long double accumulation,
// dense matrices, and Eigen for eigenvalues.
#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "chela/layer.hpp"
#include "chela/tensor.hpp"

namespace chela::oracle {

using ld = long double;

/// O(N^2) DFT with the e^{-2 pi i/N} convention; the inverse scales by 1/N.
std::vector<std::complex<ld>> naive_dft(const std::vector<std::complex<ld>>& x, bool inverse);

/// y_t = sum_{j <= min(t, k-1)} kernel_j x_{t-j}
std::vector<ld> direct_conv(const std::vector<double>& kernel, const std::vector<double>& x);

/// Depthwise causal conv of x [B, L, d] with kernels [d, k].
Tensord depthwise_conv(const Tensord& kernels, const Tensord& x);

std::vector<ld> rms_norm(const std::vector<double>& x, const std::vector<double>& gain, double eps);
std::vector<ld> layer_norm(const std::vector<double>& x, const std::vector<double>& gain,
                           const std::vector<double>& bias, double eps);

/// Dense softmax(Q K^T / sqrt(d)) V with an explicit L x L matrix.
Tensord softmax_attention(const Tensord& q, const Tensord& k, const Tensord& v, bool causal);

/// (Q K^T, lower-triangular masked when causal) V, multiplied left to right.
Tensord linear_attention_dense(const Tensord& q, const Tensord& k, const Tensord& v, bool causal);

/// Applies the per-token RMS norm with gain (empty = ones).
Tensord rms_rows(const Tensord& x, const Tensord& gain, double eps);

/// k_t = C A^t B with A^t formed by explicit repeated matrix products.
ld ssm_kernel_entry(const Tensord& A_bar, const std::vector<double>& B_bar, const std::vector<double>& C_bar,
                    std::size_t t);

/// Largest eigenvalue modulus (Eigen's general eigensolver).
double spectral_radius(const Tensord& A);
/// Largest eigenvalue of the symmetric part (A + A^T) / 2.
double max_symmetric_eigenvalue(const Tensord& A);

/// Straight-line transcription of the gated layer equations with direct
/// convolutions and dense masked attention. Supports every mixer.
Tensord chela_layer(const ChelaLayerParams<double>& p, const Tensord& x);

/// Closed-form trainable parameter count.
std::size_t parameter_count(const ModelConfig& cfg);

/// Mean masked cross entropy via long double log-sum-exp.
ld cross_entropy(const Tensord& logits, const std::vector<std::uint32_t>& targets,
                 const std::vector<std::uint8_t>& mask);

}  // namespace chela::oracle
