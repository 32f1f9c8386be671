// SPDX-License-Identifier: Apache-2.0
//
// Softmax attention and three equivalent evaluations of causal/non-causal
// linear attention Norm(Q (K^T V)). All tensors are [batch, length, dim];
// single head, identity feature map on Q and K.
#pragma once

#include <cstddef>

#include "chela/norms.hpp"
#include "chela/tensor.hpp"

namespace chela {

inline constexpr std::size_t kDefaultChunk = 64;

template <class T>
struct AttentionInputs {
  Tensor<T> q, k, v;
};

template <class T>
struct AttentionGrads {
  Tensor<T> dq, dk, dv;
};

/// Scratch actually allocated by one call, per batch item (batch items are
/// processed one after another and reuse the same buffers).
struct AttentionStats {
  std::size_t aux_bytes = 0;
};

/// Output normalization: rms_norm over the feature axis. An empty gain means
/// all ones.
template <class T>
struct OutputNorm {
  Tensor<T> gain;
  T eps = T(kDefaultNormEps);
};

/// Running d x d accumulator of the chunked form: after chunk c it equals the
/// sum of k_t^T v_t over every token processed so far.
template <class T>
struct ChunkState {
  Tensor<T> S;  // [batch, d, d]
  std::size_t chunk_index = 0;
};

/// Keeps every per-token state S_t ([batch, L, d*d]); what reverse-mode
/// differentiation of the token recurrence needs.
template <class T>
struct RecurrentTape {
  std::vector<T> states;
};

template <class T>
struct SoftmaxTape {
  Tensor<T> out;
  std::vector<T> lse;  // per-row log-sum-exp of the scaled scores
};

template <class T>
void check_attention_inputs(const AttentionInputs<T>& in, const char* where);

// ---- softmax baseline ------------------------------------------------------

/// softmax(Q K^T / sqrt(d)) V with row-max stabilization; rows are processed
/// in blocks so no L x L matrix is ever materialized.
template <class T>
Tensor<T> softmax_attention(const AttentionInputs<T>& in, bool causal, SoftmaxTape<T>* tape = nullptr,
                            AttentionStats* stats = nullptr);

template <class T>
AttentionGrads<T> softmax_attention_backward(const AttentionInputs<T>& in, bool causal, const SoftmaxTape<T>& tape,
                                             const Tensor<T>& dout, AttentionStats* stats = nullptr);

// ---- raw linear attention (before the output norm) -------------------------

template <class T>
Tensor<T> linear_attention_noncausal_raw(const AttentionInputs<T>& in, AttentionStats* stats = nullptr);

template <class T>
AttentionGrads<T> linear_attention_noncausal_raw_backward(const AttentionInputs<T>& in, const Tensor<T>& dout);

/// Token-by-token: S += k_t^T v_t, o_t = q_t S. The causal ground truth.
template <class T>
Tensor<T> linear_attention_recurrent_raw(const AttentionInputs<T>& in, RecurrentTape<T>* tape = nullptr,
                                         AttentionStats* stats = nullptr);

template <class T>
AttentionGrads<T> linear_attention_recurrent_raw_backward(const AttentionInputs<T>& in, const RecurrentTape<T>& tape,
                                                          const Tensor<T>& dout, AttentionStats* stats = nullptr);

/// Chunked form: per chunk, O_c = Q_c S_{c-1} + tril(Q_c K_c^T) V_c, then
/// S_c = S_{c-1} + K_c^T V_c. The chunk need not divide L.
template <class T>
Tensor<T> linear_attention_chunked_raw(const AttentionInputs<T>& in, std::size_t chunk,
                                       ChunkState<T>* final_state = nullptr, AttentionStats* stats = nullptr);

/// Walks the chunks backwards, recovering S_{c-1} = S_c - K_c^T V_c from the
/// final state, so auxiliary memory stays independent of L.
template <class T>
AttentionGrads<T> linear_attention_chunked_raw_backward(const AttentionInputs<T>& in, std::size_t chunk,
                                                        const ChunkState<T>& final_state, const Tensor<T>& dout,
                                                        AttentionStats* stats = nullptr);

// ---- normalized linear attention ------------------------------------------

template <class T>
Tensor<T> linear_attention_noncausal(const AttentionInputs<T>& in, const OutputNorm<T>& norm = {});

template <class T>
Tensor<T> linear_attention_recurrent(const AttentionInputs<T>& in, const OutputNorm<T>& norm = {});

template <class T>
Tensor<T> linear_attention_chunked(const AttentionInputs<T>& in, std::size_t chunk = kDefaultChunk,
                                   const OutputNorm<T>& norm = {});

/// Applies the output norm token-wise; inv_rms (one per token) is optional.
template <class T>
Tensor<T> apply_output_norm(const Tensor<T>& raw, const OutputNorm<T>& norm, std::vector<T>* inv_rms = nullptr);

}  // namespace chela
