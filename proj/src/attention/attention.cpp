// SPDX-License-Identifier: Apache-2.0
#include "chela/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "chela/error.hpp"
#include "chela/kernels.hpp"

namespace chela {
namespace {

using kernels::Trans;

constexpr std::size_t kSoftmaxRowBlock = 64;

template <class T>
std::size_t bytes_of(std::size_t n) {
  return n * sizeof(T);
}

// Zero the strictly upper triangle of an n x n row-major block.
template <class T>
void mask_upper(T* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) std::fill(p + i * n + i + 1, p + (i + 1) * n, T(0));
}

inline void note(AttentionStats* stats, std::size_t bytes) {
  if (stats) stats->aux_bytes = bytes;
}

}  // namespace

template <class T>
void check_attention_inputs(const AttentionInputs<T>& in, const char* where) {
  if (in.q.rank() != 3) throw ShapeError(std::string(where) + ": inputs must be [batch, length, dim]");
  require_same_shape(in.q, in.k, where);
  require_same_shape(in.q, in.v, where);
}

// ---- softmax -----------------------------------------------------------------

template <class T>
Tensor<T> softmax_attention(const AttentionInputs<T>& in, bool causal, SoftmaxTape<T>* tape,
                            AttentionStats* stats) {
  check_attention_inputs(in, "softmax_attention");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  const T scale = T(1) / std::sqrt(T(d));
  Tensor<T> out(in.q.shape());
  std::vector<T> lse(B * L);
  std::vector<T> scores(std::min(kSoftmaxRowBlock, L) * L);
  for (std::size_t b = 0; b < B; ++b) {
    const T* q = in.q.ptr() + b * L * d;
    const T* k = in.k.ptr() + b * L * d;
    const T* v = in.v.ptr() + b * L * d;
    T* o = out.ptr() + b * L * d;
    for (std::size_t r0 = 0; r0 < L; r0 += kSoftmaxRowBlock) {
      const std::size_t rows = std::min(kSoftmaxRowBlock, L - r0);
      const std::size_t cols = causal ? r0 + rows : L;
      kernels::gemm<T>(Trans::no, Trans::yes, rows, cols, d, scale, q + r0 * d, d, k, d, T(0), scores.data(), cols);
      for (std::size_t i = 0; i < rows; ++i) {
        T* s = scores.data() + i * cols;
        const std::size_t valid = causal ? r0 + i + 1 : cols;
        const T m = *std::max_element(s, s + valid);
        T sum = 0;
        for (std::size_t j = 0; j < valid; ++j) {
          s[j] = std::exp(s[j] - m);
          sum += s[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < valid; ++j) s[j] *= inv;
        std::fill(s + valid, s + cols, T(0));
        lse[b * L + r0 + i] = m + std::log(sum);
      }
      kernels::gemm<T>(Trans::no, Trans::no, rows, d, cols, T(1), scores.data(), cols, v, d, T(0), o + r0 * d, d);
    }
  }
  out.check_finite("softmax_attention");
  note(stats, bytes_of<T>(scores.size()) + bytes_of<T>(L));
  if (tape) {
    tape->out = out;
    tape->lse = std::move(lse);
  }
  return out;
}

template <class T>
AttentionGrads<T> softmax_attention_backward(const AttentionInputs<T>& in, bool causal, const SoftmaxTape<T>& tape,
                                             const Tensor<T>& dout, AttentionStats* stats) {
  check_attention_inputs(in, "softmax_attention_backward");
  require_same_shape(in.q, dout, "softmax_attention_backward");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  const T scale = T(1) / std::sqrt(T(d));
  AttentionGrads<T> g{Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape())};
  const std::size_t blk = std::min(kSoftmaxRowBlock, L);
  std::vector<T> probs(blk * L), dprobs(blk * L);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t off = b * L * d;
    const T* q = in.q.ptr() + off;
    const T* k = in.k.ptr() + off;
    const T* v = in.v.ptr() + off;
    const T* o = tape.out.ptr() + off;
    const T* go = dout.ptr() + off;
    T* dq = g.dq.ptr() + off;
    T* dk = g.dk.ptr() + off;
    T* dv = g.dv.ptr() + off;
    for (std::size_t r0 = 0; r0 < L; r0 += kSoftmaxRowBlock) {
      const std::size_t rows = std::min(kSoftmaxRowBlock, L - r0);
      const std::size_t cols = causal ? r0 + rows : L;
      kernels::gemm<T>(Trans::no, Trans::yes, rows, cols, d, scale, q + r0 * d, d, k, d, T(0), probs.data(), cols);
      for (std::size_t i = 0; i < rows; ++i) {
        T* p = probs.data() + i * cols;
        const std::size_t valid = causal ? r0 + i + 1 : cols;
        const T l = tape.lse[b * L + r0 + i];
        for (std::size_t j = 0; j < valid; ++j) p[j] = std::exp(p[j] - l);
        std::fill(p + valid, p + cols, T(0));
      }
      kernels::gemm<T>(Trans::yes, Trans::no, cols, d, rows, T(1), probs.data(), cols, go + r0 * d, d, T(1), dv, d);
      kernels::gemm<T>(Trans::no, Trans::yes, rows, cols, d, T(1), go + r0 * d, d, v, d, T(0), dprobs.data(), cols);
      for (std::size_t i = 0; i < rows; ++i) {
        const T delta = kernels::dot<T>(go + (r0 + i) * d, o + (r0 + i) * d, d);
        T* p = probs.data() + i * cols;
        const T* dp = dprobs.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) p[j] = p[j] * (dp[j] - delta);
      }
      kernels::gemm<T>(Trans::no, Trans::no, rows, d, cols, scale, probs.data(), cols, k, d, T(0), dq + r0 * d, d);
      kernels::gemm<T>(Trans::yes, Trans::no, cols, d, rows, scale, probs.data(), cols, q + r0 * d, d, T(1), dk, d);
    }
  }
  note(stats, bytes_of<T>(probs.size() + dprobs.size()));
  return g;
}

// ---- non-causal --------------------------------------------------------------

template <class T>
Tensor<T> linear_attention_noncausal_raw(const AttentionInputs<T>& in, AttentionStats* stats) {
  check_attention_inputs(in, "linear_attention_noncausal");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  Tensor<T> out(in.q.shape());
  std::vector<T> s(d * d);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t off = b * L * d;
    kernels::gemm<T>(Trans::yes, Trans::no, d, d, L, T(1), in.k.ptr() + off, d, in.v.ptr() + off, d, T(0), s.data(), d);
    kernels::gemm<T>(Trans::no, Trans::no, L, d, d, T(1), in.q.ptr() + off, d, s.data(), d, T(0), out.ptr() + off, d);
  }
  note(stats, bytes_of<T>(s.size()));
  return out;
}

template <class T>
AttentionGrads<T> linear_attention_noncausal_raw_backward(const AttentionInputs<T>& in, const Tensor<T>& dout) {
  check_attention_inputs(in, "linear_attention_noncausal_backward");
  require_same_shape(in.q, dout, "linear_attention_noncausal_backward");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  AttentionGrads<T> g{Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape())};
  std::vector<T> s(d * d), ds(d * d);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t off = b * L * d;
    const T* q = in.q.ptr() + off;
    const T* k = in.k.ptr() + off;
    const T* v = in.v.ptr() + off;
    const T* go = dout.ptr() + off;
    kernels::gemm<T>(Trans::yes, Trans::no, d, d, L, T(1), k, d, v, d, T(0), s.data(), d);
    kernels::gemm<T>(Trans::yes, Trans::no, d, d, L, T(1), q, d, go, d, T(0), ds.data(), d);
    kernels::gemm<T>(Trans::no, Trans::yes, L, d, d, T(1), go, d, s.data(), d, T(0), g.dq.ptr() + off, d);
    kernels::gemm<T>(Trans::no, Trans::yes, L, d, d, T(1), v, d, ds.data(), d, T(0), g.dk.ptr() + off, d);
    kernels::gemm<T>(Trans::no, Trans::no, L, d, d, T(1), k, d, ds.data(), d, T(0), g.dv.ptr() + off, d);
  }
  return g;
}

// ---- recurrent ---------------------------------------------------------------

template <class T>
Tensor<T> linear_attention_recurrent_raw(const AttentionInputs<T>& in, RecurrentTape<T>* tape,
                                         AttentionStats* stats) {
  check_attention_inputs(in, "linear_attention_recurrent");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  Tensor<T> out(in.q.shape());
  std::vector<T> s(d * d);
  if (tape) tape->states.assign(B * L * d * d, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(s.begin(), s.end(), T(0));
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t row = (b * L + t) * d;
      const T* qt = in.q.ptr() + row;
      const T* kt = in.k.ptr() + row;
      const T* vt = in.v.ptr() + row;
      T* ot = out.ptr() + row;
      for (std::size_t i = 0; i < d; ++i) kernels::axpy<T>(d, kt[i], vt, s.data() + i * d);
      for (std::size_t i = 0; i < d; ++i) kernels::axpy<T>(d, qt[i], s.data() + i * d, ot);
      if (tape) std::copy(s.begin(), s.end(), tape->states.begin() + (b * L + t) * d * d);
    }
  }
  note(stats, bytes_of<T>(s.size()) + (tape ? bytes_of<T>(L * d * d) : 0));
  return out;
}

template <class T>
AttentionGrads<T> linear_attention_recurrent_raw_backward(const AttentionInputs<T>& in, const RecurrentTape<T>& tape,
                                                          const Tensor<T>& dout, AttentionStats* stats) {
  check_attention_inputs(in, "linear_attention_recurrent_backward");
  require_same_shape(in.q, dout, "linear_attention_recurrent_backward");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  if (tape.states.size() != B * L * d * d) throw ShapeError("linear_attention_recurrent_backward: tape size mismatch");
  AttentionGrads<T> g{Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape())};
  std::vector<T> acc(d * d);  // sum over t' >= t of q_t'^T do_t'
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(acc.begin(), acc.end(), T(0));
    for (std::size_t t = L; t-- > 0;) {
      const std::size_t row = (b * L + t) * d;
      const T* qt = in.q.ptr() + row;
      const T* kt = in.k.ptr() + row;
      const T* vt = in.v.ptr() + row;
      const T* got = dout.ptr() + row;
      const T* st = tape.states.data() + (b * L + t) * d * d;
      for (std::size_t i = 0; i < d; ++i) kernels::axpy<T>(d, qt[i], got, acc.data() + i * d);
      T* dq = g.dq.ptr() + row;
      T* dk = g.dk.ptr() + row;
      T* dv = g.dv.ptr() + row;
      for (std::size_t i = 0; i < d; ++i) {
        dq[i] = kernels::dot<T>(st + i * d, got, d);
        dk[i] = kernels::dot<T>(acc.data() + i * d, vt, d);
        kernels::axpy<T>(d, kt[i], acc.data() + i * d, dv);
      }
    }
  }
  note(stats, bytes_of<T>(acc.size()) + bytes_of<T>(L * d * d));
  return g;
}

// ---- chunked -----------------------------------------------------------------

template <class T>
Tensor<T> linear_attention_chunked_raw(const AttentionInputs<T>& in, std::size_t chunk, ChunkState<T>* final_state,
                                       AttentionStats* stats) {
  check_attention_inputs(in, "linear_attention_chunked");
  if (chunk == 0) throw ConfigError("linear_attention_chunked: chunk must be >= 1");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  const std::size_t C = std::min(chunk, L);
  Tensor<T> out(in.q.shape());
  std::vector<T> s(d * d), scores(C * C);
  if (final_state) final_state->S = Tensor<T>({B, d, d});
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(s.begin(), s.end(), T(0));
    const std::size_t off = b * L * d;
    std::size_t c = 0;
    for (std::size_t c0 = 0; c0 < L; c0 += C, ++c) {
      const std::size_t n = std::min(C, L - c0);
      const T* q = in.q.ptr() + off + c0 * d;
      const T* k = in.k.ptr() + off + c0 * d;
      const T* v = in.v.ptr() + off + c0 * d;
      T* o = out.ptr() + off + c0 * d;
      // inter-chunk: O_c = Q_c S_{c-1}
      kernels::gemm<T>(Trans::no, Trans::no, n, d, d, T(1), q, d, s.data(), d, T(0), o, d);
      // intra-chunk: O_c += tril(Q_c K_c^T) V_c
      kernels::gemm<T>(Trans::no, Trans::yes, n, n, d, T(1), q, d, k, d, T(0), scores.data(), n);
      mask_upper(scores.data(), n);
      kernels::gemm<T>(Trans::no, Trans::no, n, d, n, T(1), scores.data(), n, v, d, T(1), o, d);
      // S_c = S_{c-1} + K_c^T V_c
      kernels::gemm<T>(Trans::yes, Trans::no, d, d, n, T(1), k, d, v, d, T(1), s.data(), d);
    }
    if (final_state) {
      std::copy(s.begin(), s.end(), final_state->S.ptr() + b * d * d);
      final_state->chunk_index = c;
    }
  }
  note(stats, bytes_of<T>(s.size() + scores.size()));
  return out;
}

template <class T>
AttentionGrads<T> linear_attention_chunked_raw_backward(const AttentionInputs<T>& in, std::size_t chunk,
                                                        const ChunkState<T>& final_state, const Tensor<T>& dout,
                                                        AttentionStats* stats) {
  check_attention_inputs(in, "linear_attention_chunked_backward");
  require_same_shape(in.q, dout, "linear_attention_chunked_backward");
  if (chunk == 0) throw ConfigError("linear_attention_chunked: chunk must be >= 1");
  const std::size_t B = in.q.dim(0), L = in.q.dim(1), d = in.q.dim(2);
  if (final_state.S.shape() != Shape{B, d, d}) throw ShapeError("linear_attention_chunked_backward: bad state");
  const std::size_t C = std::min(chunk, L);
  AttentionGrads<T> g{Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape()), Tensor<T>(in.q.shape())};
  std::vector<T> s(d * d), acc(d * d), scores(C * C), dscores(C * C);
  const std::size_t nchunks = (L + C - 1) / C;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t off = b * L * d;
    std::copy(final_state.S.ptr() + b * d * d, final_state.S.ptr() + (b + 1) * d * d, s.begin());
    std::fill(acc.begin(), acc.end(), T(0));  // sum over later chunks of Q^T dO
    for (std::size_t c = nchunks; c-- > 0;) {
      const std::size_t c0 = c * C;
      const std::size_t n = std::min(C, L - c0);
      const T* q = in.q.ptr() + off + c0 * d;
      const T* k = in.k.ptr() + off + c0 * d;
      const T* v = in.v.ptr() + off + c0 * d;
      const T* go = dout.ptr() + off + c0 * d;
      T* dq = g.dq.ptr() + off + c0 * d;
      T* dk = g.dk.ptr() + off + c0 * d;
      T* dv = g.dv.ptr() + off + c0 * d;
      // S_{c-1} = S_c - K_c^T V_c
      kernels::gemm<T>(Trans::yes, Trans::no, d, d, n, T(-1), k, d, v, d, T(1), s.data(), d);
      // dP = tril(dO_c V_c^T), P = tril(Q_c K_c^T)
      kernels::gemm<T>(Trans::no, Trans::yes, n, n, d, T(1), go, d, v, d, T(0), dscores.data(), n);
      mask_upper(dscores.data(), n);
      kernels::gemm<T>(Trans::no, Trans::yes, n, n, d, T(1), q, d, k, d, T(0), scores.data(), n);
      mask_upper(scores.data(), n);
      // dQ_c = dO_c S_{c-1}^T + dP K_c
      kernels::gemm<T>(Trans::no, Trans::yes, n, d, d, T(1), go, d, s.data(), d, T(0), dq, d);
      kernels::gemm<T>(Trans::no, Trans::no, n, d, n, T(1), dscores.data(), n, k, d, T(1), dq, d);
      // dK_c = dP^T Q_c + V_c acc^T
      kernels::gemm<T>(Trans::yes, Trans::no, n, d, n, T(1), dscores.data(), n, q, d, T(0), dk, d);
      kernels::gemm<T>(Trans::no, Trans::yes, n, d, d, T(1), v, d, acc.data(), d, T(1), dk, d);
      // dV_c = P^T dO_c + K_c acc
      kernels::gemm<T>(Trans::yes, Trans::no, n, d, n, T(1), scores.data(), n, go, d, T(0), dv, d);
      kernels::gemm<T>(Trans::no, Trans::no, n, d, d, T(1), k, d, acc.data(), d, T(1), dv, d);
      // acc += Q_c^T dO_c
      kernels::gemm<T>(Trans::yes, Trans::no, d, d, n, T(1), q, d, go, d, T(1), acc.data(), d);
    }
  }
  note(stats, bytes_of<T>(s.size() + acc.size() + scores.size() + dscores.size()));
  return g;
}

// ---- normalized --------------------------------------------------------------

template <class T>
Tensor<T> apply_output_norm(const Tensor<T>& raw, const OutputNorm<T>& norm, std::vector<T>* inv_rms) {
  const std::size_t d = raw.dim(raw.rank() - 1);
  const std::size_t rows = raw.size() / d;
  std::vector<T> ones;
  const T* gain = norm.gain.ptr();
  if (norm.gain.empty()) {
    ones.assign(d, T(1));
    gain = ones.data();
  } else if (norm.gain.size() != d) {
    throw ShapeError("output norm gain length " + std::to_string(norm.gain.size()) + " != dim " + std::to_string(d));
  }
  Tensor<T> y(raw.shape());
  std::vector<T> local;
  std::vector<T>& inv = inv_rms ? *inv_rms : local;
  inv.resize(rows);
  rms_norm_rows(raw.ptr(), gain, norm.eps, rows, d, y.ptr(), inv.data());
  return y;
}

template <class T>
Tensor<T> linear_attention_noncausal(const AttentionInputs<T>& in, const OutputNorm<T>& norm) {
  return apply_output_norm(linear_attention_noncausal_raw(in), norm).check_finite("linear_attention_noncausal");
}

template <class T>
Tensor<T> linear_attention_recurrent(const AttentionInputs<T>& in, const OutputNorm<T>& norm) {
  return apply_output_norm(linear_attention_recurrent_raw(in), norm).check_finite("linear_attention_recurrent");
}

template <class T>
Tensor<T> linear_attention_chunked(const AttentionInputs<T>& in, std::size_t chunk, const OutputNorm<T>& norm) {
  return apply_output_norm(linear_attention_chunked_raw(in, chunk), norm).check_finite("linear_attention_chunked");
}

#define CHELA_INSTANTIATE(T)                                                                                     \
  template void check_attention_inputs<T>(const AttentionInputs<T>&, const char*);                               \
  template Tensor<T> softmax_attention<T>(const AttentionInputs<T>&, bool, SoftmaxTape<T>*, AttentionStats*);    \
  template AttentionGrads<T> softmax_attention_backward<T>(const AttentionInputs<T>&, bool, const SoftmaxTape<T>&, \
                                                           const Tensor<T>&, AttentionStats*);                   \
  template Tensor<T> linear_attention_noncausal_raw<T>(const AttentionInputs<T>&, AttentionStats*);              \
  template AttentionGrads<T> linear_attention_noncausal_raw_backward<T>(const AttentionInputs<T>&, const Tensor<T>&); \
  template Tensor<T> linear_attention_recurrent_raw<T>(const AttentionInputs<T>&, RecurrentTape<T>*, AttentionStats*); \
  template AttentionGrads<T> linear_attention_recurrent_raw_backward<T>(                                         \
      const AttentionInputs<T>&, const RecurrentTape<T>&, const Tensor<T>&, AttentionStats*);                    \
  template Tensor<T> linear_attention_chunked_raw<T>(const AttentionInputs<T>&, std::size_t, ChunkState<T>*,     \
                                                     AttentionStats*);                                           \
  template AttentionGrads<T> linear_attention_chunked_raw_backward<T>(                                           \
      const AttentionInputs<T>&, std::size_t, const ChunkState<T>&, const Tensor<T>&, AttentionStats*);          \
  template Tensor<T> apply_output_norm<T>(const Tensor<T>&, const OutputNorm<T>&, std::vector<T>*);              \
  template Tensor<T> linear_attention_noncausal<T>(const AttentionInputs<T>&, const OutputNorm<T>&);             \
  template Tensor<T> linear_attention_recurrent<T>(const AttentionInputs<T>&, const OutputNorm<T>&);             \
  template Tensor<T> linear_attention_chunked<T>(const AttentionInputs<T>&, std::size_t, const OutputNorm<T>&);

CHELA_INSTANTIATE(float)
CHELA_INSTANTIATE(double)
#undef CHELA_INSTANTIATE

}  // namespace chela
