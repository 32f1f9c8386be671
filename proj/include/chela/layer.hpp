// SPDX-License-Identifier: Apache-2.0
//
// The gated hybrid layer, the pre-norm block around it, and full model
// assembly. Every forward can record a tape consumed by the matching
// backward, which accumulates parameter gradients into a zero-initialized
// parameter struct of the same shape.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "chela/attention.hpp"
#include "chela/conv.hpp"
#include "chela/rng.hpp"
#include "chela/tensor.hpp"

namespace chela {

enum class MixerKind { shortlong, longconv, ssm };
enum class TaskHead { lm, classification, regression };

std::string to_string(MixerKind m);
std::string to_string(TaskHead h);
MixerKind parse_mixer(const std::string& s);
TaskHead parse_task_head(const std::string& s);

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  std::size_t depth = 2;
  std::size_t d_model = 64;
  std::size_t max_len = 256;
  std::size_t vocab_size = 0;  // > 0: token inputs through an embedding table
  std::size_t input_dim = 0;   // feature width when vocab_size == 0
  std::size_t num_classes = 0; // classification head width
  TaskHead task_head = TaskHead::lm;
  std::size_t chunk = kDefaultChunk;
  MixerKind mixer = MixerKind::shortlong;
  bool include_identity = true;
  std::size_t ssm_state_dim = 16;
  double ssm_delta = 0.01;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
  std::size_t ffn_dim() const { return 2 * d_model; }
  std::size_t output_dim() const;
};

/// Shared, fixed A_bar/B_bar (buffers) and learned per-channel C.
template <class T>
struct SsmMixerParams {
  Tensor<T> a_bar;  // [n, n]
  Tensor<T> b_bar;  // [n]
  Tensor<T> c;      // [d, n]
};

template <class T>
struct ChelaLayerParams {
  MixerKind mixer = MixerKind::shortlong;
  ShortLongConvParams<T> conv;  // shortlong / longconv
  SsmMixerParams<T> ssm;        // ssm
  Tensor<T> w_v, b_v;           // value projection
  Tensor<T> w_g, b_g;           // attention gate
  Tensor<T> w_o, b_o;           // output gate
  Tensor<T> alpha_q, beta_q, alpha_k, beta_k;
  Tensor<T> norm_gain;
};

template <class T>
struct ChelaBlockParams {
  ChelaLayerParams<T> layer;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<T> ffn_w1, ffn_b1;  // [d, 2d], [2d]
  Tensor<T> ffn_w2, ffn_b2;  // [2d, d], [d]
};

template <class T>
struct ModelParams {
  ModelConfig cfg;
  Tensor<T> embed;    // [vocab, d] or [input_dim, d]
  Tensor<T> embed_b;  // [d], feature inputs only
  std::vector<ChelaBlockParams<T>> blocks;
  Tensor<T> head_w;  // [d, out]
  Tensor<T> head_b;  // [out]
};

/// A named view of one parameter tensor.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool trainable;  // false for the fixed SSM buffers
  bool decay;      // weight decay applies (matrices and kernels)
};

template <class T>
std::vector<ParamRef<T>> layer_params(ChelaLayerParams<T>& p, const std::string& prefix = "layer.");
template <class T>
std::vector<ParamRef<T>> block_params(ChelaBlockParams<T>& p, const std::string& prefix = "");
template <class T>
std::vector<ParamRef<T>> model_params(ModelParams<T>& p);

/// Structural copy with every tensor zeroed (gradient accumulators).
template <class T>
ChelaLayerParams<T> zeros_like(const ChelaLayerParams<T>& p);
template <class T>
ChelaBlockParams<T> zeros_like(const ChelaBlockParams<T>& p);
template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& p);

template <class T>
std::size_t parameter_count(const ModelParams<T>& p, bool trainable_only = true);

/// Weights ~ normal(0, 1/sqrt(d)), biases 0, alpha = 1, beta = 0, gains 1.
template <class T>
ChelaLayerParams<T> init_layer_params(const ModelConfig& cfg, Rng& rng);
template <class T>
ChelaBlockParams<T> init_block_params(const ModelConfig& cfg, Rng& rng);
template <class T>
ModelParams<T> init_chela_params(const ModelConfig& cfg, Rng& rng);
template <class T>
ModelParams<T> init_chela_params(const ModelConfig& cfg);  // seeded from cfg.seed

// ---- layer -------------------------------------------------------------------

template <class T>
struct LayerTape {
  ShortLongTape<T> conv;
  Tensor<T> ssm_kernels;  // [d, L]
  Tensor<T> ssm_basis;    // [L, n]
  Tensor<T> z, q, k, v_pre, v;
  Tensor<T> attn_raw, attn_norm;
  std::vector<T> inv_rms;
  ChunkState<T> state;
  Tensor<T> g_pre, g_a, o_pre, g_o, m;
};

/// Z = mixer(X); Q = a_q*Z + b_q; K = a_k*Z + b_k; V = silu(X W_v + b_v);
/// M = rms_norm(causal linear attention(Q, K, V)) * silu(Z W_g + b_g);
/// G_o = sigmoid(Z W_o + b_o); U = M*G_o + X*(1 - G_o).
template <class T>
Tensor<T> chela_layer_forward(const ChelaLayerParams<T>& p, const Tensor<T>& x, std::size_t chunk,
                              LayerTape<T>* tape = nullptr);

template <class T>
Tensor<T> chela_layer_backward(const ChelaLayerParams<T>& p, const Tensor<T>& x, std::size_t chunk,
                               const LayerTape<T>& tape, const Tensor<T>& du, ChelaLayerParams<T>& grads);

/// Mixer output alone (used by the layer and by tests).
template <class T>
Tensor<T> mixer_forward(const ChelaLayerParams<T>& p, const Tensor<T>& x, LayerTape<T>* tape = nullptr);

// ---- block -------------------------------------------------------------------

template <class T>
struct BlockTape {
  Tensor<T> ln1_out;
  std::vector<T> ln1_mean, ln1_inv;
  LayerTape<T> layer;
  Tensor<T> xa;
  Tensor<T> ln2_out;
  std::vector<T> ln2_mean, ln2_inv;
  Tensor<T> h_pre, h;
};

/// X_a = layer(LayerNorm(X)); Y = FFN(LayerNorm(X_a)) + X_a with
/// FFN(x) = silu(x W1 + b1) W2 + b2.
template <class T>
Tensor<T> chela_block_forward(const ChelaBlockParams<T>& p, const Tensor<T>& x, std::size_t chunk,
                              BlockTape<T>* tape = nullptr);

template <class T>
Tensor<T> chela_block_backward(const ChelaBlockParams<T>& p, const Tensor<T>& x, std::size_t chunk,
                               const BlockTape<T>& tape, const Tensor<T>& dy, ChelaBlockParams<T>& grads);

// ---- model -------------------------------------------------------------------

/// Model input: token ids [B, L] (vocab_size > 0) or features [B, L, input_dim].
template <class T>
struct ModelInput {
  std::vector<std::uint32_t> tokens;
  std::size_t batch = 0;
  std::size_t length = 0;
  Tensor<T> features;

  static ModelInput from_tokens(std::vector<std::uint32_t> ids, std::size_t batch, std::size_t length);
  static ModelInput from_features(Tensor<T> f);
};

template <class T>
struct ModelTape {
  Tensor<T> embedded;
  std::vector<Tensor<T>> block_in;  // input of each block
  std::vector<BlockTape<T>> blocks;
  Tensor<T> final_hidden;
};

/// lm: [B, L, vocab]; classification: [B, num_classes] from the mean over
/// positions; regression: [B, 1] from the last position.
template <class T>
Tensor<T> model_forward(const ModelParams<T>& p, const ModelInput<T>& in, ModelTape<T>* tape = nullptr);

/// Accumulates into grads; returns d(features) for feature inputs (empty for tokens).
template <class T>
Tensor<T> model_backward(const ModelParams<T>& p, const ModelInput<T>& in, const ModelTape<T>& tape,
                         const Tensor<T>& dout, ModelParams<T>& grads);

/// Fuses the short branches of every shortlong layer into one kernel per
/// channel, for inference. Returns the fused kernels in layer order.
template <class T>
std::vector<FusedShortKernel<T>> fuse_model_short_kernels(const ModelParams<T>& p);

}  // namespace chela
