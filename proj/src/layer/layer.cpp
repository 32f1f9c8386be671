// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <utility>

#include "chela/activations.hpp"
#include "chela/error.hpp"
#include "chela/kernels.hpp"
#include "chela/layer.hpp"
#include "chela/norms.hpp"
#include "chela/ssm.hpp"

namespace chela {
namespace {

using kernels::Trans;

template <class T>
std::size_t rows_of(const Tensor<T>& x) {
  return x.size() / x.dim(x.rank() - 1);
}

// y = x W + b over the last axis.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t in = w.dim(0), out = w.dim(1), rows = rows_of(x);
  if (x.dim(x.rank() - 1) != in) {
    throw ShapeError("linear: input width " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  Shape s = x.shape();
  s.back() = out;
  Tensor<T> y(s);
  T* yp = y.ptr();
  if (!b.empty()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.ptr(), b.ptr() + out, yp + r * out);
  }
  kernels::gemm<T>(Trans::no, Trans::no, rows, out, in, T(1), x.ptr(), in, w.ptr(), out, b.empty() ? T(0) : T(1), yp,
                   out);
  return y;
}

// Accumulates dW += x^T dy, db += sum dy and returns dx = dy W^T.
template <class T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>* db) {
  const std::size_t in = w.dim(0), out = w.dim(1), rows = rows_of(x);
  kernels::gemm<T>(Trans::yes, Trans::no, in, out, rows, T(1), x.ptr(), in, dy.ptr(), out, T(1), dw.ptr(), out);
  if (db != nullptr) {
    T* acc = db->ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = dy.ptr() + r * out;
      for (std::size_t j = 0; j < out; ++j) acc[j] += g[j];
    }
  }
  Tensor<T> dx(x.shape());
  kernels::gemm<T>(Trans::no, Trans::yes, rows, in, out, T(1), dy.ptr(), out, w.ptr(), out, T(0), dx.ptr(), in);
  return dx;
}

template <class T>
Tensor<T> ssm_basis_for(const SsmMixerParams<T>& s, std::size_t L) {
  const std::size_t n = s.b_bar.size();
  DiscreteSsm disc;
  disc.A_bar = s.a_bar.template cast<double>();
  disc.B_bar.assign(s.b_bar.ptr(), s.b_bar.ptr() + n);
  disc.C_bar.assign(n, 0.0);
  return ssm_basis(disc, L).template cast<T>();
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <class T>
Tensor<T> mixer_forward(const ChelaLayerParams<T>& p, const Tensor<T>& x, LayerTape<T>* tape) {
  if (x.rank() != 3) throw ShapeError("mixer: expected [B, L, d], got " + shape_str(x.shape()));
  switch (p.mixer) {
    case MixerKind::shortlong:
    case MixerKind::longconv:
      return short_long_forward(p.conv, x, tape ? &tape->conv : nullptr);
    case MixerKind::ssm: {
      const std::size_t L = x.dim(1), d = x.dim(2), n = p.ssm.b_bar.size();
      if (p.ssm.c.dim(0) != d) throw ShapeError("ssm mixer: channel mismatch");
      Tensor<T> basis = ssm_basis_for(p.ssm, L);
      Tensor<T> kern({d, L});
      kernels::gemm<T>(Trans::no, Trans::yes, d, L, n, T(1), p.ssm.c.ptr(), n, basis.ptr(), n, T(0), kern.ptr(), L);
      Tensor<T> z = depthwise_causal_conv(kern, x, ConvPath::automatic);
      if (tape) {
        tape->ssm_basis = std::move(basis);
        tape->ssm_kernels = std::move(kern);
      }
      return z;
    }
  }
  throw ConfigError("unknown mixer");
}

template <class T>
Tensor<T> chela_layer_forward(const ChelaLayerParams<T>& p, const Tensor<T>& x, std::size_t chunk, LayerTape<T>* tape) {
  if (x.rank() != 3) throw ShapeError("chela layer: expected [B, L, d], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(2), rows = x.dim(0) * x.dim(1);
  if (p.w_v.dim(0) != d) throw ShapeError("chela layer: width " + std::to_string(d) + " does not match parameters");
  x.check_finite("chela layer input");

  LayerTape<T> local;
  LayerTape<T>& t = tape ? *tape : local;
  t.z = mixer_forward(p, x, &t);

  t.q = Tensor<T>(x.shape());
  t.k = Tensor<T>(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const T z = t.z[r * d + j];
      t.q[r * d + j] = p.alpha_q[j] * z + p.beta_q[j];
      t.k[r * d + j] = p.alpha_k[j] * z + p.beta_k[j];
    }
  }
  t.v_pre = linear(x, p.w_v, p.b_v);
  t.v = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] = silu(t.v_pre[i]);

  t.attn_raw = linear_attention_chunked_raw<T>({t.q, t.k, t.v}, chunk, &t.state);
  t.attn_norm = Tensor<T>(x.shape());
  t.inv_rms.assign(rows, T(0));
  rms_norm_rows(t.attn_raw.ptr(), p.norm_gain.ptr(), T(kDefaultNormEps), rows, d, t.attn_norm.ptr(), t.inv_rms.data());

  t.g_pre = linear(t.z, p.w_g, p.b_g);
  t.o_pre = linear(t.z, p.w_o, p.b_o);
  t.g_a = Tensor<T>(x.shape());
  t.g_o = Tensor<T>(x.shape());
  t.m = Tensor<T>(x.shape());
  Tensor<T> u(x.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    t.g_a[i] = silu(t.g_pre[i]);
    t.g_o[i] = sigmoid(t.o_pre[i]);
    t.m[i] = t.attn_norm[i] * t.g_a[i];
    u[i] = t.m[i] * t.g_o[i] + x[i] * (T(1) - t.g_o[i]);
  }
  return u;
}

template <class T>
Tensor<T> chela_layer_backward(const ChelaLayerParams<T>& p, const Tensor<T>& x, std::size_t chunk,
                               const LayerTape<T>& t, const Tensor<T>& du, ChelaLayerParams<T>& g) {
  require_same_shape(x, du, "chela layer backward");
  const std::size_t d = x.dim(2), rows = x.dim(0) * x.dim(1), n = x.size();

  Tensor<T> dx(x.shape()), dm(x.shape()), do_pre(x.shape()), dg_pre(x.shape()), dnorm(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = du[i] * (T(1) - t.g_o[i]);
    dm[i] = du[i] * t.g_o[i];
    const T dgo = du[i] * (t.m[i] - x[i]);
    const T s = t.g_o[i];
    do_pre[i] = dgo * s * (T(1) - s);
    dg_pre[i] = dm[i] * t.attn_norm[i] * silu_grad(t.g_pre[i]);
    dnorm[i] = dm[i] * t.g_a[i];
  }

  Tensor<T> dz = linear_backward(t.z, p.w_o, do_pre, g.w_o, &g.b_o);
  add_into(dz, linear_backward(t.z, p.w_g, dg_pre, g.w_g, &g.b_g));

  Tensor<T> draw(x.shape());
  rms_norm_rows_backward(t.attn_raw.ptr(), p.norm_gain.ptr(), t.inv_rms.data(), dnorm.ptr(), rows, d, draw.ptr(),
                         g.norm_gain.ptr());
  AttentionGrads<T> ag = linear_attention_chunked_raw_backward<T>({t.q, t.k, t.v}, chunk, t.state, draw);

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      const T z = t.z[i];
      g.alpha_q[j] += ag.dq[i] * z;
      g.beta_q[j] += ag.dq[i];
      g.alpha_k[j] += ag.dk[i] * z;
      g.beta_k[j] += ag.dk[i];
      dz[i] += ag.dq[i] * p.alpha_q[j] + ag.dk[i] * p.alpha_k[j];
    }
  }

  Tensor<T> dv_pre(x.shape());
  for (std::size_t i = 0; i < n; ++i) dv_pre[i] = ag.dv[i] * silu_grad(t.v_pre[i]);
  add_into(dx, linear_backward(x, p.w_v, dv_pre, g.w_v, &g.b_v));

  switch (p.mixer) {
    case MixerKind::shortlong:
    case MixerKind::longconv: {
      ShortLongGrads<T> cg{std::move(g.conv.bank.k3), std::move(g.conv.bank.kvar), std::move(g.conv.long_kernel)};
      add_into(dx, short_long_backward(p.conv, x, t.conv, dz, cg));
      g.conv.bank.k3 = std::move(cg.k3);
      g.conv.bank.kvar = std::move(cg.kvar);
      g.conv.long_kernel = std::move(cg.long_kernel);
      break;
    }
    case MixerKind::ssm: {
      const std::size_t L = x.dim(1), ns = p.ssm.b_bar.size();
      Tensor<T> dk({d, L});
      add_into(dx, depthwise_causal_conv_backward(t.ssm_kernels, x, dz, dk, ConvPath::automatic));
      // kernels = C basis^T, so dC += dK basis.
      kernels::gemm<T>(Trans::no, Trans::no, d, ns, L, T(1), dk.ptr(), L, t.ssm_basis.ptr(), ns, T(1), g.ssm.c.ptr(),
                       ns);
      break;
    }
  }
  return dx;
}

template <class T>
Tensor<T> chela_block_forward(const ChelaBlockParams<T>& p, const Tensor<T>& x, std::size_t chunk, BlockTape<T>* tape) {
  if (x.rank() != 3) throw ShapeError("chela block: expected [B, L, d], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(2), rows = x.dim(0) * x.dim(1);
  BlockTape<T> local;
  BlockTape<T>& t = tape ? *tape : local;

  t.ln1_out = Tensor<T>(x.shape());
  t.ln1_mean.assign(rows, T(0));
  t.ln1_inv.assign(rows, T(0));
  layer_norm_rows(x.ptr(), p.ln1_gain.ptr(), p.ln1_bias.ptr(), T(kLayerNormEps), rows, d, t.ln1_out.ptr(),
                  t.ln1_mean.data(), t.ln1_inv.data());
  const Tensor<T> u = chela_layer_forward(p.layer, t.ln1_out, chunk, &t.layer);
  t.xa = u;

  t.ln2_out = Tensor<T>(x.shape());
  t.ln2_mean.assign(rows, T(0));
  t.ln2_inv.assign(rows, T(0));
  layer_norm_rows(t.xa.ptr(), p.ln2_gain.ptr(), p.ln2_bias.ptr(), T(kLayerNormEps), rows, d, t.ln2_out.ptr(),
                  t.ln2_mean.data(), t.ln2_inv.data());
  t.h_pre = linear(t.ln2_out, p.ffn_w1, p.ffn_b1);
  t.h = Tensor<T>(t.h_pre.shape());
  for (std::size_t i = 0; i < t.h.size(); ++i) t.h[i] = silu(t.h_pre[i]);
  Tensor<T> y = linear(t.h, p.ffn_w2, p.ffn_b2);
  add_into(y, t.xa);
  return y;
}

template <class T>
Tensor<T> chela_block_backward(const ChelaBlockParams<T>& p, const Tensor<T>& x, std::size_t chunk,
                               const BlockTape<T>& t, const Tensor<T>& dy, ChelaBlockParams<T>& g) {
  require_same_shape(x, dy, "chela block backward");
  const std::size_t d = x.dim(2), rows = x.dim(0) * x.dim(1);

  Tensor<T> dh = linear_backward(t.h, p.ffn_w2, dy, g.ffn_w2, &g.ffn_b2);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= silu_grad(t.h_pre[i]);
  const Tensor<T> dln2 = linear_backward(t.ln2_out, p.ffn_w1, dh, g.ffn_w1, &g.ffn_b1);
  Tensor<T> dxa(x.shape());
  layer_norm_rows_backward(t.xa.ptr(), p.ln2_gain.ptr(), t.ln2_mean.data(), t.ln2_inv.data(), dln2.ptr(), rows, d,
                           dxa.ptr(), g.ln2_gain.ptr(), g.ln2_bias.ptr());
  add_into(dxa, dy);

  const Tensor<T> dln1 = chela_layer_backward(p.layer, t.ln1_out, chunk, t.layer, dxa, g.layer);
  Tensor<T> dx(x.shape());
  layer_norm_rows_backward(x.ptr(), p.ln1_gain.ptr(), t.ln1_mean.data(), t.ln1_inv.data(), dln1.ptr(), rows, d,
                           dx.ptr(), g.ln1_gain.ptr(), g.ln1_bias.ptr());
  return dx;
}

template <class T>
ModelInput<T> ModelInput<T>::from_tokens(std::vector<std::uint32_t> ids, std::size_t batch, std::size_t length) {
  if (ids.size() != batch * length || batch == 0 || length == 0) {
    throw ShapeError("model input: " + std::to_string(ids.size()) + " tokens for batch " + std::to_string(batch) +
                     " x length " + std::to_string(length));
  }
  ModelInput in;
  in.tokens = std::move(ids);
  in.batch = batch;
  in.length = length;
  return in;
}

template <class T>
ModelInput<T> ModelInput<T>::from_features(Tensor<T> f) {
  if (f.rank() != 3) throw ShapeError("model input: features must be [B, L, F], got " + shape_str(f.shape()));
  ModelInput in;
  in.batch = f.dim(0);
  in.length = f.dim(1);
  in.features = std::move(f);
  return in;
}

template <class T>
Tensor<T> model_forward(const ModelParams<T>& p, const ModelInput<T>& in, ModelTape<T>* tape) {
  const ModelConfig& cfg = p.cfg;
  const std::size_t B = in.batch, L = in.length, d = cfg.d_model;
  if (L > cfg.max_len) {
    throw ShapeError("model: sequence length " + std::to_string(L) + " exceeds max_len " + std::to_string(cfg.max_len));
  }
  ModelTape<T> local;
  ModelTape<T>& t = tape ? *tape : local;

  Tensor<T> h;
  if (cfg.vocab_size > 0) {
    if (in.tokens.size() != B * L) throw ShapeError("model: token-input model given no tokens");
    h = Tensor<T>({B, L, d});
    for (std::size_t i = 0; i < B * L; ++i) {
      const std::uint32_t id = in.tokens[i];
      if (id >= cfg.vocab_size) throw ShapeError("model: token id " + std::to_string(id) + " out of vocabulary");
      std::copy(p.embed.ptr() + std::size_t(id) * d, p.embed.ptr() + (std::size_t(id) + 1) * d, h.ptr() + i * d);
    }
  } else {
    if (in.features.empty() || in.features.dim(2) != cfg.input_dim) {
      throw ShapeError("model: expected features of width " + std::to_string(cfg.input_dim));
    }
    in.features.check_finite("model input");
    h = linear(in.features, p.embed, p.embed_b);
  }
  if (tape) t.embedded = h;

  t.block_in.clear();
  t.blocks.assign(p.blocks.size(), BlockTape<T>{});
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (tape) t.block_in.push_back(h);
    h = chela_block_forward(p.blocks[b], h, cfg.chunk, tape ? &t.blocks[b] : nullptr);
  }

  switch (cfg.task_head) {
    case TaskHead::lm: {
      if (tape) t.final_hidden = h;
      return linear(h, p.head_w, p.head_b);
    }
    case TaskHead::classification: {
      Tensor<T> pooled({B, d});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          kernels::axpy<T>(d, T(1) / T(L), h.ptr() + (b * L + l) * d, pooled.ptr() + b * d);
      if (tape) t.final_hidden = pooled;
      return linear(pooled, p.head_w, p.head_b);
    }
    case TaskHead::regression: {
      Tensor<T> last({B, d});
      for (std::size_t b = 0; b < B; ++b)
        std::copy(h.ptr() + (b * L + L - 1) * d, h.ptr() + (b * L + L) * d, last.ptr() + b * d);
      if (tape) t.final_hidden = last;
      return linear(last, p.head_w, p.head_b);
    }
  }
  throw ConfigError("unknown task head");
}

template <class T>
Tensor<T> model_backward(const ModelParams<T>& p, const ModelInput<T>& in, const ModelTape<T>& t,
                         const Tensor<T>& dout, ModelParams<T>& g) {
  const ModelConfig& cfg = p.cfg;
  const std::size_t B = in.batch, L = in.length, d = cfg.d_model;
  const Tensor<T> dfinal = linear_backward(t.final_hidden, p.head_w, dout, g.head_w, &g.head_b);

  Tensor<T> dh({B, L, d});
  switch (cfg.task_head) {
    case TaskHead::lm:
      dh = dfinal.reshaped({B, L, d});
      break;
    case TaskHead::classification:
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          kernels::axpy<T>(d, T(1) / T(L), dfinal.ptr() + b * d, dh.ptr() + (b * L + l) * d);
      break;
    case TaskHead::regression:
      for (std::size_t b = 0; b < B; ++b)
        std::copy(dfinal.ptr() + b * d, dfinal.ptr() + (b + 1) * d, dh.ptr() + (b * L + L - 1) * d);
      break;
  }

  for (std::size_t b = p.blocks.size(); b-- > 0;) {
    dh = chela_block_backward(p.blocks[b], t.block_in[b], cfg.chunk, t.blocks[b], dh, g.blocks[b]);
  }

  if (cfg.vocab_size > 0) {
    for (std::size_t i = 0; i < B * L; ++i)
      kernels::axpy<T>(d, T(1), dh.ptr() + i * d, g.embed.ptr() + std::size_t(in.tokens[i]) * d);
    return {};
  }
  return linear_backward(in.features, p.embed, dh, g.embed, &g.embed_b);
}

template <class T>
std::vector<FusedShortKernel<T>> fuse_model_short_kernels(const ModelParams<T>& p) {
  std::vector<FusedShortKernel<T>> out;
  for (const auto& b : p.blocks) {
    if (b.layer.mixer == MixerKind::ssm) continue;
    out.push_back(fuse_short_branches(b.layer.conv.bank, b.layer.conv.channels()));
  }
  return out;
}

#define CHELA_INSTANTIATE(T)                                                                                     \
  template struct ModelInput<T>;                                                                                 \
  template Tensor<T> mixer_forward<T>(const ChelaLayerParams<T>&, const Tensor<T>&, LayerTape<T>*);              \
  template Tensor<T> chela_layer_forward<T>(const ChelaLayerParams<T>&, const Tensor<T>&, std::size_t,           \
                                            LayerTape<T>*);                                                      \
  template Tensor<T> chela_layer_backward<T>(const ChelaLayerParams<T>&, const Tensor<T>&, std::size_t,          \
                                             const LayerTape<T>&, const Tensor<T>&, ChelaLayerParams<T>&);       \
  template Tensor<T> chela_block_forward<T>(const ChelaBlockParams<T>&, const Tensor<T>&, std::size_t,           \
                                            BlockTape<T>*);                                                      \
  template Tensor<T> chela_block_backward<T>(const ChelaBlockParams<T>&, const Tensor<T>&, std::size_t,          \
                                             const BlockTape<T>&, const Tensor<T>&, ChelaBlockParams<T>&);       \
  template Tensor<T> model_forward<T>(const ModelParams<T>&, const ModelInput<T>&, ModelTape<T>*);               \
  template Tensor<T> model_backward<T>(const ModelParams<T>&, const ModelInput<T>&, const ModelTape<T>&,         \
                                       const Tensor<T>&, ModelParams<T>&);                                       \
  template std::vector<FusedShortKernel<T>> fuse_model_short_kernels<T>(const ModelParams<T>&);

CHELA_INSTANTIATE(float)
CHELA_INSTANTIATE(double)
#undef CHELA_INSTANTIATE

}  // namespace chela
