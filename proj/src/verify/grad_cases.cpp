// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <functional>
#include <utility>

#include "chela/activations.hpp"
#include "chela/attention.hpp"
#include "chela/conv.hpp"
#include "chela/layer.hpp"
#include "chela/norms.hpp"
#include "chela/verify.hpp"

namespace chela::verify {
namespace {

Tensord randn(Rng& rng, Shape s, double sd = 1.0) { return prng_fill<double>(rng, std::move(s), NormalDist{0.0, sd}); }

// Treats the trainable tensors of a parameter struct as extra op inputs after
// the leading data inputs.
template <class P>
struct ParamBinding {
  using Enumerate = std::function<std::vector<ParamRef<double>>(P&)>;
  P base;
  Enumerate enumerate;

  std::vector<Tensord> tensors() {
    std::vector<Tensord> out;
    for (auto& r : enumerate(base))
      if (r.trainable) out.push_back(*r.tensor);
    return out;
  }
  P bind(std::span<const Tensord> in, std::size_t offset) const {
    P p = base;
    std::size_t i = offset;
    for (auto& r : enumerate(p))
      if (r.trainable) *r.tensor = in[i++];
    return p;
  }
  static void collect(P& grads, const Enumerate& enumerate, std::vector<Tensord>& out) {
    for (auto& r : enumerate(grads))
      if (r.trainable) out.push_back(std::move(*r.tensor));
  }
};

GradCase activation_case(Activation kind, const char* name, Rng& rng) {
  GradCase c;
  c.op.name = name;
  c.op.forward = [kind](std::span<const Tensord> in) { return activation(kind, in[0]); };
  c.op.vjp = [kind](std::span<const Tensord> in, const Tensord& w) {
    return std::vector<Tensord>{activation_vjp(kind, in[0], w)};
  };
  c.inputs = {randn(rng, {3, 5, 4}, 2.0)};
  return c;
}

GradCase rms_norm_case(Rng& rng) {
  GradCase c;
  c.op.name = "rms_norm";
  c.op.forward = [](std::span<const Tensord> in) {
    const std::size_t d = in[1].size(), rows = in[0].size() / d;
    Tensord y(in[0].shape());
    std::vector<double> inv(rows);
    rms_norm_rows(in[0].ptr(), in[1].ptr(), kDefaultNormEps, rows, d, y.ptr(), inv.data());
    return y;
  };
  c.op.vjp = [](std::span<const Tensord> in, const Tensord& w) {
    const std::size_t d = in[1].size(), rows = in[0].size() / d;
    Tensord y(in[0].shape()), dx(in[0].shape()), dg(in[1].shape());
    std::vector<double> inv(rows);
    rms_norm_rows(in[0].ptr(), in[1].ptr(), kDefaultNormEps, rows, d, y.ptr(), inv.data());
    rms_norm_rows_backward(in[0].ptr(), in[1].ptr(), inv.data(), w.ptr(), rows, d, dx.ptr(), dg.ptr());
    return std::vector<Tensord>{dx, dg};
  };
  c.inputs = {randn(rng, {2, 6, 8}), randn(rng, {8})};
  return c;
}

GradCase layer_norm_case(Rng& rng) {
  GradCase c;
  c.op.name = "layer_norm";
  auto run = [](std::span<const Tensord> in, Tensord& y, std::vector<double>& mean, std::vector<double>& inv) {
    const std::size_t d = in[1].size(), rows = in[0].size() / d;
    y = Tensord(in[0].shape());
    mean.assign(rows, 0);
    inv.assign(rows, 0);
    layer_norm_rows(in[0].ptr(), in[1].ptr(), in[2].ptr(), kLayerNormEps, rows, d, y.ptr(), mean.data(), inv.data());
  };
  c.op.forward = [run](std::span<const Tensord> in) {
    Tensord y;
    std::vector<double> m, s;
    run(in, y, m, s);
    return y;
  };
  c.op.vjp = [run](std::span<const Tensord> in, const Tensord& w) {
    Tensord y;
    std::vector<double> m, s;
    run(in, y, m, s);
    const std::size_t d = in[1].size(), rows = in[0].size() / d;
    Tensord dx(in[0].shape()), dg(in[1].shape()), db(in[2].shape());
    layer_norm_rows_backward(in[0].ptr(), in[1].ptr(), m.data(), s.data(), w.ptr(), rows, d, dx.ptr(), dg.ptr(),
                             db.ptr());
    return std::vector<Tensord>{dx, dg, db};
  };
  c.inputs = {randn(rng, {2, 6, 8}), randn(rng, {8}), randn(rng, {8})};
  return c;
}

GradCase conv_case(ConvPath path, const char* name, std::size_t taps, Rng& rng, std::size_t L = 12) {
  GradCase c;
  c.op.name = name;
  c.op.forward = [path](std::span<const Tensord> in) { return depthwise_causal_conv(in[1], in[0], path); };
  c.op.vjp = [path](std::span<const Tensord> in, const Tensord& w) {
    Tensord dk(in[1].shape());
    Tensord dx = depthwise_causal_conv_backward(in[1], in[0], w, dk, path);
    return std::vector<Tensord>{dx, dk};
  };
  c.inputs = {randn(rng, {2, L, 3}), randn(rng, {3, taps})};
  return c;
}

GradCase short_long_case(Rng& rng) {
  const std::size_t d = 3, L = 12;
  ParamBinding<ShortLongConvParams<double>> bind;
  bind.base = init_short_long<double>(d, L, rng);
  bind.base.long_kernel = randn(rng, {d, L}, 0.5);
  bind.enumerate = [](ShortLongConvParams<double>& p) {
    return std::vector<ParamRef<double>>{{"k3", &p.bank.k3, true, true},
                                         {"kvar", &p.bank.kvar, true, true},
                                         {"long", &p.long_kernel, true, true}};
  };
  GradCase c;
  c.op.name = "short_long_conv";
  c.op.forward = [bind](std::span<const Tensord> in) { return short_long_forward(bind.bind(in, 1), in[0]); };
  c.op.vjp = [bind](std::span<const Tensord> in, const Tensord& w) {
    const auto p = bind.bind(in, 1);
    ShortLongTape<double> tape;
    short_long_forward(p, in[0], &tape);
    ShortLongGrads<double> g{Tensord(p.bank.k3.shape()), Tensord(p.bank.kvar.shape()), Tensord(p.long_kernel.shape())};
    Tensord dx = short_long_backward(p, in[0], tape, w, g);
    return std::vector<Tensord>{dx, g.k3, g.kvar, g.long_kernel};
  };
  c.inputs = {randn(rng, {2, L, d})};
  for (auto& t : bind.tensors()) c.inputs.push_back(t);
  return c;
}

AttentionInputs<double> qkv(std::span<const Tensord> in) { return {in[0], in[1], in[2]}; }
std::vector<Tensord> grads_vec(AttentionGrads<double> g) { return {std::move(g.dq), std::move(g.dk), std::move(g.dv)}; }

GradCase softmax_case(bool causal, Rng& rng) {
  GradCase c;
  c.op.name = causal ? "softmax_attention_causal" : "softmax_attention";
  c.op.forward = [causal](std::span<const Tensord> in) { return softmax_attention(qkv(in), causal); };
  c.op.vjp = [causal](std::span<const Tensord> in, const Tensord& w) {
    SoftmaxTape<double> tape;
    softmax_attention(qkv(in), causal, &tape);
    return grads_vec(softmax_attention_backward(qkv(in), causal, tape, w));
  };
  c.inputs = {randn(rng, {2, 9, 4}), randn(rng, {2, 9, 4}), randn(rng, {2, 9, 4})};
  return c;
}

std::vector<Tensord> qkv_inputs(Rng& rng, std::size_t B, std::size_t L, std::size_t d) {
  return {randn(rng, {B, L, d}), randn(rng, {B, L, d}), randn(rng, {B, L, d})};
}

GradCase linear_noncausal_case(Rng& rng) {
  GradCase c;
  c.op.name = "linear_attention_noncausal";
  c.op.forward = [](std::span<const Tensord> in) { return linear_attention_noncausal_raw(qkv(in)); };
  c.op.vjp = [](std::span<const Tensord> in, const Tensord& w) {
    return grads_vec(linear_attention_noncausal_raw_backward(qkv(in), w));
  };
  c.inputs = qkv_inputs(rng, 2, 9, 4);
  return c;
}

GradCase linear_recurrent_case(Rng& rng) {
  GradCase c;
  c.op.name = "linear_attention_recurrent";
  c.op.forward = [](std::span<const Tensord> in) { return linear_attention_recurrent_raw(qkv(in)); };
  c.op.vjp = [](std::span<const Tensord> in, const Tensord& w) {
    RecurrentTape<double> tape;
    linear_attention_recurrent_raw(qkv(in), &tape);
    return grads_vec(linear_attention_recurrent_raw_backward(qkv(in), tape, w));
  };
  c.inputs = qkv_inputs(rng, 2, 9, 4);
  return c;
}

GradCase linear_chunked_case(std::size_t chunk, Rng& rng) {
  GradCase c;
  c.op.name = "linear_attention_chunked_c" + std::to_string(chunk);
  c.op.forward = [chunk](std::span<const Tensord> in) { return linear_attention_chunked_raw(qkv(in), chunk); };
  c.op.vjp = [chunk](std::span<const Tensord> in, const Tensord& w) {
    ChunkState<double> st;
    linear_attention_chunked_raw(qkv(in), chunk, &st);
    return grads_vec(linear_attention_chunked_raw_backward(qkv(in), chunk, st, w));
  };
  c.inputs = qkv_inputs(rng, 2, 11, 4);
  return c;
}

ModelConfig small_config(MixerKind mixer, std::size_t L) {
  ModelConfig cfg;
  cfg.depth = 1;
  cfg.d_model = 8;
  cfg.max_len = L;
  cfg.input_dim = 3;
  cfg.task_head = TaskHead::regression;
  cfg.chunk = 5;
  cfg.mixer = mixer;
  cfg.ssm_state_dim = 4;
  cfg.ssm_delta = 0.1;
  return cfg;
}

// Constant-initialized tensors (biases, gains, scalers) get jitter so no
// branch sits at a symmetric point; randomly initialized weights keep their
// init distribution.
template <class P>
void perturb(P& p, const std::function<std::vector<ParamRef<double>>(P&)>& enumerate, Rng& rng) {
  for (auto& r : enumerate(p)) {
    Tensord& t = *r.tensor;
    if (!r.trainable || std::any_of(t.storage().begin(), t.storage().end(), [&](double v) { return v != t[0]; })) {
      continue;
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.3 * rng.normal();
  }
}

GradCase layer_case(MixerKind mixer, Rng& rng) {
  const std::size_t L = 16;
  const ModelConfig cfg = small_config(mixer, L);
  using P = ChelaLayerParams<double>;
  ParamBinding<P> bind;
  bind.enumerate = [](P& p) { return layer_params(p); };
  bind.base = init_layer_params<double>(cfg, rng);
  perturb<P>(bind.base, bind.enumerate, rng);
  const std::size_t chunk = cfg.chunk;
  GradCase c;
  c.op.name = "chela_layer_" + to_string(mixer);
  c.op.forward = [bind, chunk](std::span<const Tensord> in) {
    return chela_layer_forward(bind.bind(in, 1), in[0], chunk);
  };
  c.op.vjp = [bind, chunk](std::span<const Tensord> in, const Tensord& w) {
    const P p = bind.bind(in, 1);
    LayerTape<double> tape;
    chela_layer_forward(p, in[0], chunk, &tape);
    P g = zeros_like(p);
    std::vector<Tensord> out{chela_layer_backward(p, in[0], chunk, tape, w, g)};
    ParamBinding<P>::collect(g, bind.enumerate, out);
    return out;
  };
  c.inputs = {randn(rng, {2, L, cfg.d_model})};
  for (auto& t : bind.tensors()) c.inputs.push_back(t);
  return c;
}

GradCase block_case(Rng& rng) {
  const std::size_t L = 12;
  const ModelConfig cfg = small_config(MixerKind::shortlong, L);
  using P = ChelaBlockParams<double>;
  ParamBinding<P> bind;
  bind.enumerate = [](P& p) { return block_params(p); };
  bind.base = init_block_params<double>(cfg, rng);
  perturb<P>(bind.base, bind.enumerate, rng);
  const std::size_t chunk = cfg.chunk;
  GradCase c;
  c.op.name = "chela_block";
  c.op.forward = [bind, chunk](std::span<const Tensord> in) {
    return chela_block_forward(bind.bind(in, 1), in[0], chunk);
  };
  c.op.vjp = [bind, chunk](std::span<const Tensord> in, const Tensord& w) {
    const P p = bind.bind(in, 1);
    BlockTape<double> tape;
    chela_block_forward(p, in[0], chunk, &tape);
    P g = zeros_like(p);
    std::vector<Tensord> out{chela_block_backward(p, in[0], chunk, tape, w, g)};
    ParamBinding<P>::collect(g, bind.enumerate, out);
    return out;
  };
  c.inputs = {randn(rng, {2, L, cfg.d_model})};
  for (auto& t : bind.tensors()) c.inputs.push_back(t);
  return c;
}

GradCase model_case(TaskHead head, Rng& rng) {
  const std::size_t L = 10;
  ModelConfig cfg = small_config(MixerKind::shortlong, L);
  cfg.depth = 2;
  cfg.max_len = L + 6;  // shorter inputs than the long kernel
  cfg.task_head = head;
  if (head == TaskHead::classification) cfg.num_classes = 3;
  if (head == TaskHead::lm) {
    cfg.vocab_size = 5;
    cfg.input_dim = 0;
  }
  using P = ModelParams<double>;
  ParamBinding<P> bind;
  bind.enumerate = [](P& p) { return model_params(p); };
  bind.base = init_chela_params<double>(cfg, rng);
  perturb<P>(bind.base, bind.enumerate, rng);
  const bool tokens = head == TaskHead::lm;
  std::vector<std::uint32_t> ids(2 * L);
  for (auto& id : ids) id = static_cast<std::uint32_t>(rng.below(cfg.vocab_size > 0 ? cfg.vocab_size : 1));
  const std::size_t offset = tokens ? 0 : 1;
  auto make_input = [tokens, ids, L](std::span<const Tensord> in) {
    return tokens ? ModelInput<double>::from_tokens(ids, 2, L) : ModelInput<double>::from_features(in[0]);
  };
  GradCase c;
  c.op.name = "model_2block_" + to_string(head);
  c.op.forward = [bind, make_input, offset](std::span<const Tensord> in) {
    return model_forward(bind.bind(in, offset), make_input(in));
  };
  c.op.vjp = [bind, make_input, offset, tokens](std::span<const Tensord> in, const Tensord& w) {
    const P p = bind.bind(in, offset);
    const auto input = make_input(in);
    ModelTape<double> tape;
    model_forward(p, input, &tape);
    P g = zeros_like(p);
    Tensord dx = model_backward(p, input, tape, w, g);
    std::vector<Tensord> out;
    if (!tokens) out.push_back(std::move(dx));
    ParamBinding<P>::collect(g, bind.enumerate, out);
    return out;
  };
  if (!tokens) c.inputs.push_back(randn(rng, {2, L, cfg.input_dim}));
  for (auto& t : bind.tensors()) c.inputs.push_back(t);
  return c;
}

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  cases.push_back(activation_case(Activation::silu, "silu", rng));
  cases.push_back(activation_case(Activation::sigmoid, "sigmoid", rng));
  cases.push_back(rms_norm_case(rng));
  cases.push_back(layer_norm_case(rng));
  cases.push_back(conv_case(ConvPath::direct, "causal_conv_direct", 4, rng));
  cases.push_back(conv_case(ConvPath::fft, "causal_conv_fft", 12, rng));
  cases.push_back(conv_case(ConvPath::partitioned, "causal_conv_partitioned", 70, rng, 70));
  cases.push_back(short_long_case(rng));
  cases.push_back(softmax_case(false, rng));
  cases.push_back(softmax_case(true, rng));
  cases.push_back(linear_noncausal_case(rng));
  cases.push_back(linear_recurrent_case(rng));
  cases.push_back(linear_chunked_case(1, rng));
  cases.push_back(linear_chunked_case(4, rng));
  cases.push_back(layer_case(MixerKind::shortlong, rng));
  cases.push_back(layer_case(MixerKind::longconv, rng));
  cases.push_back(layer_case(MixerKind::ssm, rng));
  cases.push_back(block_case(rng));
  cases.push_back(model_case(TaskHead::regression, rng));
  cases.push_back(model_case(TaskHead::classification, rng));
  cases.push_back(model_case(TaskHead::lm, rng));
  return cases;
}

}  // namespace chela::verify
