// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "chela/error.hpp"
#include "chela/layer.hpp"
#include "chela/ssm.hpp"

namespace chela {

std::string to_string(MixerKind m) {
  switch (m) {
    case MixerKind::shortlong:
      return "shortlong";
    case MixerKind::longconv:
      return "longconv";
    case MixerKind::ssm:
      return "ssm";
  }
  return "?";
}

std::string to_string(TaskHead h) {
  switch (h) {
    case TaskHead::lm:
      return "lm";
    case TaskHead::classification:
      return "classification";
    case TaskHead::regression:
      return "regression";
  }
  return "?";
}

MixerKind parse_mixer(const std::string& s) {
  if (s == "shortlong") return MixerKind::shortlong;
  if (s == "longconv") return MixerKind::longconv;
  if (s == "ssm") return MixerKind::ssm;
  throw ConfigError("unknown mixer '" + s + "' (expected shortlong|longconv|ssm)");
}

TaskHead parse_task_head(const std::string& s) {
  if (s == "lm") return TaskHead::lm;
  if (s == "classification" || s == "classification-meanpool") return TaskHead::classification;
  if (s == "regression") return TaskHead::regression;
  throw ConfigError("unknown task_head '" + s + "' (expected lm|classification|regression)");
}

void ModelConfig::validate() const {
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (chunk == 0) throw ConfigError("chunk must be positive");
  if (vocab_size == 0 && input_dim == 0) throw ConfigError("need vocab_size > 0 or input_dim > 0");
  if (task_head == TaskHead::lm && vocab_size == 0) throw ConfigError("lm head requires vocab_size > 0");
  if (task_head == TaskHead::classification && num_classes == 0) {
    throw ConfigError("classification head requires num_classes > 0");
  }
  if (mixer == MixerKind::ssm && (ssm_state_dim == 0 || !(ssm_delta > 0))) {
    throw ConfigError("ssm mixer requires ssm_state_dim > 0 and ssm_delta > 0");
  }
}

std::size_t ModelConfig::output_dim() const {
  switch (task_head) {
    case TaskHead::lm:
      return vocab_size;
    case TaskHead::classification:
      return num_classes;
    case TaskHead::regression:
      return 1;
  }
  return 0;
}

template <class T>
std::vector<ParamRef<T>> layer_params(ChelaLayerParams<T>& p, const std::string& prefix) {
  std::vector<ParamRef<T>> out;
  auto add = [&](const char* name, Tensor<T>& t, bool trainable, bool decay) {
    if (!t.empty()) out.push_back({prefix + name, &t, trainable, decay});
  };
  add("conv.k3", p.conv.bank.k3, true, true);
  add("conv.kvar", p.conv.bank.kvar, true, true);
  add("conv.long", p.conv.long_kernel, true, true);
  add("ssm.a_bar", p.ssm.a_bar, false, false);
  add("ssm.b_bar", p.ssm.b_bar, false, false);
  add("ssm.c", p.ssm.c, true, true);
  add("w_v", p.w_v, true, true);
  add("b_v", p.b_v, true, false);
  add("w_g", p.w_g, true, true);
  add("b_g", p.b_g, true, false);
  add("w_o", p.w_o, true, true);
  add("b_o", p.b_o, true, false);
  add("alpha_q", p.alpha_q, true, false);
  add("beta_q", p.beta_q, true, false);
  add("alpha_k", p.alpha_k, true, false);
  add("beta_k", p.beta_k, true, false);
  add("norm_gain", p.norm_gain, true, false);
  return out;
}

template <class T>
std::vector<ParamRef<T>> block_params(ChelaBlockParams<T>& p, const std::string& prefix) {
  auto out = layer_params(p.layer, prefix + "layer.");
  auto add = [&](const char* name, Tensor<T>& t, bool decay) { out.push_back({prefix + name, &t, true, decay}); };
  add("ln1.gain", p.ln1_gain, false);
  add("ln1.bias", p.ln1_bias, false);
  add("ln2.gain", p.ln2_gain, false);
  add("ln2.bias", p.ln2_bias, false);
  add("ffn.w1", p.ffn_w1, true);
  add("ffn.b1", p.ffn_b1, false);
  add("ffn.w2", p.ffn_w2, true);
  add("ffn.b2", p.ffn_b2, false);
  return out;
}

template <class T>
std::vector<ParamRef<T>> model_params(ModelParams<T>& p) {
  std::vector<ParamRef<T>> out;
  out.push_back({"embed", &p.embed, true, true});
  if (!p.embed_b.empty()) out.push_back({"embed_b", &p.embed_b, true, false});
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto b = block_params(p.blocks[i], "blocks." + std::to_string(i) + ".");
    out.insert(out.end(), b.begin(), b.end());
  }
  out.push_back({"head.w", &p.head_w, true, true});
  out.push_back({"head.b", &p.head_b, true, false});
  return out;
}

template <class T>
ChelaLayerParams<T> zeros_like(const ChelaLayerParams<T>& p) {
  ChelaLayerParams<T> z = p;
  for (auto& r : layer_params(z)) r.tensor->fill(T(0));
  return z;
}

template <class T>
ChelaBlockParams<T> zeros_like(const ChelaBlockParams<T>& p) {
  ChelaBlockParams<T> z = p;
  for (auto& r : block_params(z)) r.tensor->fill(T(0));
  return z;
}

template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
  ModelParams<T> z = p;
  for (auto& r : model_params(z)) r.tensor->fill(T(0));
  return z;
}

template <class T>
std::size_t parameter_count(const ModelParams<T>& p, bool trainable_only) {
  std::size_t n = 0;
  for (const auto& r : model_params(const_cast<ModelParams<T>&>(p))) {
    if (r.trainable || !trainable_only) n += r.tensor->size();
  }
  return n;
}

template <class T>
ChelaLayerParams<T> init_layer_params(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model;
  const NormalDist weight{0.0, 1.0 / std::sqrt(double(d))};
  ChelaLayerParams<T> p;
  p.mixer = cfg.mixer;
  switch (cfg.mixer) {
    case MixerKind::shortlong:
    case MixerKind::longconv: {
      ShortLongInit init;
      init.short_branches = cfg.mixer == MixerKind::shortlong;
      init.include_identity = cfg.mixer == MixerKind::longconv || cfg.include_identity;
      p.conv = init_short_long<T>(d, cfg.max_len, rng, init);
      break;
    }
    case MixerKind::ssm: {
      const ContinuousSsm cont = hippo_s4_init(cfg.ssm_state_dim, rng, cfg.ssm_delta);
      const DiscreteSsm disc = bilinear_discretize(cont);
      const std::size_t n = cfg.ssm_state_dim;
      p.ssm.a_bar = disc.A_bar.cast<T>();
      p.ssm.b_bar = Tensor<T>({n}, std::vector<T>(disc.B_bar.begin(), disc.B_bar.end()));
      p.ssm.c = prng_fill<T>(rng, {d, n}, NormalDist{0.0, 1.0});
      break;
    }
  }
  p.w_v = prng_fill<T>(rng, {d, d}, weight);
  p.b_v = Tensor<T>({d});
  p.w_g = prng_fill<T>(rng, {d, d}, weight);
  p.b_g = Tensor<T>({d});
  p.w_o = prng_fill<T>(rng, {d, d}, weight);
  p.b_o = Tensor<T>({d});
  p.alpha_q = Tensor<T>({d}, T(1));
  p.beta_q = Tensor<T>({d});
  p.alpha_k = Tensor<T>({d}, T(1));
  p.beta_k = Tensor<T>({d});
  p.norm_gain = Tensor<T>({d}, T(1));
  return p;
}

template <class T>
ChelaBlockParams<T> init_block_params(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim();
  ChelaBlockParams<T> p;
  p.layer = init_layer_params<T>(cfg, rng);
  p.ln1_gain = Tensor<T>({d}, T(1));
  p.ln1_bias = Tensor<T>({d});
  p.ln2_gain = Tensor<T>({d}, T(1));
  p.ln2_bias = Tensor<T>({d});
  p.ffn_w1 = prng_fill<T>(rng, {d, f}, NormalDist{0.0, 1.0 / std::sqrt(double(d))});
  p.ffn_b1 = Tensor<T>({f});
  p.ffn_w2 = prng_fill<T>(rng, {f, d}, NormalDist{0.0, 1.0 / std::sqrt(double(f))});
  p.ffn_b2 = Tensor<T>({d});
  return p;
}

template <class T>
ModelParams<T> init_chela_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  ModelParams<T> p;
  p.cfg = cfg;
  if (cfg.vocab_size > 0) {
    p.embed = prng_fill<T>(rng, {cfg.vocab_size, d}, NormalDist{0.0, 1.0});
  } else {
    p.embed = prng_fill<T>(rng, {cfg.input_dim, d}, NormalDist{0.0, 1.0 / std::sqrt(double(cfg.input_dim))});
    p.embed_b = Tensor<T>({d});
  }
  for (std::size_t i = 0; i < cfg.depth; ++i) p.blocks.push_back(init_block_params<T>(cfg, rng));
  p.head_w = prng_fill<T>(rng, {d, cfg.output_dim()}, NormalDist{0.0, 1.0 / std::sqrt(double(d))});
  p.head_b = Tensor<T>({cfg.output_dim()});
  return p;
}

template <class T>
ModelParams<T> init_chela_params(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  return init_chela_params<T>(cfg, rng);
}

#define CHELA_INSTANTIATE(T)                                                                          \
  template std::vector<ParamRef<T>> layer_params<T>(ChelaLayerParams<T>&, const std::string&);        \
  template std::vector<ParamRef<T>> block_params<T>(ChelaBlockParams<T>&, const std::string&);        \
  template std::vector<ParamRef<T>> model_params<T>(ModelParams<T>&);                                 \
  template ChelaLayerParams<T> zeros_like<T>(const ChelaLayerParams<T>&);                             \
  template ChelaBlockParams<T> zeros_like<T>(const ChelaBlockParams<T>&);                             \
  template ModelParams<T> zeros_like<T>(const ModelParams<T>&);                                       \
  template std::size_t parameter_count<T>(const ModelParams<T>&, bool);                               \
  template ChelaLayerParams<T> init_layer_params<T>(const ModelConfig&, Rng&);                        \
  template ChelaBlockParams<T> init_block_params<T>(const ModelConfig&, Rng&);                        \
  template ModelParams<T> init_chela_params<T>(const ModelConfig&, Rng&);                             \
  template ModelParams<T> init_chela_params<T>(const ModelConfig&);

CHELA_INSTANTIATE(float)
CHELA_INSTANTIATE(double)
#undef CHELA_INSTANTIATE

}  // namespace chela
