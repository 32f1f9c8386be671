// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "chela/gradcheck.hpp"
#include "chela/layer.hpp"
#include "chela/norms.hpp"
#include "chela/oracle.hpp"
#include "chela/verify.hpp"
#include "test_util.hpp"

namespace chela {
namespace {

using testing_util::randn;

ModelConfig layer_cfg(MixerKind mixer, std::size_t d, std::size_t L) {
  ModelConfig c;
  c.depth = 1;
  c.d_model = d;
  c.max_len = L;
  c.vocab_size = 8;
  c.mixer = mixer;
  c.ssm_state_dim = 4;
  c.ssm_delta = 0.1;
  return c;
}

// Random values in every trainable slot, so the oracle comparison is not
// dominated by init constants.
void scramble(ChelaLayerParams<double>& p, Rng& rng) {
  for (auto& ref : layer_params(p))
    if (ref.trainable) *ref.tensor = randn(rng, ref.tensor->shape(), 0.5);
}

TEST(Init, SameSeedSameParameters) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 16, 64);
  cfg.depth = 2;
  cfg.seed = 5;
  auto a = init_chela_params<double>(cfg), b = init_chela_params<double>(cfg);
  auto ra = model_params(a), rb = model_params(b);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].name, rb[i].name);
    EXPECT_EQ(*ra[i].tensor, *rb[i].tensor) << ra[i].name;
  }
}

TEST(Init, StatedConstants) {
  Rng rng(1);
  const auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 8, 32), rng);
  for (double v : p.alpha_q.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.alpha_k.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.beta_q.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.b_o.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.norm_gain.data()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(p.w_v.shape(), (Shape{8, 8}));
}

TEST(Init, ParameterCountMatchesClosedForm) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 64, 256);
  cfg.depth = 2;
  const auto p = init_chela_params<double>(cfg);
  EXPECT_EQ(parameter_count(p), oracle::parameter_count(cfg));
  for (MixerKind m : {MixerKind::longconv, MixerKind::ssm}) {
    cfg.mixer = m;
    EXPECT_EQ(parameter_count(init_chela_params<double>(cfg)), oracle::parameter_count(cfg)) << to_string(m);
  }
}

TEST(Init, InvalidConfigRejected) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 0, 16);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = layer_cfg(MixerKind::shortlong, 8, 16);
  cfg.vocab_size = 0;
  cfg.input_dim = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Layer, ZeroInputPropagatesZero) {
  for (MixerKind m : {MixerKind::shortlong, MixerKind::longconv, MixerKind::ssm}) {
    Rng rng(2);
    const auto p = init_layer_params<double>(layer_cfg(m, 8, 16), rng);
    LayerTape<double> tape;
    const Tensord u = chela_layer_forward(p, Tensord({2, 16, 8}), 5, &tape);
    EXPECT_EQ(max_abs(u), 0.0);
    EXPECT_EQ(max_abs(tape.z), 0.0);
    EXPECT_EQ(max_abs(tape.v), 0.0);
    EXPECT_EQ(max_abs(tape.m), 0.0);
    for (double g : tape.g_o.data()) EXPECT_EQ(g, 0.5);
  }
}

TEST(Layer, ClosedOutputGateIsPureSkip) {
  Rng rng(3);
  auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 8, 16), rng);
  p.b_o.fill(-1e4);
  const Tensord x = randn(rng, {2, 16, 8});
  EXPECT_EQ(chela_layer_forward(p, x, 4), x);
}

TEST(Layer, MatchesDenseTranscription) {
  Rng rng(4);
  const MixerKind mixers[] = {MixerKind::shortlong, MixerKind::longconv, MixerKind::ssm};
  for (int draw = 0; draw < 200; ++draw) {
    const MixerKind m = mixers[draw % 3];
    const std::size_t d = 1 + rng.below(10), L = 1 + rng.below(40), chunk = 1 + rng.below(L + 3);
    auto p = init_layer_params<double>(layer_cfg(m, d, L), rng);
    scramble(p, rng);
    const Tensord x = randn(rng, {1 + rng.below(2), L, d});
    EXPECT_LE(rel_err(chela_layer_forward(p, x, chunk), oracle::chela_layer(p, x)), 1e-9)
        << "draw " << draw << " mixer " << to_string(m) << " d=" << d << " L=" << L << " C=" << chunk;
  }
}

TEST(Layer, FixedCaseMatchesDenseTranscription) {
  Rng rng(5);
  auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 8, 16), rng);
  scramble(p, rng);
  const Tensord x = randn(rng, {1, 16, 8});
  EXPECT_LE(rel_err(chela_layer_forward(p, x, 5), oracle::chela_layer(p, x)), 1e-9);
}

TEST(Layer, GateBoundsAndConvexCombination) {
  Rng rng(6);
  for (int draw = 0; draw < 20; ++draw) {
    auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 6, 24), rng);
    scramble(p, rng);
    const Tensord x = randn(rng, {2, 24, 6}, 2.0);
    LayerTape<double> tape;
    const Tensord u = chela_layer_forward(p, x, 7, &tape);
    for (std::size_t i = 0; i < u.size(); ++i) {
      ASSERT_GT(tape.g_o[i], 0.0);
      ASSERT_LT(tape.g_o[i], 1.0);
      const double lo = std::min(tape.m[i], x[i]), hi = std::max(tape.m[i], x[i]);
      ASSERT_GE(u[i], lo - 1e-12 * (1 + std::abs(lo)));
      ASSERT_LE(u[i], hi + 1e-12 * (1 + std::abs(hi)));
    }
  }
}

TEST(Layer, NearIdentityForSmallInputs) {
  // At init G_o = sigmoid(Z W_o) is close to 1/2 and M is tiny, so U - X
  // shrinks with X and stays within about half of it.
  Rng rng(7);
  const auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 16, 32), rng);
  for (double scale : {1e-2, 1e-3, 1e-4}) {
    const Tensord x = randn(rng, {1, 32, 16}, scale);
    const Tensord u = chela_layer_forward(p, x, 8);
    EXPECT_LE(max_abs_diff(u.data(), x.data()), 0.55 * max_abs(x)) << scale;
  }
}

TEST(Layer, SequenceTooLongRejected) {
  Rng rng(8);
  const auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 4, 16), rng);
  EXPECT_THROW(chela_layer_forward(p, randn(rng, {1, 17, 4}), 4), ShapeError);
  EXPECT_THROW(chela_layer_forward(p, randn(rng, {1, 8, 5}), 4), ShapeError);
}

TEST(Layer, ChunkSizeDoesNotChangeOutput) {
  Rng rng(9);
  auto p = init_layer_params<double>(layer_cfg(MixerKind::shortlong, 8, 40), rng);
  scramble(p, rng);
  const Tensord x = randn(rng, {2, 40, 8});
  const Tensord ref = chela_layer_forward(p, x, 40);
  for (std::size_t C : {1u, 3u, 16u}) EXPECT_LE(rel_err(chela_layer_forward(p, x, C), ref), 1e-10);
}

TEST(Block, ClosedGateAndZeroFfnLeavesNormalizedInputPlusBias) {
  Rng rng(10);
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 8, 16);
  auto p = init_block_params<double>(cfg, rng);
  p.layer.b_o.fill(-1e4);
  p.ffn_w1.fill(0.0);
  p.ffn_w2.fill(0.0);
  p.ffn_b2 = randn(rng, {8});
  // Rows already zero-mean with unit variance pass through LayerNorm(gain 1,
  // bias 0) unchanged up to eps, so Y = X + b2.
  Tensord x = randn(rng, {2, 16, 8});
  Tensord dummy_mean({32}), dummy_inv({32});
  Tensord gain({8}, 1.0), bias({8});
  Tensord xn(x.shape());
  layer_norm_rows(x.ptr(), gain.ptr(), bias.ptr(), 0.0, 32, 8, xn.ptr(), dummy_mean.ptr(), dummy_inv.ptr());
  const Tensord y = chela_block_forward(p, xn, 4);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y[r * 8 + c], xn[r * 8 + c] + p.ffn_b2[c], 1e-4);
}

TEST(Block, TwoBlocksKeepShape) {
  Rng rng(11);
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 8, 32);
  const auto b1 = init_block_params<double>(cfg, rng), b2 = init_block_params<double>(cfg, rng);
  const Tensord x = randn(rng, {3, 32, 8});
  const Tensord y = chela_block_forward(b2, chela_block_forward(b1, x, 8), 8);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(b1.ffn_w1.shape(), (Shape{8, 16}));
  EXPECT_EQ(b1.ffn_w2.shape(), (Shape{16, 8}));
}

TEST(Gradients, EveryOpPassesVjpCheck) {
  for (const auto& c : verify::gradient_cases(1)) {
    EXPECT_LE(vjp_check(c.op, c.inputs).max_rel_error, 1e-4) << c.op.name;
  }
}

TEST(Model, DepthZeroIsEmbeddingThenHead) {
  ModelConfig cfg;
  cfg.depth = 0;
  cfg.d_model = 3;
  cfg.max_len = 4;
  cfg.vocab_size = 2;
  cfg.seed = 12;
  auto p = init_chela_params<double>(cfg);
  Rng rng(13);
  p.head_b = randn(rng, {2});
  const std::vector<std::uint32_t> ids{0, 1, 1, 0};
  const Tensord logits = model_forward(p, ModelInput<double>::from_tokens(ids, 1, 4));
  ASSERT_EQ(logits.shape(), (Shape{1, 4, 2}));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t o = 0; o < 2; ++o) {
      double want = p.head_b[o];
      for (std::size_t c = 0; c < 3; ++c) want += p.embed.at(ids[t], c) * p.head_w.at(c, o);
      EXPECT_NEAR(logits.at(0, t, o), want, 1e-14);
    }
}

TEST(Model, MeanPoolOfConstantFeatures) {
  ModelConfig cfg;
  cfg.depth = 0;
  cfg.d_model = 6;
  cfg.max_len = 20;
  cfg.input_dim = 3;
  cfg.num_classes = 4;
  cfg.task_head = TaskHead::classification;
  cfg.seed = 14;
  const auto p = init_chela_params<double>(cfg);
  Rng rng(15);
  const Tensord f = randn(rng, {1, 1, 3});
  Tensord seq({1, 20, 3});
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t c = 0; c < 3; ++c) seq.at(0, t, c) = f.at(0, 0, c);
  const Tensord pooled = model_forward(p, ModelInput<double>::from_features(seq));
  const Tensord single = model_forward(p, ModelInput<double>::from_features(f));
  ASSERT_EQ(pooled.shape(), (Shape{1, 4}));
  EXPECT_LE(rel_err(pooled, single), 1e-14);
}

TEST(Model, LmLogitsShape) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 16, 32);
  cfg.depth = 2;
  const auto p = init_chela_params<double>(cfg);
  std::vector<std::uint32_t> ids(64);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i % 8;
  EXPECT_EQ(model_forward(p, ModelInput<double>::from_tokens(ids, 2, 32)).shape(), (Shape{2, 32, 8}));
}

TEST(Model, RegressionReadsLastPosition) {
  ModelConfig cfg = layer_cfg(MixerKind::longconv, 8, 16);
  cfg.vocab_size = 0;
  cfg.input_dim = 2;
  cfg.task_head = TaskHead::regression;
  const auto p = init_chela_params<double>(cfg);
  EXPECT_EQ(p.embed_b.shape(), (Shape{8}));
  Rng rng(16);
  const Tensord out = model_forward(p, ModelInput<double>::from_features(randn(rng, {3, 16, 2})));
  EXPECT_EQ(out.shape(), (Shape{3, 1}));
}

TEST(Model, OutOfVocabularyRejected) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 8, 8);
  const auto p = init_chela_params<double>(cfg);
  const std::vector<std::uint32_t> ids{1, 2, 8};
  EXPECT_THROW(model_forward(p, ModelInput<double>::from_tokens(ids, 1, 3)), ShapeError);
}

Tensord lm_logits(const ModelParams<double>& p, const std::vector<std::uint32_t>& ids) {
  return model_forward(p, ModelInput<double>::from_tokens(ids, 1, ids.size()));
}

TEST(Model, LmIsCausalExactlyOnDirectConvPath) {
  // Kernels of up to 24 taps use the direct loop, so no FFT round-off mixes
  // positions and earlier logits are bit-identical.
  for (MixerKind m : {MixerKind::shortlong, MixerKind::longconv}) {
    ModelConfig cfg = layer_cfg(m, 8, 20);
    cfg.depth = 2;
    cfg.chunk = 6;
    const auto p = init_chela_params<double>(cfg);
    Rng rng(17);
    std::vector<std::uint32_t> ids(20);
    for (auto& v : ids) v = rng.below(8);
    const Tensord base = lm_logits(p, ids);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      auto pert = ids;
      pert[t] = (pert[t] + 3) % 8;
      const Tensord y = lm_logits(p, pert);
      for (std::size_t i = 0; i < t * 8; ++i) ASSERT_EQ(y[i], base[i]) << to_string(m) << " t=" << t;
      bool changed = false;
      for (std::size_t i = t * 8; i < y.size(); ++i) changed |= y[i] != base[i];
      EXPECT_TRUE(changed);
    }
  }
}

TEST(Model, LmIsCausalExactlyOnPartitionedFftPath) {
  // Long kernels take the partitioned FFT, which never reads ahead either.
  for (MixerKind m : {MixerKind::shortlong, MixerKind::longconv, MixerKind::ssm}) {
    ModelConfig cfg = layer_cfg(m, 8, 150);
    cfg.depth = 2;
    cfg.chunk = 16;
    const auto p = init_chela_params<double>(cfg);
    Rng rng(18);
    std::vector<std::uint32_t> ids(150);
    for (auto& v : ids) v = rng.below(8);
    const Tensord base = lm_logits(p, ids);
    for (std::size_t t = 0; t < ids.size(); t += 7) {
      auto pert = ids;
      pert[t] = (pert[t] + 5) % 8;
      const Tensord y = lm_logits(p, pert);
      for (std::size_t i = 0; i < t * 8; ++i) ASSERT_EQ(y[i], base[i]) << to_string(m) << " t=" << t;
    }
  }
}

TEST(Model, FusedKernelsPerConvLayer) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 8, 64);
  cfg.depth = 3;
  const auto fused = fuse_model_short_kernels(init_chela_params<double>(cfg));
  ASSERT_EQ(fused.size(), 3u);
  EXPECT_EQ(fused[0].kernel.shape(), (Shape{8, short_kernel_size(64)}));
  cfg.mixer = MixerKind::ssm;
  EXPECT_TRUE(fuse_model_short_kernels(init_chela_params<double>(cfg)).empty());
}

TEST(Model, FloatAndDoubleAgree) {
  ModelConfig cfg = layer_cfg(MixerKind::shortlong, 16, 48);
  cfg.depth = 2;
  const auto pd = init_chela_params<double>(cfg);
  const auto pf = init_chela_params<float>(cfg);
  std::vector<std::uint32_t> ids(48);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = (i * 5) % 8;
  const Tensord yd = model_forward(pd, ModelInput<double>::from_tokens(ids, 1, 48));
  const Tensord yf = model_forward(pf, ModelInput<float>::from_tokens(ids, 1, 48)).cast<double>();
  EXPECT_LE(rel_err(yf, yd), 1e-4);
}

}  // namespace
}  // namespace chela
