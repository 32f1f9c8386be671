// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "chela/activations.hpp"
#include "chela/conv.hpp"
#include "chela/oracle.hpp"
#include "test_util.hpp"

namespace chela {
namespace {

using testing_util::randn;
using testing_util::randn_vec;
using testing_util::rel_err_ld;

TEST(ShortKernelSize, Examples) {
  EXPECT_EQ(short_kernel_size(1000), 7u);
  EXPECT_EQ(short_kernel_size(10), 3u);
  EXPECT_EQ(short_kernel_size(4096), 9u);
  EXPECT_EQ(short_kernel_size(1), 3u);
  EXPECT_EQ(short_kernel_size(100), 5u);
}

TEST(ShortKernelSize, AlwaysOddAndAtLeastThree) {
  for (std::size_t L = 1; L < 200000; L = L * 3 / 2 + 1) {
    const std::size_t k = short_kernel_size(L);
    EXPECT_EQ(k % 2, 1u) << L;
    EXPECT_GE(k, 3u);
    EXPECT_GE(double(k), 2 * std::log10(double(L)) + 1 - 1e-12);
  }
}

TEST(CausalConv, IdentityKernel) {
  Rng rng(1);
  const auto x = randn_vec(rng, 20);
  const std::vector<double> k{1.0};
  EXPECT_EQ(causal_conv_direct<double>(k, x), x);
  EXPECT_LE(rel_err_ld(causal_conv_fft<double>(k, x), x), 1e-14);
}

TEST(CausalConv, DelayKernel) {
  const std::vector<double> x{1, 2, 3, 4}, k{0, 1};
  const auto y = causal_conv_direct<double>(k, x);
  EXPECT_EQ(y, (std::vector<double>{0, 1, 2, 3}));
}

TEST(CausalConv, HandWorkedSmallCase) {
  // y0 = 1*1, y1 = 1*2 + 2*1, y2 = 1*3 + 2*2 + 3*1
  const std::vector<double> k{1, 2, 3}, x{1, 2, 3};
  EXPECT_EQ(causal_conv_direct<double>(k, x), (std::vector<double>{1, 4, 10}));
}

TEST(CausalConv, DirectMatchesExtendedPrecision) {
  Rng rng(2);
  const auto k = randn_vec(rng, 9), x = randn_vec(rng, 64);
  EXPECT_LE(rel_err_ld(causal_conv_direct<double>(k, x), oracle::direct_conv(k, x)), 1e-12);
}

TEST(CausalConv, KernelLongerThanInputIsTruncated) {
  Rng rng(3);
  const auto k = randn_vec(rng, 10), x = randn_vec(rng, 4);
  const std::vector<double> kt(k.begin(), k.begin() + 4);
  EXPECT_EQ(causal_conv_direct<double>(k, x), causal_conv_direct<double>(kt, x));
  EXPECT_LE(rel_err_ld(causal_conv_fft<double>(k, x), causal_conv_direct<double>(kt, x)), 1e-13);
}

TEST(CausalConv, FftMatchesDirectFullLength) {
  Rng rng(4);
  const auto k = randn_vec(rng, 256), x = randn_vec(rng, 256);
  EXPECT_LE(rel_err_ld(causal_conv_fft<double>(k, x), causal_conv_direct<double>(k, x)), 1e-10);
}

TEST(CausalConv, FftMatchesDirectSweep) {
  Rng rng(5);
  for (std::size_t L : {16u, 37u, 100u, 1024u, 4096u})
    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{9}, L}) {
      const auto kern = randn_vec(rng, k), x = randn_vec(rng, L);
      EXPECT_LE(rel_err_ld(causal_conv_fft<double>(kern, x), causal_conv_direct<double>(kern, x)), 1e-10)
          << "L=" << L << " k=" << k;
    }
}

TEST(CausalConv, Linearity) {
  Rng rng(6);
  const auto k = randn_vec(rng, 33), x = randn_vec(rng, 128), z = randn_vec(rng, 128);
  const double a = 1.7, b = -0.3;
  std::vector<double> mix(128);
  for (std::size_t i = 0; i < 128; ++i) mix[i] = a * x[i] + b * z[i];
  const auto lhs = causal_conv_fft<double>(k, mix);
  const auto cx = causal_conv_fft<double>(k, x), cz = causal_conv_fft<double>(k, z);
  std::vector<double> rhs(128);
  for (std::size_t i = 0; i < 128; ++i) rhs[i] = a * cx[i] + b * cz[i];
  EXPECT_LE(rel_err_ld(lhs, rhs), 1e-10);
}

TEST(CausalConv, DirectPerturbationSweepIsExact) {
  Rng rng(7);
  const auto k = randn_vec(rng, 9), x = randn_vec(rng, 40);
  const auto base = causal_conv_direct<double>(k, x);
  for (std::size_t t = 0; t < x.size(); ++t) {
    auto xp = x;
    xp[t] += 10.0;
    const auto y = causal_conv_direct<double>(k, xp);
    for (std::size_t s = 0; s < t; ++s) ASSERT_EQ(y[s], base[s]) << "t=" << t << " s=" << s;
  }
}

TEST(CausalConv, FftPerturbationSweepToRoundOff) {
  // FFT outputs mix all positions through round-off, so earlier outputs move
  // by at most a few ulps of the output scale.
  Rng rng(8);
  const auto k = randn_vec(rng, 64), x = randn_vec(rng, 64);
  const auto base = causal_conv_fft<double>(k, x);
  double scale = 0;
  for (double v : base) scale = std::max(scale, std::abs(v));
  for (std::size_t t = 0; t < x.size(); ++t) {
    auto xp = x;
    xp[t] += 10.0;
    const auto y = causal_conv_fft<double>(k, xp);
    for (std::size_t s = 0; s < t; ++s) ASSERT_LE(std::abs(y[s] - base[s]), 1e-13 * scale) << t << "," << s;
  }
}

TEST(DepthwiseConv, MatchesOracleOnBothPaths) {
  Rng rng(9);
  const Tensord k = randn(rng, {5, 12}), x = randn(rng, {2, 30, 5});
  const Tensord want = oracle::depthwise_conv(k, x);
  EXPECT_LE(rel_err(depthwise_causal_conv(k, x, ConvPath::direct), want), 1e-12);
  EXPECT_LE(rel_err(depthwise_causal_conv(k, x, ConvPath::fft), want), 1e-10);
  EXPECT_LE(rel_err(depthwise_causal_conv(k, x, ConvPath::partitioned), want), 1e-10);
  EXPECT_LE(rel_err(depthwise_causal_conv(k, x, ConvPath::automatic), want), 1e-10);
}

TEST(DepthwiseConv, PartitionedMatchesOracle) {
  Rng rng(21);
  // Lengths on and off powers of two, below and above the leaf block, odd batch.
  for (std::size_t L : {1u, 31u, 32u, 33u, 64u, 100u, 257u, 1024u})
    for (std::size_t k : {std::size_t{5}, std::size_t{40}, L}) {
      const Tensord kern = randn(rng, {3, k}), x = randn(rng, {3, L, 3});
      EXPECT_LE(rel_err(depthwise_causal_conv(kern, x, ConvPath::partitioned), oracle::depthwise_conv(kern, x)), 1e-10)
          << "L=" << L << " k=" << k;
    }
}

TEST(DepthwiseConv, PartitionedPerturbationSweepIsExact) {
  Rng rng(22);
  const std::size_t L = 300, d = 2;
  const Tensord kern = randn(rng, {d, L}), x = randn(rng, {2, L, d});
  const Tensord base = depthwise_causal_conv(kern, x, ConvPath::partitioned);
  for (std::size_t t = 0; t < L; ++t) {
    Tensord xp = x;
    xp.at(t % 2, t, 0) += 10.0;
    const Tensord y = depthwise_causal_conv(kern, xp, ConvPath::partitioned);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t c = 0; c < d; ++c) ASSERT_EQ(y.at(b, s, c), base.at(b, s, c)) << "t=" << t << " s=" << s;
  }
}

TEST(DepthwiseConv, PartitionedBackwardMatchesDirect) {
  Rng rng(23);
  const Tensord kern = randn(rng, {2, 70}), x = randn(rng, {1, 70, 2}), dy = randn(rng, {1, 70, 2});
  Tensord dk1({2, 70}), dk2({2, 70});
  const Tensord dx1 = depthwise_causal_conv_backward(kern, x, dy, dk1, ConvPath::direct);
  const Tensord dx2 = depthwise_causal_conv_backward(kern, x, dy, dk2, ConvPath::partitioned);
  EXPECT_LE(rel_err(dx2, dx1), 1e-12);
  EXPECT_LE(rel_err(dk2, dk1), 1e-12);
}

TEST(DepthwiseConv, ChannelMismatchThrows) {
  Rng rng(9);
  EXPECT_THROW(depthwise_causal_conv(randn(rng, {4, 3}), randn(rng, {1, 8, 5})), ShapeError);
}

ShortConvBank<double> random_bank(Rng& rng, std::size_t d, std::size_t L, bool identity) {
  return {randn(rng, {d, 3}), randn(rng, {d, short_kernel_size(L)}), identity};
}

TEST(ShortBranch, ZeroKernelsWithIdentityIsSkip) {
  Rng rng(10);
  const std::size_t d = 3, L = 50;
  const ShortConvBank<double> bank{Tensord({d, 3}), Tensord({d, short_kernel_size(L)}), true};
  const Tensord x = randn(rng, {2, L, d});
  EXPECT_EQ(short_branch_forward(bank, x), x);
}

TEST(ShortBranch, DeltaKernelWithoutIdentity) {
  Rng rng(11);
  const std::size_t d = 4, L = 20;
  Tensord k3({d, 3});
  for (std::size_t c = 0; c < d; ++c) k3.at(c, 0) = 1.0;
  const ShortConvBank<double> bank{k3, Tensord({d, short_kernel_size(L)}), false};
  const Tensord x = randn(rng, {1, L, d});
  EXPECT_EQ(short_branch_forward(bank, x), x);
}

TEST(ShortBranch, ChannelMismatchThrows) {
  Rng rng(12);
  const auto bank = random_bank(rng, 4, 16, true);
  EXPECT_THROW(short_branch_forward(bank, randn(rng, {1, 16, 3})), ShapeError);
}

TEST(Fusion, FirstTapSumsBranches) {
  Rng rng(13);
  const std::size_t d = 2;
  auto bank = random_bank(rng, d, 1000, true);
  ASSERT_EQ(bank.kvar.dim(1), 7u);
  const auto fused = fuse_short_branches(bank, d);
  ASSERT_EQ(fused.kernel.dim(1), 7u);
  for (std::size_t c = 0; c < d; ++c) {
    EXPECT_DOUBLE_EQ(fused.kernel.at(c, 0), bank.kvar.at(c, 0) + bank.k3.at(c, 0) + 1.0);
    EXPECT_DOUBLE_EQ(fused.kernel.at(c, 2), bank.kvar.at(c, 2) + bank.k3.at(c, 2));
    EXPECT_DOUBLE_EQ(fused.kernel.at(c, 5), bank.kvar.at(c, 5));
  }
}

TEST(Fusion, ZeroBankIsUnitImpulse) {
  const std::size_t d = 3;
  const ShortConvBank<double> bank{Tensord({d, 3}), Tensord({d, 7}), true};
  const auto fused = fuse_short_branches(bank, d);
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < fused.kernel.dim(1); ++j) EXPECT_EQ(fused.kernel.at(c, j), j == 0 ? 1.0 : 0.0);
}

TEST(Fusion, IdentityOnlyBank) {
  const ShortConvBank<double> bank{{}, {}, true};
  const auto fused = fuse_short_branches(bank, 4);
  EXPECT_EQ(fused.kernel.shape(), (Shape{4, 1}));
}

TEST(Fusion, FusedKernelMatchesBranches) {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(6), L = 4 + rng.below(300);
    const auto bank = random_bank(rng, d, L, trial % 2 == 0);
    const Tensord x = randn(rng, {2, L, d});
    const auto fused = fuse_short_branches(bank, d);
    const Tensord a = depthwise_causal_conv(fused.kernel, x), b = short_branch_forward(bank, x);
    EXPECT_LE(max_abs_diff(a.data(), b.data()), 1e-10 * max_abs(x)) << trial;
  }
}

TEST(ShortLong, ImpulseLongKernelAndIdentityBank) {
  Rng rng(15);
  const std::size_t d = 3, L = 32;
  ShortLongConvParams<double> p{{{}, {}, true}, Tensord({d, L})};
  for (std::size_t c = 0; c < d; ++c) p.long_kernel.at(c, 0) = 1.0;
  const Tensord x = randn(rng, {2, L, d});
  EXPECT_LE(rel_err(short_long_forward(p, x), activation(Activation::silu, x)), 1e-13);
}

TEST(ShortLong, ZeroInputZeroOutput) {
  Rng rng(16);
  const auto p = init_short_long<double>(4, 64, rng);
  const Tensord z = short_long_forward(p, Tensord({1, 64, 4}));
  EXPECT_EQ(max_abs(z), 0.0);
}

TEST(ShortLong, SequenceLongerThanKernelThrows) {
  Rng rng(17);
  const auto p = init_short_long<double>(2, 16, rng);
  EXPECT_THROW(short_long_forward(p, randn(rng, {1, 17, 2})), ShapeError);
}

TEST(ShortLong, FusedPathMatchesTrainingPath) {
  Rng rng(18);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 1 + rng.below(8), L = 8 + rng.below(200);
    auto p = init_short_long<double>(d, L, rng);
    p.bank.k3 = randn(rng, p.bank.k3.shape());
    p.bank.kvar = randn(rng, p.bank.kvar.shape());
    const Tensord x = randn(rng, {2, L, d});
    const auto fused = fuse_short_branches(p.bank, d);
    EXPECT_LE(rel_err(short_long_forward_fused(fused, p.long_kernel, x), short_long_forward(p, x)), 1e-9);
  }
}

TEST(ShortLong, ShorterInputsUseKernelPrefix) {
  Rng rng(19);
  const std::size_t d = 2, L = 64;
  const auto p = init_short_long<double>(d, L, rng);
  const Tensord x = randn(rng, {1, L, d});
  const Tensord full = short_long_forward(p, x);
  Tensord head({1, 20, d});
  std::copy(x.ptr(), x.ptr() + 20 * d, head.ptr());
  const Tensord part = short_long_forward(p, head);
  for (std::size_t i = 0; i < 20 * d; ++i) EXPECT_NEAR(part[i], full[i], 1e-12);
}

TEST(ShortLongInit, ShapesAndScale) {
  Rng rng(20);
  const std::size_t d = 16, L = 1000;
  const auto p = init_short_long<double>(d, L, rng);
  EXPECT_EQ(p.bank.k3.shape(), (Shape{d, 3}));
  EXPECT_EQ(p.bank.kvar.shape(), (Shape{d, 7}));
  EXPECT_EQ(p.long_kernel.shape(), (Shape{d, L}));
  EXPECT_TRUE(p.bank.include_identity);
  // Envelope exp(-0.01 t) makes the tail tiny relative to 1/L.
  double tail = 0;
  for (std::size_t c = 0; c < d; ++c) tail = std::max(tail, std::abs(p.long_kernel.at(c, L - 1)));
  EXPECT_LT(tail, 1e-4 / double(L) * 10);

  ShortLongInit plain;
  plain.short_branches = false;
  plain.decay_envelope = false;
  const auto q = init_short_long<double>(d, L, rng, plain);
  EXPECT_TRUE(q.bank.k3.empty());
  EXPECT_TRUE(q.bank.kvar.empty());
}

}  // namespace
}  // namespace chela
