// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "chela/attention.hpp"
#include "chela/oracle.hpp"
#include "test_util.hpp"

namespace chela {
namespace {

using testing_util::randn;

AttentionInputs<double> random_inputs(Rng& rng, std::size_t B, std::size_t L, std::size_t d) {
  return {randn(rng, {B, L, d}), randn(rng, {B, L, d}), randn(rng, {B, L, d})};
}

TEST(Softmax, SingleTokenReturnsValue) {
  Rng rng(1);
  const auto in = random_inputs(rng, 2, 1, 5);
  for (bool causal : {false, true}) EXPECT_LE(rel_err(softmax_attention(in, causal), in.v), 1e-15);
}

TEST(Softmax, IdenticalKeysAverageAllowedValues) {
  Rng rng(2);
  auto in = random_inputs(rng, 1, 6, 3);
  for (std::size_t t = 1; t < 6; ++t)
    for (std::size_t c = 0; c < 3; ++c) in.k.at(0, t, c) = in.k.at(0, 0, c);
  const Tensord causal = softmax_attention(in, true);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t s = 0; s <= t; ++s) mean += in.v.at(0, s, c);
      EXPECT_NEAR(causal.at(0, t, c), mean / double(t + 1), 1e-13);
    }
}

TEST(Softmax, MatchesDenseOracle) {
  Rng rng(3);
  const auto in = random_inputs(rng, 1, 7, 4);
  for (bool causal : {true, false})
    EXPECT_LE(rel_err(softmax_attention(in, causal), oracle::softmax_attention(in.q, in.k, in.v, causal)), 1e-10);
}

TEST(Softmax, RowsSumToOne) {
  // With V = ones every output coordinate is the row sum of the probabilities.
  Rng rng(4);
  auto in = random_inputs(rng, 2, 300, 8);
  in.v.fill(1.0);
  for (bool causal : {true, false}) {
    const Tensord out = softmax_attention(in, causal);
    for (double v : out.data()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(Softmax, LargeScoresStayFinite) {
  Rng rng(5);
  auto in = random_inputs(rng, 1, 9, 4);
  for (auto& v : in.q.data()) v *= 1e3;
  EXPECT_TRUE(softmax_attention(in, true).all_finite());
}

TEST(LinearNoncausal, ScalarOnes) {
  const Tensord one({1, 1, 1}, 1.0);
  const AttentionInputs<double> in{one, one, one};
  OutputNorm<double> norm;
  norm.eps = 0.0;
  EXPECT_DOUBLE_EQ(linear_attention_noncausal(in, norm)[0], 1.0);
}

TEST(LinearNoncausal, ZeroValuesGiveZero) {
  Rng rng(6);
  auto in = random_inputs(rng, 1, 10, 4);
  in.v.fill(0.0);
  EXPECT_EQ(max_abs(linear_attention_noncausal(in)), 0.0);
  EXPECT_EQ(max_abs(linear_attention_chunked(in, 3)), 0.0);
}

TEST(LinearNoncausal, RightProductEqualsLeftProduct) {
  Rng rng(7);
  const auto in = random_inputs(rng, 1, 64, 8);
  const Tensord want = oracle::rms_rows(oracle::linear_attention_dense(in.q, in.k, in.v, false), {}, 1e-6);
  EXPECT_LE(rel_err(linear_attention_noncausal(in), want), 1e-10);
}

TEST(LinearRecurrent, SingleTokenEqualsNoncausal) {
  Rng rng(8);
  const auto in = random_inputs(rng, 3, 1, 6);
  EXPECT_LE(rel_err(linear_attention_recurrent(in), linear_attention_noncausal(in)), 1e-15);
}

TEST(LinearRecurrent, FutureTokensDoNotLeakBack) {
  Rng rng(9);
  const auto in = random_inputs(rng, 1, 20, 4);
  const Tensord base = linear_attention_recurrent(in);
  for (std::size_t t = 0; t < 20; t += 3) {
    auto p = in;
    for (std::size_t c = 0; c < 4; ++c) p.q.at(0, t, c) += 5, p.k.at(0, t, c) -= 3, p.v.at(0, t, c) += 7;
    const Tensord y = linear_attention_recurrent(p);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(y.at(0, s, c), base.at(0, s, c));
  }
}

TEST(LinearRecurrent, MatchesDenseMaskedOracle) {
  Rng rng(10);
  const auto in = random_inputs(rng, 1, 50, 8);
  const Tensord want = oracle::rms_rows(oracle::linear_attention_dense(in.q, in.k, in.v, true), {}, 1e-6);
  EXPECT_LE(rel_err(linear_attention_recurrent(in), want), 1e-10);
}

TEST(LinearChunked, SingleChunkEqualsDenseMasked) {
  Rng rng(11);
  const auto in = random_inputs(rng, 2, 33, 5);
  const Tensord want = oracle::linear_attention_dense(in.q, in.k, in.v, true);
  EXPECT_LE(rel_err(linear_attention_chunked_raw(in, 33), want), 1e-12);
}

TEST(LinearChunked, UnitChunkEqualsRecurrent) {
  Rng rng(12);
  const auto in = random_inputs(rng, 2, 40, 6);
  EXPECT_LE(rel_err(linear_attention_chunked_raw(in, 1), linear_attention_recurrent_raw(in)), 1e-12);
}

TEST(LinearChunked, NonDividingChunkMatchesRecurrent) {
  Rng rng(13);
  const auto in = random_inputs(rng, 1, 100, 16);
  EXPECT_LE(rel_err(linear_attention_chunked(in, 24), linear_attention_recurrent(in)), 1e-9);
}

TEST(LinearChunked, ThreeWayEquivalence) {
  Rng rng(14);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t L = 1 + rng.below(300), d = 1 + rng.below(32);
    const auto in = random_inputs(rng, 1 + rng.below(2), L, d);
    const Tensord dense = oracle::linear_attention_dense(in.q, in.k, in.v, true);
    const Tensord rec = linear_attention_recurrent_raw(in);
    EXPECT_LE(rel_err(rec, dense), 1e-9);
    for (std::size_t C : {std::size_t{1}, std::size_t{7}, std::size_t{64}, L})
      EXPECT_LE(rel_err(linear_attention_chunked_raw(in, C), dense), 1e-9) << "L=" << L << " C=" << C;
  }
}

TEST(LinearChunked, FinalStateIsOuterProductSum) {
  Rng rng(15);
  const std::size_t L = 23, d = 4;
  const auto in = random_inputs(rng, 2, L, d);
  ChunkState<double> st;
  linear_attention_chunked_raw(in, 5, &st);
  EXPECT_EQ(st.chunk_index, 5u);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0;
        for (std::size_t t = 0; t < L; ++t) s += in.k.at(b, t, i) * in.v.at(b, t, j);
        EXPECT_NEAR(st.S.at(b, i, j), s, 1e-12 * (1 + std::abs(s)));
      }
}

TEST(LinearChunked, StateBytesIndependentOfLength) {
  Rng rng(16);
  std::size_t first = 0;
  for (std::size_t L : {64u, 256u, 1024u, 4096u}) {
    const auto in = random_inputs(rng, 1, L, 8);
    AttentionStats fwd, bwd;
    ChunkState<double> st;
    const Tensord out = linear_attention_chunked_raw(in, 16, &st, &fwd);
    linear_attention_chunked_raw_backward(in, 16, st, out, &bwd);
    if (first == 0) first = fwd.aux_bytes;
    EXPECT_EQ(fwd.aux_bytes, first) << L;
    EXPECT_GT(bwd.aux_bytes, 0u);
  }
  // Theta(C*d + d^2): a handful of d x d and C x C / C x d buffers.
  EXPECT_LE(first, 8 * (16 * 16 + 16 * 8 + 8 * 8) * sizeof(double));
}

TEST(LinearAttention, GainScalesOutput) {
  Rng rng(17);
  const auto in = random_inputs(rng, 1, 12, 3);
  OutputNorm<double> norm;
  norm.gain = Tensord({3}, std::vector<double>{2.0, 1.0, -1.0});
  const Tensord plain = linear_attention_chunked(in, 4), scaled = linear_attention_chunked(in, 4, norm);
  for (std::size_t t = 0; t < 12; ++t) {
    EXPECT_NEAR(scaled.at(0, t, 0), 2 * plain.at(0, t, 0), 1e-14);
    EXPECT_NEAR(scaled.at(0, t, 2), -plain.at(0, t, 2), 1e-14);
  }
}

TEST(LinearAttention, RejectsMismatchedShapes) {
  Rng rng(18);
  AttentionInputs<double> in{randn(rng, {1, 4, 3}), randn(rng, {1, 5, 3}), randn(rng, {1, 4, 3})};
  EXPECT_THROW(linear_attention_chunked(in, 2), ShapeError);
  EXPECT_THROW(softmax_attention(in, true), ShapeError);
}

TEST(LinearAttention, ZeroChunkRejected) {
  Rng rng(19);
  const auto in = random_inputs(rng, 1, 4, 2);
  EXPECT_THROW(linear_attention_chunked(in, 0), ConfigError);
}

}  // namespace
}  // namespace chela
