// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "chela/oracle.hpp"
#include "chela/ssm.hpp"
#include "test_util.hpp"

namespace chela {
namespace {

DiscreteSsm scalar_system(double a, double b, double c) {
  return {Tensord({1, 1}, std::vector<double>{a}), {b}, {c}};
}

DiscreteSsm hippo_discrete(std::size_t n, double delta, std::uint64_t seed) {
  Rng rng(seed);
  return bilinear_discretize(hippo_s4_init(n, rng, delta));
}

TEST(Hippo, StructuredEntries) {
  const Tensord a = hippo_structured(4);
  EXPECT_DOUBLE_EQ(a.at(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(a.at(2, 2), -0.5);
  EXPECT_NEAR(a.at(1, 0), -std::sqrt(1.5 * 0.5), 1e-15);
  EXPECT_NEAR(a.at(0, 1), std::sqrt(1.5 * 0.5), 1e-15);
}

TEST(Hippo, InputAndLowRankVectors) {
  Rng rng(1);
  const ContinuousSsm s = hippo_s4_init(5, rng);
  EXPECT_DOUBLE_EQ(s.B[0], 1.0);
  EXPECT_NEAR(s.B[3], std::sqrt(7.0), 1e-15);
  const auto p = hippo_p(5);
  EXPECT_NEAR(p[1], 1.224745, 1e-6);
  // A = structured - P P^T
  const Tensord st = hippo_structured(5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(s.A.at(i, j), st.at(i, j) - p[i] * p[j], 1e-14);
  EXPECT_DOUBLE_EQ(s.delta, kDefaultSsmDelta);
  EXPECT_EQ(s.C.size(), 5u);
}

TEST(Hippo, SymmetricPartNegativeSemidefinite) {
  Rng rng(2);
  for (std::size_t n : {1u, 2u, 8u, 16u, 32u}) {
    const ContinuousSsm s = hippo_s4_init(n, rng);
    EXPECT_LE(oracle::max_symmetric_eigenvalue(s.A), 1e-10) << "n=" << n;
  }
}

TEST(Bilinear, ScalarIdentityDynamics) {
  for (double delta : {0.01, 0.5, 2.0}) {
    const auto d = bilinear_discretize({Tensord({1, 1}, 0.0), {1.0}, {1.0}, delta});
    EXPECT_DOUBLE_EQ(d.A_bar.at(0, 0), 1.0);
    EXPECT_NEAR(d.B_bar[0], delta, 1e-15);
  }
}

TEST(Bilinear, ScalarDecay) {
  const auto d = bilinear_discretize({Tensord({1, 1}, -1.0), {1.0}, {1.0}, 0.1});
  EXPECT_NEAR(d.A_bar.at(0, 0), 0.904762, 1e-6);
  EXPECT_NEAR(d.B_bar[0], 0.095238, 1e-6);
  EXPECT_NEAR(d.A_bar.at(0, 0), 0.95 / 1.05, 1e-15);
}

TEST(Bilinear, HippoIsStable) {
  const auto d = hippo_discrete(16, 0.01, 3);
  EXPECT_LT(oracle::spectral_radius(d.A_bar), 1.0);
  EXPECT_LT(spectral_radius_estimate(d.A_bar), 1.0);
}

TEST(Bilinear, SpectralRadiusBelowOneUpTo64) {
  for (std::size_t n : {1u, 4u, 16u, 32u, 48u, 64u})
    for (double delta : {0.001, 0.01, 0.1, 1.0}) {
      const auto d = hippo_discrete(n, delta, 4);
      EXPECT_LT(oracle::spectral_radius(d.A_bar), 1.0) << "n=" << n << " delta=" << delta;
    }
}

TEST(Bilinear, SingularSystemReportsCondition) {
  // I - delta/2 * A is singular when A = 2/delta.
  try {
    bilinear_discretize({Tensord({1, 1}, 20.0), {1.0}, {1.0}, 0.1});
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_GT(e.condition_estimate(), 1e12);
  }
}

TEST(Kernel, GeometricSequence) {
  const auto k = materialize_kernel(scalar_system(0.5, 1.0, 1.0), 3);
  ASSERT_EQ(k.size(), 3u);
  EXPECT_DOUBLE_EQ(k[0], 1.0);
  EXPECT_DOUBLE_EQ(k[1], 0.5);
  EXPECT_DOUBLE_EQ(k[2], 0.25);
}

TEST(Kernel, OrthogonalReadWrite) {
  Tensord eye({2, 2});
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  const DiscreteSsm d{eye, {1.0, 0.0}, {0.0, 1.0}};
  for (double v : materialize_kernel(d, 17)) EXPECT_EQ(v, 0.0);
}

TEST(Kernel, EntryMatchesMatrixPower) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    // Random stable system: scale a random matrix to spectral radius 0.9.
    Tensord a = testing_util::randn(rng, {8, 8});
    const double rho = oracle::spectral_radius(a);
    for (auto& v : a.data()) v *= 0.9 / rho;
    const DiscreteSsm d{a, testing_util::randn_vec(rng, 8), testing_util::randn_vec(rng, 8)};
    const auto k = materialize_kernel(d, 6);
    const long double want = oracle::ssm_kernel_entry(d.A_bar, d.B_bar, d.C_bar, 5);
    EXPECT_LE(double(std::abs(k[5] - want) / std::abs(want)), 1e-10);
  }
}

TEST(Kernel, BasisRowsReproduceKernel) {
  const auto d = hippo_discrete(6, 0.05, 6);
  const Tensord basis = ssm_basis(d, 20);
  const auto k = materialize_kernel(d, 20);
  for (std::size_t t = 0; t < 20; ++t) {
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += d.C_bar[i] * basis.at(t, i);
    EXPECT_NEAR(s, k[t], 1e-12 * (1 + std::abs(k[t])));
  }
}

TEST(Scan, ImpulseGivesKernel) {
  const auto d = hippo_discrete(8, 0.1, 7);
  std::vector<double> u(40, 0.0);
  u[0] = 1.0;
  const auto y = recurrent_scan(d, u);
  const auto k = materialize_kernel(d, 40);
  EXPECT_LE(testing_util::rel_err_ld(y, k), 1e-12);
  EXPECT_LE(testing_util::rel_err_ld(ssm_forward(d, u), k), 1e-10);
}

TEST(Scan, ZeroInputZeroOutput) {
  const auto d = hippo_discrete(8, 0.1, 8);
  for (double v : recurrent_scan(d, std::vector<double>(25, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(Scan, SingleStep) {
  const auto d = hippo_discrete(4, 0.1, 9);
  const std::vector<double> u{2.5};
  double cb = 0;
  for (std::size_t i = 0; i < 4; ++i) cb += d.C_bar[i] * d.B_bar[i];
  EXPECT_NEAR(ssm_forward(d, u)[0], cb * 2.5, 1e-13);
}

TEST(Scan, ConvolutionMatchesRecurrence) {
  Rng rng(10);
  {
    const auto d = hippo_discrete(16, 0.01, 11);
    const auto u = testing_util::randn_vec(rng, 128);
    EXPECT_LE(testing_util::rel_err_ld(ssm_forward(d, u), recurrent_scan(d, u)), 1e-8);
  }
  {
    const auto d = hippo_discrete(16, 0.01, 12);
    const auto u = testing_util::randn_vec(rng, 512);
    EXPECT_LE(testing_util::rel_err_ld(ssm_forward(d, u), recurrent_scan(d, u)), 1e-8);
  }
}

TEST(Scan, EquivalenceSweep) {
  Rng rng(13);
  for (std::size_t n : {1u, 3u, 8u, 17u, 32u})
    for (double delta : {0.001, 0.01, 0.1})
      for (std::size_t L : {1u, 64u, 1024u}) {
        const auto d = hippo_discrete(n, delta, n * 31 + L);
        const auto u = testing_util::randn_vec(rng, L);
        EXPECT_LE(testing_util::rel_err_ld(ssm_forward(d, u), recurrent_scan(d, u)), 1e-8)
            << "n=" << n << " delta=" << delta << " L=" << L;
      }
}

// log of the upper envelope max_{s >= t} |k_s| against t on the tail half.
struct DecayFit {
  double slope, r2;
};

DecayFit fit_envelope(const std::vector<double>& k) {
  const std::size_t L = k.size();
  std::vector<double> env(L);
  double m = 0;
  for (std::size_t t = L; t-- > 0;) env[t] = m = std::max(m, std::abs(k[t]));
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  std::size_t n = 0;
  for (std::size_t t = L / 2; t < L; ++t) {
    const double x = double(t), y = std::log(env[t]);
    sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y, ++n;
  }
  const double cxx = sxx - sx * sx / n, cxy = sxy - sx * sy / n, cyy = syy - sy * sy / n;
  return {cxy / cxx, cxy * cxy / (cxx * cyy)};
}

TEST(Kernel, DecaysGeometricallyAtHippoInit) {
  for (std::size_t n : {4u, 16u, 32u})
    for (double delta : {0.01, 0.1}) {
      const auto d = hippo_discrete(n, delta, 14 + n);
      // Long enough that the slowest mode dominates the tail.
      const std::size_t L = delta >= 0.1 ? 4096 : 32768;
      const DecayFit f = fit_envelope(materialize_kernel(d, L));
      EXPECT_LT(f.slope, 0.0) << "n=" << n << " delta=" << delta;
      EXPECT_GE(f.r2, 0.9) << "n=" << n << " delta=" << delta;
    }
}

}  // namespace
}  // namespace chela
