// SPDX-License-Identifier: Apache-2.0
//
// Reference state-space stack: HiPPO initialization, bilinear discretization,
// kernel materialization and the sequential recurrence used as an oracle.
// Everything here runs in double precision.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "chela/error.hpp"
#include "chela/rng.hpp"
#include "chela/tensor.hpp"

namespace chela {

inline constexpr double kDefaultSsmDelta = 0.01;

struct ContinuousSsm {
  Tensord A;              // [n, n]
  std::vector<double> B;  // n
  std::vector<double> C;  // n
  double delta = kDefaultSsmDelta;

  std::size_t state_dim() const { return B.size(); }
};

struct DiscreteSsm {
  Tensord A_bar;              // [n, n]
  std::vector<double> B_bar;  // n
  std::vector<double> C_bar;  // n

  std::size_t state_dim() const { return B_bar.size(); }
};

class SingularMatrixError : public NumericError {
 public:
  SingularMatrixError(const std::string& what, double condition_estimate)
      : NumericError(what + " (condition estimate " + std::to_string(condition_estimate) + ")"),
        condition_(condition_estimate) {}
  double condition_estimate() const noexcept { return condition_; }

 private:
  double condition_;
};

/// The structured matrix before the low-rank correction: -1/2 on the
/// diagonal, -sqrt((i+1/2)(j+1/2)) below it and +sqrt((i+1/2)(j+1/2)) above.
Tensord hippo_structured(std::size_t n);
/// P_i = sqrt(i + 1/2)
std::vector<double> hippo_p(std::size_t n);

/// A = hippo_structured - P P^T, B_i = sqrt(2i + 1), C ~ normal(0, 1).
ContinuousSsm hippo_s4_init(std::size_t state_dim, Rng& rng, double delta = kDefaultSsmDelta);

/// A_bar = (I - d/2 A)^-1 (I + d/2 A), B_bar = (I - d/2 A)^-1 d B, C_bar = C.
/// Throws SingularMatrixError when I - d/2 A cannot be factored.
DiscreteSsm bilinear_discretize(const ContinuousSsm& ssm);

/// k_t = C_bar A_bar^t B_bar for t < L, by propagating the state A_bar^t B_bar.
std::vector<double> materialize_kernel(const DiscreteSsm& d, std::size_t L);

/// Rows t = A_bar^t B_bar, shape [L, n]. Kernels for many output maps C are
/// then C * basis^T.
Tensord ssm_basis(const DiscreteSsm& d, std::size_t L);

/// x_k = A_bar x_{k-1} + B_bar u_k, y_k = C_bar x_k, x_{-1} = 0.
std::vector<double> recurrent_scan(const DiscreteSsm& d, std::span<const double> u);

/// y = materialize_kernel(d, L) * u via the FFT convolution.
std::vector<double> ssm_forward(const DiscreteSsm& d, std::span<const double> u);

/// Spectral radius from Gelfand's formula ||A^k||^(1/k) with k = 2^squarings.
double spectral_radius_estimate(const Tensord& A, int squarings = 40);

/// Dense LU solve of M X = R for square M ([n, n]) and R ([n, m]).
Tensord lu_solve(const Tensord& M, const Tensord& R);

}  // namespace chela
