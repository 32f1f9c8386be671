// SPDX-License-Identifier: Apache-2.0
//
// Central-difference verification of hand-written vector-Jacobian products.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chela/rng.hpp"
#include "chela/tensor.hpp"

namespace chela {

struct DifferentiableOp {
  std::string name;
  std::function<Tensord(std::span<const Tensord> inputs)> forward;
  /// Returns one cotangent per input, shaped like that input.
  std::function<std::vector<Tensord>(std::span<const Tensord> inputs, const Tensord& cotangent)> vjp;
};

struct VjpCheckResult {
  double max_rel_error = 0;  // max over inputs of ||analytic - numeric||_inf / max(||numeric||_inf, 1e-8)
  std::size_t worst_input = 0;
  std::size_t checked_entries = 0;
};

struct VjpCheckOptions {
  /// Base step; the effective step is step * max(1, ||x||_inf) per input.
  double step = 1e-5;
  std::uint64_t seed = 0x5eed;
  /// Inputs with more entries than this are probed at a seeded random subset.
  std::size_t max_entries_per_input = 4096;
};

/// Contracts the op output with a random cotangent w and compares
/// vjp(inputs, w) against (f(x+h e_i) - f(x-h e_i)) / 2h, f = <w, op(x)>.
/// Throws NumericError if any forward output is non-finite.
VjpCheckResult vjp_check(const DifferentiableOp& op, std::span<const Tensord> inputs,
                         const VjpCheckOptions& options = {});

inline double vjp_check(const DifferentiableOp& op, std::span<const Tensord> inputs, double step) {
  VjpCheckOptions options;
  options.step = step;
  return vjp_check(op, inputs, options).max_rel_error;
}

}  // namespace chela
