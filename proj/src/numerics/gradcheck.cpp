// SPDX-License-Identifier: Apache-2.0
#include "chela/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chela/error.hpp"

namespace chela {
namespace {

Tensord eval(const DifferentiableOp& op, std::span<const Tensord> x) {
  Tensord y = op.forward(x);
  if (!y.all_finite()) throw NumericError("vjp_check(" + op.name + "): non-finite forward output");
  return y;
}

double contract_difference(const Tensord& w, const Tensord& yp, const Tensord& ym) {
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * (yp[i] - ym[i]);
  return s;
}

}  // namespace

VjpCheckResult vjp_check(const DifferentiableOp& op, std::span<const Tensord> inputs,
                         const VjpCheckOptions& options) {
  if (options.step <= 0) throw ConfigError("vjp_check: step must be positive");
  std::vector<Tensord> x(inputs.begin(), inputs.end());
  const Tensord y0 = eval(op, x);
  Rng rng(options.seed);
  const Tensord w = prng_fill<double>(rng, y0.shape(), NormalDist{0.0, 1.0});

  const std::vector<Tensord> analytic = op.vjp(x, w);
  if (analytic.size() != x.size()) {
    throw ShapeError("vjp_check(" + op.name + "): vjp returned wrong number of cotangents");
  }

  VjpCheckResult result;
  for (std::size_t k = 0; k < x.size(); ++k) {
    require_same_shape(analytic[k], x[k], "vjp_check cotangent");
    const double h = options.step * std::max(1.0, max_abs(x[k]));

    std::vector<std::size_t> entries(x[k].size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (entries.size() > options.max_entries_per_input) {
      for (std::size_t i = 0; i < options.max_entries_per_input; ++i) {
        std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
      }
      entries.resize(options.max_entries_per_input);
    }

    double max_diff = 0;
    double max_num = 0;
    for (std::size_t i : entries) {
      const double orig = x[k][i];
      x[k][i] = orig + h;
      const Tensord yp = eval(op, x);
      x[k][i] = orig - h;
      const Tensord ym = eval(op, x);
      x[k][i] = orig;
      const double numeric = contract_difference(w, yp, ym) / (2 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[k][i]));
      max_num = std::max(max_num, std::abs(numeric));
    }
    result.checked_entries += entries.size();
    const double err = max_diff / std::max(max_num, 1e-8);
    if (err > result.max_rel_error || k == 0) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) result.worst_input = k;
    }
  }
  return result;
}

}  // namespace chela
