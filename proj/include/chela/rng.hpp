// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <variant>

#include "chela/tensor.hpp"

namespace chela {

/// splitmix64 stream. Doubles are built from the top 53 bits, normals use
/// the cosine branch of Box-Muller (two uniforms per sample, no cached spare),
/// so the whole generator state is the single 64-bit word.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

 private:
  std::uint64_t state_;
};

struct UniformDist {
  double lo = 0.0;
  double hi = 1.0;
};

struct NormalDist {
  double mean = 0.0;
  double stddev = 1.0;
};

using Distribution = std::variant<UniformDist, NormalDist>;

/// Fills a fresh tensor in row-major order, advancing `rng`.
template <class T>
Tensor<T> prng_fill(Rng& rng, const Shape& shape, const Distribution& dist) {
  if (const auto* n = std::get_if<NormalDist>(&dist); n && n->stddev < 0) {
    throw ConfigError("prng_fill: normal stddev must be >= 0");
  }
  Tensor<T> out(shape);
  for (T& v : out.data()) {
    if (const auto* u = std::get_if<UniformDist>(&dist)) {
      v = T(rng.uniform(u->lo, u->hi));
    } else {
      const auto& n = std::get<NormalDist>(dist);
      v = T(rng.normal(n.mean, n.stddev));
    }
  }
  return out;
}

}  // namespace chela
