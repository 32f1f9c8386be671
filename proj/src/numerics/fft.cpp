// SPDX-License-Identifier: Apache-2.0
#include "chela/fft.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <unordered_map>

#include "chela/error.hpp"

namespace chela {
namespace {

// Per-size plan: the bit-reversal swap list and, for every stage of length
// len >= 8, the twiddles exp(-+2*pi*i*j/len), j < len/2, laid out as real
// parts then imaginary parts so the butterfly loop reads them contiguously.
// Twiddles are evaluated in double precision.
template <class T>
struct Plan {
  std::vector<std::uint32_t> swaps;  // pairs (i, j) with i < j
  std::vector<T> fwd, inv;           // stage tables back to back
};

template <class T>
const Plan<T>& plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, Plan<T>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Plan<T> p;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      p.swaps.push_back(std::uint32_t(i));
      p.swaps.push_back(std::uint32_t(j));
    }
  }
  for (std::size_t len = 8; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::vector<T>* t : {&p.fwd, &p.inv}) {
      const double sign = t == &p.fwd ? -1.0 : 1.0;
      for (std::size_t j = 0; j < half; ++j) t->push_back(T(std::cos(2 * std::numbers::pi * double(j) / double(len))));
      for (std::size_t j = 0; j < half; ++j)
        t->push_back(T(sign * std::sin(2 * std::numbers::pi * double(j) / double(len))));
    }
  }
  return cache.emplace(n, std::move(p)).first->second;
}

}  // namespace

std::size_t next_pow2(std::size_t n) noexcept {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

template <class T>
void fft_inplace(std::span<std::complex<T>> x, bool inverse) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("fft: empty input");
  if ((n & (n - 1)) != 0) throw ShapeError("fft_inplace: length must be a power of two");
  if (n == 1) return;

  const Plan<T>& p = plan<T>(n);
  for (std::size_t s = 0; s < p.swaps.size(); s += 2) std::swap(x[p.swaps[s]], x[p.swaps[s + 1]]);

  T* d = reinterpret_cast<T*>(x.data());
  // The length-2 and length-4 stages only need the twiddles 1 and -+i.
  for (std::size_t i = 0; i < 2 * n; i += 4) {
    const T ar = d[i], ai = d[i + 1], br = d[i + 2], bi = d[i + 3];
    d[i] = ar + br;
    d[i + 1] = ai + bi;
    d[i + 2] = ar - br;
    d[i + 3] = ai - bi;
  }
  if (n >= 4) {
    const T s = inverse ? T(1) : T(-1);  // sign of the imaginary unit in w = s*i
    for (std::size_t i = 0; i < 2 * n; i += 8) {
      const T u0r = d[i], u0i = d[i + 1], u1r = d[i + 2], u1i = d[i + 3];
      const T v0r = d[i + 4], v0i = d[i + 5];
      const T v1r = -s * d[i + 7], v1i = s * d[i + 6];
      d[i] = u0r + v0r;
      d[i + 1] = u0i + v0i;
      d[i + 4] = u0r - v0r;
      d[i + 5] = u0i - v0i;
      d[i + 2] = u1r + v1r;
      d[i + 3] = u1i + v1i;
      d[i + 6] = u1r - v1r;
      d[i + 7] = u1i - v1i;
    }
  }
  const T* table = inverse ? p.inv.data() : p.fwd.data();
  for (std::size_t len = 8; len <= n; len <<= 1) {
    const std::size_t half = len >> 1;
    const T* wr = table;
    const T* wi = table + half;
    table += len;
    for (std::size_t start = 0; start < n; start += len) {
      T* u = d + 2 * start;
      T* v = u + 2 * half;
      for (std::size_t j = 0; j < half; ++j) {
        const T tr = v[2 * j] * wr[j] - v[2 * j + 1] * wi[j];
        const T ti = v[2 * j] * wi[j] + v[2 * j + 1] * wr[j];
        v[2 * j] = u[2 * j] - tr;
        v[2 * j + 1] = u[2 * j + 1] - ti;
        u[2 * j] += tr;
        u[2 * j + 1] += ti;
      }
    }
  }
  if (inverse) {
    const T scale = T(1) / T(n);
    for (std::size_t i = 0; i < 2 * n; ++i) d[i] *= scale;
  }
}

template <class T>
std::vector<std::complex<T>> fft(std::span<const std::complex<T>> x, bool inverse) {
  if (x.empty()) throw ShapeError("fft: empty input");
  std::vector<std::complex<T>> out(next_pow2(x.size()));
  std::copy(x.begin(), x.end(), out.begin());
  fft_inplace<T>(out, inverse);
  return out;
}

template void fft_inplace<float>(std::span<std::complex<float>>, bool);
template void fft_inplace<double>(std::span<std::complex<double>>, bool);
template std::vector<std::complex<float>> fft<float>(std::span<const std::complex<float>>, bool);
template std::vector<std::complex<double>> fft<double>(std::span<const std::complex<double>>, bool);

}  // namespace chela
