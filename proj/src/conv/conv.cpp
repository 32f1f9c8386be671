// SPDX-License-Identifier: Apache-2.0
#include "chela/conv.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "chela/activations.hpp"
#include "chela/error.hpp"
#include "chela/fft.hpp"
#include "chela/parallel.hpp"

namespace chela {
namespace {

// Kernels shorter than this run through the direct loop under ConvPath::automatic.
constexpr std::size_t kDirectMaxTaps = 24;
// Leaf block of the dyadic partition, handled by the direct loop.
constexpr std::size_t kPartitionLeaf = 32;

template <class T>
using cvec = std::vector<std::complex<T>>;

void require_seq(const Shape& s, const char* where) {
  if (s.size() != 3) throw ShapeError(std::string(where) + ": expected [batch, length, dim]");
}

template <class T>
void check_kernels(const Tensor<T>& kernels, const Tensor<T>& x, const char* where) {
  require_seq(x.shape(), where);
  if (kernels.rank() != 2 || kernels.dim(0) != x.dim(2)) {
    throw ShapeError(std::string(where) + ": kernels " + shape_str(kernels.shape()) +
                     " do not match input channels " + shape_str(x.shape()));
  }
}

ConvPath resolve(ConvPath path, std::size_t taps) {
  if (path != ConvPath::automatic) return path;
  return taps > kDirectMaxTaps ? ConvPath::partitioned : ConvPath::direct;
}

// Kernel spectrum of channel c, truncated to `taps`, padded to n.
template <class T>
void kernel_spectrum(const Tensor<T>& kernels, std::size_t c, std::size_t taps, std::size_t n, cvec<T>& out) {
  const std::size_t k = kernels.dim(1);
  out.assign(n, {});
  for (std::size_t j = 0; j < taps; ++j) out[j] = {kernels[c * k + j], T(0)};
  fft_inplace<T>(out, false);
}

// Two batch rows of channel c packed as real + imaginary parts.
template <class T>
void load_pair(const Tensor<T>& x, std::size_t b, std::size_t c, std::size_t n, cvec<T>& out) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  out.assign(n, {});
  const T* r0 = x.ptr() + b * L * d + c;
  const T* r1 = b + 1 < B ? x.ptr() + (b + 1) * L * d + c : nullptr;
  for (std::size_t t = 0; t < L; ++t) out[t] = {r0[t * d], r1 ? r1[t * d] : T(0)};
}

template <class T>
void store_pair(const cvec<T>& in, std::size_t b, std::size_t c, Tensor<T>& y) {
  const std::size_t B = y.dim(0), L = y.dim(1), d = y.dim(2);
  T* r0 = y.ptr() + b * L * d + c;
  T* r1 = b + 1 < B ? y.ptr() + (b + 1) * L * d + c : nullptr;
  for (std::size_t t = 0; t < L; ++t) {
    r0[t * d] = in[t].real();
    if (r1) r1[t * d] = in[t].imag();
  }
}

template <class T>
void depthwise_direct(const Tensor<T>& kernels, const Tensor<T>& x, Tensor<T>& y) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  const std::size_t taps = std::min(kernels.dim(1), L);
  // [taps, d] so the inner loop runs over contiguous channels.
  std::vector<T> kt(taps * d);
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < taps; ++j) kt[j * d + c] = kernels[c * kernels.dim(1) + j];
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = x.ptr() + b * L * d;
    T* yb = y.ptr() + b * L * d;
    for (std::size_t t = 0; t < L; ++t) {
      T* yt = yb + t * d;
      std::fill(yt, yt + d, T(0));
      const std::size_t jmax = std::min(t + 1, taps);
      for (std::size_t j = 0; j < jmax; ++j) {
        const T* xs = xb + (t - j) * d;
        const T* kj = kt.data() + j * d;
        for (std::size_t c = 0; c < d; ++c) yt[c] += kj[c] * xs[c];
      }
    }
  }
}

template <class T>
void depthwise_direct_backward(const Tensor<T>& kernels, const Tensor<T>& x, const Tensor<T>& dy,
                               Tensor<T>& dx, Tensor<T>& dk) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  const std::size_t k = kernels.dim(1);
  const std::size_t taps = std::min(k, L);
  std::vector<T> kt(taps * d), dkt(taps * d, T(0));
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < taps; ++j) kt[j * d + c] = kernels[c * k + j];
  for (std::size_t b = 0; b < B; ++b) {
    const T* xb = x.ptr() + b * L * d;
    const T* gb = dy.ptr() + b * L * d;
    T* dxb = dx.ptr() + b * L * d;
    std::fill(dxb, dxb + L * d, T(0));
    for (std::size_t t = 0; t < L; ++t) {
      const T* gt = gb + t * d;
      const std::size_t jmax = std::min(t + 1, taps);
      for (std::size_t j = 0; j < jmax; ++j) {
        const T* xs = xb + (t - j) * d;
        T* dxs = dxb + (t - j) * d;
        const T* kj = kt.data() + j * d;
        T* dkj = dkt.data() + j * d;
        for (std::size_t c = 0; c < d; ++c) {
          dxs[c] += kj[c] * gt[c];
          dkj[c] += gt[c] * xs[c];
        }
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < taps; ++j) dk[c * k + j] += dkt[j * d + c];
}

template <class T>
void depthwise_fft(const Tensor<T>& kernels, const Tensor<T>& x, Tensor<T>& y) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  const std::size_t taps = std::min(kernels.dim(1), L);
  const std::size_t n = next_pow2(L + taps - 1);
  parallel_for(d, [&](std::size_t c) {
    cvec<T> kf, buf;
    kernel_spectrum(kernels, c, taps, n, kf);
    for (std::size_t b = 0; b < B; b += 2) {
      load_pair(x, b, c, n, buf);
      fft_inplace<T>(buf, false);
      for (std::size_t i = 0; i < n; ++i) buf[i] *= kf[i];
      fft_inplace<T>(buf, true);
      store_pair(buf, b, c, y);
    }
  });
}

// Dyadic partition of [0, P): every node [a, b) sends its left half to its
// right half through one size-(b - a) FFT, and leaves run the direct loop.
// Output t only ever reads inputs at positions <= t, so perturbing a later
// input cannot move an earlier output even by round-off. Cost O(L log^2 L).
template <class T>
void depthwise_partitioned(const Tensor<T>& kernels, const Tensor<T>& x, Tensor<T>& y) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  const std::size_t k = kernels.dim(1);
  const std::size_t taps = std::min(k, L);
  const std::size_t P = next_pow2(L);
  parallel_for(d, [&](std::size_t c) {
    // Kernel spectra per node size; a node of size N needs lags below N.
    std::vector<cvec<T>> spectra;
    for (std::size_t N = 2 * kPartitionLeaf; N <= P; N *= 2) {
      spectra.emplace_back();
      kernel_spectrum(kernels, c, std::min(taps, N), N, spectra.back());
    }
    const T* h = kernels.ptr() + c * k;
    cvec<T> xs, ys(L), buf;
    for (std::size_t b = 0; b < B; b += 2) {
      load_pair(x, b, c, L, xs);
      std::fill(ys.begin(), ys.end(), std::complex<T>{});
      for (std::size_t a = 0; a < L; a += kPartitionLeaf) {
        const std::size_t end = std::min(a + kPartitionLeaf, L);
        for (std::size_t t = a; t < end; ++t) {
          std::complex<T> acc{};
          const std::size_t jmax = std::min(t - a + 1, taps);
          for (std::size_t j = 0; j < jmax; ++j) acc += h[j] * xs[t - j];
          ys[t] += acc;
        }
      }
      std::size_t level = 0;
      for (std::size_t N = 2 * kPartitionLeaf; N <= P; N *= 2, ++level) {
        const std::size_t half = N / 2;
        for (std::size_t a = 0; a + half < L; a += N) {
          buf.assign(N, {});
          std::copy(xs.begin() + a, xs.begin() + a + half, buf.begin());
          fft_inplace<T>(buf, false);
          const cvec<T>& kf = spectra[level];
          for (std::size_t i = 0; i < N; ++i) buf[i] *= kf[i];
          fft_inplace<T>(buf, true);
          // Indices [half, N) of the circular product carry lags 1..N-1 only.
          const std::size_t stop = std::min(a + N, L);
          for (std::size_t t = a + half; t < stop; ++t) ys[t] += buf[t - a];
        }
      }
      store_pair(ys, b, c, y);
    }
  });
}

// dx = IFFT(DY * conj(K)); dk = Re IFFT(sum_pairs DY * conj(X)). Pairing two
// real rows into one complex signal keeps both identities exact because the
// cross terms land in the imaginary part.
template <class T>
void depthwise_fft_backward(const Tensor<T>& kernels, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx,
                            Tensor<T>& dk) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  const std::size_t k = kernels.dim(1);
  const std::size_t taps = std::min(k, L);
  const std::size_t n = next_pow2(L + taps - 1);
  parallel_for(d, [&](std::size_t c) {
    cvec<T> kf, xf, gf, acc(n);
    kernel_spectrum(kernels, c, taps, n, kf);
    for (std::size_t b = 0; b < B; b += 2) {
      load_pair(x, b, c, n, xf);
      fft_inplace<T>(xf, false);
      load_pair(dy, b, c, n, gf);
      fft_inplace<T>(gf, false);
      for (std::size_t i = 0; i < n; ++i) {
        acc[i] += gf[i] * std::conj(xf[i]);
        gf[i] *= std::conj(kf[i]);
      }
      fft_inplace<T>(gf, true);
      store_pair(gf, b, c, dx);
    }
    fft_inplace<T>(acc, true);
    for (std::size_t j = 0; j < taps; ++j) dk[c * k + j] += acc[j].real();
  });
}

template <class T>
Tensor<T> as_sequence(std::span<const T> v) {
  return Tensor<T>({1, v.size(), 1}, std::vector<T>(v.begin(), v.end()));
}

template <class T>
Tensor<T> as_kernel(std::span<const T> v) {
  return Tensor<T>({1, v.size()}, std::vector<T>(v.begin(), v.end()));
}

}  // namespace

std::size_t short_kernel_size(std::size_t L) {
  if (L == 0) throw ConfigError("short_kernel_size: L must be >= 1");
  const double raw = 2.0 * std::log10(double(L)) + 1.0;
  // Guard exact integers (e.g. L = 10^k) against log10 rounding up by an ulp.
  const double rounded = std::nearbyint(raw);
  auto k = std::size_t(std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw));
  if (k % 2 == 0) ++k;
  return std::max<std::size_t>(k, 3);
}

template <class T>
std::vector<T> causal_conv_direct(std::span<const T> kernel, std::span<const T> x) {
  if (kernel.empty() || x.empty()) throw ShapeError("causal_conv_direct: empty operand");
  Tensor<T> y({1, x.size(), 1});
  depthwise_direct(as_kernel(kernel), as_sequence(x), y);
  return y.storage();
}

template <class T>
std::vector<T> causal_conv_fft(std::span<const T> kernel, std::span<const T> x) {
  if (kernel.empty() || x.empty()) throw ShapeError("causal_conv_fft: empty operand");
  Tensor<T> y({1, x.size(), 1});
  depthwise_fft(as_kernel(kernel), as_sequence(x), y);
  return y.storage();
}

template <class T>
Tensor<T> depthwise_causal_conv(const Tensor<T>& kernels, const Tensor<T>& x, ConvPath path) {
  check_kernels(kernels, x, "depthwise_causal_conv");
  Tensor<T> y(x.shape());
  switch (resolve(path, std::min(kernels.dim(1), x.dim(1)))) {
    case ConvPath::fft: depthwise_fft(kernels, x, y); break;
    case ConvPath::partitioned: depthwise_partitioned(kernels, x, y); break;
    default: depthwise_direct(kernels, x, y); break;
  }
  return y;
}

template <class T>
Tensor<T> depthwise_causal_conv_backward(const Tensor<T>& kernels, const Tensor<T>& x, const Tensor<T>& dy,
                                         Tensor<T>& dkernels, ConvPath path) {
  check_kernels(kernels, x, "depthwise_causal_conv_backward");
  require_same_shape(x, dy, "depthwise_causal_conv_backward");
  require_same_shape(kernels, dkernels, "depthwise_causal_conv_backward dkernels");
  Tensor<T> dx(x.shape());
  // Gradients carry no causality requirement, so the partitioned path shares the plain FFT backward.
  if (resolve(path, std::min(kernels.dim(1), x.dim(1))) != ConvPath::direct) {
    depthwise_fft_backward(kernels, x, dy, dx, dkernels);
  } else {
    depthwise_direct_backward(kernels, x, dy, dx, dkernels);
  }
  return dx;
}

template <class T>
Tensor<T> short_branch_forward(const ShortConvBank<T>& bank, const Tensor<T>& x) {
  require_seq(x.shape(), "short_branch_forward");
  Tensor<T> out = bank.include_identity ? x : Tensor<T>(x.shape());
  for (const Tensor<T>* k : {&bank.k3, &bank.kvar}) {
    if (k->empty()) continue;
    const Tensor<T> y = depthwise_causal_conv(*k, x, ConvPath::direct);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  }
  return out;
}

template <class T>
FusedShortKernel<T> fuse_short_branches(const ShortConvBank<T>& bank, std::size_t channels) {
  std::size_t width = 1;
  for (const Tensor<T>* k : {&bank.k3, &bank.kvar}) {
    if (k->empty()) continue;
    if (k->rank() != 2 || k->dim(0) != channels) throw ShapeError("fuse_short_branches: channel mismatch");
    width = std::max(width, k->dim(1));
  }
  FusedShortKernel<T> fused{Tensor<T>({channels, width})};
  for (std::size_t c = 0; c < channels; ++c) {
    T* row = fused.kernel.ptr() + c * width;
    for (const Tensor<T>* k : {&bank.kvar, &bank.k3}) {
      if (k->empty()) continue;
      for (std::size_t j = 0; j < k->dim(1); ++j) row[j] += (*k)[c * k->dim(1) + j];
    }
    if (bank.include_identity) row[0] += T(1);
  }
  return fused;
}

template <class T>
Tensor<T> short_long_forward(const ShortLongConvParams<T>& p, const Tensor<T>& x, ShortLongTape<T>* tape) {
  check_kernels(p.long_kernel, x, "short_long_forward");
  if (x.dim(1) > p.max_len()) {
    throw ShapeError("short_long_forward: sequence length " + std::to_string(x.dim(1)) +
                     " exceeds long kernel length " + std::to_string(p.max_len()));
  }
  Tensor<T> pre = short_branch_forward(p.bank, x);
  Tensor<T> act(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = silu(pre[i]);
  Tensor<T> z = depthwise_causal_conv(p.long_kernel, act, ConvPath::automatic);
  z.check_finite("short_long_forward");
  if (tape) {
    tape->pre_act = std::move(pre);
    tape->act = std::move(act);
  }
  return z;
}

template <class T>
Tensor<T> short_long_forward_fused(const FusedShortKernel<T>& fused, const Tensor<T>& long_kernel,
                                   const Tensor<T>& x) {
  check_kernels(long_kernel, x, "short_long_forward_fused");
  if (x.dim(1) > long_kernel.dim(1)) throw ShapeError("short_long_forward_fused: sequence too long");
  Tensor<T> pre = depthwise_causal_conv(fused.kernel, x, ConvPath::direct);
  for (T& v : pre.data()) v = silu(v);
  Tensor<T> z = depthwise_causal_conv(long_kernel, pre, ConvPath::automatic);
  z.check_finite("short_long_forward_fused");
  return z;
}

template <class T>
Tensor<T> short_long_backward(const ShortLongConvParams<T>& p, const Tensor<T>& x, const ShortLongTape<T>& tape,
                              const Tensor<T>& dz, ShortLongGrads<T>& grads) {
  Tensor<T> dact =
      depthwise_causal_conv_backward(p.long_kernel, tape.act, dz, grads.long_kernel, ConvPath::automatic);
  for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= silu_grad(tape.pre_act[i]);
  Tensor<T> dx = p.bank.include_identity ? dact : Tensor<T>(x.shape());
  if (!p.bank.k3.empty()) {
    const Tensor<T> g = depthwise_causal_conv_backward(p.bank.k3, x, dact, grads.k3, ConvPath::direct);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
  }
  if (!p.bank.kvar.empty()) {
    const Tensor<T> g = depthwise_causal_conv_backward(p.bank.kvar, x, dact, grads.kvar, ConvPath::direct);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
  }
  return dx;
}

template <class T>
ShortLongConvParams<T> init_short_long(std::size_t channels, std::size_t max_len, Rng& rng,
                                       const ShortLongInit& init) {
  ShortLongConvParams<T> p;
  p.bank.include_identity = init.include_identity;
  if (init.short_branches) {
    const std::size_t kv = short_kernel_size(max_len);
    p.bank.k3 = prng_fill<T>(rng, {channels, 3}, NormalDist{0.0, 1.0 / std::sqrt(3.0)});
    p.bank.kvar = prng_fill<T>(rng, {channels, kv}, NormalDist{0.0, 1.0 / std::sqrt(double(kv))});
  }
  p.long_kernel = prng_fill<T>(rng, {channels, max_len}, NormalDist{0.0, 1.0 / double(max_len)});
  if (init.decay_envelope) {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < max_len; ++t) p.long_kernel.at(c, t) *= T(std::exp(-init.decay * double(t)));
  }
  return p;
}

#define CHELA_INSTANTIATE(T)                                                                              \
  template std::vector<T> causal_conv_direct<T>(std::span<const T>, std::span<const T>);                  \
  template std::vector<T> causal_conv_fft<T>(std::span<const T>, std::span<const T>);                     \
  template Tensor<T> depthwise_causal_conv<T>(const Tensor<T>&, const Tensor<T>&, ConvPath);              \
  template Tensor<T> depthwise_causal_conv_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                       Tensor<T>&, ConvPath);                             \
  template Tensor<T> short_branch_forward<T>(const ShortConvBank<T>&, const Tensor<T>&);                  \
  template FusedShortKernel<T> fuse_short_branches<T>(const ShortConvBank<T>&, std::size_t);              \
  template Tensor<T> short_long_forward<T>(const ShortLongConvParams<T>&, const Tensor<T>&, ShortLongTape<T>*); \
  template Tensor<T> short_long_forward_fused<T>(const FusedShortKernel<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> short_long_backward<T>(const ShortLongConvParams<T>&, const Tensor<T>&,              \
                                            const ShortLongTape<T>&, const Tensor<T>&, ShortLongGrads<T>&); \
  template ShortLongConvParams<T> init_short_long<T>(std::size_t, std::size_t, Rng&, const ShortLongInit&);

CHELA_INSTANTIATE(float)
CHELA_INSTANTIATE(double)
#undef CHELA_INSTANTIATE

}  // namespace chela
