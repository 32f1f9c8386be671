// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace chela {

std::size_t next_pow2(std::size_t n) noexcept;

/// In-place iterative radix-2 transform; x.size() must be a power of two.
/// Forward uses exp(-2*pi*i*k*n/N); inverse uses the conjugate twiddles and
/// scales by 1/N.
template <class T>
void fft_inplace(std::span<std::complex<T>> x, bool inverse);

/// Zero-pads `x` to the next power of two and returns the transform of the
/// padded signal. Throws ShapeError on empty input.
template <class T>
std::vector<std::complex<T>> fft(std::span<const std::complex<T>> x, bool inverse = false);

template <class T>
std::vector<std::complex<T>> ifft(std::span<const std::complex<T>> x) {
  return fft<T>(x, true);
}

}  // namespace chela
