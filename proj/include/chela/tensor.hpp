// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chela/error.hpp"

namespace chela {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape);

/// Dense row-major real array of rank 1-3. Layout for sequences is
/// [batch, length, dim]. A default-constructed tensor is empty and marks an
/// absent parameter.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return other.empty() ? Tensor{} : Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor& fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
    return *this;
  }

  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <class U>
  Tensor<U> cast() const {
    if (empty()) return Tensor<U>{};
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Throws NumericError naming `where` if any element is NaN/Inf.
  const Tensor& check_finite(std::string_view where) const {
    if (!all_finite()) throw NumericError(std::string(where) + ": non-finite value in output");
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 3) {
      throw ShapeError("tensor rank must be 1-3, got " + std::to_string(shape_.size()));
    }
    for (std::size_t s : shape_) {
      if (s == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view where) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

/// Largest absolute elementwise difference.
template <class T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <class T>
double max_abs(std::span<const T> a) {
  double m = 0;
  for (const T& v : a) m = std::max(m, std::abs(double(v)));
  return m;
}

template <class T>
double max_abs(const Tensor<T>& a) {
  return max_abs(a.data());
}

/// ||a - b||_inf / max(||b||_inf, tiny): the relative error used throughout the tests.
template <class T>
double rel_err(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("rel_err: length mismatch");
  const double denom = std::max(max_abs(b), 1e-300);
  return max_abs_diff(a, b) / denom;
}

template <class T>
double rel_err(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "rel_err");
  return rel_err(a.data(), b.data());
}

}  // namespace chela
