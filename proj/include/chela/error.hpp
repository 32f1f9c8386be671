// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace chela {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or lengths that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf escaped an operation, or a matrix was singular.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, distribution parameters or task sizes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace chela
