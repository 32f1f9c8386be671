// SPDX-License-Identifier: Apache-2.0
//
// Runtime and auxiliary-memory benchmarks of the sequence-mixing ops, plus the
// log-log fit used to read off scaling exponents.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chela/error.hpp"

namespace chela {

enum class BenchOp { softmax, linear_noncausal, linear_recurrent, linear_chunked, fftconv, directconv, shortlong };

std::string to_string(BenchOp op);
/// Accepts the canonical names and the short forms chunked, recurrent, noncausal.
BenchOp parse_bench_op(const std::string& s);
std::vector<BenchOp> all_bench_ops();

struct BenchSpec {
  std::vector<BenchOp> ops;
  std::vector<std::size_t> lengths;
  std::size_t dim = 64;
  std::size_t chunk = 64;
  std::size_t batch = 1;
  std::size_t repeats = 5;  // timed runs; one extra warm-up run is discarded
  /// Softmax is refused when L*L exceeds this many score entries.
  std::size_t softmax_budget = std::size_t{1} << 28;
  std::uint64_t seed = 7;
};

struct BenchRow {
  std::string op;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::size_t chunk = 0;
  std::size_t repeats = 0;
  double forward_ms = 0;   // median
  double backward_ms = 0;  // median
  std::size_t state_bytes = 0;
};

/// Raised when a softmax benchmark would exceed the L*L budget.
class BudgetError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// One row per (op, length) in request order, on float32 inputs.
std::vector<BenchRow> bench_run(const BenchSpec& spec, const std::function<void(const BenchRow&)>& on_row = {});

/// OLS slope of ln(ms) against ln(L). Needs at least three distinct lengths.
double fit_scaling_exponent(std::span<const std::pair<double, double>> length_ms);

/// Slope of forward+backward time for the rows of one op.
double fit_scaling_exponent(std::span<const BenchRow> rows);

void emit_csv(std::span<const BenchRow> rows, const std::string& path);
std::vector<BenchRow> parse_bench_csv(const std::string& path);

}  // namespace chela
