// SPDX-License-Identifier: Apache-2.0
//
// Oracle-backed verification suites shared by the `verify` command, the
// acceptance runner and the unit tests.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chela/gradcheck.hpp"

namespace chela::verify {

/// A differentiable op together with a random point to check it at.
struct GradCase {
  DifferentiableOp op;
  std::vector<Tensord> inputs;
};

/// Every hand-written vjp in the library, at small random shapes.
std::vector<GradCase> gradient_cases(std::uint64_t seed = 1);

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double error = 0;      // worst observed error of this check
  double tolerance = 0;  // the bound it was held to
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 2024;
  /// Scales the number of randomized cases (1.0 = the full suite).
  double scale = 1.0;
};

std::vector<CheckResult> attention_suite(const SuiteOptions& opt = {});
std::vector<CheckResult> conv_suite(const SuiteOptions& opt = {});
std::vector<CheckResult> fusion_suite(const SuiteOptions& opt = {});
std::vector<CheckResult> ssm_suite(const SuiteOptions& opt = {});
std::vector<CheckResult> gradient_suite(const SuiteOptions& opt = {});
std::vector<CheckResult> run_all(const SuiteOptions& opt = {});

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace chela::verify
