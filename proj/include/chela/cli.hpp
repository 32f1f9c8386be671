// SPDX-License-Identifier: Apache-2.0
//
// The `chela` command line: bench, train, eval and verify.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "chela/bench.hpp"
#include "chela/train.hpp"

namespace chela::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct BenchArgs {
  BenchSpec spec;
  std::string out;  // CSV path; empty prints to stdout
  std::size_t threads = 0;  // 0 keeps CHELA_THREADS (default 1)
};

struct TrainArgs {
  TrainConfig config;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string metrics_path;
  std::string resume_path;
  std::size_t threads = 0;  // 0 keeps CHELA_THREADS (default 1)
};

struct EvalArgs {
  std::string checkpoint_path;
  TaskSpec task;
  std::size_t batch = 16;
  std::size_t batches = 16;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0 keeps CHELA_THREADS (default 1)
};

struct VerifyArgs {
  double scale = 1.0;
  std::vector<std::string> suites;  // empty = all
  std::uint64_t seed = 2024;
};

struct Command {
  std::string verb;  // bench | train | eval | verify
  BenchArgs bench;
  TrainArgs train;
  EvalArgs eval;
  VerifyArgs verify;
};

struct ParseResult {
  std::optional<Command> command;  // empty when parsing ended (help or error)
  int exit_code = kExitOk;
  std::string message;  // help text or the usage error
};

ParseResult cli_parse(int argc, const char* const* argv);
int cli_run(const Command& cmd, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace chela::cli
