// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "chela/bench.hpp"
#include "chela/cli.hpp"

namespace chela {
namespace {

namespace fs = std::filesystem;
using namespace chela::cli;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "chela_cli_tests";
  fs::create_directories(dir);
  return dir / name;
}

ParseResult parse(std::vector<std::string> args) {
  args.insert(args.begin(), "chela");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_parse(int(argv.size()), argv.data());
}

int run(std::vector<std::string> args, std::string* out_text = nullptr) {
  const ParseResult p = parse(std::move(args));
  if (!p.command) return p.exit_code;
  std::ostringstream out, err;
  const int code = cli_run(*p.command, out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

TEST(CliParse, BenchGrammar) {
  const auto r = parse({"bench", "--op", "chunked", "--lengths", "1024,2048", "--dim", "64", "--chunk", "64",
                        "--repeats", "5", "--out", "b.csv"});
  ASSERT_TRUE(r.command);
  const Command& c = *r.command;
  EXPECT_EQ(c.verb, "bench");
  ASSERT_EQ(c.bench.spec.ops.size(), 1u);
  EXPECT_EQ(c.bench.spec.ops[0], BenchOp::linear_chunked);
  EXPECT_EQ(c.bench.spec.lengths, (std::vector<std::size_t>{1024, 2048}));
  EXPECT_EQ(c.bench.spec.dim, 64u);
  EXPECT_EQ(c.bench.spec.chunk, 64u);
  EXPECT_EQ(c.bench.spec.repeats, 5u);
  EXPECT_EQ(c.bench.out, "b.csv");
}

TEST(CliParse, TrainGrammar) {
  const auto r = parse({"train", "--task", "copy", "--config", "cfg.json", "--seed", "42"});
  ASSERT_TRUE(r.command);
  EXPECT_EQ(r.command->verb, "train");
  EXPECT_EQ(r.command->train.config.task.kind, TaskKind::copy);
  EXPECT_EQ(r.command->train.config_path, "cfg.json");
  ASSERT_TRUE(r.command->train.seed);
  EXPECT_EQ(*r.command->train.seed, 42u);
}

TEST(CliParse, MalformedNumberIsUsageError) {
  const auto r = parse({"bench", "--op", "chunked", "--lengths", "10,abc"});
  EXPECT_FALSE(r.command);
  EXPECT_EQ(r.exit_code, kExitUsage);
  EXPECT_NE(r.message.find("Usage"), std::string::npos);
}

TEST(CliParse, UnknownFlagVerbAndValues) {
  EXPECT_EQ(parse({"bench", "--op", "chunked", "--lengths", "8", "--frobnicate"}).exit_code, kExitUsage);
  EXPECT_EQ(parse({"launch"}).exit_code, kExitUsage);
  EXPECT_EQ(parse({}).exit_code, kExitUsage);
  EXPECT_EQ(parse({"bench", "--op", "quadratic", "--lengths", "8"}).exit_code, kExitUsage);
  EXPECT_EQ(parse({"train", "--task", "poetry"}).exit_code, kExitUsage);
  EXPECT_EQ(parse({"bench", "--op", "softmax", "--lengths", "8", "--repeats", "2"}).exit_code, kExitUsage);
  EXPECT_EQ(parse({"eval", "--task", "copy"}).exit_code, kExitUsage);  // --checkpoint is required
}

TEST(CliParse, HelpExitsZero) {
  for (auto args : {std::vector<std::string>{"--help"}, std::vector<std::string>{"bench", "--help"}}) {
    const auto r = parse(args);
    EXPECT_FALSE(r.command);
    EXPECT_EQ(r.exit_code, kExitOk);
    EXPECT_NE(r.message.find("--"), std::string::npos);
  }
}

TEST(CliRun, BenchWritesCsv) {
  const auto csv = scratch("bench.csv");
  std::string text;
  EXPECT_EQ(run({"bench", "--op", "chunked,fftconv", "--lengths", "64,128,256", "--dim", "8", "--chunk", "16",
                 "--repeats", "3", "--out", csv.string()},
                &text),
            kExitOk);
  EXPECT_NE(text.find("scaling exponent linear_chunked"), std::string::npos);
  EXPECT_EQ(parse_bench_csv(csv.string()).size(), 6u);
}

TEST(CliRun, SoftmaxBudgetIsRuntimeFailure) {
  std::string text;
  EXPECT_EQ(run({"bench", "--op", "softmax", "--lengths", "64", "--softmax-budget", "100"}, &text), kExitFailure);
  EXPECT_NE(text.find("budget"), std::string::npos);
}

TEST(CliRun, TrainThenEval) {
  const auto cfg = scratch("tiny.json"), ck = scratch("tiny.ckpt"), metrics = scratch("tiny.csv");
  std::ofstream(cfg) << R"({"depth": 1, "d_model": 8, "chunk": 4})";
  EXPECT_EQ(run({"train", "--task", "copy", "--seq-len", "8", "--vocab", "4", "--config", cfg.string(), "--steps",
                 "3", "--batch", "2", "--eval-every", "2", "--checkpoint", ck.string(), "--metrics", metrics.string()}),
            kExitOk);
  EXPECT_TRUE(fs::exists(ck));
  std::string text;
  EXPECT_EQ(run({"eval", "--task", "copy", "--seq-len", "8", "--vocab", "4", "--checkpoint", ck.string(),
                 "--batches", "2"},
                &text),
            kExitOk);
  EXPECT_NE(text.find("accuracy"), std::string::npos);
  // A checkpoint trained for a different task shape is refused.
  EXPECT_EQ(run({"eval", "--task", "copy", "--seq-len", "16", "--vocab", "4", "--checkpoint", ck.string()}),
            kExitFailure);
}

TEST(CliRun, MissingFilesAreRuntimeFailures) {
  EXPECT_EQ(run({"eval", "--task", "copy", "--checkpoint", scratch("absent.ckpt").string()}), kExitFailure);
  EXPECT_EQ(run({"train", "--task", "copy", "--config", scratch("absent.json").string(), "--steps", "1"}),
            kExitFailure);
}

TEST(CliRun, VerifySubsetPasses) {
  std::string text;
  EXPECT_EQ(run({"verify", "--suite", "fusion,ssm", "--scale", "0.05"}, &text), kExitOk);
  EXPECT_NE(text.find("all checks passed"), std::string::npos);
  EXPECT_EQ(text.find("FAIL "), std::string::npos);
  EXPECT_EQ(run({"verify", "--suite", "nonsense"}), kExitFailure);
}

TEST(BenchRun, OneOpOneLengthIsOneRow) {
  BenchSpec spec;
  spec.ops = {BenchOp::linear_chunked};
  spec.lengths = {128};
  spec.dim = 8;
  spec.repeats = 3;
  const auto rows = bench_run(spec);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].repeats, 3u);
  EXPECT_GT(rows[0].forward_ms, 0.0);
  EXPECT_GT(rows[0].backward_ms, 0.0);
}

TEST(BenchRun, RowsAreTheRequestedCrossProduct) {
  BenchSpec spec;
  spec.ops = all_bench_ops();
  spec.lengths = {32, 96};
  spec.dim = 4;
  spec.chunk = 8;
  spec.repeats = 3;
  const auto rows = bench_run(spec);
  ASSERT_EQ(rows.size(), spec.ops.size() * 2);
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& r : rows) seen.insert({r.op, r.length});
  EXPECT_EQ(seen.size(), rows.size());
}

TEST(BenchRun, ChunkedStateBytesConstantInLength) {
  BenchSpec spec;
  spec.ops = {BenchOp::linear_chunked, BenchOp::linear_recurrent};
  spec.lengths = {256, 512, 1024, 2048};
  spec.dim = 16;
  spec.chunk = 32;
  spec.repeats = 3;
  const auto rows = bench_run(spec);
  std::set<std::size_t> chunked, recurrent;
  for (const auto& r : rows) (r.op == "linear_chunked" ? chunked : recurrent).insert(r.state_bytes);
  EXPECT_EQ(chunked.size(), 1u);
  EXPECT_EQ(recurrent.size(), 4u);  // the token tape grows with L
}

TEST(BenchRun, FftConvRoughlyNLogN) {
  BenchSpec spec;
  spec.ops = {BenchOp::fftconv};
  spec.lengths = {2048, 4096};
  spec.dim = 16;
  spec.repeats = 7;
  const auto rows = bench_run(spec);
  const double ratio = (rows[1].forward_ms + rows[1].backward_ms) / (rows[0].forward_ms + rows[0].backward_ms);
  EXPECT_LE(ratio, 2.6);
}

TEST(BenchRun, SoftmaxBudgetGuard) {
  BenchSpec spec;
  spec.ops = {BenchOp::softmax};
  spec.lengths = {64};
  spec.softmax_budget = 64 * 64 - 1;
  EXPECT_THROW(bench_run(spec), BudgetError);
  spec.repeats = 2;
  EXPECT_THROW(bench_run(spec), ConfigError);
}

TEST(ScalingFit, ExactPowers) {
  const std::vector<std::pair<double, double>> lin{{1024, 1}, {2048, 2}, {4096, 4}};
  const std::vector<std::pair<double, double>> quad{{1024, 1}, {2048, 4}, {4096, 16}};
  EXPECT_NEAR(fit_scaling_exponent(lin), 1.0, 1e-12);
  EXPECT_NEAR(fit_scaling_exponent(quad), 2.0, 1e-12);
}

TEST(ScalingFit, JitteredLinearData) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> pts;
    for (double L = 1024; L <= 16384; L *= 2) pts.push_back({L, 1e-3 * L * rng.uniform(0.95, 1.05)});
    EXPECT_NEAR(fit_scaling_exponent(pts), 1.0, 0.15);
  }
}

TEST(ScalingFit, NeedsThreeLengths) {
  const std::vector<std::pair<double, double>> two{{1, 1}, {2, 2}, {2, 2.1}};
  EXPECT_THROW(fit_scaling_exponent(two), ConfigError);
}

TEST(Csv, ZeroRowsIsHeaderOnly) {
  const auto p = scratch("empty.csv");
  emit_csv({}, p.string());
  std::ifstream in(p);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(all, "op,length,dim,chunk,forward_ms,backward_ms,state_bytes\n");
}

TEST(Csv, RoundTripAndFixedColumns) {
  const std::vector<BenchRow> rows{{"softmax", 1024, 64, 64, 5, 1.25, 2.5, 4096},
                                   {"linear_chunked", 2048, 32, 16, 5, 0.0625, 0.125, 8192}};
  const auto p = scratch("rows.csv");
  emit_csv(rows, p.string());
  const auto back = parse_bench_csv(p.string());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].op, rows[i].op);
    EXPECT_EQ(back[i].length, rows[i].length);
    EXPECT_EQ(back[i].dim, rows[i].dim);
    EXPECT_EQ(back[i].chunk, rows[i].chunk);
    EXPECT_DOUBLE_EQ(back[i].forward_ms, rows[i].forward_ms);
    EXPECT_DOUBLE_EQ(back[i].backward_ms, rows[i].backward_ms);
    EXPECT_EQ(back[i].state_bytes, rows[i].state_bytes);
  }
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
}

}  // namespace
}  // namespace chela
