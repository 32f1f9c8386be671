// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>

#include <CLI11.hpp>

#include "chela/cli.hpp"
#include "chela/config.hpp"
#include "chela/kernels.hpp"
#include "chela/parallel.hpp"
#include "chela/verify.hpp"

namespace chela::cli {

namespace {

constexpr const char* kThreadsHelp = "worker threads (default: CHELA_THREADS or 1)";

void add_task_options(CLI::App* app, TaskSpec& task, std::string& task_name) {
  app->add_option("--task", task_name, "copy | assoc_recall | adding | byte_lm")->required();
  app->add_option("--seq-len", task.seq_len, "sequence length (copy, adding, byte_lm)")->check(CLI::PositiveNumber);
  app->add_option("--vocab", task.vocab, "vocabulary size (copy: 8, assoc_recall: 32)")->check(CLI::PositiveNumber);
  app->add_option("--pairs", task.n_pairs, "key-value pairs (assoc_recall)")->check(CLI::PositiveNumber);
  app->add_option("--data", task.data_path, "byte corpus file (byte_lm)");
}

void apply_threads(std::size_t n) {
  if (n > 0) set_num_threads(n);
}

std::string csv_line(const BenchRow& r) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << r.op << ',' << r.length << ',' << r.dim << ',' << r.chunk << ',' << std::setprecision(9) << r.forward_ms << ','
     << r.backward_ms << ',' << r.state_bytes;
  return os.str();
}

int run_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  apply_threads(a.threads);
  out << "# backend " << kernels::backend_name(kernels::active_backend()) << ", threads " << num_threads() << "\n";
  out << "op,length,dim,chunk,forward_ms,backward_ms,state_bytes\n";
  const auto rows = bench_run(a.spec, [&](const BenchRow& r) { out << csv_line(r) << std::endl; });
  if (!a.out.empty()) emit_csv(rows, a.out);
  if (a.spec.lengths.size() >= 3) {
    for (BenchOp op : a.spec.ops) {
      std::vector<BenchRow> mine;
      for (const auto& r : rows)
        if (r.op == to_string(op)) mine.push_back(r);
      out << "# scaling exponent " << to_string(op) << " " << std::fixed << std::setprecision(3)
          << fit_scaling_exponent(std::span<const BenchRow>(mine)) << std::defaultfloat << "\n";
    }
  }
  (void)err;
  return kExitOk;
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  apply_threads(a.threads);
  TrainConfig cfg = a.config;
  if (!a.config_path.empty()) cfg.model = load_config_file(a.config_path);
  if (a.seed) cfg.model.seed = *a.seed;
  std::optional<Checkpoint> resume;
  if (!a.resume_path.empty()) resume = load_checkpoint(a.resume_path);

  out << "step,loss,accuracy,grad_norm,wall_ms\n";
  TrainResult r;
  try {
    r = train_loop(cfg, resume, [&](const MetricRow& m) {
      out << m.step << ',' << m.loss << ',' << m.accuracy << ',' << m.grad_norm << ',' << m.wall_ms << std::endl;
    });
  } catch (const DivergenceError& e) {
    err << "error: training diverged at step " << e.step() << ": " << e.what() << "\n";
    return kExitFailure;
  }
  if (!a.metrics_path.empty()) write_metrics_csv(r.trace, a.metrics_path);
  if (r.reached_target) out << "# reached target accuracy at step " << r.final_state.step << "\n";
  return kExitOk;
}

int run_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  apply_threads(a.threads);
  const Checkpoint ck = load_checkpoint(a.checkpoint_path);
  const ModelConfig expected = fit_config_to_task(ck.params.cfg, a.task);
  if (config_to_json(expected) != config_to_json(ck.params.cfg)) {
    throw ConfigError("eval: checkpoint model does not fit task " + to_string(a.task.kind));
  }
  const EvalResult e = evaluate(ck.params, a.task, a.batch, a.batches, a.seed);
  out << "task " << to_string(a.task.kind) << "\nstep " << ck.step << "\nloss " << e.loss << "\naccuracy " << e.accuracy
      << "\n";
  if (a.task.kind == TaskKind::byte_lm) out << "bits_per_byte " << e.loss / std::numbers::ln2 << "\n";
  return kExitOk;
}

int run_verify(const VerifyArgs& a, std::ostream& out, std::ostream&) {
  using namespace verify;
  const std::map<std::string, std::vector<CheckResult> (*)(const SuiteOptions&)> suites{
      {"attention", attention_suite}, {"conv", conv_suite}, {"fusion", fusion_suite},
      {"ssm", ssm_suite},             {"gradient", gradient_suite}};
  std::vector<std::string> names = a.suites;
  if (names.empty()) names = {"attention", "conv", "fusion", "ssm", "gradient"};
  SuiteOptions opt;
  opt.scale = a.scale;
  opt.seed = a.seed;
  std::vector<CheckResult> all;
  for (const auto& n : names) {
    const auto it = suites.find(n);
    if (it == suites.end()) throw ConfigError("verify: unknown suite '" + n + "'");
    for (const auto& r : it->second(opt)) {
      out << (r.passed ? "PASS" : "FAIL") << "  " << std::left << std::setw(10) << r.suite << std::setw(54) << r.name
          << std::right << " err=" << std::scientific << std::setprecision(2) << r.error << " tol=" << r.tolerance
          << std::defaultfloat << "  (" << r.detail << ")\n";
      all.push_back(r);
    }
  }
  const bool ok = all_passed(all);
  out << (ok ? "all checks passed" : "verification FAILED") << "\n";
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

ParseResult cli_parse(int argc, const char* const* argv) {
  Command cmd;
  CLI::App app{"chela: chunked linear attention, short-long convolutions and friends"};
  app.name("chela");
  app.require_subcommand(1, 1);

  // bench
  auto* bench = app.add_subcommand("bench", "time forward and backward passes across sequence lengths");
  std::vector<std::string> ops;
  bench->add_option("--op", ops, "ops: softmax, linear_noncausal, linear_recurrent, linear_chunked (chunked), "
                                 "fftconv, directconv, shortlong")
      ->delimiter(',')
      ->required();
  bench->add_option("--lengths", cmd.bench.spec.lengths, "comma-separated sequence lengths")
      ->delimiter(',')
      ->required();
  bench->add_option("--dim", cmd.bench.spec.dim, "model width")->check(CLI::PositiveNumber);
  bench->add_option("--chunk", cmd.bench.spec.chunk, "chunk size")->check(CLI::PositiveNumber);
  bench->add_option("--batch", cmd.bench.spec.batch, "batch size")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", cmd.bench.spec.repeats, "timed repeats (>= 3)")->check(CLI::Range(3, 1000000));
  bench->add_option("--softmax-budget", cmd.bench.spec.softmax_budget, "max L*L for softmax");
  bench->add_option("--seed", cmd.bench.spec.seed, "input seed");
  bench->add_option("--threads", cmd.bench.threads, kThreadsHelp)->check(CLI::PositiveNumber);
  bench->add_option("--out", cmd.bench.out, "CSV output path");

  // train
  auto* train = app.add_subcommand("train", "train a model on a synthetic or byte-level task");
  std::string train_task;
  add_task_options(train, cmd.train.config.task, train_task);
  train->add_option("--config", cmd.train.config_path, "JSON model config (keys as in ModelConfig)");
  train->add_option("--seed", cmd.train.seed, "overrides the config seed");
  train->add_option("--steps", cmd.train.config.steps, "optimizer steps");
  train->add_option("--batch", cmd.train.config.batch, "batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", cmd.train.config.optim.lr, "peak learning rate")->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", cmd.train.config.optim.weight_decay, "decoupled weight decay");
  train->add_option("--warmup", cmd.train.config.warmup, "linear warmup steps");
  train->add_option("--clip", cmd.train.config.clip, "global gradient-norm clip");
  train->add_option("--eval-every", cmd.train.config.eval_every, "steps between evaluations")
      ->check(CLI::PositiveNumber);
  train->add_option("--eval-batches", cmd.train.config.eval_batches, "held-out batches per evaluation")
      ->check(CLI::PositiveNumber);
  train->add_option("--target-accuracy", cmd.train.config.target_accuracy, "stop once reached (0 = never)");
  train->add_option("--metrics", cmd.train.metrics_path, "CSV metrics path");
  train->add_option("--checkpoint", cmd.train.config.checkpoint_path, "checkpoint path (written at the end)");
  train->add_option("--checkpoint-every", cmd.train.config.checkpoint_every, "steps between checkpoints");
  train->add_option("--resume", cmd.train.resume_path, "continue from a checkpoint");
  train->add_option("--threads", cmd.train.threads, kThreadsHelp)->check(CLI::PositiveNumber);

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on held-out batches");
  std::string eval_task;
  add_task_options(eval, cmd.eval.task, eval_task);
  eval->add_option("--checkpoint", cmd.eval.checkpoint_path, "checkpoint to load")->required();
  eval->add_option("--batch", cmd.eval.batch, "batch size")->check(CLI::PositiveNumber);
  eval->add_option("--batches", cmd.eval.batches, "number of batches")->check(CLI::PositiveNumber);
  eval->add_option("--seed", cmd.eval.seed, "evaluation stream seed");
  eval->add_option("--threads", cmd.eval.threads, kThreadsHelp)->check(CLI::PositiveNumber);

  // verify
  auto* verify = app.add_subcommand("verify", "run the oracle equivalence and gradient suites");
  verify->add_option("--suite", cmd.verify.suites, "attention, conv, fusion, ssm, gradient (default: all)")
      ->delimiter(',');
  verify->add_option("--scale", cmd.verify.scale, "fraction of randomized cases to run")->check(CLI::PositiveNumber);
  verify->add_option("--seed", cmd.verify.seed, "suite seed");

  ParseResult result;
  try {
    app.parse(argc, argv);
    if (bench->parsed()) {
      cmd.verb = "bench";
      for (const auto& o : ops) cmd.bench.spec.ops.push_back(parse_bench_op(o));
    } else if (train->parsed()) {
      cmd.verb = "train";
      cmd.train.config.task.kind = parse_task(train_task);
    } else if (eval->parsed()) {
      cmd.verb = "eval";
      cmd.eval.task.kind = parse_task(eval_task);
    } else {
      cmd.verb = "verify";
    }
  } catch (const CLI::CallForHelp&) {
    result.message = app.help();
    return result;
  } catch (const CLI::CallForAllHelp&) {
    result.message = app.help("", CLI::AppFormatMode::All);
    return result;
  } catch (const CLI::ParseError& e) {
    const CLI::App* sub = bench->parsed() ? bench : train->parsed() ? train : eval->parsed() ? eval
                                                  : verify->parsed() ? verify : &app;
    result.exit_code = kExitUsage;
    result.message = std::string("error: ") + e.what() + "\n\n" + sub->help();
    return result;
  } catch (const ConfigError& e) {
    result.exit_code = kExitUsage;
    result.message = std::string("error: ") + e.what() + "\n";
    return result;
  }
  result.command = std::move(cmd);
  return result;
}

int cli_run(const Command& cmd, std::ostream& out, std::ostream& err) {
  try {
    if (cmd.verb == "bench") return run_bench(cmd.bench, out, err);
    if (cmd.verb == "train") return run_train(cmd.train, out, err);
    if (cmd.verb == "eval") return run_eval(cmd.eval, out, err);
    if (cmd.verb == "verify") return run_verify(cmd.verify, out, err);
    err << "error: unknown verb '" << cmd.verb << "'\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cli_main(int argc, const char* const* argv) {
  const ParseResult p = cli_parse(argc, argv);
  if (!p.command) {
    (p.exit_code == kExitOk ? std::cout : std::cerr) << p.message;
    return p.exit_code;
  }
  return cli_run(*p.command, std::cout, std::cerr);
}

}  // namespace chela::cli
