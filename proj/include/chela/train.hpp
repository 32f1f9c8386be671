// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chela/checkpoint.hpp"
#include "chela/error.hpp"
#include "chela/layer.hpp"
#include "chela/loss.hpp"
#include "chela/optim.hpp"
#include "chela/tasks.hpp"

namespace chela {

enum class TaskKind { copy, assoc_recall, adding, byte_lm };
std::string to_string(TaskKind t);
TaskKind parse_task(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t seq_len = 64;   // copy, adding, byte_lm
  std::size_t vocab = 0;      // copy, assoc_recall; 0 picks the task default
  std::size_t n_pairs = 8;    // assoc_recall
  std::string data_path;      // byte_lm

  /// 8 for copy, 32 for associative recall (which needs 2 * n_pairs symbols).
  std::size_t vocab_size() const {
    if (vocab != 0) return vocab;
    return kind == TaskKind::assoc_recall ? std::max<std::size_t>(32, 2 * n_pairs) : 8;
  }
};

/// Sets the head, vocabulary and feature widths of `cfg` to fit the task.
ModelConfig fit_config_to_task(ModelConfig cfg, const TaskSpec& task);

struct TrainConfig {
  ModelConfig model;
  TaskSpec task;
  std::size_t steps = 1000;
  std::size_t batch = 16;
  AdamWHyper optim;
  std::size_t warmup = 100;
  double clip = 1.0;
  std::size_t eval_every = 100;
  std::size_t eval_batches = 4;
  /// Stop early once the evaluation accuracy reaches this value (0 disables).
  double target_accuracy = 0;
  std::size_t checkpoint_every = 0;
  std::string checkpoint_path;
};

struct MetricRow {
  std::size_t step = 0;
  double loss = 0;
  double accuracy = 0;
  double grad_norm = 0;
  double wall_ms = 0;
};

struct TrainResult {
  std::vector<MetricRow> trace;  // evaluation rows, the first at the starting step
  Checkpoint final_state;
  bool reached_target = false;
};

/// Loss turned NaN/Inf; carries the step at which it happened.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t step) : NumericError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

/// Deterministic training from `cfg.model.seed`, or continued from `resume`.
/// `on_row` sees every metric row as it is produced.
TrainResult train_loop(const TrainConfig& cfg, const std::optional<Checkpoint>& resume = std::nullopt,
                       const std::function<void(const MetricRow&)>& on_row = {});

/// Scores `params` on batches drawn from a seed-fixed held-out stream.
EvalResult evaluate(const ModelParams<float>& params, const TaskSpec& task, std::size_t batch,
                    std::size_t num_batches, std::uint64_t seed);

/// Loss, accuracy and the output cotangent of one batch.
LossResult<float> task_loss(const TaskSpec& task, const TaskBatch& b, const Tensorf& out);

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);

}  // namespace chela
