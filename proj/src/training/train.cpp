// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>

#include "chela/config.hpp"
#include "chela/train.hpp"

namespace chela {

namespace {

constexpr std::uint64_t kDataSalt = 0xD1B54A32D192ED03ULL;
constexpr std::uint64_t kEvalSalt = 0x8CB92BA72F3D8DD7ULL;
constexpr double kHeldOutFraction = 0.1;
// An adding-problem prediction counts as correct within this distance.
constexpr double kAddingTolerance = 0.04;

// Draws batches for one task; byte tasks sample the training split and
// evaluate on consecutive non-overlapping windows of the held-out split.
class TaskSource {
 public:
  explicit TaskSource(const TaskSpec& t) : task_(t) {
    if (t.kind == TaskKind::byte_lm) {
      auto [train, held] = ByteCorpus::from_file(t.data_path).split(kHeldOutFraction);
      train_ = std::make_shared<ByteCorpus>(std::move(train));
      held_ = std::make_shared<ByteCorpus>(std::move(held));
    }
  }

  TaskBatch train_batch(Rng& rng, std::size_t B) const { return draw(rng, B, train_.get()); }

  TaskBatch eval_batch(Rng& rng, std::size_t B, std::size_t index) const {
    if (task_.kind == TaskKind::byte_lm) {
      const std::size_t windows = held_->window_count(task_.seq_len);
      if (windows < B) throw ConfigError("byte corpus: held-out split holds fewer than one batch of windows");
      const std::size_t batches = windows / B;
      return held_->windows((index % batches) * B, task_.seq_len, B);
    }
    return draw(rng, B, nullptr);
  }

 private:
  TaskBatch draw(Rng& rng, std::size_t B, const ByteCorpus* corpus) const {
    switch (task_.kind) {
      case TaskKind::copy:
        return gen_copy_task(rng, task_.seq_len, task_.vocab_size(), B);
      case TaskKind::assoc_recall:
        return gen_assoc_recall(rng, task_.n_pairs, task_.vocab_size(), B);
      case TaskKind::adding:
        return gen_adding_problem(rng, task_.seq_len, B);
      case TaskKind::byte_lm:
        if (corpus == nullptr) break;
        return corpus->sample(rng, task_.seq_len, B);
    }
    throw ConfigError("task source: no batch available for " + to_string(task_.kind));
  }

  TaskSpec task_;
  std::shared_ptr<ByteCorpus> train_, held_;
};

EvalResult evaluate_with(const ModelParams<float>& params, const TaskSpec& task, const TaskSource& src,
                         std::size_t batch, std::size_t num_batches, std::uint64_t seed) {
  Rng rng(seed);
  EvalResult r;
  double loss = 0, correct = 0, count = 0;
  for (std::size_t i = 0; i < num_batches; ++i) {
    const TaskBatch b = src.eval_batch(rng, batch, i);
    const Tensorf out = model_forward(params, to_model_input<float>(b));
    const LossResult<float> l = task_loss(task, b, out);
    loss += l.loss * double(l.count);
    correct += double(l.correct);
    count += double(l.count);
  }
  r.loss = count > 0 ? loss / count : 0.0;
  r.accuracy = count > 0 ? correct / count : 0.0;
  return r;
}

}  // namespace

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::copy:
      return "copy";
    case TaskKind::assoc_recall:
      return "assoc_recall";
    case TaskKind::adding:
      return "adding";
    case TaskKind::byte_lm:
      return "byte_lm";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "assoc_recall" || s == "recall") return TaskKind::assoc_recall;
  if (s == "adding") return TaskKind::adding;
  if (s == "byte_lm" || s == "bytes") return TaskKind::byte_lm;
  throw ConfigError("unknown task '" + s + "' (expected copy|assoc_recall|adding|byte_lm)");
}

ModelConfig fit_config_to_task(ModelConfig cfg, const TaskSpec& task) {
  cfg.num_classes = 0;
  switch (task.kind) {
    case TaskKind::copy:
      cfg.vocab_size = task.vocab_size();
      cfg.input_dim = 0;
      cfg.task_head = TaskHead::lm;
      cfg.max_len = task.seq_len;
      break;
    case TaskKind::assoc_recall:
      cfg.vocab_size = task.vocab_size();
      cfg.input_dim = 0;
      cfg.task_head = TaskHead::lm;
      cfg.max_len = 2 * task.n_pairs + 1;
      break;
    case TaskKind::adding:
      cfg.vocab_size = 0;
      cfg.input_dim = 2;
      cfg.task_head = TaskHead::regression;
      cfg.max_len = task.seq_len;
      break;
    case TaskKind::byte_lm:
      cfg.vocab_size = 256;
      cfg.input_dim = 0;
      cfg.task_head = TaskHead::lm;
      cfg.max_len = task.seq_len;
      break;
  }
  cfg.validate();
  return cfg;
}

LossResult<float> task_loss(const TaskSpec& task, const TaskBatch& b, const Tensorf& out) {
  if (task.kind == TaskKind::adding) {
    LossResult<float> l = mse_loss(out, b.values);
    for (std::size_t i = 0; i < b.values.size(); ++i) {
      l.correct += std::abs(double(out[i]) - b.values[i]) < kAddingTolerance;
    }
    return l;
  }
  return cross_entropy(out, b.targets, b.loss_mask);
}

EvalResult evaluate(const ModelParams<float>& params, const TaskSpec& task, std::size_t batch,
                    std::size_t num_batches, std::uint64_t seed) {
  return evaluate_with(params, task, TaskSource(task), batch, num_batches, seed);
}

TrainResult train_loop(const TrainConfig& cfg, const std::optional<Checkpoint>& resume,
                       const std::function<void(const MetricRow&)>& on_row) {
  if (cfg.batch == 0) throw ConfigError("train: batch must be positive");
  if (cfg.eval_every == 0) throw ConfigError("train: eval_every must be positive");
  const ModelConfig model_cfg = fit_config_to_task(cfg.model, cfg.task);
  const std::uint64_t seed = model_cfg.seed;
  const TaskSource source(cfg.task);

  TrainResult result;
  Checkpoint& st = result.final_state;
  Rng data_rng(seed ^ kDataSalt);
  if (resume) {
    st = *resume;
    if (config_to_json(st.params.cfg) != config_to_json(model_cfg)) {
      throw ConfigError("train: checkpoint config does not match the requested model");
    }
    data_rng.set_state(st.rng_state);
  } else {
    st.params = init_chela_params<float>(model_cfg);
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  auto emit = [&](std::size_t step, double grad_norm) {
    EvalResult e;
    try {
      e = evaluate_with(st.params, cfg.task, source, cfg.batch, cfg.eval_batches, seed ^ kEvalSalt);
    } catch (const NumericError& err) {
      throw DivergenceError(std::string("train: evaluation failed: ") + err.what(), step);
    }
    if (!std::isfinite(e.loss)) throw DivergenceError("train: evaluation loss is not finite", step);
    const MetricRow row{step, e.loss, e.accuracy, grad_norm, elapsed_ms()};
    result.trace.push_back(row);
    if (on_row) on_row(row);
    if (cfg.target_accuracy > 0 && e.accuracy >= cfg.target_accuracy) result.reached_target = true;
  };

  double last_grad_norm = 0;
  // One optimizer step. Any non-finite value on the way is a divergence.
  auto train_step = [&](std::size_t step) {
    const TaskBatch batch = source.train_batch(data_rng, cfg.batch);
    const ModelInput<float> input = to_model_input<float>(batch);
    ModelTape<float> tape;
    const Tensorf out = model_forward(st.params, input, &tape);
    const LossResult<float> loss = task_loss(cfg.task, batch, out);

    ModelParams<float> grads = zeros_like(st.params);
    model_backward(st.params, input, tape, loss.grad, grads);

    std::vector<OptimSlot<float>> slots;
    std::vector<Tensorf*> grad_ptrs;
    auto pr = model_params(st.params);
    auto gr = model_params(grads);
    for (std::size_t i = 0; i < pr.size(); ++i) {
      if (!pr[i].trainable) continue;
      slots.push_back({pr[i].tensor, gr[i].tensor, pr[i].decay});
      grad_ptrs.push_back(gr[i].tensor);
    }
    const double grad_norm = clip_grad_norm<float>(grad_ptrs, cfg.clip);
    if (!std::isfinite(grad_norm)) {
      throw DivergenceError("train: non-finite gradient at step " + std::to_string(step), step);
    }
    AdamWHyper h = cfg.optim;
    h.lr = warmup_lr(cfg.optim.lr, st.optim.step, cfg.warmup);
    adamw_step<float>(slots, st.optim, h);

    st.step = step;
    st.rng_state = data_rng.state();
    last_grad_norm = grad_norm;
  };

  emit(st.step, 0.0);
  while (st.step < cfg.steps && !result.reached_target) {
    const std::size_t step = st.step + 1;
    try {
      train_step(step);
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("train: ") + e.what() + " at step " + std::to_string(step), step);
    }
    if (step % cfg.eval_every == 0 || step == cfg.steps) emit(step, last_grad_norm);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && step % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.checkpoint_path, st);
    }
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, st);
  return result;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write metrics file '" + path + "'");
  out.imbue(std::locale::classic());
  out << "step,loss,accuracy,grad_norm,wall_ms\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.accuracy << ',' << r.grad_norm << ',' << r.wall_ms << '\n';
  }
  if (!out) throw Error("write failed for metrics file '" + path + "'");
}

}  // namespace chela
