#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtl/checkpoint.hpp"
#include "mtl/errors.hpp"
#include "mtl/metrics.hpp"
#include "mtl/optim.hpp"

namespace mtl {

struct TrainConfig {
  double lr = 5e-5;
  std::size_t batch_size = 32;
  double warmup = 0.1;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::size_t epochs = 100;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  static TrainConfig refine_defaults() { return {}; }
  static TrainConfig finetune_defaults();
  /// lr and epochs may be zero (no-op runs); everything else must be in range.
  void validate() const;
};

/// One task's packed training and dev inputs.
struct TaskData {
  TaskSpec spec;
  std::vector<EncodedInput> train;
  std::vector<EncodedInput> dev;
};

struct ScheduledBatch {
  std::size_t task = 0;
  std::vector<std::size_t> examples;
};

struct EpochSchedule {
  std::vector<ScheduledBatch> batches;
  std::uint64_t seed = 0;
};

/// Shuffles each dataset, cuts it into ceil(n / batch_size) batches and
/// shuffles the pooled batch order. Deterministic in epoch_seed. Throws
/// ConfigError on an empty dataset or a zero batch size.
EpochSchedule build_epoch_schedule(std::span<const std::size_t> dataset_sizes, std::size_t batch_size,
                                   std::uint64_t epoch_seed);

/// Seed of the schedule for `epoch` (1-based) of a run seeded with `seed`.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

struct LogRow {
  std::size_t epoch = 0;
  std::string task;
  double loss = 0.0;    // mean training loss of the task's batches
  double metric = 0.0;  // dev metric, NaN when the task has no dev set
};

void write_training_log(std::ostream& out, const std::vector<LogRow>& log);

struct TrainResult {
  ModelCheckpoint checkpoint;  // best epoch by mean dev metric
  std::vector<LogRow> log;
  std::size_t best_epoch = 0;
  double best_dev = 0.0;
  std::size_t steps = 0;
};

/// Called after every optimizer update with the 1-based global step, the
/// batch's task index and the parameters after the update.
using StepHook = std::function<void(std::size_t step, std::size_t task, const ParamStore& params)>;

/// Thrown when a loss or gradient goes non-finite; carries the parameters
/// from before the failing step.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, ModelCheckpoint last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const ModelCheckpoint& last_good() const { return last_good_; }

 private:
  ModelCheckpoint last_good_;
};

/// Joint training over the pooled per-task batches. `init` must hold the
/// shared encoder; heads missing from it are created with new_head. Each
/// step updates the shared parameters and the batch's task head only.
TrainResult mtl_refine(const ModelCheckpoint& init, const std::vector<TaskData>& tasks, const TrainConfig& config,
                       const StepHook& hook = {});

/// Straight single-task loop with no batch pooling.
TrainResult train_single_task(const ModelCheckpoint& init, const TaskData& task, const TrainConfig& config,
                              const StepHook& hook = {});

/// Replaces the task's head with a fresh one and trains shared + head on
/// that task alone, keeping the best dev epoch.
TrainResult fine_tune(const ModelCheckpoint& init, const TaskData& task, const TrainConfig& config,
                      const StepHook& hook = {});

/// Checkpoint with the task's head replaced by a fresh new_head, as
/// fine_tune sees it before its first update.
ModelCheckpoint with_fresh_head(ModelCheckpoint checkpoint, const TaskSpec& task, std::uint64_t seed);

/// Dev/test metric of one task in eval mode. Constant similarity
/// predictions count as zero correlation.
MetricResult evaluate_task(const ModelCheckpoint& model, const TaskSpec& task, std::span<const EncodedInput> inputs);

/// Mean loss of `task` over `inputs` in eval mode.
double evaluate_loss(const ModelCheckpoint& model, const TaskSpec& task, std::span<const EncodedInput> inputs);

struct MlmResult {
  ModelCheckpoint checkpoint;
  double initial_loss = 0.0;  // eval-mode loss at init on a fixed masking
  double final_loss = 0.0;    // same masking after training
  std::vector<double> epoch_losses;
};

/// Masked-language-model pretraining of a fresh encoder with a tied output
/// embedding and an output bias "mlm/bias". Of the selected positions
/// (probability mask_prob, at least one per sequence) 80% become [MASK],
/// 10% a random token and 10% stay unchanged.
MlmResult mlm_pretrain(const EncoderConfig& encoder, const Vocab& vocab, const std::vector<std::string>& corpus,
                       const TrainConfig& config, double mask_prob = 0.15, std::size_t max_len = 64);

}  // namespace mtl
