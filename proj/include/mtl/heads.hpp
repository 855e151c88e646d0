#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtl/encoder.hpp"
#include "mtl/params.hpp"

namespace mtl {

enum class TaskKind { similarity, classification, inference, tagging };
enum class MetricId { pearson, accuracy, micro_f1, entity_f1 };

std::string_view to_string(TaskKind kind);
std::string_view to_string(MetricId metric);
TaskKind parse_task_kind(std::string_view text);
MetricId parse_metric(std::string_view text);
MetricId default_metric(TaskKind kind);

/// One task: its decoder type, label set (classes or BIO tags) and data.
struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::classification;
  /// Class names (classification/inference) or tag names (tagging).
  std::vector<std::string> labels;
  MetricId metric = MetricId::accuracy;
  /// Class excluded from micro F1 (the "no relation" class).
  std::string negative_label;
  std::filesystem::path train_path, dev_path, test_path;
  std::size_t max_len = 128;

  void validate() const;
  /// Width of the output layer: 1 for similarity, |labels| otherwise.
  std::size_t num_outputs() const;
  int label_index(std::string_view label) const;  // -1 when absent

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Head weight [outputs, hidden] drawn from a truncated normal (stddev
/// 0.02), zero bias, under head_prefix(task.name). Deterministic in seed.
ParamStore new_head(const TaskSpec& task, std::size_t hidden, std::uint64_t seed, double init_stddev = 0.02);

/// score = a . h0 + b, shape [batch, 1].
Var similarity_forward(const ParamVars& head, std::string_view task_name, Var h0);

/// Logits a . h0 + b, shape [batch, |C|]; probabilities are their row softmax.
/// Classification and inference share this path.
Var classify_forward(const ParamVars& head, std::string_view task_name, Var h0);

/// Per-token logits h_i W + b, shape [rows, L].
Var tag_forward(const ParamVars& head, std::string_view task_name, Var hidden);

/// Rows of the [CLS] position of every sequence in an encoder output.
Var cls_rows(const EncoderOutput& encoded);

/// Batch loss for `task`: mean MSE, mean cross-entropy over examples, or
/// mean token cross-entropy over non-ignored tag positions. Dropout with
/// `head_dropout` is applied to the encoder features in train mode.
Var task_loss(const TaskSpec& task, const ParamVars& vars, const EncoderOutput& encoded,
              std::span<const EncodedInput> batch, Mode mode, double head_dropout, Rng* dropout_rng);

struct TaskPredictions {
  std::vector<double> scores;                 // similarity
  std::vector<int> classes;                   // classification / inference
  std::vector<std::vector<double>> probs;     // classification / inference rows
  std::vector<std::vector<int>> word_tags;    // tagging, one tag id per word
};

/// Eval-mode predictions. Truncated words in tagging are predicted as the
/// "O" tag (or tag 0 when no "O" exists).
TaskPredictions predict(const TaskSpec& task, const ParamVars& vars, const EncoderOutput& encoded,
                        std::span<const EncodedInput> batch);

}  // namespace mtl
