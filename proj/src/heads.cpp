#include "mtl/heads.hpp"

#include <algorithm>

#include "mtl/errors.hpp"
#include "mtl/ops.hpp"

namespace mtl {
namespace {

std::string weight_name(std::string_view task) { return head_prefix(task) + "weight"; }
std::string bias_name(std::string_view task) { return head_prefix(task) + "bias"; }

Var linear_head(const ParamVars& head, std::string_view task_name, Var x) {
  auto w = head.find(weight_name(task_name));
  auto b = head.find(bias_name(task_name));
  if (w == head.end() || b == head.end())
    throw ContractViolation("head parameters for task '" + std::string(task_name) + "' are not registered");
  return add_bias(matmul_nt(x, w->second), b->second);
}

Var head_dropout_op(Var x, double p, Mode mode, Rng* rng) {
  if (mode == Mode::eval || p == 0.0) return x;
  if (rng == nullptr) throw ContractViolation("task head: train mode with dropout needs a mask generator");
  return dropout(x, p, *rng);
}

bool valid_bio(const std::string& tag) {
  return tag == "O" || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.size() > 2);
}

// Rows of every position whose tag is not ignored, and the matching targets.
void tagged_positions(const EncoderOutput& encoded, std::span<const EncodedInput> batch,
                      std::vector<std::size_t>& rows, std::vector<int>& targets) {
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto* tags = std::get_if<std::vector<int>>(&batch[b].label);
    if (!tags) throw DataError("tagging example '" + batch[b].example_id + "' has no tag sequence");
    for (std::size_t j = 0; j < encoded.seq && j < tags->size(); ++j) {
      if ((*tags)[j] == kIgnoreTag) continue;
      rows.push_back(b * encoded.seq + j);
      targets.push_back((*tags)[j]);
    }
  }
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::similarity: return "similarity";
    case TaskKind::classification: return "classification";
    case TaskKind::inference: return "inference";
    case TaskKind::tagging: return "tagging";
  }
  return "?";
}

std::string_view to_string(MetricId metric) {
  switch (metric) {
    case MetricId::pearson: return "pearson";
    case MetricId::accuracy: return "accuracy";
    case MetricId::micro_f1: return "micro_f1";
    case MetricId::entity_f1: return "entity_f1";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view text) {
  for (TaskKind k : {TaskKind::similarity, TaskKind::classification, TaskKind::inference, TaskKind::tagging})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown task kind '" + std::string(text) + "'");
}

MetricId parse_metric(std::string_view text) {
  for (MetricId m : {MetricId::pearson, MetricId::accuracy, MetricId::micro_f1, MetricId::entity_f1})
    if (to_string(m) == text) return m;
  throw ConfigError("unknown metric '" + std::string(text) + "'");
}

MetricId default_metric(TaskKind kind) {
  switch (kind) {
    case TaskKind::similarity: return MetricId::pearson;
    case TaskKind::classification: return MetricId::micro_f1;
    case TaskKind::inference: return MetricId::accuracy;
    case TaskKind::tagging: return MetricId::entity_f1;
  }
  return MetricId::accuracy;
}

void TaskSpec::validate() const {
  auto fail = [this](const std::string& what) { throw ConfigError("task '" + name + "': " + what); };
  if (name.empty() || name.find('/') != std::string::npos || name.find_first_of(" \t\n") != std::string::npos)
    fail("name must be non-empty without '/' or whitespace");
  if (max_len < 5) fail("max_len must be >= 5");
  switch (kind) {
    case TaskKind::similarity:
      if (metric != MetricId::pearson) fail("similarity tasks are scored with pearson");
      break;
    case TaskKind::classification:
    case TaskKind::inference:
      if (labels.size() < 2) fail("needs at least two classes");
      if (metric != MetricId::accuracy && metric != MetricId::micro_f1) fail("metric must be accuracy or micro_f1");
      if (!negative_label.empty() && label_index(negative_label) < 0)
        fail("negative label '" + negative_label + "' is not a class");
      break;
    case TaskKind::tagging:
      if (labels.size() < 2) fail("needs at least two tags");
      for (const auto& t : labels)
        if (!valid_bio(t)) fail("tag '" + t + "' is not in the BIO scheme");
      if (metric != MetricId::entity_f1 && metric != MetricId::accuracy) fail("metric must be entity_f1 or accuracy");
      break;
  }
  std::vector<std::string> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("duplicate label");
}

std::size_t TaskSpec::num_outputs() const { return kind == TaskKind::similarity ? 1 : labels.size(); }

int TaskSpec::label_index(std::string_view label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

ParamStore new_head(const TaskSpec& task, std::size_t hidden, std::uint64_t seed, double init_stddev) {
  task.validate();
  Rng rng(derive_seed(seed, "head/" + task.name));
  Tensor w(Shape{task.num_outputs(), hidden});
  for (double& v : w.data()) v = rng.truncated_normal(init_stddev);
  ParamStore head;
  head.emplace(weight_name(task.name), std::move(w));
  head.emplace(bias_name(task.name), Tensor(Shape{task.num_outputs()}));
  return head;
}

Var similarity_forward(const ParamVars& head, std::string_view task_name, Var h0) {
  return linear_head(head, task_name, h0);
}

Var classify_forward(const ParamVars& head, std::string_view task_name, Var h0) {
  return linear_head(head, task_name, h0);
}

Var tag_forward(const ParamVars& head, std::string_view task_name, Var hidden) {
  return linear_head(head, task_name, hidden);
}

Var cls_rows(const EncoderOutput& encoded) {
  std::vector<std::size_t> rows(encoded.batch);
  for (std::size_t b = 0; b < encoded.batch; ++b) rows[b] = b * encoded.seq;
  return gather_rows(encoded.hidden, rows);
}

Var task_loss(const TaskSpec& task, const ParamVars& vars, const EncoderOutput& encoded,
              std::span<const EncodedInput> batch, Mode mode, double head_dropout, Rng* dropout_rng) {
  switch (task.kind) {
    case TaskKind::similarity: {
      std::vector<double> targets;
      for (const auto& in : batch) {
        const double* y = std::get_if<double>(&in.label);
        if (!y) throw DataError("similarity example '" + in.example_id + "' has no score");
        targets.push_back(*y);
      }
      Var h0 = head_dropout_op(cls_rows(encoded), head_dropout, mode, dropout_rng);
      return mse_loss(similarity_forward(vars, task.name, h0), targets);
    }
    case TaskKind::classification:
    case TaskKind::inference: {
      std::vector<int> targets;
      for (const auto& in : batch) {
        const int* y = std::get_if<int>(&in.label);
        if (!y || *y < 0 || static_cast<std::size_t>(*y) >= task.labels.size())
          throw DataError("example '" + in.example_id + "' has a label outside the class set of task '" +
                          task.name + "'");
        targets.push_back(*y);
      }
      Var h0 = head_dropout_op(cls_rows(encoded), head_dropout, mode, dropout_rng);
      return cross_entropy(classify_forward(vars, task.name, h0), targets);
    }
    case TaskKind::tagging: {
      std::vector<std::size_t> rows;
      std::vector<int> targets;
      tagged_positions(encoded, batch, rows, targets);
      if (rows.empty()) throw DataError("tagging batch for task '" + task.name + "' has no tagged position");
      for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= task.labels.size())
          throw DataError("tag id " + std::to_string(t) + " outside the tag set of task '" + task.name + "'");
      Var h = head_dropout_op(gather_rows(encoded.hidden, rows), head_dropout, mode, dropout_rng);
      return cross_entropy(tag_forward(vars, task.name, h), targets);
    }
  }
  throw ContractViolation("task_loss: unknown task kind");
}

TaskPredictions predict(const TaskSpec& task, const ParamVars& vars, const EncoderOutput& encoded,
                        std::span<const EncodedInput> batch) {
  TaskPredictions out;
  switch (task.kind) {
    case TaskKind::similarity: {
      const Tensor scores = similarity_forward(vars, task.name, cls_rows(encoded)).value();
      out.scores.assign(scores.data().begin(), scores.data().end());
      break;
    }
    case TaskKind::classification:
    case TaskKind::inference: {
      const Tensor probs = softmax_rows(classify_forward(vars, task.name, cls_rows(encoded)).value());
      const std::size_t c = probs.cols();
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        const double* row = probs.data().data() + r * c;
        out.probs.emplace_back(row, row + c);
        out.classes.push_back(static_cast<int>(std::max_element(row, row + c) - row));
      }
      break;
    }
    case TaskKind::tagging: {
      const Tensor logits = tag_forward(vars, task.name, encoded.hidden).value();
      const std::size_t l = logits.cols();
      const int outside = std::max(0, task.label_index("O"));
      for (std::size_t b = 0; b < batch.size(); ++b) {
        std::vector<int> tags;
        for (int pos : batch[b].word_positions) {
          if (pos < 0 || static_cast<std::size_t>(pos) >= encoded.seq) {
            tags.push_back(outside);
            continue;
          }
          const double* row = logits.data().data() + (b * encoded.seq + static_cast<std::size_t>(pos)) * l;
          tags.push_back(static_cast<int>(std::max_element(row, row + l) - row));
        }
        out.word_tags.push_back(std::move(tags));
      }
      break;
    }
  }
  return out;
}

}  // namespace mtl
