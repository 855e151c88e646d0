#include "mtl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "mtl/ops.hpp"
#include "mtl/random.hpp"

namespace mtl {
namespace {

constexpr std::size_t kEvalBatch = 64;
const std::string kMlmBias = "mlm/bias";

std::size_t batches_for(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

std::vector<EncodedInput> gather(const std::vector<EncodedInput>& data, const std::vector<std::size_t>& idx) {
  std::vector<EncodedInput> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

struct Session {
  ModelCheckpoint model;
  Adamax optimizer;
  std::size_t step = 0;
  std::size_t total = 0;
};

void apply_update(Session& s, GradientMap& grads, const TrainConfig& config) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  clip_gradients(grads, config.clip_norm);
  s.optimizer.step(s.model.params, grads, lr_at(s.step, s.total, config.warmup, config.lr), config.weight_decay);
}

Rng step_dropout_rng(const TrainConfig& config, std::size_t step) {
  return Rng(derive_seed(derive_seed(config.seed, "dropout"), step));
}

// One optimizer update on one batch of `task`. Parameters are left
// untouched when the step fails.
double train_step(Session& s, const TaskSpec& task, std::span<const EncodedInput> batch, const TrainConfig& config) {
  ++s.step;
  try {
    Tape tape;
    ParamVars vars;
    register_params(tape, s.model.params, kSharedPrefix, vars);
    register_params(tape, s.model.params, head_prefix(task.name), vars);
    Rng drop = step_dropout_rng(config, s.step);
    EncoderConfig enc = s.model.encoder;
    enc.dropout = config.dropout;
    const EncoderOutput out = encode_batch(enc, vars, batch, Mode::train, &drop);
    Var loss = task_loss(task, vars, out, batch, Mode::train, config.dropout, &drop);
    const double value = loss.value().item();
    GradientMap grads = backward(tape, loss);
    apply_update(s, grads, config);
    return value;
  } catch (const NumericError& e) {
    throw TrainingDiverged("training diverged at step " + std::to_string(s.step) + " on task '" + task.name +
                               "': " + e.what(),
                           s.model);
  }
}

void install_task(ModelCheckpoint& model, const TaskSpec& spec) {
  for (TaskSpec& t : model.tasks) {
    if (t.name == spec.name) {
      t = spec;
      return;
    }
  }
  model.tasks.push_back(spec);
}

void check_tasks(const std::vector<TaskData>& tasks) {
  if (tasks.empty()) throw ConfigError("no tasks to train");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].spec.validate();
    if (tasks[i].train.empty()) throw ConfigError("task '" + tasks[i].spec.name + "' has no training examples");
    for (std::size_t j = 0; j < i; ++j)
      if (tasks[j].spec.name == tasks[i].spec.name) throw ConfigError("task '" + tasks[i].spec.name + "' listed twice");
  }
}

bool all_have_dev(const std::vector<TaskData>& tasks) {
  for (const auto& t : tasks)
    if (t.dev.empty()) return false;
  return true;
}

// Logs the epoch, evaluates dev sets and keeps the best checkpoint.
void close_epoch(const Session& s, const std::vector<TaskData>& tasks, std::size_t epoch,
                 const std::vector<double>& loss_sum, const std::vector<std::size_t>& loss_count, TrainResult& r) {
  const bool select = all_have_dev(tasks);
  double mean = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    double metric = std::numeric_limits<double>::quiet_NaN();
    if (!tasks[t].dev.empty()) metric = evaluate_task(s.model, tasks[t].spec, tasks[t].dev).value;
    mean += metric / static_cast<double>(tasks.size());
    r.log.push_back(LogRow{epoch, tasks[t].spec.name,
                           loss_count[t] ? loss_sum[t] / static_cast<double>(loss_count[t]) : 0.0, metric});
  }
  if (!select || r.best_epoch == 0 || mean > r.best_dev) {
    r.checkpoint = s.model;
    r.best_epoch = epoch;
    r.best_dev = select ? mean : std::numeric_limits<double>::quiet_NaN();
  }
}

Session start_session(const ModelCheckpoint& model, const std::vector<TaskData>& tasks, const TrainConfig& config) {
  Session s{model, Adamax{}, 0, 0};
  std::size_t per_epoch = 0;
  for (const auto& t : tasks) per_epoch += batches_for(t.train.size(), config.batch_size);
  s.total = per_epoch * config.epochs;
  return s;
}

TrainResult pooled_training(const ModelCheckpoint& model, const std::vector<TaskData>& tasks, const TrainConfig& config,
                            const StepHook& hook) {
  Session s = start_session(model, tasks, config);
  TrainResult r;
  r.checkpoint = model;
  r.best_dev = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> sizes;
  for (const auto& t : tasks) sizes.push_back(t.train.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const EpochSchedule schedule = build_epoch_schedule(sizes, config.batch_size, epoch_seed(config.seed, epoch));
    std::vector<double> loss_sum(tasks.size());
    std::vector<std::size_t> loss_count(tasks.size());
    for (const ScheduledBatch& b : schedule.batches) {
      const std::vector<EncodedInput> inputs = gather(tasks[b.task].train, b.examples);
      loss_sum[b.task] += train_step(s, tasks[b.task].spec, inputs, config);
      ++loss_count[b.task];
      if (hook) hook(s.step, b.task, s.model.params);
    }
    close_epoch(s, tasks, epoch, loss_sum, loss_count, r);
  }
  r.steps = s.step;
  return r;
}

void require_head(const ModelCheckpoint& model, const TaskSpec& task) {
  if (!model.params.count(head_prefix(task.name) + "weight"))
    throw ConfigError("model has no head for task '" + task.name + "'");
}

// Selected MLM positions of one sequence: replaces token ids in place and
// returns (position, original id) pairs.
std::vector<std::pair<std::size_t, int>> mask_sequence(EncodedInput& in, const Vocab& vocab, double mask_prob,
                                                       const std::vector<int>& ordinary_ids, Rng& rng) {
  std::vector<std::pair<std::size_t, int>> picked;
  const std::size_t real = in.real_length();
  if (real <= 2) return picked;
  std::vector<std::size_t> chosen;
  for (std::size_t j = 1; j + 1 < real; ++j)
    if (rng.uniform() < mask_prob) chosen.push_back(j);
  if (chosen.empty()) chosen.push_back(1 + rng.below(real - 2));
  for (std::size_t j : chosen) {
    picked.emplace_back(j, in.token_ids[j]);
    const double u = rng.uniform();
    if (u < 0.8) {
      in.token_ids[j] = vocab.mask_id();
    } else if (u < 0.9) {
      in.token_ids[j] = ordinary_ids[rng.below(ordinary_ids.size())];
    }
  }
  return picked;
}

struct MaskedBatch {
  std::vector<EncodedInput> inputs;
  std::vector<std::vector<std::pair<std::size_t, int>>> picks;
};

MaskedBatch mask_batch(std::vector<EncodedInput> inputs, const Vocab& vocab, double mask_prob,
                       const std::vector<int>& ordinary_ids, Rng& rng) {
  MaskedBatch mb;
  for (auto& in : inputs) mb.picks.push_back(mask_sequence(in, vocab, mask_prob, ordinary_ids, rng));
  mb.inputs = std::move(inputs);
  return mb;
}

// Returns an undefined Var (tape == nullptr) when nothing was selected.
Var mlm_loss(const ParamVars& vars, const EncoderOutput& out, const MaskedBatch& mb, std::size_t* count) {
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t b = 0; b < mb.picks.size(); ++b)
    for (const auto& [pos, id] : mb.picks[b]) {
      rows.push_back(b * out.seq + pos);
      targets.push_back(id);
    }
  if (count) *count = rows.size();
  if (rows.empty()) return Var{};
  Var h = gather_rows(out.hidden, rows);
  Var logits = add_bias(matmul_nt(h, vars.at("shared/emb/token")), vars.at(kMlmBias));
  return cross_entropy(logits, targets);
}

double mlm_eval_loss(const ModelCheckpoint& model, const std::vector<MaskedBatch>& batches) {
  double total = 0.0;
  std::size_t positions = 0;
  for (const MaskedBatch& mb : batches) {
    Tape tape;
    ParamVars vars;
    register_params(tape, model.params, kSharedPrefix, vars);
    register_params(tape, model.params, "mlm/", vars);
    const EncoderOutput out = encode_batch(model.encoder, vars, mb.inputs, Mode::eval, nullptr);
    std::size_t count = 0;
    Var loss = mlm_loss(vars, out, mb, &count);
    if (count == 0) continue;
    total += loss.value().item() * static_cast<double>(count);
    positions += count;
  }
  return positions ? total / static_cast<double>(positions) : 0.0;
}

}  // namespace

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.lr = 1e-5;
  c.epochs = 10;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("learning rate must be finite and >= 0");
  if (batch_size == 0) fail("batch size must be positive");
  if (!(warmup >= 0.0 && warmup < 1.0)) fail("warmup fraction must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight decay must be >= 0");
  if (!(clip_norm > 0.0)) fail("clip norm must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return derive_seed(derive_seed(seed, "schedule"), epoch);
}

EpochSchedule build_epoch_schedule(std::span<const std::size_t> dataset_sizes, std::size_t batch_size,
                                   std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (dataset_sizes.empty()) throw ConfigError("no datasets to schedule");
  EpochSchedule schedule;
  schedule.seed = seed;
  std::vector<std::vector<ScheduledBatch>> per_task(dataset_sizes.size());
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < dataset_sizes.size(); ++t) {
    const std::size_t n = dataset_sizes[t];
    if (n == 0) throw ConfigError("dataset " + std::to_string(t) + " is empty");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, t));
    rng.shuffle(idx);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      per_task[t].push_back(ScheduledBatch{t, std::vector<std::size_t>(idx.begin() + static_cast<long>(start),
                                                                       idx.begin() + static_cast<long>(end))});
      order.push_back(t);
    }
  }
  // Shuffling the sequence of task labels and then drawing each task's
  // batches in order is a uniform shuffle of the pooled batches.
  Rng pool(derive_seed(seed, "pool"));
  pool.shuffle(order);
  std::vector<std::size_t> next(dataset_sizes.size());
  for (std::size_t t : order) schedule.batches.push_back(std::move(per_task[t][next[t]++]));
  return schedule;
}

void write_training_log(std::ostream& out, const std::vector<LogRow>& log) {
  out << "epoch\ttask\tloss\tmetric\n";
  char buf[64];
  for (const LogRow& row : log) {
    out << row.epoch << '\t' << row.task << '\t';
    std::snprintf(buf, sizeof buf, "%.6f", row.loss);
    out << buf << '\t';
    if (std::isnan(row.metric)) {
      out << "NA";
    } else {
      std::snprintf(buf, sizeof buf, "%.6f", row.metric);
      out << buf;
    }
    out << '\n';
  }
}

TrainResult mtl_refine(const ModelCheckpoint& init, const std::vector<TaskData>& tasks, const TrainConfig& config,
                       const StepHook& hook) {
  config.validate();
  check_tasks(tasks);
  ModelCheckpoint model = init;
  load_encoder_params(model.encoder, model.params);
  for (const auto& t : tasks) {
    if (!model.params.count(head_prefix(t.spec.name) + "weight"))
      model.params.merge(new_head(t.spec, model.encoder.hidden, config.seed, model.encoder.init_stddev));
    install_task(model, t.spec);
  }
  model.seeds["refine"] = config.seed;
  return pooled_training(model, tasks, config, hook);
}

TrainResult train_single_task(const ModelCheckpoint& init, const TaskData& task, const TrainConfig& config,
                              const StepHook& hook) {
  config.validate();
  const std::vector<TaskData> tasks{task};
  check_tasks(tasks);
  ModelCheckpoint model = init;
  load_encoder_params(model.encoder, model.params);
  if (!model.params.count(head_prefix(task.spec.name) + "weight"))
    model.params.merge(new_head(task.spec, model.encoder.hidden, config.seed, model.encoder.init_stddev));
  install_task(model, task.spec);
  model.seeds["refine"] = config.seed;

  Session s = start_session(model, tasks, config);
  TrainResult r;
  r.checkpoint = model;
  r.best_dev = std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = task.train.size();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(epoch_seed(config.seed, epoch), std::uint64_t{0}));
    rng.shuffle(order);
    std::vector<double> loss_sum(1);
    std::vector<std::size_t> loss_count(1);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(std::min(n, start + config.batch_size)));
      loss_sum[0] += train_step(s, task.spec, gather(task.train, idx), config);
      ++loss_count[0];
      if (hook) hook(s.step, 0, s.model.params);
    }
    close_epoch(s, tasks, epoch, loss_sum, loss_count, r);
  }
  r.steps = s.step;
  return r;
}

ModelCheckpoint with_fresh_head(ModelCheckpoint checkpoint, const TaskSpec& task, std::uint64_t seed) {
  const std::string prefix = head_prefix(task.name);
  std::erase_if(checkpoint.params, [&](const auto& kv) { return kv.first.starts_with(prefix); });
  checkpoint.params.merge(new_head(task, checkpoint.encoder.hidden, seed, checkpoint.encoder.init_stddev));
  install_task(checkpoint, task);
  return checkpoint;
}

TrainResult fine_tune(const ModelCheckpoint& init, const TaskData& task, const TrainConfig& config,
                      const StepHook& hook) {
  config.validate();
  const std::vector<TaskData> tasks{task};
  check_tasks(tasks);
  load_encoder_params(init.encoder, init.params);
  ModelCheckpoint model = with_fresh_head(init, task.spec, derive_seed(config.seed, "fine-tune"));
  model.seeds["finetune/" + task.spec.name] = config.seed;
  return pooled_training(model, tasks, config, hook);
}

MetricResult evaluate_task(const ModelCheckpoint& model, const TaskSpec& task, std::span<const EncodedInput> inputs) {
  require_head(model, task);
  if (inputs.empty()) throw MetricError("no examples to evaluate for task '" + task.name + "'");
  std::vector<double> scores, gold_scores;
  std::vector<int> classes, gold_classes;
  std::vector<std::vector<std::string>> pred_tags, gold_tags;
  std::vector<int> pred_words, gold_words;
  for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
    const auto batch = inputs.subspan(start, std::min(kEvalBatch, inputs.size() - start));
    Tape tape;
    ParamVars vars;
    register_params(tape, model.params, kSharedPrefix, vars);
    register_params(tape, model.params, head_prefix(task.name), vars);
    const EncoderOutput out = encode_batch(model.encoder, vars, batch, Mode::eval, nullptr);
    const TaskPredictions p = predict(task, vars, out, batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const EncodedInput& in = batch[b];
      switch (task.kind) {
        case TaskKind::similarity:
          scores.push_back(p.scores[b]);
          gold_scores.push_back(std::get<double>(in.label));
          break;
        case TaskKind::classification:
        case TaskKind::inference:
          classes.push_back(p.classes[b]);
          gold_classes.push_back(std::get<int>(in.label));
          break;
        case TaskKind::tagging: {
          std::vector<std::string> pt, gt;
          for (std::size_t w = 0; w < in.word_tags.size(); ++w) {
            pt.push_back(task.labels[static_cast<std::size_t>(p.word_tags[b][w])]);
            gt.push_back(task.labels[static_cast<std::size_t>(in.word_tags[w])]);
            pred_words.push_back(p.word_tags[b][w]);
            gold_words.push_back(in.word_tags[w]);
          }
          pred_tags.push_back(std::move(pt));
          gold_tags.push_back(std::move(gt));
          break;
        }
      }
    }
  }
  switch (task.kind) {
    case TaskKind::similarity:
      if (std::all_of(scores.begin(), scores.end(), [&](double v) { return v == scores.front(); }))
        return MetricResult{MetricId::pearson, 0.0, scores.size(), 0.0, 0.0};
      return pearson(scores, gold_scores);
    case TaskKind::classification:
    case TaskKind::inference: {
      if (task.metric == MetricId::accuracy) return accuracy(classes, gold_classes);
      std::set<int> positives;
      for (std::size_t c = 0; c < task.labels.size(); ++c)
        if (task.labels[c] != task.negative_label) positives.insert(static_cast<int>(c));
      return micro_f1(classes, gold_classes, positives);
    }
    case TaskKind::tagging:
      if (task.metric == MetricId::accuracy) return accuracy(pred_words, gold_words);
      return entity_f1(pred_tags, gold_tags);
  }
  throw ContractViolation("evaluate_task: unknown task kind");
}

double evaluate_loss(const ModelCheckpoint& model, const TaskSpec& task, std::span<const EncodedInput> inputs) {
  require_head(model, task);
  double total = 0.0;
  for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
    const auto batch = inputs.subspan(start, std::min(kEvalBatch, inputs.size() - start));
    Tape tape;
    ParamVars vars;
    register_params(tape, model.params, kSharedPrefix, vars);
    register_params(tape, model.params, head_prefix(task.name), vars);
    const EncoderOutput out = encode_batch(model.encoder, vars, batch, Mode::eval, nullptr);
    total += task_loss(task, vars, out, batch, Mode::eval, 0.0, nullptr).value().item() *
             static_cast<double>(batch.size());
  }
  return inputs.empty() ? 0.0 : total / static_cast<double>(inputs.size());
}

MlmResult mlm_pretrain(const EncoderConfig& encoder, const Vocab& vocab, const std::vector<std::string>& corpus,
                       const TrainConfig& config, double mask_prob, std::size_t max_len) {
  config.validate();
  encoder.validate();
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw ConfigError("mask probability must be in (0, 1)");
  if (corpus.empty()) throw ConfigError("pretraining corpus is empty");
  if (encoder.vocab_size != vocab.size())
    throw ConfigError("encoder vocab_size " + std::to_string(encoder.vocab_size) + " does not match vocab of " +
                      std::to_string(vocab.size()));
  max_len = std::min(max_len, encoder.max_positions);

  std::vector<EncodedInput> inputs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EncodedInput in = encode_single(wordpiece_tokenize(corpus[i], vocab), vocab, max_len);
    in.example_id = "line " + std::to_string(i + 1);
    inputs.push_back(std::move(in));
  }
  std::vector<int> ordinary;
  for (int id = 0; id < static_cast<int>(vocab.size()); ++id)
    if (!vocab.is_special(id)) ordinary.push_back(id);
  if (ordinary.empty()) throw ConfigError("vocab has no ordinary tokens");

  MlmResult result;
  ModelCheckpoint model;
  model.encoder = encoder;
  model.params = init_encoder_params(encoder, config.seed);
  model.params.emplace(kMlmBias, Tensor(Shape{vocab.size()}));
  model.seeds["pretrain"] = config.seed;

  std::vector<MaskedBatch> eval_batches;
  {
    Rng rng(derive_seed(config.seed, "mlm-eval-mask"));
    for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
      std::vector<EncodedInput> chunk(inputs.begin() + static_cast<long>(start),
                                      inputs.begin() + static_cast<long>(std::min(inputs.size(), start + kEvalBatch)));
      eval_batches.push_back(mask_batch(std::move(chunk), vocab, mask_prob, ordinary, rng));
    }
  }
  result.initial_loss = mlm_eval_loss(model, eval_batches);

  Session s{std::move(model), Adamax{}, 0, batches_for(inputs.size(), config.batch_size) * config.epochs};
  const std::size_t sizes[] = {inputs.size()};
  EncoderConfig train_encoder = encoder;
  train_encoder.dropout = config.dropout;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const EpochSchedule schedule = build_epoch_schedule(sizes, config.batch_size, epoch_seed(config.seed, epoch));
    Rng mask_rng(derive_seed(derive_seed(config.seed, "mlm-mask"), epoch));
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const ScheduledBatch& b : schedule.batches) {
      const MaskedBatch mb = mask_batch(gather(inputs, b.examples), vocab, mask_prob, ordinary, mask_rng);
      ++s.step;
      try {
        Tape tape;
        ParamVars vars;
        register_params(tape, s.model.params, kSharedPrefix, vars);
        register_params(tape, s.model.params, "mlm/", vars);
        Rng drop = step_dropout_rng(config, s.step);
        const EncoderOutput out = encode_batch(train_encoder, vars, mb.inputs, Mode::train, &drop);
        std::size_t count = 0;
        Var loss = mlm_loss(vars, out, mb, &count);
        if (count == 0) continue;
        loss_sum += loss.value().item();
        ++loss_count;
        GradientMap grads = backward(tape, loss);
        apply_update(s, grads, config);
      } catch (const NumericError& e) {
        throw TrainingDiverged("pretraining diverged at step " + std::to_string(s.step) + ": " + e.what(), s.model);
      }
    }
    result.epoch_losses.push_back(loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0);
  }
  result.final_loss = mlm_eval_loss(s.model, eval_batches);
  result.checkpoint = std::move(s.model);
  return result;
}

}  // namespace mtl
