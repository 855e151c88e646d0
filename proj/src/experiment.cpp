#include "mtl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mtl/encoder.hpp"
#include "mtl/errors.hpp"

namespace mtl {
namespace {

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  if (lines.empty()) throw ConfigError("corpus " + path.string() + " is empty");
  return lines;
}

std::vector<Example> load_split(const std::filesystem::path& path, TaskKind kind) {
  if (path.empty()) return {};
  return load_dataset(path, kind);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_log(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ostringstream out;
  write_training_log(out, log);
  write_text(path, out.str());
}

std::vector<double> test_metrics(const PreparedExperiment& e, const ModelCheckpoint& model) {
  std::vector<double> out;
  for (const LoadedTask& t : e.tasks) out.push_back(evaluate_task(model, t.spec, t.test).value);
  return out;
}

// Pads every cell of a column to the column's widest entry.
std::string align(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        line += row[c] + std::string(width[c] - row[c].size(), ' ');
      } else {
        line += "  " + std::string(width[c] - row[c].size(), ' ') + row[c];
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace

const LoadedTask& PreparedExperiment::task(std::string_view name) const {
  for (const LoadedTask& t : tasks)
    if (t.spec.name == name) return t;
  throw ConfigError("no task named '" + std::string(name) + "'");
}

PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
  PreparedExperiment e;
  e.config = config;
  if (config.vocab.empty()) throw ConfigError("[global] vocab is required");
  e.vocab = Vocab::load(config.vocab);

  EncoderConfig& enc = e.config.encoder;
  if (enc.vocab_size == 0) enc.vocab_size = e.vocab.size();
  if (enc.vocab_size != e.vocab.size())
    throw ConfigError("[encoder] vocab_size " + std::to_string(enc.vocab_size) + " does not match the vocab (" +
                      std::to_string(e.vocab.size()) + " entries)");
  enc.validate();

  for (const TaskSpec& spec : config.tasks) {
    LoadedTask t;
    t.spec = spec;
    if (spec.max_len > enc.max_positions)
      throw ConfigError("task '" + spec.name + "': max_len " + std::to_string(spec.max_len) +
                        " exceeds encoder max_positions " + std::to_string(enc.max_positions));
    auto train = load_split(spec.train_path, spec.kind);
    auto dev = load_split(spec.dev_path, spec.kind);
    auto test = load_split(spec.test_path, spec.kind);
    if (train.empty()) throw DataError("task '" + spec.name + "': training set is empty");
    if (t.spec.labels.empty() && spec.kind != TaskKind::similarity) {
      std::vector<Example> all = train;
      all.insert(all.end(), dev.begin(), dev.end());
      all.insert(all.end(), test.begin(), test.end());
      t.spec.labels = spec.kind == TaskKind::tagging ? collect_tag_set(all) : collect_label_set(all);
    }
    t.spec.validate();
    t.train = encode_examples(t.spec, train, e.vocab, config.split_words);
    t.dev = encode_examples(t.spec, dev, e.vocab, config.split_words);
    t.test = encode_examples(t.spec, test, e.vocab, config.split_words);
    e.tasks.push_back(std::move(t));
  }
  return e;
}

MlmResult pretrain_encoder(const PreparedExperiment& e, std::uint64_t seed) {
  const ExperimentConfig& c = e.config;
  if (c.corpus.empty()) throw ConfigError("[pretrain] corpus is required");
  std::vector<std::string> corpus = read_corpus(c.corpus);
  return mlm_pretrain(c.encoder, e.vocab, corpus, c.pretrain_stage.for_run(seed, "pretrain"), c.mask_prob,
                      std::min(c.pretrain_max_len, c.encoder.max_positions));
}

ModelCheckpoint initial_model(const PreparedExperiment& e, std::uint64_t seed) {
  const ExperimentConfig& c = e.config;
  ModelCheckpoint m;
  m.encoder = c.encoder;
  if (!c.init_checkpoint.empty()) {
    ModelCheckpoint loaded = load_checkpoint(c.init_checkpoint);
    try {
      m.params = load_encoder_params(c.encoder, loaded.params);
    } catch (const CheckpointError& err) {
      throw ConfigError(c.init_checkpoint.string() + " does not fit [encoder]: " + err.what());
    }
    m.seeds = loaded.seeds;
    return m;
  }
  if (c.pretrain) {
    MlmResult r = pretrain_encoder(e, seed);
    m.params = load_encoder_params(c.encoder, r.checkpoint.params);
    m.seeds = r.checkpoint.seeds;
    return m;
  }
  m.params = init_encoder_params(c.encoder, derive_seed(seed, "encoder"));
  m.seeds["encoder"] = derive_seed(seed, "encoder");
  return m;
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

RunReport run_experiment(const PreparedExperiment& e, const std::filesystem::path& artifacts) {
  const ExperimentConfig& c = e.config;
  RunReport report;
  for (const LoadedTask& t : e.tasks) {
    report.tasks.push_back(t.spec.name);
    report.metrics.push_back(t.spec.metric);
  }
  auto wants = [&](Strategy s) { return std::find(c.strategies.begin(), c.strategies.end(), s) != c.strategies.end(); };

  for (std::uint64_t seed : c.seeds) {
    std::filesystem::path dir;
    if (!artifacts.empty()) {
      dir = artifacts / ("seed-" + std::to_string(seed));
      std::filesystem::create_directories(dir);
    }
    const ModelCheckpoint init = initial_model(e, seed);
    SeedReport run{seed, {}};

    if (wants(Strategy::single_task)) {
      StrategyRow row{Strategy::single_task, {}, 0.0};
      for (const LoadedTask& t : e.tasks) {
        TrainResult r = train_single_task(init, t.data(), c.baseline.for_run(seed, "baseline"));
        row.metrics.push_back(evaluate_task(r.checkpoint, t.spec, t.test).value);
        if (!dir.empty()) {
          save_checkpoint(r.checkpoint, dir / ("single-" + t.spec.name + ".ckpt"));
          write_log(dir / ("single-" + t.spec.name + ".log.tsv"), r.log);
        }
      }
      row.avg = mean(row.metrics);
      run.rows.push_back(std::move(row));
    }

    if (wants(Strategy::refine)) {
      std::vector<TaskData> data;
      for (const LoadedTask& t : e.tasks) data.push_back(t.data());
      TrainResult refined = mtl_refine(init, data, c.refine.for_run(seed, "refine"));
      if (!dir.empty()) {
        save_checkpoint(refined.checkpoint, dir / "refine.ckpt");
        write_log(dir / "refine.log.tsv", refined.log);
      }
      StrategyRow row{Strategy::refine, test_metrics(e, refined.checkpoint), 0.0};
      row.avg = mean(row.metrics);
      run.rows.push_back(std::move(row));

      if (wants(Strategy::finetune)) {
        StrategyRow ft{Strategy::finetune, {}, 0.0};
        for (const LoadedTask& t : e.tasks) {
          TrainResult r = fine_tune(refined.checkpoint, t.data(), c.finetune.for_run(seed, "finetune"));
          ft.metrics.push_back(evaluate_task(r.checkpoint, t.spec, t.test).value);
          if (!dir.empty()) {
            save_checkpoint(r.checkpoint, dir / ("finetune-" + t.spec.name + ".ckpt"));
            write_log(dir / ("finetune-" + t.spec.name + ".log.tsv"), r.log);
          }
        }
        ft.avg = mean(ft.metrics);
        run.rows.push_back(std::move(ft));
      }
    }
    report.runs.push_back(std::move(run));
  }

  if (!report.runs.empty()) {
    for (std::size_t r = 0; r < report.runs.front().rows.size(); ++r) {
      StrategyRow row{report.runs.front().rows[r].strategy, {}, 0.0};
      for (std::size_t t = 0; t < report.tasks.size(); ++t) {
        std::vector<double> values;
        for (const SeedReport& run : report.runs) values.push_back(run.rows[r].metrics[t]);
        row.metrics.push_back(median(values));
      }
      row.avg = mean(row.metrics);
      report.median.push_back(std::move(row));
    }
  }
  return report;
}

std::string format_report(const RunReport& report) {
  auto block = [&](const std::string& title, const std::vector<StrategyRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{title}, metric{""};
    for (std::size_t t = 0; t < report.tasks.size(); ++t) {
      head.push_back(report.tasks[t]);
      metric.push_back(std::string(to_string(report.metrics[t])));
    }
    head.push_back("Avg");
    metric.push_back("");
    cells.push_back(head);
    cells.push_back(metric);
    for (const StrategyRow& row : rows) {
      std::vector<std::string> line{std::string(to_string(row.strategy))};
      for (double v : row.metrics) line.push_back(fixed(v));
      line.push_back(fixed(row.avg));
      cells.push_back(line);
    }
    return align(cells);
  };
  std::string out;
  for (const SeedReport& run : report.runs) {
    if (!out.empty()) out += "\n";
    out += block("seed " + std::to_string(run.seed), run.rows);
  }
  if (report.runs.size() > 1) out += "\n" + block("median of " + std::to_string(report.runs.size()), report.median);
  return out;
}

std::string report_tsv(const RunReport& report) {
  std::string out = "seed\tstrategy";
  for (const auto& t : report.tasks) out += "\t" + t;
  out += "\tAvg\n";
  auto emit = [&](const std::string& seed, const StrategyRow& row) {
    out += seed + "\t" + std::string(to_string(row.strategy));
    for (double v : row.metrics) out += "\t" + fixed(v, 6);
    out += "\t" + fixed(row.avg, 6) + "\n";
  };
  for (const SeedReport& run : report.runs)
    for (const StrategyRow& row : run.rows) emit(std::to_string(run.seed), row);
  if (report.runs.size() > 1)
    for (const StrategyRow& row : report.median) emit("median", row);
  return out;
}

std::string_view to_string(Transfer t) {
  switch (t) {
    case Transfer::improves: return "improves";
    case Transfer::decreases: return "decreases";
    case Transfer::no_effect: return "no-effect";
  }
  return "?";
}

Transfer classify_transfer(const std::vector<double>& deltas, double epsilon) {
  if (deltas.empty()) throw ContractViolation("classify_transfer: no deltas");
  const double d = median(deltas);
  if (d > epsilon) return Transfer::improves;
  if (d < -epsilon) return Transfer::decreases;
  return Transfer::no_effect;
}

PairwiseMatrix assemble_pairwise(const std::vector<std::string>& tasks, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<std::vector<double>>& single,
                                 const std::vector<std::vector<std::vector<double>>>& joint, double epsilon) {
  const std::size_t n = tasks.size();
  if (n < 2) throw ConfigError("pairwise analysis needs at least 2 tasks, got " + std::to_string(n));
  if (seeds.empty()) throw ConfigError("pairwise analysis needs at least 1 seed");
  if (single.size() != seeds.size() || joint.size() != seeds.size())
    throw ContractViolation("assemble_pairwise: one metric table per seed expected");

  PairwiseMatrix m{tasks, seeds, epsilon, {}};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      if (s == t) continue;
      PairEdge edge;
      edge.source = tasks[s];
      edge.target = tasks[t];
      std::vector<double> base, with;
      for (std::size_t k = 0; k < seeds.size(); ++k) {
        base.push_back(single[k].at(t));
        with.push_back(joint[k].at(s).at(t));
        edge.deltas.push_back(with.back() - base.back());
      }
      edge.baseline = median(base);
      edge.joint = median(with);
      edge.delta = median(edge.deltas);
      edge.label = classify_transfer(edge.deltas, epsilon);
      m.edges.push_back(std::move(edge));
    }
  }
  return m;
}

PairwiseMatrix pairwise_mtl(const PreparedExperiment& e) {
  const ExperimentConfig& c = e.config;
  const std::size_t n = e.tasks.size();
  if (n < 2) throw ConfigError("pairwise analysis needs at least 2 tasks, got " + std::to_string(n));

  std::vector<std::string> names;
  for (const LoadedTask& t : e.tasks) names.push_back(t.spec.name);
  std::vector<std::vector<double>> single;
  std::vector<std::vector<std::vector<double>>> joint;

  for (std::uint64_t seed : c.seeds) {
    const ModelCheckpoint init = initial_model(e, seed);
    std::vector<double> base;
    for (const LoadedTask& t : e.tasks) {
      TrainResult r = train_single_task(init, t.data(), c.baseline.for_run(seed, "baseline"));
      base.push_back(evaluate_task(r.checkpoint, t.spec, t.test).value);
    }
    std::vector<std::vector<double>> pair(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        TrainResult r = mtl_refine(init, {e.tasks[a].data(), e.tasks[b].data()}, c.refine.for_run(seed, "refine"));
        auto measure = [&](std::size_t target) {
          const LoadedTask& t = e.tasks[target];
          if (!c.pairwise_finetune) return evaluate_task(r.checkpoint, t.spec, t.test).value;
          TrainResult ft = fine_tune(r.checkpoint, t.data(), c.finetune.for_run(seed, "finetune"));
          return evaluate_task(ft.checkpoint, t.spec, t.test).value;
        };
        pair[a][b] = measure(b);
        pair[b][a] = measure(a);
      }
    }
    single.push_back(std::move(base));
    joint.push_back(std::move(pair));
  }
  return assemble_pairwise(names, c.seeds, single, joint, c.epsilon);
}

std::string pairwise_tsv(const PairwiseMatrix& m) {
  std::string out = "source\ttarget\tbaseline\tjoint\tdelta\tlabel";
  for (std::uint64_t s : m.seeds) out += "\tdelta_seed" + std::to_string(s);
  out += "\n";
  for (const PairEdge& e : m.edges) {
    out += e.source + "\t" + e.target + "\t" + fixed(e.baseline, 6) + "\t" + fixed(e.joint, 6) + "\t" +
           fixed(e.delta, 6) + "\t" + std::string(to_string(e.label));
    for (double d : e.deltas) out += "\t" + fixed(d, 6);
    out += "\n";
  }
  return out;
}

std::string format_pairwise(const PairwiseMatrix& m) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head{"source \\ target"};
  for (const auto& t : m.tasks) head.push_back(t);
  cells.push_back(head);
  for (const auto& s : m.tasks) {
    std::vector<std::string> row{s};
    for (const auto& t : m.tasks) {
      if (s == t) {
        row.push_back("-");
        continue;
      }
      for (const PairEdge& e : m.edges) {
        if (e.source != s || e.target != t) continue;
        const char* mark = e.label == Transfer::improves ? " +" : e.label == Transfer::decreases ? " -" : " .";
        row.push_back((e.delta >= 0 ? "+" : "") + fixed(e.delta) + mark);
      }
    }
    cells.push_back(row);
  }
  char eps[64];
  std::snprintf(eps, sizeof eps, "%g", m.epsilon);
  return align(cells) + "+ improves, - decreases, . no effect (|median delta| <= " + eps + ")\n";
}

std::vector<std::pair<std::string, MetricResult>> evaluate_checkpoint(const PreparedExperiment& e,
                                                                       const ModelCheckpoint& model, bool dev_split) {
  try {
    load_encoder_params(e.config.encoder, model.params);
  } catch (const CheckpointError& err) {
    throw ConfigError(std::string("checkpoint does not fit [encoder]: ") + err.what());
  }
  std::vector<std::pair<std::string, MetricResult>> out;
  for (const LoadedTask& t : e.tasks) {
    const TaskSpec* spec = model.find_task(t.spec.name);
    if (!spec) continue;
    if (spec->kind != t.spec.kind || spec->labels != t.spec.labels)
      throw ConfigError("task '" + t.spec.name + "' in the checkpoint differs from the config");
    out.emplace_back(t.spec.name, evaluate_task(model, *spec, dev_split ? t.dev : t.test));
  }
  return out;
}

std::string synthetic_experiment_config(const std::vector<TaskSpec>& specs, const std::vector<std::uint64_t>& seeds) {
  std::ostringstream c;
  c << "[global]\nseeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) c << (i ? ", " : "") << seeds[i];
  c << "\nvocab = vocab.txt\nout_dir = out\n\n"
       "[encoder]\nhidden = 64\nheads = 2\nff = 128\nlayers = 2\nmax_positions = 48\ninit_stddev = 0.1\n\n"
       "; Coupled decay at these learning rates wipes out rarely updated weights\n"
       "; such as position embeddings, so it is off here.\n"
       "[pretrain]\nenabled = false\ncorpus = corpus.txt\nlr = 5e-3\nbatch = 16\nepochs = 20\ndropout = 0\n"
       "weight_decay = 0\nmax_len = 48\n\n"
       "[refine]\nlr = 2e-3\nbatch = 8\nepochs = 8\nweight_decay = 0\n\n"
       "[finetune]\nlr = 1e-3\nbatch = 8\nepochs = 3\nweight_decay = 0\n\n"
       "[baseline]\nlr = 2e-3\nbatch = 8\nepochs = 8\nweight_decay = 0\n\n"
       "[pairwise]\nfinetune = false\nepsilon = 0.005\n";
  for (const TaskSpec& t : specs) {
    c << "\n[task " << t.name << "]\nkind = " << to_string(t.kind) << "\nmetric = " << to_string(t.metric) << "\n";
    if (!t.labels.empty()) {
      c << "labels = ";
      for (std::size_t i = 0; i < t.labels.size(); ++i) c << (i ? ", " : "") << t.labels[i];
      c << "\n";
    }
    if (!t.negative_label.empty()) c << "negative_label = " << t.negative_label << "\n";
    c << "max_len = 48\ntrain = " << t.train_path.filename().string() << "\ndev = " << t.dev_path.filename().string()
      << "\ntest = " << t.test_path.filename().string() << "\n";
  }
  return c.str();
}

}  // namespace mtl
