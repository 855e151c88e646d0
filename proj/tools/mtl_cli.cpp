// mtl: pretrain, refine, fine-tune, evaluate and compare multi-task models.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mtl/checkpoint.hpp"
#include "mtl/config.hpp"
#include "mtl/errors.hpp"
#include "mtl/experiment.hpp"
#include "mtl/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mtl;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_log(const fs::path& path, const std::vector<LogRow>& log) {
  std::ostringstream out;
  write_training_log(out, log);
  write_file(path, out.str());
}

PreparedExperiment prepare(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig c = load_config(g.config);
  if (g.seed) c.seeds = {*g.seed};
  if (!g.out_dir.empty()) c.out_dir = g.out_dir;
  PreparedExperiment e = prepare_experiment(c);
  fs::create_directories(e.config.out_dir);
  return e;
}

std::vector<TaskData> all_tasks(const PreparedExperiment& e) {
  std::vector<TaskData> out;
  for (const LoadedTask& t : e.tasks) out.push_back(t.data());
  return out;
}

void cmd_pretrain(const Globals& g) {
  PreparedExperiment e = prepare(g);
  const std::uint64_t seed = e.config.seeds.front();
  MlmResult r = pretrain_encoder(e, seed);
  const fs::path out = e.config.out_dir / "pretrain.ckpt";
  save_checkpoint(r.checkpoint, out);
  std::string log = "epoch\tloss\n";
  for (std::size_t i = 0; i < r.epoch_losses.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\n", i + 1, r.epoch_losses[i]);
    log += buf;
  }
  write_file(e.config.out_dir / "pretrain.log.tsv", log);
  std::printf("masked-LM loss %.4f -> %.4f\nwrote %s\n", r.initial_loss, r.final_loss, out.string().c_str());
}

void cmd_refine(const Globals& g, const std::string& init) {
  PreparedExperiment e = prepare(g);
  if (!init.empty()) {
    e.config.init_checkpoint = init;
    e.config.pretrain = false;
  }
  const std::uint64_t seed = e.config.seeds.front();
  TrainResult r = mtl_refine(initial_model(e, seed), all_tasks(e), e.config.refine.for_run(seed, "refine"));
  const fs::path out = e.config.out_dir / "refine.ckpt";
  save_checkpoint(r.checkpoint, out);
  write_log(e.config.out_dir / "refine.log.tsv", r.log);
  std::printf("best epoch %zu (mean dev %.4f)\nwrote %s\n", r.best_epoch, r.best_dev, out.string().c_str());
}

void cmd_finetune(const Globals& g, std::string checkpoint, const std::vector<std::string>& tasks) {
  PreparedExperiment e = prepare(g);
  if (checkpoint.empty()) checkpoint = (e.config.out_dir / "refine.ckpt").string();
  const ModelCheckpoint refined = load_checkpoint(checkpoint);
  const std::uint64_t seed = e.config.seeds.front();
  std::vector<std::string> names = tasks;
  if (names.empty())
    for (const LoadedTask& t : e.tasks) names.push_back(t.spec.name);
  for (const std::string& name : names) {
    const LoadedTask& t = e.task(name);
    TrainResult r = fine_tune(refined, t.data(), e.config.finetune.for_run(seed, "finetune"));
    const fs::path out = e.config.out_dir / ("finetune-" + name + ".ckpt");
    save_checkpoint(r.checkpoint, out);
    write_log(e.config.out_dir / ("finetune-" + name + ".log.tsv"), r.log);
    std::printf("%s: best epoch %zu (dev %.4f)\nwrote %s\n", name.c_str(), r.best_epoch, r.best_dev,
                out.string().c_str());
  }
}

void cmd_eval(const Globals& g, const std::string& checkpoint, bool dev) {
  PreparedExperiment e = prepare(g);
  if (checkpoint.empty()) {
    RunReport report = run_experiment(e, e.config.out_dir);
    const std::string text = format_report(report);
    write_file(e.config.out_dir / "report.txt", text);
    write_file(e.config.out_dir / "report.tsv", report_tsv(report));
    std::fputs(text.c_str(), stdout);
    return;
  }
  auto results = evaluate_checkpoint(e, load_checkpoint(checkpoint), dev);
  if (results.empty()) throw ConfigError(checkpoint + " has no head for any configured task");
  std::string tsv = "task\tmetric\tvalue\tsupport\n";
  for (const auto& [name, m] : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s\t%s\t%.6f\t%zu\n", name.c_str(), std::string(to_string(m.metric)).c_str(),
                  m.value, m.support);
    tsv += buf;
  }
  std::fputs(tsv.c_str(), stdout);
}

void cmd_pairwise(const Globals& g) {
  PreparedExperiment e = prepare(g);
  PairwiseMatrix m = pairwise_mtl(e);
  const std::string text = format_pairwise(m);
  write_file(e.config.out_dir / "pairwise.tsv", pairwise_tsv(m));
  write_file(e.config.out_dir / "pairwise.txt", text);
  std::fputs(text.c_str(), stdout);
}

void cmd_gen_synthetic(const Globals& g, SyntheticOptions options, std::size_t corpus_size) {
  if (g.seed) options.seed = *g.seed;
  const fs::path dir = g.out_dir.empty() ? fs::path("synthetic") : fs::path(g.out_dir);
  fs::create_directories(dir);
  SyntheticSuite suite = gen_synthetic_suite(options);
  std::vector<TaskSpec> specs = write_synthetic_suite(suite, dir);
  std::string corpus;
  for (const std::string& line : gen_synthetic_corpus(options, corpus_size, derive_seed(options.seed, "corpus")))
    corpus += line + "\n";
  write_file(dir / "corpus.txt", corpus);
  write_file(dir / "experiment.ini", synthetic_experiment_config(specs));
  std::printf("wrote %zu tasks, vocab (%zu entries), corpus and experiment.ini to %s\n", specs.size(),
              suite.vocab.size(), dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task fine-tuning of a shared transformer encoder"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config, "Experiment config file");
  app.add_option("-s,--seed", g.seed, "Run seed (overrides the config's seed list)");
  app.add_option("-o,--out-dir", g.out_dir, "Output directory (overrides the config)");

  auto* pretrain = app.add_subcommand("pretrain", "Masked-LM pretraining of the shared encoder");

  std::string init;
  auto* refine = app.add_subcommand("refine", "Joint refinement on every configured task");
  refine->add_option("--init", init, "Checkpoint whose encoder to start from");

  std::string checkpoint;
  std::vector<std::string> tasks;
  auto* finetune = app.add_subcommand("finetune", "Per-task fine-tuning of a refined model");
  finetune->add_option("--checkpoint", checkpoint, "Refined checkpoint (default <out-dir>/refine.ckpt)");
  finetune->add_option("--task", tasks, "Task to fine-tune (repeatable, default all)");

  bool dev = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, or run all three strategies and report");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  eval->add_flag("--dev", dev, "Use the dev split instead of test");

  auto* pairwise = app.add_subcommand("pairwise", "Pairwise joint-training effects between tasks");

  SyntheticOptions options;
  std::size_t corpus_size = 500;
  auto* gen = app.add_subcommand("gen-synthetic", "Write the synthetic task suite, corpus and a config");
  gen->add_option("--difficulty", options.difficulty, "0 (clean) to 1 (noisy)")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--train", options.train, "Training examples per task");
  gen->add_option("--dev", options.dev, "Dev examples per task");
  gen->add_option("--test", options.test, "Test examples per task");
  gen->add_option("--corpus", corpus_size, "Sentences in the pretraining corpus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pretrain) cmd_pretrain(g);
    if (*refine) cmd_refine(g, init);
    if (*finetune) cmd_finetune(g, checkpoint, tasks);
    if (*eval) cmd_eval(g, checkpoint, dev);
    if (*pairwise) cmd_pairwise(g);
    if (*gen) cmd_gen_synthetic(g, options, corpus_size);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 1;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 1;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
