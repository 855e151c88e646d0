#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtl/checkpoint.hpp"
#include "mtl/config.hpp"
#include "mtl/dataset.hpp"
#include "mtl/metrics.hpp"
#include "mtl/trainer.hpp"

namespace mtl {

struct LoadedTask {
  TaskSpec spec;  // labels filled in from the data when the config gives none
  std::vector<EncodedInput> train, dev, test;

  TaskData data() const { return {spec, train, dev}; }
};

/// Config with its vocab and data read and tokenized.
struct PreparedExperiment {
  ExperimentConfig config;  // encoder.vocab_size filled in
  Vocab vocab;
  std::vector<LoadedTask> tasks;

  const LoadedTask& task(std::string_view name) const;
};

PreparedExperiment prepare_experiment(const ExperimentConfig& config);

/// Shared encoder every strategy starts from for one run seed: the
/// configured checkpoint, an MLM-pretrained encoder, or a random init.
ModelCheckpoint initial_model(const PreparedExperiment& experiment, std::uint64_t seed);

/// MLM pretraining as configured in [pretrain].
MlmResult pretrain_encoder(const PreparedExperiment& experiment, std::uint64_t seed);

struct StrategyRow {
  Strategy strategy;
  std::vector<double> metrics;  // config task order
  double avg = 0.0;
};

struct SeedReport {
  std::uint64_t seed = 0;
  std::vector<StrategyRow> rows;
};

struct RunReport {
  std::vector<std::string> tasks;
  std::vector<MetricId> metrics;
  std::vector<SeedReport> runs;
  std::vector<StrategyRow> median;  // per-task median over runs
};

double mean(const std::vector<double>& values);
/// Middle value; the mean of the two middle values for even sizes.
double median(std::vector<double> values);

/// Test metrics of every strategy for every seed. When `artifacts` is not
/// empty each seed's checkpoints and training logs go to artifacts/seed-<s>/.
RunReport run_experiment(const PreparedExperiment& experiment, const std::filesystem::path& artifacts = {});

/// Aligned table, one block per seed plus the median block for several seeds.
std::string format_report(const RunReport& report);
/// Columns: seed, strategy, one per task, Avg.
std::string report_tsv(const RunReport& report);

enum class Transfer { improves, decreases, no_effect };
std::string_view to_string(Transfer t);

/// improves when the median delta exceeds epsilon, decreases below
/// -epsilon, no effect otherwise.
Transfer classify_transfer(const std::vector<double>& deltas, double epsilon);

struct PairEdge {
  std::string source;  // the auxiliary task
  std::string target;  // the task being measured
  double baseline = 0.0;  // median single-task metric of target
  double joint = 0.0;     // median metric of target trained with source
  std::vector<double> deltas;  // joint - baseline per seed
  double delta = 0.0;          // median of deltas
  Transfer label = Transfer::no_effect;
};

struct PairwiseMatrix {
  std::vector<std::string> tasks;
  std::vector<std::uint64_t> seeds;
  double epsilon = 0.0;
  std::vector<PairEdge> edges;  // source-major, n(n-1) of them
};

/// Builds the edges from per-seed metrics: single[seed][t] and
/// joint[seed][s][t] (target t trained together with s).
PairwiseMatrix assemble_pairwise(const std::vector<std::string>& tasks, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<std::vector<double>>& single,
                                 const std::vector<std::vector<std::vector<double>>>& joint, double epsilon);

/// Joint refinement on every unordered task pair, per seed; each pair run
/// serves both directions.
PairwiseMatrix pairwise_mtl(const PreparedExperiment& experiment);

std::string pairwise_tsv(const PairwiseMatrix& matrix);
/// Square delta matrix (row source, column target) with edge marks.
std::string format_pairwise(const PairwiseMatrix& matrix);

/// Test (or dev) metric of every config task the checkpoint has a head for.
std::vector<std::pair<std::string, MetricResult>> evaluate_checkpoint(const PreparedExperiment& experiment,
                                                                       const ModelCheckpoint& model,
                                                                       bool dev_split = false);

/// Config for a suite written by write_synthetic_suite (paths relative to
/// the suite directory), sized to train in minutes on one core.
std::string synthetic_experiment_config(const std::vector<TaskSpec>& specs,
                                        const std::vector<std::uint64_t>& seeds = {1, 2, 3, 4, 5});

}  // namespace mtl
