#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtl/encoder.hpp"
#include "mtl/heads.hpp"
#include "mtl/trainer.hpp"

namespace mtl {

enum class Strategy { single_task, refine, finetune };
std::string_view to_string(Strategy s);

/// One training stage as configured. A stage seed, when given, is used as
/// is; otherwise it is derived from the run seed.
struct StageConfig {
  TrainConfig train;
  std::optional<std::uint64_t> seed;

  TrainConfig for_run(std::uint64_t run_seed, std::string_view stage) const;
};

/// Parsed experiment description. Relative paths are resolved against the
/// directory of the config file.
struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path vocab;
  std::filesystem::path out_dir;
  std::size_t split_words = 30;
  std::vector<Strategy> strategies{Strategy::single_task, Strategy::refine, Strategy::finetune};

  EncoderConfig encoder;  // vocab_size filled from the vocab file when 0
  std::filesystem::path init_checkpoint;

  bool pretrain = false;
  std::filesystem::path corpus;
  StageConfig pretrain_stage;
  double mask_prob = 0.15;
  std::size_t pretrain_max_len = 128;

  StageConfig refine;
  StageConfig finetune;
  StageConfig baseline;

  bool pairwise_finetune = false;
  double epsilon = 0.005;

  std::vector<TaskSpec> tasks;  // config order

  const TaskSpec& task(std::string_view name) const;
};

/// INI-style text: [global], [encoder], [pretrain], [refine], [finetune],
/// [baseline], [pairwise] and one [task <name>] section per task. Unknown
/// sections or keys are ConfigErrors.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mtl
