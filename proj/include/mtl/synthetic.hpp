#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtl/dataset.hpp"

namespace mtl {

/// Knobs of the generated suite. All four tasks draw their words from one
/// latent model: `clusters` topic clusters of pseudo-words plus noise words.
struct SyntheticOptions {
  std::uint64_t seed = 1;
  double difficulty = 0.5;  // 0 clean .. 1 noisy
  std::size_t train = 512, dev = 128, test = 128;
  std::size_t clusters = 4;
  std::size_t words_per_cluster = 12;
  std::size_t noise_words = 24;
};

struct SyntheticTask {
  TaskSpec spec;
  std::vector<Example> train, dev, test;
};

struct SyntheticSuite {
  Vocab vocab;
  /// similarity, classification, inference, tagging (in that order).
  std::vector<SyntheticTask> tasks;
  /// Latent cluster of every base word; noise words map to -1.
  std::map<std::string, int> word_cluster;
};

SyntheticSuite gen_synthetic_suite(const SyntheticOptions& options);

/// Unlabelled topic-coherent sentences over the suite's words, for MLM pretraining.
std::vector<std::string> gen_synthetic_corpus(const SyntheticOptions& options, std::size_t sentences,
                                              std::uint64_t seed);

/// Writes the vocab and every split as vocab.txt and <task>.<split>.{tsv,conll}
/// under `dir`; returns the specs with their paths filled in.
std::vector<TaskSpec> write_synthetic_suite(const SyntheticSuite& suite, const std::filesystem::path& dir);

}  // namespace mtl
