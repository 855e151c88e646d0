#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mtl/heads.hpp"
#include "mtl/tokenizer.hpp"

namespace mtl {

/// One labelled example as read from disk.
struct Example {
  std::string id;
  std::string text_a;
  std::string text_b;  // pair tasks only
  double score = 0.0;  // similarity
  std::string label;   // classification / inference
  std::vector<std::string> words;  // tagging
  std::vector<std::string> tags;   // tagging, one per word

  friend bool operator==(const Example&, const Example&) = default;
};

/// Reads a task file. Formats (UTF-8, LF, tab separated, no header):
///   similarity      id  text_a  text_b  score
///   classification  id  text  label
///   inference       id  text_a  text_b  label
///   tagging         CoNLL: token TAB tag per line, blank line between sentences,
///                   optionally preceded by a "# id: <id>" line
/// Throws ParseError naming the file and line on ragged rows, non-numeric
/// scores or tags outside the BIO scheme; ConfigError when the file is missing.
std::vector<Example> load_dataset(const std::filesystem::path& path, TaskKind kind);

/// Writes examples in the format load_dataset reads. Scores are written
/// with 17 significant digits so they round-trip exactly.
void save_dataset(const std::filesystem::path& path, TaskKind kind, const std::vector<Example>& examples);

bool is_bio_tag(const std::string& tag);

/// Tag set seen in tagging examples: "O" first, then sorted.
std::vector<std::string> collect_tag_set(const std::vector<Example>& examples);
/// Class names in order of first appearance.
std::vector<std::string> collect_label_set(const std::vector<Example>& examples);

/// Tokenizes and packs examples for `task`. Tagging sentences longer than
/// `split_words` words are first cut into sub-sentences (ids get a "#k"
/// suffix for k > 0). Labels outside the task's label set raise DataError
/// with the example id.
std::vector<EncodedInput> encode_examples(const TaskSpec& task, const std::vector<Example>& examples,
                                          const Vocab& vocab, std::size_t split_words = 30);

}  // namespace mtl
