#include "mtl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

constexpr std::string_view kIdLine = "# id: ";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_score(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) parse_fail(path, line, "non-numeric score '" + text + "'");
  return value;
}

std::size_t column_count(TaskKind kind) {
  switch (kind) {
    case TaskKind::similarity:
    case TaskKind::inference: return 4;
    case TaskKind::classification: return 3;
    case TaskKind::tagging: return 2;
  }
  return 0;
}

void check_field(const std::string& field, const std::string& id) {
  if (field.find_first_of("\t\n\r") != std::string::npos)
    throw DataError("example '" + id + "' has a tab or newline inside a field");
}

std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

bool is_bio_tag(const std::string& tag) {
  return tag == "O" || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.size() > 2);
}

std::vector<Example> load_dataset(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t want = column_count(kind);

  if (kind == TaskKind::tagging) {
    Example current;
    auto flush = [&] {
      if (current.words.empty()) return;
      if (current.id.empty()) current.id = "s" + std::to_string(out.size());
      out.push_back(std::move(current));
      current = Example{};
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) {
        flush();
        continue;
      }
      if (line.starts_with(kIdLine) && line.find('\t') == std::string::npos) {
        if (!current.words.empty()) parse_fail(path, line_no, "id line inside a sentence");
        current.id = line.substr(kIdLine.size());
        continue;
      }
      const auto cols = split_tabs(line);
      if (cols.size() != want) parse_fail(path, line_no, "expected token<TAB>tag, got " + std::to_string(cols.size()) + " columns");
      if (cols[0].empty()) parse_fail(path, line_no, "empty token");
      if (!is_bio_tag(cols[1])) parse_fail(path, line_no, "tag '" + cols[1] + "' is not in the BIO scheme");
      current.words.push_back(cols[0]);
      current.tags.push_back(cols[1]);
    }
    flush();
    return out;
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != want)
      parse_fail(path, line_no, "expected " + std::to_string(want) + " columns, got " + std::to_string(cols.size()));
    Example ex;
    ex.id = cols[0];
    ex.text_a = cols[1];
    switch (kind) {
      case TaskKind::similarity:
        ex.text_b = cols[2];
        ex.score = parse_score(cols[3], path, line_no);
        break;
      case TaskKind::inference:
        ex.text_b = cols[2];
        ex.label = cols[3];
        break;
      case TaskKind::classification: ex.label = cols[2]; break;
      case TaskKind::tagging: break;
    }
    if (kind != TaskKind::similarity && ex.label.empty()) parse_fail(path, line_no, "empty label");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, TaskKind kind, const std::vector<Example>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  for (const Example& ex : examples) {
    if (kind == TaskKind::tagging) {
      if (ex.words.size() != ex.tags.size()) throw DataError("example '" + ex.id + "' has mismatched words and tags");
      if (ex.words.empty()) throw DataError("tagging example '" + ex.id + "' has no words");
      check_field(ex.id, ex.id);
      if (!ex.id.empty()) out << kIdLine << ex.id << '\n';
      for (std::size_t i = 0; i < ex.words.size(); ++i) {
        check_field(ex.words[i], ex.id);
        if (ex.words[i].find(' ') != std::string::npos) throw DataError("example '" + ex.id + "' has a word with a space");
        out << ex.words[i] << '\t' << ex.tags[i] << '\n';
      }
      out << '\n';
      continue;
    }
    for (const auto* f : {&ex.id, &ex.text_a, &ex.text_b, &ex.label}) check_field(*f, ex.id);
    out << ex.id << '\t' << ex.text_a;
    switch (kind) {
      case TaskKind::similarity: out << '\t' << ex.text_b << '\t' << format_score(ex.score); break;
      case TaskKind::inference: out << '\t' << ex.text_b << '\t' << ex.label; break;
      case TaskKind::classification: out << '\t' << ex.label; break;
      case TaskKind::tagging: break;
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::string> collect_tag_set(const std::vector<Example>& examples) {
  std::set<std::string> tags;
  for (const Example& ex : examples) tags.insert(ex.tags.begin(), ex.tags.end());
  tags.erase("O");
  std::vector<std::string> out{"O"};
  out.insert(out.end(), tags.begin(), tags.end());
  return out;
}

std::vector<std::string> collect_label_set(const std::vector<Example>& examples) {
  std::vector<std::string> out;
  for (const Example& ex : examples)
    if (std::find(out.begin(), out.end(), ex.label) == out.end()) out.push_back(ex.label);
  return out;
}

std::vector<EncodedInput> encode_examples(const TaskSpec& task, const std::vector<Example>& examples,
                                          const Vocab& vocab, std::size_t split_words) {
  std::vector<EncodedInput> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    switch (task.kind) {
      case TaskKind::similarity: {
        if (!std::isfinite(ex.score)) throw DataError("example '" + ex.id + "' has a non-finite score");
        EncodedInput in = encode_pair(wordpiece_tokenize(ex.text_a, vocab), wordpiece_tokenize(ex.text_b, vocab),
                                      vocab, task.max_len);
        in.label = ex.score;
        in.example_id = ex.id;
        out.push_back(std::move(in));
        break;
      }
      case TaskKind::classification:
      case TaskKind::inference: {
        const int label = task.label_index(ex.label);
        if (label < 0) throw DataError("example '" + ex.id + "' has unknown label '" + ex.label + "'");
        EncodedInput in = task.kind == TaskKind::inference
                              ? encode_pair(wordpiece_tokenize(ex.text_a, vocab), wordpiece_tokenize(ex.text_b, vocab),
                                            vocab, task.max_len)
                              : encode_single(wordpiece_tokenize(ex.text_a, vocab), vocab, task.max_len);
        in.label = label;
        in.example_id = ex.id;
        out.push_back(std::move(in));
        break;
      }
      case TaskKind::tagging: {
        if (ex.words.size() != ex.tags.size()) throw DataError("example '" + ex.id + "' has mismatched words and tags");
        std::vector<int> ids;
        for (const auto& t : ex.tags) {
          const int id = task.label_index(t);
          if (id < 0) throw DataError("example '" + ex.id + "' has unknown tag '" + t + "'");
          ids.push_back(id);
        }
        const auto word_chunks = split_long_sentence<std::string>(ex.words, split_words);
        const auto tag_chunks = split_long_sentence<int>(ids, split_words);
        for (std::size_t k = 0; k < word_chunks.size(); ++k) {
          EncodedInput in = encode_tagged(word_chunks[k], tag_chunks[k], vocab, task.max_len);
          in.example_id = k == 0 ? ex.id : ex.id + "#" + std::to_string(k);
          out.push_back(std::move(in));
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace mtl
