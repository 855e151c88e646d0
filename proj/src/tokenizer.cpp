#include "mtl/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

void require_vocab(const Vocab& vocab) {
  if (vocab.empty()) throw ConfigError("tokenizer: vocabulary is empty");
}

EncodedInput padded(std::vector<int> ids, std::vector<int> segments, std::size_t max_len, const Vocab& vocab) {
  EncodedInput out;
  out.attention_mask.assign(ids.size(), 1);
  out.token_ids = std::move(ids);
  out.segment_ids = std::move(segments);
  out.token_ids.resize(max_len, vocab.pad_id());
  out.segment_ids.resize(max_len, 0);
  out.attention_mask.resize(max_len, 0);
  return out;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) {
  for (auto& t : tokens) {
    if (index_.count(t)) throw ConfigError("vocab: duplicate token '" + t + "'");
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
  auto special = [this](std::string_view name) {
    auto id = find(name);
    if (!id) throw ConfigError("vocab: missing special token " + std::string(name));
    return *id;
  };
  pad_ = special(kPadToken);
  unk_ = special(kUnkToken);
  cls_ = special(kClsToken);
  sep_ = special(kSepToken);
  mask_ = special(kMaskToken);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("vocab: cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("vocab: cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocab::add_token(std::string token) {
  if (auto id = find(token)) return *id;
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id_or_unk(std::string_view token) const { return find(token).value_or(unk_); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ContractViolation("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_special(int id) const { return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_; }

std::vector<std::string> basic_tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j == i) break;
    const std::string word = lowercase(text.substr(i, j - i));
    i = j;
    if (vocab.contains(word)) {
      out.push_back(word);
      continue;
    }
    std::string current;
    for (char c : word) {
      if (is_punct(c)) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        out.emplace_back(1, c);
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
  }
  return out;
}

std::vector<std::string> wordpiece_word(std::string_view word, const Vocab& vocab) {
  require_vocab(vocab);
  if (word.size() > kMaxCharsPerWord) return {std::string(kUnkToken)};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::string match;
    while (start < end) {
      std::string candidate(word.substr(start, end - start));
      if (start > 0) candidate.insert(0, kContinuationPrefix);
      if (vocab.contains(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) return {std::string(kUnkToken)};
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocab& vocab) {
  require_vocab(vocab);
  std::vector<std::string> out;
  for (const auto& word : basic_tokenize(text, vocab)) {
    for (auto& piece : wordpiece_word(word, vocab)) out.push_back(std::move(piece));
  }
  return out;
}

std::size_t EncodedInput::real_length() const {
  std::size_t n = 0;
  for (int m : attention_mask) n += m != 0 ? 1 : 0;
  return n;
}

EncodedInput encode_single(std::span<const std::string> tokens, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw ConfigError("encode_single: max_len must be >= 3, got " + std::to_string(max_len));
  require_vocab(vocab);
  const std::size_t keep = std::min(tokens.size(), max_len - 2);
  std::vector<int> ids;
  ids.reserve(keep + 2);
  ids.push_back(vocab.cls_id());
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(vocab.id_or_unk(tokens[i]));
  ids.push_back(vocab.sep_id());
  std::vector<int> segments(ids.size(), 0);
  return padded(std::move(ids), std::move(segments), max_len, vocab);
}

std::pair<std::size_t, std::size_t> truncated_pair_lengths(std::size_t len_a, std::size_t len_b,
                                                           std::size_t max_len) {
  if (max_len < 5) throw ConfigError("encode_pair: max_len must be >= 5, got " + std::to_string(max_len));
  const std::size_t budget = max_len - 3;
  while (len_a + len_b > budget) {
    if (len_a > len_b)
      --len_a;
    else
      --len_b;
  }
  return {len_a, len_b};
}

EncodedInput encode_pair(std::span<const std::string> tokens_a, std::span<const std::string> tokens_b,
                         const Vocab& vocab, std::size_t max_len) {
  require_vocab(vocab);
  const auto [keep_a, keep_b] = truncated_pair_lengths(tokens_a.size(), tokens_b.size(), max_len);
  std::vector<int> ids;
  std::vector<int> segments;
  ids.reserve(keep_a + keep_b + 3);
  ids.push_back(vocab.cls_id());
  for (std::size_t i = 0; i < keep_a; ++i) ids.push_back(vocab.id_or_unk(tokens_a[i]));
  ids.push_back(vocab.sep_id());
  segments.assign(ids.size(), 0);
  for (std::size_t i = 0; i < keep_b; ++i) ids.push_back(vocab.id_or_unk(tokens_b[i]));
  ids.push_back(vocab.sep_id());
  segments.resize(ids.size(), 1);
  return padded(std::move(ids), std::move(segments), max_len, vocab);
}

EncodedInput encode_tagged(std::span<const std::string> words, std::span<const int> tag_ids, const Vocab& vocab,
                           std::size_t max_len) {
  if (max_len < 3) throw ConfigError("encode_tagged: max_len must be >= 3, got " + std::to_string(max_len));
  if (words.size() != tag_ids.size())
    throw ContractViolation("encode_tagged: " + std::to_string(words.size()) + " words but " +
                            std::to_string(tag_ids.size()) + " tags");
  require_vocab(vocab);
  const std::size_t budget = max_len - 2;
  std::vector<int> ids{vocab.cls_id()};
  std::vector<int> tags{kIgnoreTag};
  std::vector<int> positions(words.size(), -1);
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::vector<std::string> pieces;
    for (const auto& token : basic_tokenize(words[w], vocab)) {
      for (auto& p : wordpiece_word(token, vocab)) pieces.push_back(std::move(p));
    }
    if (pieces.empty()) pieces.emplace_back(kUnkToken);
    for (std::size_t p = 0; p < pieces.size() && ids.size() - 1 < budget; ++p) {
      if (p == 0) positions[w] = static_cast<int>(ids.size());
      ids.push_back(vocab.id_or_unk(pieces[p]));
      tags.push_back(p == 0 ? tag_ids[w] : kIgnoreTag);
    }
    if (ids.size() - 1 >= budget) break;
  }
  ids.push_back(vocab.sep_id());
  tags.push_back(kIgnoreTag);
  std::vector<int> segments(ids.size(), 0);
  EncodedInput out = padded(std::move(ids), std::move(segments), max_len, vocab);
  tags.resize(max_len, kIgnoreTag);
  out.label = std::move(tags);
  out.word_positions = std::move(positions);
  out.word_tags.assign(tag_ids.begin(), tag_ids.end());
  return out;
}

std::vector<std::string> decode_real_tokens(const EncodedInput& input, const Vocab& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < input.length(); ++i) {
    if (!input.attention_mask[i]) continue;
    const int id = input.token_ids[i];
    if (id == vocab.cls_id() || id == vocab.sep_id() || id == vocab.pad_id()) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace mtl
