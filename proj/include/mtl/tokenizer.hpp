#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace mtl {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kContinuationPrefix = "##";

/// Marks a tag position that is excluded from loss and metrics.
inline constexpr int kIgnoreTag = -1;

/// Token <-> id map with dense ids 0..V-1 and the five special tokens.
class Vocab {
 public:
  Vocab() = default;
  /// Ids follow list order. Throws ConfigError on duplicates or missing specials.
  explicit Vocab(std::vector<std::string> tokens);

  /// One token per line, id = line number (0-based).
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Appends `token` if absent and returns its id.
  int add_token(std::string token);

  std::optional<int> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  /// Id of `token`, or the [UNK] id.
  int id_or_unk(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  int mask_id() const { return mask_; }
  bool is_special(int id) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_ = -1, unk_ = -1, cls_ = -1, sep_ = -1, mask_ = -1;
};

/// Lowercases and splits on whitespace and ASCII punctuation. A
/// whitespace-delimited word present in the vocab as a whole is kept
/// atomic (argument placeholders such as "@gene$").
std::vector<std::string> basic_tokenize(std::string_view text, const Vocab& vocab);

/// Greedy longest-match-first segmentation of one word.
std::vector<std::string> wordpiece_word(std::string_view word, const Vocab& vocab);

/// basic_tokenize followed by wordpiece_word on every word.
std::vector<std::string> wordpiece_tokenize(std::string_view text, const Vocab& vocab);

using LabelPayload = std::variant<std::monostate, double, int, std::vector<int>>;

/// Model input for one example after packing, truncation and padding.
struct EncodedInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;
  /// Score (similarity), class id (classification/inference) or per-position
  /// tag ids with kIgnoreTag on [CLS]/[SEP]/pad/continuation pieces.
  LabelPayload label;
  /// Tagging only: position of each word's first piece, -1 when truncated away.
  std::vector<int> word_positions;
  /// Tagging only: gold tag id of every word, including truncated ones.
  std::vector<int> word_tags;
  /// Source example id, for error messages.
  std::string example_id;

  std::size_t length() const { return token_ids.size(); }
  std::size_t real_length() const;
};

/// [CLS] tokens [SEP], truncating tokens from the right, padded to max_len.
EncodedInput encode_single(std::span<const std::string> tokens, const Vocab& vocab, std::size_t max_len);

/// Lengths (|A|, |B|) after removing one trailing token at a time from the
/// currently longer sequence (B on ties) until |A| + |B| <= max_len - 3.
std::pair<std::size_t, std::size_t> truncated_pair_lengths(std::size_t len_a, std::size_t len_b,
                                                           std::size_t max_len);

/// [CLS] A [SEP] B [SEP] with segment 0 over [CLS] A [SEP] and 1 over B [SEP].
EncodedInput encode_pair(std::span<const std::string> tokens_a, std::span<const std::string> tokens_b,
                         const Vocab& vocab, std::size_t max_len);

/// Wordpiece-encodes pre-split words; the first piece of every word carries
/// its tag id, other positions get kIgnoreTag.
EncodedInput encode_tagged(std::span<const std::string> words, std::span<const int> tag_ids, const Vocab& vocab,
                           std::size_t max_len);

/// Tokens at real, non-special positions.
std::vector<std::string> decode_real_tokens(const EncodedInput& input, const Vocab& vocab);

/// Greedy chunks of exactly `limit` items plus a shorter final chunk.
/// An empty input yields no chunks.
template <typename T>
std::vector<std::vector<T>> split_long_sentence(std::span<const T> items, std::size_t limit = 30) {
  std::vector<std::vector<T>> chunks;
  if (limit == 0) limit = 1;
  for (std::size_t start = 0; start < items.size(); start += limit) {
    const std::size_t end = std::min(items.size(), start + limit);
    chunks.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(start),
                        items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return chunks;
}

}  // namespace mtl
