#include <gtest/gtest.h>

#include <filesystem>

#include "mtl/errors.hpp"
#include "mtl/random.hpp"
#include "mtl/tokenizer.hpp"

using namespace mtl;

namespace {

Vocab small_vocab() {
  return Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "play", "##ing", "##s", "run", "@gene$", ",",
                "."});
}

std::vector<std::string> make_tokens(std::size_t n, const std::string& stem) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

// Closed form of the pair-truncation loop: with budget B, the shorter side
// survives intact when it fits beside its partner, otherwise A keeps
// ceil(B/2) and B keeps floor(B/2).
std::pair<std::size_t, std::size_t> pair_truncation_oracle(std::size_t a, std::size_t b, std::size_t max_len) {
  const std::size_t budget = max_len - 3;
  if (a + b <= budget) return {a, b};
  const std::size_t hi = (budget + 1) / 2, lo = budget / 2;
  if (a <= b) return a <= hi ? std::pair{a, budget - a} : std::pair{hi, lo};
  return b <= lo ? std::pair{budget - b, b} : std::pair{hi, lo};
}

}  // namespace

TEST(Wordpiece, Examples) {
  const Vocab vocab = small_vocab();
  EXPECT_EQ(wordpiece_tokenize("playing", vocab), (std::vector<std::string>{"play", "##ing"}));
  EXPECT_EQ(wordpiece_tokenize("qzx", vocab), (std::vector<std::string>{"[UNK]"}));
  EXPECT_EQ(wordpiece_tokenize("the playing", vocab), (std::vector<std::string>{"the", "play", "##ing"}));
}

TEST(Wordpiece, LowercasesAndSplitsPunctuation) {
  const Vocab vocab = small_vocab();
  EXPECT_EQ(wordpiece_tokenize("The PLAYS, run.", vocab),
            (std::vector<std::string>{"the", "play", "##s", ",", "run", "."}));
}

TEST(Wordpiece, PlaceholdersStayAtomic) {
  const Vocab vocab = small_vocab();
  EXPECT_EQ(wordpiece_tokenize("@GENE$ playing", vocab), (std::vector<std::string>{"@gene$", "play", "##ing"}));
}

TEST(Wordpiece, EmptyVocabIsConfigError) {
  EXPECT_THROW(wordpiece_tokenize("x", Vocab()), ConfigError);
}

TEST(Vocab, SpecialsRequiredAndDistinct) {
  EXPECT_THROW(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]"}), ConfigError);
  EXPECT_THROW(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "a"}), ConfigError);
  const Vocab v = small_vocab();
  EXPECT_EQ(v.pad_id(), 0);
  EXPECT_EQ(v.mask_id(), 4);
}

TEST(Vocab, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "mtl_vocab_test.txt";
  const Vocab v = small_vocab();
  v.save(path);
  const Vocab loaded = Vocab::load(path);
  EXPECT_EQ(loaded.tokens(), v.tokens());
  EXPECT_EQ(*loaded.find("##ing"), 7);
  std::filesystem::remove(path);
}

TEST(EncodeSingle, Examples) {
  const Vocab vocab = small_vocab();
  EncodedInput five = encode_single(make_tokens(5, "t"), vocab, 16);
  EXPECT_EQ(five.length(), 16u);
  EXPECT_EQ(five.real_length(), 7u);
  EXPECT_EQ(five.token_ids[0], vocab.cls_id());
  EXPECT_EQ(five.token_ids[6], vocab.sep_id());
  EXPECT_EQ(five.token_ids[7], vocab.pad_id());

  EncodedInput long_input = encode_single(make_tokens(200, "t"), vocab, 128);
  EXPECT_EQ(long_input.real_length(), 128u);
  EXPECT_EQ(decode_real_tokens(long_input, vocab).size(), 126u);

  EncodedInput empty = encode_single({}, vocab, 8);
  EXPECT_EQ(empty.real_length(), 2u);
  EXPECT_EQ(empty.token_ids[0], vocab.cls_id());
  EXPECT_EQ(empty.token_ids[1], vocab.sep_id());
  EXPECT_EQ(empty.length(), 8u);

  EXPECT_THROW(encode_single({}, vocab, 2), ConfigError);
}

TEST(EncodePair, TracedTruncation) {
  EXPECT_EQ(truncated_pair_lengths(6, 5, 10), (std::pair<std::size_t, std::size_t>{4, 3}));
  EXPECT_EQ(truncated_pair_lengths(2, 2, 10), (std::pair<std::size_t, std::size_t>{2, 2}));
  EXPECT_EQ(truncated_pair_lengths(0, 20, 10), (std::pair<std::size_t, std::size_t>{0, 7}));
  EXPECT_THROW(truncated_pair_lengths(1, 1, 4), ConfigError);
}

TEST(EncodePair, SegmentsAndLayout) {
  const Vocab vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b"});
  EncodedInput in = encode_pair(std::vector<std::string>{"a", "a"}, std::vector<std::string>{"b"}, vocab, 8);
  EXPECT_EQ(in.token_ids, (std::vector<int>{2, 5, 5, 3, 6, 3, 0, 0}));
  EXPECT_EQ(in.segment_ids, (std::vector<int>{0, 0, 0, 0, 1, 1, 0, 0}));
  EXPECT_EQ(in.attention_mask, (std::vector<int>{1, 1, 1, 1, 1, 1, 0, 0}));
}

TEST(EncodePair, RandomizedPostConditions) {
  const Vocab vocab = small_vocab();
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t max_len = 5 + rng.below(40);
    const std::size_t a = rng.below(50), b = rng.below(50);
    const auto tokens_a = make_tokens(a, "a"), tokens_b = make_tokens(b, "b");
    const auto expected = pair_truncation_oracle(a, b, max_len);
    ASSERT_EQ(truncated_pair_lengths(a, b, max_len), expected) << a << "," << b << " max " << max_len;

    EncodedInput in = encode_pair(tokens_a, tokens_b, vocab, max_len);
    ASSERT_EQ(in.length(), max_len);
    ASSERT_EQ(in.real_length(), std::min(a + b + 3, max_len));
    if (a + b <= max_len - 3) ASSERT_EQ(expected, (std::pair{a, b}));
    // Layout: [CLS] A' [SEP] B' [SEP]
    const std::size_t ka = expected.first, kb = expected.second;
    ASSERT_EQ(in.token_ids[0], vocab.cls_id());
    ASSERT_EQ(in.token_ids[ka + 1], vocab.sep_id());
    ASSERT_EQ(in.token_ids[ka + kb + 2], vocab.sep_id());
    for (std::size_t i = 0; i < ka + 2; ++i) ASSERT_EQ(in.segment_ids[i], 0);
    for (std::size_t i = ka + 2; i < ka + kb + 3; ++i) ASSERT_EQ(in.segment_ids[i], 1);
  }
}

TEST(EncodeSingle, RoundTripOfRealPositions) {
  Rng rng(21);
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (int i = 0; i < 30; ++i) tokens.push_back("w" + std::to_string(i));
  const Vocab vocab(tokens);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t max_len = 3 + rng.below(20);
    std::vector<std::string> input(rng.below(30));
    for (auto& t : input) t = "w" + std::to_string(rng.below(30));
    const EncodedInput enc = encode_single(input, vocab, max_len);
    const std::vector<std::string> expected(input.begin(),
                                            input.begin() + static_cast<long>(std::min(input.size(), max_len - 2)));
    ASSERT_EQ(decode_real_tokens(enc, vocab), expected);
  }
}

TEST(SplitLongSentence, Examples) {
  auto sizes = [](std::size_t n, std::size_t limit) {
    std::vector<int> words(n);
    for (std::size_t i = 0; i < n; ++i) words[i] = static_cast<int>(i);
    std::vector<std::size_t> out;
    std::vector<int> joined;
    for (const auto& chunk : split_long_sentence<int>(words, limit)) {
      out.push_back(chunk.size());
      joined.insert(joined.end(), chunk.begin(), chunk.end());
    }
    EXPECT_EQ(joined, words);
    return out;
  };
  EXPECT_EQ(sizes(65, 30), (std::vector<std::size_t>{30, 30, 5}));
  EXPECT_EQ(sizes(30, 30), (std::vector<std::size_t>{30}));
  EXPECT_EQ(sizes(31, 30), (std::vector<std::size_t>{30, 1}));
}

TEST(EncodeTagged, FirstPieceCarriesTheTag) {
  const Vocab vocab = small_vocab();
  const std::vector<std::string> words{"the", "playing", "qzx"};
  const std::vector<int> tags{0, 1, 2};
  EncodedInput in = encode_tagged(words, tags, vocab, 8);
  // [CLS] the play ##ing [UNK] [SEP] pad pad
  const auto& t = std::get<std::vector<int>>(in.label);
  EXPECT_EQ(t, (std::vector<int>{kIgnoreTag, 0, 1, kIgnoreTag, 2, kIgnoreTag, kIgnoreTag, kIgnoreTag}));
  EXPECT_EQ(in.word_positions, (std::vector<int>{1, 2, 4}));
}

TEST(EncodeTagged, AlignmentCountsFirstPiecesOfKeptWords) {
  const Vocab vocab = small_vocab();
  Rng rng(4);
  const std::vector<std::string> lexicon{"the", "playing", "plays", "run", "qzx", "running"};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.below(12);
    std::vector<std::string> words(n);
    std::vector<int> tags(n);
    for (std::size_t i = 0; i < n; ++i) {
      words[i] = lexicon[rng.below(lexicon.size())];
      tags[i] = static_cast<int>(rng.below(3));
    }
    const std::size_t max_len = 3 + rng.below(15);
    EncodedInput in = encode_tagged(words, tags, vocab, max_len);
    const auto& t = std::get<std::vector<int>>(in.label);
    ASSERT_EQ(t.size(), in.length());
    std::size_t tagged = 0, kept_words = 0;
    for (int v : t) tagged += v != kIgnoreTag ? 1 : 0;
    for (std::size_t w = 0; w < n; ++w) {
      if (in.word_positions[w] < 0) continue;
      ++kept_words;
      ASSERT_EQ(t[static_cast<std::size_t>(in.word_positions[w])], tags[w]);
    }
    ASSERT_EQ(tagged, kept_words);
    ASSERT_LE(in.real_length(), max_len);
  }
}
