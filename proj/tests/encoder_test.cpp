#include <gtest/gtest.h>

#include "mtl/encoder.hpp"
#include "mtl/errors.hpp"
#include "mtl/ops.hpp"

using namespace mtl;

namespace {

Vocab numbered_vocab(std::size_t words) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocab(tokens);
}

EncoderConfig small_config(std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.hidden = 32;
  c.heads = 2;
  c.ff = 64;
  c.layers = 2;
  c.max_positions = 32;
  return c;
}

std::vector<std::string> random_words(Rng& rng, std::size_t n, std::size_t vocab_words) {
  std::vector<std::string> out(n);
  for (auto& w : out) w = "w" + std::to_string(rng.below(vocab_words));
  return out;
}

}  // namespace

TEST(Encoder, OutputShape) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  const ParamStore params = init_encoder_params(config, 1);
  Rng rng(3);
  const EncodedInput in = encode_single(random_words(rng, 9, 20), vocab, 16);
  const Tensor h = encode(config, params, in);
  EXPECT_EQ(h.shape(), (Shape{16, 32}));
}

TEST(Encoder, PaddingInvariance) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  const ParamStore params = init_encoder_params(config, 2);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto words = random_words(rng, 1 + rng.below(12), 20);
    const EncodedInput short_in = encode_single(words, vocab, 16);
    const EncodedInput long_in = encode_single(words, vocab, 24);
    const Tensor a = encode(config, params, short_in);
    const Tensor b = encode(config, params, long_in);
    for (std::size_t pos = 0; pos < short_in.real_length(); ++pos)
      for (std::size_t c = 0; c < config.hidden; ++c) ASSERT_NEAR(a.at(pos, c), b.at(pos, c), 1e-8);
  }
}

TEST(Encoder, EvalIsDeterministic) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  Rng rng(9);
  const EncodedInput in = encode_single(random_words(rng, 7, 20), vocab, 16);
  const Tensor a = encode(config, init_encoder_params(config, 4), in);
  const Tensor b = encode(config, init_encoder_params(config, 4), in);
  EXPECT_EQ(a, b);
}

TEST(Encoder, InitIsDeterministicInSeed) {
  const EncoderConfig config = small_config(30);
  const ParamStore a = init_encoder_params(config, 7);
  const ParamStore b = init_encoder_params(config, 7);
  const ParamStore c = init_encoder_params(config, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(fingerprint(a), fingerprint(c));
  for (const auto& [name, shape] : encoder_param_shapes(config)) EXPECT_EQ(a.at(name).shape(), shape) << name;
  for (double v : a.at("shared/emb/token").data()) ASSERT_LE(std::abs(v), 0.04 + 1e-15);
  for (double v : a.at("shared/layer0/attn/query/bias").data()) ASSERT_EQ(v, 0.0);
  for (double v : a.at("shared/layer1/ff/norm/gamma").data()) ASSERT_EQ(v, 1.0);
}

TEST(Encoder, LoadFromCheckpointStore) {
  const EncoderConfig config = small_config(30);
  const ParamStore params = init_encoder_params(config, 7);
  ParamStore checkpoint = params;
  checkpoint.emplace("task/x/weight", Tensor(Shape{2, 32}));
  EXPECT_EQ(load_encoder_params(config, checkpoint), params);

  checkpoint.erase("shared/emb/token");
  try {
    load_encoder_params(config, checkpoint);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shared/emb/token"), std::string::npos);
  }

  ParamStore wrong = params;
  wrong["shared/layer1/ff/inner/bias"] = Tensor(Shape{3});
  try {
    load_encoder_params(config, wrong);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shared/layer1/ff/inner/bias"), std::string::npos);
  }
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig c = small_config(30);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(30);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, OverLengthInputIsContractViolation) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  const ParamStore params = init_encoder_params(config, 1);
  const EncodedInput in = encode_single({}, vocab, 40);
  EXPECT_THROW(encode(config, params, in), ContractViolation);
}

TEST(Encoder, AttentionRowsSumToOneOverUnmaskedKeys) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  const ParamStore params = init_encoder_params(config, 11);
  Rng rng(12);
  const EncodedInput in = encode_pair(random_words(rng, 5, 20), random_words(rng, 4, 20), vocab, 20);
  const auto weights = encoder_attention_weights(config, params, in);
  ASSERT_EQ(weights.size(), config.layers);
  for (const Tensor& w : weights) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) {
        if (!in.attention_mask[j]) EXPECT_EQ(w.at(r, j), 0.0);
        total += w.at(r, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-10);
    }
  }
}

TEST(Encoder, GradientReachesEveryParameter) {
  const Vocab vocab = numbered_vocab(20);
  EncoderConfig config = small_config(vocab.size());
  config.dropout = 0.0;
  config.max_positions = 16;
  const ParamStore params = init_encoder_params(config, 13);
  Rng rng(14);
  std::vector<EncodedInput> batch;
  // Every vocabulary id and position gets used.
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(encode_pair(random_words(rng, 7, 20), random_words(rng, 6, 20), vocab, 16));
  std::vector<std::string> all;
  for (int i = 0; i < 14; ++i) all.push_back("w" + std::to_string(i));
  batch.push_back(encode_single(all, vocab, 16));
  std::vector<std::string> rest{"w14", "w15", "w16", "w17", "w18", "w19", "qq", "[MASK]"};
  batch.push_back(encode_single(rest, vocab, 16));
  batch.push_back(encode_single(std::vector<std::string>{"[PAD]"}, vocab, 16));

  Tape tape;
  ParamVars vars;
  register_params(tape, params, kSharedPrefix, vars);
  EncoderOutput out = encode_batch(config, vars, batch, Mode::train, nullptr, false);
  Rng wr(15);
  Tensor w(out.hidden.shape());
  for (double& v : w.data()) v = wr.normal();
  GradientMap grads = backward(tape, sum(mul(out.hidden, tape.constant(w))));
  for (const auto& [name, g] : grads) {
    if (name == "shared/emb/token" || name == "shared/emb/position") {
      // Every row was used by construction.
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) row += std::abs(g.at(r, c));
        EXPECT_GT(row, 0.0) << name << " row " << r;
      }
    }
    EXPECT_GT(g.squared_norm(), 0.0) << name;
  }
}

TEST(Encoder, PermutationCovariantInBatch) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  const ParamStore params = init_encoder_params(config, 21);
  Rng rng(22);
  std::vector<EncodedInput> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(encode_single(random_words(rng, 2 + rng.below(10), 20), vocab, 16));
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<EncodedInput> permuted;
  for (std::size_t p : perm) permuted.push_back(batch[p]);

  auto run = [&](const std::vector<EncodedInput>& b) {
    Tape tape;
    ParamVars vars;
    register_params(tape, params, kSharedPrefix, vars);
    return encode_batch(config, vars, b, Mode::eval, nullptr, false).hidden.value();
  };
  const Tensor a = run(batch);
  const Tensor b = run(permuted);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < 16; ++j)
      for (std::size_t c = 0; c < config.hidden; ++c)
        ASSERT_DOUBLE_EQ(b.at(i * 16 + j, c), a.at(perm[i] * 16 + j, c));
}

TEST(Encoder, TrainModeDropoutChangesOutputsAndNeedsRng) {
  const Vocab vocab = numbered_vocab(20);
  const EncoderConfig config = small_config(vocab.size());
  const ParamStore params = init_encoder_params(config, 1);
  Rng rng(2);
  const std::vector<EncodedInput> batch{encode_single(random_words(rng, 6, 20), vocab, 16)};
  Tape tape;
  ParamVars vars;
  register_params(tape, params, kSharedPrefix, vars);
  EXPECT_THROW(encode_batch(config, vars, batch, Mode::train, nullptr), ContractViolation);
  Rng masks(5);
  const Tensor train = encode_batch(config, vars, batch, Mode::train, &masks).hidden.value();
  const Tensor eval = encode_batch(config, vars, batch, Mode::eval, nullptr).hidden.value();
  EXPECT_NE(train, eval);
}
