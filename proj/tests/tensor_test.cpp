#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mtl/errors.hpp"
#include "mtl/ops.hpp"

using namespace mtl;
using mtl::check::grad_check;
using mtl::check::random_tensor;
using mtl::check::weighted_sum;

namespace {

constexpr double kFdTolerance = 1e-4;
constexpr int kRandomInstances = 20;

Shape random_matrix_shape(Rng& rng) { return Shape{1 + rng.below(5), 1 + rng.below(5)}; }

}  // namespace

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.parameter("x", Tensor::scalar(3.0));
  GradientMap g = backward(tape, mul(x, x));
  EXPECT_DOUBLE_EQ(g.at("x").item(), 6.0);
}

TEST(Backward, MatmulSumMatchesFiniteDifferences) {
  Rng rng(11);
  auto result = grad_check(
      [](Tape&, const std::map<std::string, Var>& v) { return sum(matmul(v.at("a"), v.at("b"))); },
      {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {4, 2})}});
  EXPECT_LE(result.max_rel_error, kFdTolerance) << result.worst;
}

TEST(Backward, SoftmaxCrossEntropyClosedForm) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t classes = 2 + rng.below(6);
    Tensor z = random_tensor(rng, {1, classes}, 3.0);
    const int target = static_cast<int>(rng.below(classes));
    Tape tape;
    Var zv = tape.parameter("z", z);
    const std::vector<int> targets{target};
    GradientMap g = backward(tape, cross_entropy(zv, targets));

    double mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) {
      const double expected = std::exp(z[c] - mx) / denom - (static_cast<int>(c) == target ? 1.0 : 0.0);
      EXPECT_NEAR(g.at("z")[c], expected, 1e-10);
    }
  }
}

TEST(Backward, UnusedParameterGetsZeroGradient) {
  Tape tape;
  Var x = tape.parameter("x", Tensor::vector({1.0, 2.0}));
  tape.parameter("unused", Tensor::matrix(2, 2, {1, 2, 3, 4}));
  GradientMap g = backward(tape, sum(x));
  EXPECT_EQ(g.at("unused"), Tensor(Shape{2, 2}));
  EXPECT_EQ(g.at("x"), Tensor::vector({1.0, 1.0}));
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape tape;
  Var x = tape.parameter("x", Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(backward(tape, scale(x, 2.0)), ContractViolation);
}

TEST(Backward, TapeIsSingleUse) {
  Tape tape;
  Var x = tape.parameter("x", Tensor::scalar(2.0));
  Var loss = mul(x, x);
  backward(tape, loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(backward(tape, loss), ContractViolation);
  EXPECT_THROW(mul(x, x), ContractViolation);
}

TEST(Backward, OverflowNamesThePrimitive) {
  Tape tape;
  Var x = tape.parameter("x", Tensor::scalar(10.0));
  try {
    scale(x, 1e308);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Backward, NonFiniteGradientNamesThePrimitive) {
  // Forward values stay finite (1e-300 -> 1 -> 1e300) but the gradient of
  // the input is 1e600.
  Tape tape;
  Var a = tape.parameter("a", Tensor::scalar(1e-300));
  Var c = scale(scale(a, 1e300), 1e300);
  try {
    backward(tape, sum(c));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Backward, GradientIsLinearInTheLoss) {
  Rng rng(99);
  for (int trial = 0; trial < kRandomInstances; ++trial) {
    const Shape s = random_matrix_shape(rng);
    const Shape w = Shape{s[1], 1 + rng.below(4)};
    std::map<std::string, Tensor> inputs{{"x", random_tensor(rng, s)}, {"w", random_tensor(rng, w)}};
    const std::uint64_t seed_f = rng.next_u64(), seed_g = rng.next_u64();
    auto f = [seed_f](Tape&, const std::map<std::string, Var>& v) {
      return weighted_sum(gelu(matmul(v.at("x"), v.at("w"))), seed_f);
    };
    auto g = [seed_g](Tape&, const std::map<std::string, Var>& v) {
      return weighted_sum(softmax(matmul(v.at("x"), v.at("w")), 1), seed_g);
    };
    auto fg = [&](Tape& t, const std::map<std::string, Var>& v) { return add(f(t, v), g(t, v)); };
    const GradientMap gf = mtl::check::analytic_grads(f, inputs);
    const GradientMap gg = mtl::check::analytic_grads(g, inputs);
    const GradientMap gfg = mtl::check::analytic_grads(fg, inputs);
    for (const auto& [name, grad] : gfg)
      for (std::size_t i = 0; i < grad.size(); ++i) EXPECT_NEAR(grad[i], gf.at(name)[i] + gg.at(name)[i], 1e-10);
  }
}

TEST(Softmax, Examples) {
  Tape tape;
  Tensor s = softmax(tape.constant(Tensor::vector({0.0, 0.0})), 0).value();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);

  const double a = 0.3, b = -1.2, c = 1000.0;
  Tensor base = softmax(tape.constant(Tensor::vector({a, b})), 0).value();
  Tensor shifted = softmax(tape.constant(Tensor::vector({a + c, b + c})), 0).value();
  EXPECT_NEAR(base[0], shifted[0], 1e-12);
  EXPECT_NEAR(base[1], shifted[1], 1e-12);

  Tensor big = softmax(tape.constant(Tensor::vector({1000.0, 0.0})), 0).value();
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneOnAnyAxis) {
  Rng rng(3);
  Tape tape;
  Tensor x = random_tensor(rng, {3, 4, 5}, 20.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor y = softmax(tape.constant(x), axis).value();
    const std::size_t len = x.dim(axis);
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < 3; ++d) inner *= x.dim(d);
    const std::size_t outer = x.size() / (len * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          const double p = y[o * len * inner + j * inner + in];
          EXPECT_GE(p, 0.0);
          total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
  }
}

TEST(Softmax, EmptyIsRejected) {
  Tape tape;
  EXPECT_THROW(softmax(tape.constant(Tensor(Shape{0})), 0), ContractViolation);
}

TEST(LayerNorm, Examples) {
  Tape tape;
  Var ones = tape.constant(Tensor::vector({1.0, 1.0}));
  Var zeros = tape.constant(Tensor::vector({0.0, 0.0}));

  Tensor flat = layer_norm(tape.constant(Tensor::matrix(1, 2, {4.0, 4.0})), ones, zeros, 1e-12).value();
  EXPECT_DOUBLE_EQ(flat[0], 0.0);
  EXPECT_DOUBLE_EQ(flat[1], 0.0);

  Tensor row = layer_norm(tape.constant(Tensor::matrix(1, 2, {1.0, 3.0})), ones, zeros, 1e-12).value();
  EXPECT_NEAR(row[0], -1.0, 1e-6);
  EXPECT_NEAR(row[1], 1.0, 1e-6);

  Rng rng(8);
  Tensor x = random_tensor(rng, {4, 3}, 5.0);
  Tensor beta = Tensor::vector({0.5, -2.0, 7.0});
  Tensor out = layer_norm(tape.constant(x), tape.constant(Tensor(Shape{3})), tape.constant(beta), 1e-5).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(r, c), beta[c]);
}

// Every differentiable primitive against central finite differences on
// random shapes.
class PrimitiveGradCheck : public ::testing::Test {
 protected:
  void check(const char* label, const mtl::check::LossBuilder& build, std::map<std::string, Tensor> inputs) {
    auto result = grad_check(build, std::move(inputs));
    EXPECT_LE(result.max_rel_error, kFdTolerance) << label << ": " << result.worst;
  }
  Rng rng{2024};
};

TEST_F(PrimitiveGradCheck, Elementwise) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const Shape s = random_matrix_shape(rng);
    const std::uint64_t seed = rng.next_u64();
    std::map<std::string, Tensor> in{{"a", random_tensor(rng, s)}, {"b", random_tensor(rng, s)}};
    check("add", [seed](Tape&, auto& v) { return weighted_sum(add(v.at("a"), v.at("b")), seed); }, in);
    check("sub", [seed](Tape&, auto& v) { return weighted_sum(sub(v.at("a"), v.at("b")), seed); }, in);
    check("mul", [seed](Tape&, auto& v) { return weighted_sum(mul(v.at("a"), v.at("b")), seed); }, in);
    check("scale", [seed](Tape&, auto& v) { return weighted_sum(scale(v.at("a"), -1.7), seed); }, in);
    check("gelu", [seed](Tape&, auto& v) { return weighted_sum(gelu(scale(v.at("a"), 3.0)), seed); }, in);
    check("tanh", [seed](Tape&, auto& v) { return weighted_sum(tanh(v.at("a")), seed); }, in);
    check("sum", [](Tape&, auto& v) { return sum(mul(v.at("a"), v.at("a"))); }, in);
    check("mean", [](Tape&, auto& v) { return mean(mul(v.at("a"), v.at("b"))); }, in);
  }
}

TEST_F(PrimitiveGradCheck, MatmulAndBias) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
    const std::uint64_t seed = rng.next_u64();
    check("matmul", [seed](Tape&, auto& v) { return weighted_sum(matmul(v.at("a"), v.at("b")), seed); },
          {{"a", random_tensor(rng, {m, k})}, {"b", random_tensor(rng, {k, n})}});
    check("matmul_nt", [seed](Tape&, auto& v) { return weighted_sum(matmul_nt(v.at("a"), v.at("b")), seed); },
          {{"a", random_tensor(rng, {m, k})}, {"b", random_tensor(rng, {n, k})}});
    check("add_bias", [seed](Tape&, auto& v) { return weighted_sum(add_bias(v.at("x"), v.at("b")), seed); },
          {{"x", random_tensor(rng, {m, n})}, {"b", random_tensor(rng, {n})}});
  }
}

TEST_F(PrimitiveGradCheck, SoftmaxEveryAxis) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const Shape s{1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)};
    const std::size_t axis = rng.below(3);
    const std::uint64_t seed = rng.next_u64();
    check("softmax", [seed, axis](Tape&, auto& v) { return weighted_sum(softmax(v.at("x"), axis), seed); },
          {{"x", random_tensor(rng, s, 3.0)}});
  }
}

TEST_F(PrimitiveGradCheck, LayerNorm) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const std::size_t rows = 1 + rng.below(4), n = 2 + rng.below(6);
    const std::uint64_t seed = rng.next_u64();
    check("layer_norm",
          [seed](Tape&, auto& v) { return weighted_sum(layer_norm(v.at("x"), v.at("g"), v.at("b"), 1e-5), seed); },
          {{"x", random_tensor(rng, {rows, n}, 2.0)},
           {"g", random_tensor(rng, {n})},
           {"b", random_tensor(rng, {n})}});
  }
}

TEST_F(PrimitiveGradCheck, GatherAndEmbedding) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const std::size_t vocab = 2 + rng.below(6), hidden = 1 + rng.below(4), count = 1 + rng.below(7);
    std::vector<int> ids(count);
    std::vector<std::size_t> rows(count);
    for (std::size_t i = 0; i < count; ++i) {
      ids[i] = static_cast<int>(rng.below(vocab));
      rows[i] = rng.below(vocab);
    }
    const std::uint64_t seed = rng.next_u64();
    check("embedding", [seed, ids](Tape&, auto& v) { return weighted_sum(embedding(v.at("t"), ids), seed); },
          {{"t", random_tensor(rng, {vocab, hidden})}});
    check("gather_rows", [seed, rows](Tape&, auto& v) { return weighted_sum(gather_rows(v.at("t"), rows), seed); },
          {{"t", random_tensor(rng, {vocab, hidden})}});
  }
}

TEST_F(PrimitiveGradCheck, Dropout) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const Shape s = random_matrix_shape(rng);
    const std::uint64_t seed = rng.next_u64(), mask_seed = rng.next_u64();
    // Same mask seed on every evaluation keeps the function deterministic.
    check("dropout",
          [seed, mask_seed](Tape&, auto& v) {
            Rng masks(mask_seed);
            return weighted_sum(dropout(v.at("x"), 0.3, masks), seed);
          },
          {{"x", random_tensor(rng, s)}});
  }
}

TEST_F(PrimitiveGradCheck, SelfAttention) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const std::size_t batch = 1 + rng.below(2), seq = 1 + rng.below(4), heads = 1 + rng.below(2);
    const std::size_t hidden = heads * (1 + rng.below(3));
    std::vector<int> mask(batch * seq);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t real = 1 + rng.below(seq);
      for (std::size_t j = 0; j < seq; ++j) mask[b * seq + j] = j < real ? 1 : 0;
    }
    const std::uint64_t seed = rng.next_u64();
    check("self_attention",
          [=](Tape&, auto& v) {
            return weighted_sum(self_attention(v.at("q"), v.at("k"), v.at("v"), mask, batch, seq, heads), seed);
          },
          {{"q", random_tensor(rng, {batch * seq, hidden}, 2.0)},
           {"k", random_tensor(rng, {batch * seq, hidden}, 2.0)},
           {"v", random_tensor(rng, {batch * seq, hidden})}});
  }
}

TEST_F(PrimitiveGradCheck, Losses) {
  for (int t = 0; t < kRandomInstances; ++t) {
    const std::size_t rows = 1 + rng.below(5), cols = 2 + rng.below(4);
    std::vector<int> targets(rows);
    for (auto& tg : targets) tg = rng.bernoulli(0.2) ? -1 : static_cast<int>(rng.below(cols));
    targets[rng.below(rows)] = static_cast<int>(rng.below(cols));
    std::vector<double> scores(rows);
    for (auto& s : scores) s = 5.0 * rng.uniform();
    check("cross_entropy", [targets](Tape&, auto& v) { return cross_entropy(v.at("z"), targets); },
          {{"z", random_tensor(rng, {rows, cols}, 3.0)}});
    check("mse_loss", [scores](Tape&, auto& v) { return mse_loss(v.at("p"), scores); },
          {{"p", random_tensor(rng, {rows, 1}, 3.0)}});
  }
}

TEST(CrossEntropy, AllIgnoredIsDataError) {
  Tape tape;
  Var z = tape.parameter("z", Tensor(Shape{2, 3}));
  const std::vector<int> targets{-1, -1};
  EXPECT_THROW(cross_entropy(z, targets), DataError);
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ContractViolation);
  EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
}
