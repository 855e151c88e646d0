#include <gtest/gtest.h>

#include <cmath>

#include "composite.hpp"
#include "mtl/errors.hpp"
#include "mtl/heads.hpp"
#include "mtl/ops.hpp"

using namespace mtl;

namespace {

TaskSpec make_task(TaskKind kind, std::size_t outputs, const std::string& name = "t") {
  TaskSpec t;
  t.name = name;
  t.kind = kind;
  t.metric = default_metric(kind);
  if (kind == TaskKind::tagging) {
    t.labels = {"O"};
    for (std::size_t i = 1; i < outputs; ++i) t.labels.push_back((i % 2 ? "B-T" : "I-T") + std::to_string(i / 2));
    // Keep BIO names valid: B-T0, I-T1 ... are fine as types.
  } else if (kind != TaskKind::similarity) {
    for (std::size_t i = 0; i < outputs; ++i) t.labels.push_back("c" + std::to_string(i));
  }
  return t;
}

struct HeadFixture {
  Tape tape;
  ParamVars vars;
  HeadFixture(const TaskSpec& task, std::size_t hidden, double weight_fill, double bias_fill) {
    ParamStore head = new_head(task, hidden, 1);
    head.at(head_prefix(task.name) + "weight").fill(weight_fill);
    head.at(head_prefix(task.name) + "bias").fill(bias_fill);
    register_params(tape, head, "task/", vars);
  }
};

}  // namespace

TEST(SimilarityHead, ZeroFeaturesGiveTheBias) {
  const TaskSpec task = make_task(TaskKind::similarity, 1);
  HeadFixture f(task, 8, 0.3, 0.5);
  Var score = similarity_forward(f.vars, task.name, f.tape.constant(Tensor(Shape{1, 8})));
  EXPECT_DOUBLE_EQ(score.value().item(), 0.5);
  const std::vector<double> y{1.0};
  EXPECT_DOUBLE_EQ(mse_loss(score, y).value().item(), 0.25);
  const std::vector<double> same{0.5};
  EXPECT_DOUBLE_EQ(mse_loss(score, same).value().item(), 0.0);
}

TEST(SimilarityHead, LossGradientIsMinusTwiceResidual) {
  Rng rng(31);
  for (int i = 0; i < 5; ++i) {
    const double score = 4.0 * rng.uniform() - 2.0, y = 5.0 * rng.uniform();
    const std::vector<double> target{y};
    auto f = [&](double s) {
      Tape t;
      return mse_loss(t.constant(Tensor::matrix(1, 1, {s})), target).value().item();
    };
    const double h = 1e-5;
    const double numeric = (f(score + h) - f(score - h)) / (2 * h);
    Tape t;
    Var s = t.parameter("s", Tensor::matrix(1, 1, {score}));
    const double analytic = backward(t, mse_loss(s, target)).at("s")[0];
    EXPECT_NEAR(analytic, -2.0 * (y - score), 1e-12);
    EXPECT_NEAR(numeric, -2.0 * (y - score), 1e-6);
  }
}

TEST(ClassificationHead, ZeroWeightsAreUniform) {
  const TaskSpec task = make_task(TaskKind::classification, 4);
  HeadFixture f(task, 8, 0.0, 0.0);
  Rng rng(2);
  Var h0 = f.tape.constant(check::random_tensor(rng, {3, 8}));
  Var logits = classify_forward(f.vars, task.name, h0);
  const Tensor probs = softmax_rows(logits.value());
  for (double p : probs.data()) EXPECT_DOUBLE_EQ(p, 0.25);
  const std::vector<int> y{0, 3, 1};
  EXPECT_NEAR(cross_entropy(logits, y).value().item(), std::log(4.0), 1e-12);
}

TEST(ClassificationHead, PeakedLogitsDriveLossToZero) {
  Tape tape;
  const std::vector<int> y{2};
  double previous = INFINITY;
  for (double peak : {1.0, 5.0, 20.0, 50.0}) {
    const double loss = cross_entropy(tape.constant(Tensor::matrix(1, 3, {0, 0, peak})), y).value().item();
    EXPECT_LT(loss, previous);
    EXPECT_GE(loss, 0.0);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-12);
}

TEST(ClassificationHead, LogitGradientIsProbsMinusOneHot) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<int> y{static_cast<int>(rng.below(4))};
    auto result = check::grad_check(
        [&](Tape&, const std::map<std::string, Var>& v) { return cross_entropy(v.at("z"), y); },
        {{"z", check::random_tensor(rng, {1, 4}, 2.0)}});
    EXPECT_LE(result.max_rel_error, 1e-6) << result.worst;
  }
}

TEST(ClassificationHead, LabelOutsideClassSetNamesTheExample) {
  const TaskSpec task = make_task(TaskKind::classification, 3);
  const Vocab vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a"});
  EncoderConfig config;
  config.vocab_size = vocab.size();
  config.hidden = 8;
  config.ff = 8;
  config.max_positions = 8;
  const ParamStore enc = init_encoder_params(config, 1);
  const ParamStore head = new_head(task, 8, 2);
  EncodedInput in = encode_single(std::vector<std::string>{"a"}, vocab, 8);
  in.label = 7;
  in.example_id = "row-42";
  Tape tape;
  ParamVars vars;
  register_params(tape, enc, "", vars);
  register_params(tape, head, "", vars);
  const std::vector<EncodedInput> batch{in};
  EncoderOutput out = encode_batch(config, vars, batch, Mode::eval, nullptr);
  try {
    task_loss(task, vars, out, batch, Mode::eval, 0.1, nullptr);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row-42"), std::string::npos);
  }
}

TEST(TaggingHead, ZeroWeightsGiveLogL) {
  const TaskSpec task = make_task(TaskKind::tagging, 3);
  HeadFixture f(task, 6, 0.0, 0.0);
  Rng rng(5);
  Var h = f.tape.constant(check::random_tensor(rng, {4, 6}));
  Var logits = tag_forward(f.vars, task.name, h);
  const Tensor probs = softmax_rows(logits.value());
  for (double p : probs.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const std::vector<int> tags{0, 1, 2, 1};
  EXPECT_NEAR(cross_entropy(logits, tags).value().item(), std::log(3.0), 1e-12);
}

TEST(TaggingHead, IgnoredPositionsDoNotAffectLoss) {
  Tape tape;
  const std::vector<int> tags{kIgnoreTag, 1, kIgnoreTag, 0};
  Rng rng(6);
  Tensor logits = check::random_tensor(rng, {4, 3});
  const double base = cross_entropy(tape.constant(logits), tags).value().item();
  for (std::size_t c = 0; c < 3; ++c) {
    logits.at(0, c) += 10.0 * rng.uniform();
    logits.at(2, c) -= 7.0 * rng.uniform();
  }
  EXPECT_EQ(cross_entropy(tape.constant(logits), tags).value().item(), base);
  const std::vector<int> gold{kIgnoreTag, 1, kIgnoreTag, 0};
  Tensor peaked(Shape{4, 3});
  peaked.at(1, 1) = 60.0;
  peaked.at(3, 0) = 60.0;
  EXPECT_LT(cross_entropy(tape.constant(peaked), gold).value().item(), 1e-12);
}

TEST(NewHead, DeterministicShapesAndZeroBias) {
  const TaskSpec task = make_task(TaskKind::tagging, 5, "ner");
  const ParamStore a = new_head(task, 128, 3);
  const ParamStore b = new_head(task, 128, 3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.at("task/ner/weight").shape(), (Shape{5, 128}));
  for (double v : a.at("task/ner/bias").data()) EXPECT_EQ(v, 0.0);
  for (double v : a.at("task/ner/weight").data()) EXPECT_LE(std::abs(v), 0.04);
  EXPECT_NE(fingerprint(new_head(task, 128, 4)), fingerprint(a));
}

TEST(TaskSpec, Validation) {
  TaskSpec t = make_task(TaskKind::classification, 1);
  EXPECT_THROW(t.validate(), ConfigError);
  t = make_task(TaskKind::tagging, 3);
  t.labels = {"O", "X-BAD"};
  EXPECT_THROW(t.validate(), ConfigError);
  t = make_task(TaskKind::inference, 3);
  t.negative_label = "missing";
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_THROW(parse_task_kind("regression"), ConfigError);
  EXPECT_EQ(parse_task_kind("inference"), TaskKind::inference);
}

TEST(Heads, ProbabilityRowsSumToOne) {
  Rng rng(40);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t classes = 2 + rng.below(6);
    Tensor logits = check::random_tensor(rng, {1 + rng.below(5), classes}, 30.0);
    const Tensor p = softmax_rows(logits);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < classes; ++c) total += p.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-10);
    }
  }
}

TEST(Heads, InferenceSharesTheClassificationPath) {
  Rng rng(77);
  check::TinyProblem p = check::make_tiny_problem(TaskKind::inference, rng);
  TaskSpec as_classification = p.task;
  as_classification.kind = TaskKind::classification;
  auto loss_for = [&](const TaskSpec& task) {
    Tape tape;
    ParamVars vars;
    for (const auto& [name, t] : p.params) vars.emplace(name, tape.parameter(name, t));
    EncoderOutput enc = encode_batch(p.config, vars, p.batch, Mode::eval, nullptr);
    return std::pair{task_loss(task, vars, enc, p.batch, Mode::eval, 0.1, nullptr).value().item(),
                     predict(task, vars, enc, p.batch).probs};
  };
  const auto [li, pi] = loss_for(p.task);
  const auto [lc, pc] = loss_for(as_classification);
  EXPECT_EQ(li, lc);
  EXPECT_EQ(pi, pc);
}

TEST(Heads, ComposedLossesMatchFiniteDifferences) {
  Rng rng(1234);
  for (TaskKind kind : {TaskKind::similarity, TaskKind::classification, TaskKind::inference, TaskKind::tagging}) {
    for (int trial = 0; trial < 20; ++trial) {
      const check::TinyProblem p = check::make_tiny_problem(kind, rng);
      const auto result = check::check_composed_loss(p);
      EXPECT_LE(result.max_rel_error, 1e-4) << to_string(kind) << ": " << result.worst;
    }
  }
}
