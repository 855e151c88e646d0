#include "mtl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mtl/errors.hpp"
#include "mtl/random.hpp"

namespace mtl {
namespace {

constexpr const char* kSuffixes[] = {"s", "ed", "er"};

struct Lexicon {
  std::vector<std::vector<std::string>> clusters;
  std::vector<std::string> noise;
};

Lexicon make_lexicon(const SyntheticOptions& o) {
  const std::string consonants = "bdfgklmnprstvz";
  const std::string vowels = "aeiou";
  Rng rng(derive_seed(o.seed, "synthetic-lexicon"));
  std::set<std::string> used;
  auto fresh = [&] {
    while (true) {
      std::string w;
      for (int s = 0; s < 2; ++s) {
        w += consonants[rng.below(consonants.size())];
        w += vowels[rng.below(vowels.size())];
      }
      if (used.insert(w).second) return w;
    }
  };
  Lexicon lex;
  lex.clusters.resize(o.clusters);
  for (auto& c : lex.clusters)
    for (std::size_t i = 0; i < o.words_per_cluster; ++i) c.push_back(fresh());
  for (std::size_t i = 0; i < o.noise_words; ++i) lex.noise.push_back(fresh());
  return lex;
}

class Generator {
 public:
  Generator(const SyntheticOptions& o, const Lexicon& lex, std::uint64_t stream)
      : o_(o), lex_(lex), rng_(stream), purity_(1.0 - 0.5 * o.difficulty), label_noise_(0.1 * o.difficulty) {}

  // Surface form of a word: sometimes with an inflection that splits into two pieces.
  std::string surface(const std::string& base) {
    if (rng_.uniform() < 0.2) return base + kSuffixes[rng_.below(std::size(kSuffixes))];
    return base;
  }
  std::string cluster_word(std::size_t c) { return surface(lex_.clusters[c][rng_.below(lex_.clusters[c].size())]); }
  std::string noise_word() { return surface(lex_.noise[rng_.below(lex_.noise.size())]); }
  std::size_t cluster() { return rng_.below(o_.clusters); }

  // Sentence about `topic`: topic words with probability `purity`, else noise.
  std::vector<std::string> topical(std::size_t topic, std::size_t min_topic, double share = 0.6) {
    const std::size_t len = 6 + rng_.below(7);
    std::vector<std::string> words;
    std::size_t topical_count = 0;
    for (std::size_t i = 0; i < len; ++i) {
      if (rng_.uniform() < purity_ * share) {
        words.push_back(cluster_word(topic));
        ++topical_count;
      } else {
        words.push_back(noise_word());
      }
    }
    for (std::size_t i = 0; topical_count < min_topic; ++i, ++topical_count)
      words[(i * 2) % words.size()] = cluster_word(topic);
    return words;
  }

  bool flip() { return rng_.uniform() < label_noise_; }
  Rng& rng() { return rng_; }

  // First half of the clusters; the pair tasks grade sentences by how much of
  // their topical vocabulary falls there.
  bool low_group(std::size_t c) const { return c < (o_.clusters + 1) / 2; }

  Example similarity(std::size_t i) {
    // Each side mixes two clusters. The score is 5 x the mean share of
    // low-group words over both sides.
    auto side = [&](double& share) {
      const std::size_t c1 = cluster(), c2 = cluster();
      const std::size_t len = 6 + rng_.below(7);
      std::vector<std::string> words;
      double low = 0, topical = 0;
      for (std::size_t k = 0; k < len; ++k) {
        if (rng_.uniform() < purity_ * 0.7) {
          const std::size_t c = rng_.uniform() < 0.65 ? c1 : c2;
          topical += 1;
          low += low_group(c);
          words.push_back(cluster_word(c));
        } else {
          words.push_back(noise_word());
        }
      }
      if (topical == 0) {
        topical = 1;
        low = low_group(c1);
        words.front() = cluster_word(c1);
      }
      share = low / topical;
      return words;
    };
    double sa = 0, sb = 0;
    const auto a = side(sa);
    const auto b = side(sb);
    double score = 2.5 * (sa + sb) + 0.5 * o_.difficulty * rng_.normal();
    score = std::clamp(score, 0.0, 5.0);
    Example ex;
    ex.id = "sts-" + std::to_string(i);
    ex.text_a = join(a);
    ex.text_b = join(b);
    ex.score = score;
    return ex;
  }

  Example classification(std::size_t i) {
    // Classes: "none" plus one relation per cluster (at most 4).
    const std::size_t classes = std::min<std::size_t>(o_.clusters, 4) + 1;
    std::size_t label = rng_.below(classes);
    std::vector<std::string> words;
    if (label == 0) {
      const std::size_t len = 6 + rng_.below(7);
      for (std::size_t k = 0; k < len; ++k) words.push_back(noise_word());
      words[rng_.below(len)] = cluster_word(cluster());
    } else {
      words = topical(label - 1, 3);
    }
    if (flip()) label = rng_.below(classes);
    Example ex;
    ex.id = "rel-" + std::to_string(i);
    ex.text_a = join(words);
    ex.label = label == 0 ? "none" : "rel" + std::to_string(label - 1);
    return ex;
  }

  Example inference(std::size_t i) {
    // Entailment when both sides are about low-group clusters, contradiction
    // when neither is, neutral otherwise.
    static const char* names[] = {"contradiction", "neutral", "entailment"};
    std::size_t label = rng_.below(3);
    auto pick = [&](bool low) {
      for (;;) {
        const std::size_t c = cluster();
        if (low_group(c) == low) return c;
      }
    };
    bool low_a = label == 2, low_b = label == 2;
    if (label == 1) {
      low_a = rng_.uniform() < 0.5;
      low_b = !low_a;
    }
    const std::size_t ca = pick(low_a), cb = pick(low_b);
    if (flip()) label = rng_.below(3);
    Example ex;
    ex.id = "nli-" + std::to_string(i);
    ex.text_a = join(topical(ca, 2));
    ex.text_b = join(topical(cb, 2));
    ex.label = names[label];
    return ex;
  }

  Example tagging(std::size_t i) {
    // Entities are runs of cluster-0 (CHEM) or cluster-1 (DIS) words, separated
    // by at least one outside word; other clusters and noise are outside.
    static const char* types[] = {"CHEM", "DIS"};
    const std::size_t len = 8 + rng_.below(12);
    Example ex;
    ex.id = "ner-" + std::to_string(i);
    while (ex.words.size() < len) {
      if (rng_.uniform() < 0.35 && (ex.tags.empty() || ex.tags.back() == "O")) {
        const std::size_t t = rng_.below(std::min<std::size_t>(2, o_.clusters));
        const std::size_t span = 1 + rng_.below(3);
        for (std::size_t k = 0; k < span; ++k) {
          ex.words.push_back(cluster_word(t));
          std::string tag = (k == 0 ? "B-" : "I-") + std::string(types[t]);
          if (flip()) tag = "O";
          ex.tags.push_back(tag);
        }
      } else {
        const bool other_cluster = o_.clusters > 2 && rng_.uniform() < 0.3;
        ex.words.push_back(other_cluster ? cluster_word(2 + rng_.below(o_.clusters - 2)) : noise_word());
        ex.tags.push_back("O");
      }
    }
    // Keep the gold sequence BIO-valid after label noise.
    for (std::size_t k = 0; k < ex.tags.size(); ++k)
      if (ex.tags[k].starts_with("I-") && (k == 0 || ex.tags[k - 1] == "O")) ex.tags[k][0] = 'B';
    return ex;
  }

 private:
  static std::string join(const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    return s;
  }

  const SyntheticOptions& o_;
  const Lexicon& lex_;
  Rng rng_;
  double purity_, label_noise_;
};

void check_options(const SyntheticOptions& o) {
  if (o.clusters < 2) throw ConfigError("synthetic suite needs at least 2 clusters");
  if (o.words_per_cluster == 0 || o.noise_words == 0) throw ConfigError("synthetic suite needs words");
  if (!(o.difficulty >= 0.0 && o.difficulty <= 1.0)) throw ConfigError("synthetic difficulty must be in [0, 1]");
  if (o.train == 0 || o.dev == 0 || o.test == 0) throw ConfigError("synthetic split sizes must be positive");
}

}  // namespace

SyntheticSuite gen_synthetic_suite(const SyntheticOptions& o) {
  check_options(o);
  const Lexicon lex = make_lexicon(o);
  SyntheticSuite suite;

  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                  std::string(kSepToken), std::string(kMaskToken)};
  for (std::size_t c = 0; c < lex.clusters.size(); ++c)
    for (const auto& w : lex.clusters[c]) {
      tokens.push_back(w);
      suite.word_cluster[w] = static_cast<int>(c);
    }
  for (const auto& w : lex.noise) {
    tokens.push_back(w);
    suite.word_cluster[w] = -1;
  }
  for (const char* s : kSuffixes) tokens.push_back(std::string(kContinuationPrefix) + s);
  suite.vocab = Vocab(tokens);

  const std::size_t relations = std::min<std::size_t>(o.clusters, 4);
  TaskSpec sts{"synth-sts", TaskKind::similarity, {}, MetricId::pearson, "", {}, {}, {}, 128};
  TaskSpec rel{"synth-rel", TaskKind::classification, {"none"}, MetricId::micro_f1, "none", {}, {}, {}, 128};
  for (std::size_t r = 0; r < relations; ++r) rel.labels.push_back("rel" + std::to_string(r));
  TaskSpec nli{"synth-nli", TaskKind::inference, {"entailment", "neutral", "contradiction"}, MetricId::accuracy, "",
               {}, {}, {}, 128};
  TaskSpec ner{"synth-ner", TaskKind::tagging, {"O", "B-CHEM", "I-CHEM", "B-DIS", "I-DIS"}, MetricId::entity_f1, "",
               {}, {}, {}, 128};

  std::size_t index = 0;
  for (TaskSpec spec : {sts, rel, nli, ner}) {
    Generator gen(o, lex, derive_seed(derive_seed(o.seed, "synthetic-task"), index++));
    SyntheticTask task;
    std::size_t counter = 0;
    auto fill = [&](std::vector<Example>& out, std::size_t n, const std::string& split) {
      for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        switch (spec.kind) {
          case TaskKind::similarity: ex = gen.similarity(counter); break;
          case TaskKind::classification: ex = gen.classification(counter); break;
          case TaskKind::inference: ex = gen.inference(counter); break;
          case TaskKind::tagging: ex = gen.tagging(counter); break;
        }
        ex.id = split + "-" + ex.id;
        ++counter;
        out.push_back(std::move(ex));
      }
    };
    fill(task.train, o.train, "train");
    fill(task.dev, o.dev, "dev");
    fill(task.test, o.test, "test");
    task.spec = std::move(spec);
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

std::vector<std::string> gen_synthetic_corpus(const SyntheticOptions& o, std::size_t sentences, std::uint64_t seed) {
  check_options(o);
  const Lexicon lex = make_lexicon(o);
  Generator gen(o, lex, derive_seed(seed, "synthetic-corpus"));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sentences; ++i) {
    std::string s;
    for (const auto& w : gen.topical(gen.cluster(), 2, 1.0)) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TaskSpec> write_synthetic_suite(const SyntheticSuite& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  suite.vocab.save(dir / "vocab.txt");
  std::vector<TaskSpec> specs;
  for (const SyntheticTask& task : suite.tasks) {
    TaskSpec spec = task.spec;
    const std::string ext = spec.kind == TaskKind::tagging ? ".conll" : ".tsv";
    spec.train_path = dir / (spec.name + ".train" + ext);
    spec.dev_path = dir / (spec.name + ".dev" + ext);
    spec.test_path = dir / (spec.name + ".test" + ext);
    save_dataset(spec.train_path, spec.kind, task.train);
    save_dataset(spec.dev_path, spec.kind, task.dev);
    save_dataset(spec.test_path, spec.kind, task.test);
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace mtl
