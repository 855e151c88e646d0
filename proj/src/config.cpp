#include "mtl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

namespace pt = boost::property_tree;

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Typed access to one section that remembers which keys were read.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) {
    seen_.insert(key);
    if (!tree_) return std::nullopt;
    auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string text(const std::string& key, std::string fallback) { return raw(key).value_or(std::move(fallback)); }

  double real(const std::string& key, double fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    double out = 0.0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size()) fail(key, "expected a number, got '" + *v + "'");
    return out;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    return parse_count(key, *v);
  }

  bool flag(const std::string& key, bool fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "0") return false;
    fail(key, "expected true or false, got '" + *v + "'");
  }

  std::uint64_t parse_count(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) fail(key, "expected a non-negative integer, got '" + v + "'");
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("[" + name_ + "] " + key + ": " + what);
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, value] : *tree_)
      if (!seen_.count(key)) throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
  }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

StageConfig read_stage(Section& s, TrainConfig defaults) {
  StageConfig stage;
  TrainConfig& t = stage.train;
  t = defaults;
  t.lr = s.real("lr", defaults.lr);
  t.batch_size = s.count("batch", defaults.batch_size);
  t.warmup = s.real("warmup", defaults.warmup);
  t.weight_decay = s.real("weight_decay", defaults.weight_decay);
  t.clip_norm = s.real("clip", defaults.clip_norm);
  t.epochs = s.count("epochs", defaults.epochs);
  t.dropout = s.real("dropout", defaults.dropout);
  if (auto seed = s.raw("seed")) stage.seed = s.parse_count("seed", *seed);
  try {
    t.validate();
  } catch (const ConfigError& e) {
    s.fail("stage", e.what());
  }
  return stage;
}

Strategy parse_strategy(const std::string& text) {
  if (text == "single" || text == "single-task" || text == "baseline") return Strategy::single_task;
  if (text == "refine" || text == "mtl-refine") return Strategy::refine;
  if (text == "finetune" || text == "fine-tune" || text == "mtl-finetune") return Strategy::finetune;
  throw ConfigError("unknown strategy '" + text + "'");
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::single_task: return "single-task";
    case Strategy::refine: return "mtl-refine";
    case Strategy::finetune: return "mtl-finetune";
  }
  return "?";
}

TrainConfig StageConfig::for_run(std::uint64_t run_seed, std::string_view stage) const {
  TrainConfig t = train;
  t.seed = seed ? *seed : derive_seed(run_seed, stage);
  return t;
}

const TaskSpec& ExperimentConfig::task(std::string_view name) const {
  for (const TaskSpec& t : tasks)
    if (t.name == name) return t;
  throw ConfigError("no task named '" + std::string(name) + "' in the config");
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig c;
  std::set<std::string> known{"global", "encoder", "pretrain", "refine", "finetune", "baseline", "pairwise"};
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return Section(name, it == tree.not_found() ? nullptr : &it->second);
  };
  for (const auto& [name, sub] : tree) {
    if (!sub.data().empty()) throw ConfigError("config: key '" + name + "' outside a section");
    if (!known.count(name) && !name.starts_with("task ")) throw ConfigError("config: unknown section [" + name + "]");
  }

  {
    Section g = section("global");
    if (auto seeds = g.raw("seeds")) {
      c.seeds.clear();
      for (const auto& s : split_list(*seeds)) c.seeds.push_back(g.parse_count("seeds", s));
      if (c.seeds.empty()) g.fail("seeds", "empty list");
    } else {
      c.seeds = {g.count("seed", 1)};
    }
    c.vocab = resolve(base_dir, g.text("vocab", ""));
    c.out_dir = resolve(base_dir, g.text("out_dir", "out"));
    c.split_words = g.count("split_words", 30);
    if (auto s = g.raw("strategies")) {
      c.strategies.clear();
      for (const auto& item : split_list(*s)) c.strategies.push_back(parse_strategy(item));
    }
    g.reject_unknown();
  }
  if (std::count(c.strategies.begin(), c.strategies.end(), Strategy::finetune) &&
      !std::count(c.strategies.begin(), c.strategies.end(), Strategy::refine))
    throw ConfigError("[global] strategies: mtl-finetune needs refine");

  {
    Section e = section("encoder");
    EncoderConfig d;
    c.encoder.vocab_size = e.count("vocab_size", 0);
    c.encoder.max_positions = e.count("max_positions", d.max_positions);
    c.encoder.hidden = e.count("hidden", d.hidden);
    c.encoder.layers = e.count("layers", d.layers);
    c.encoder.heads = e.count("heads", d.heads);
    c.encoder.ff = e.count("ff", d.ff);
    c.encoder.dropout = e.real("dropout", d.dropout);
    c.encoder.layer_norm_eps = e.real("layer_norm_eps", d.layer_norm_eps);
    c.encoder.init_stddev = e.real("init_stddev", d.init_stddev);
    c.init_checkpoint = resolve(base_dir, e.text("init_checkpoint", ""));
    e.reject_unknown();
  }
  {
    Section p = section("pretrain");
    c.pretrain = p.flag("enabled", false);
    c.corpus = resolve(base_dir, p.text("corpus", ""));
    TrainConfig d;
    d.epochs = 20;
    c.pretrain_stage = read_stage(p, d);
    c.mask_prob = p.real("mask_prob", 0.15);
    c.pretrain_max_len = p.count("max_len", 128);
    p.reject_unknown();
    if (c.pretrain && c.corpus.empty()) p.fail("corpus", "required when pretraining is enabled");
    if (!(c.mask_prob > 0.0 && c.mask_prob < 1.0)) p.fail("mask_prob", "must be in (0, 1)");
  }
  {
    Section r = section("refine");
    c.refine = read_stage(r, TrainConfig::refine_defaults());
    r.reject_unknown();
  }
  {
    Section f = section("finetune");
    c.finetune = read_stage(f, TrainConfig::finetune_defaults());
    f.reject_unknown();
  }
  {
    // The single-task baseline trains like refinement unless told otherwise.
    Section b = section("baseline");
    c.baseline = read_stage(b, c.refine.train);
    if (!c.baseline.seed && c.refine.seed) c.baseline.seed = c.refine.seed;
    b.reject_unknown();
  }
  {
    Section p = section("pairwise");
    c.pairwise_finetune = p.flag("finetune", false);
    c.epsilon = p.real("epsilon", 0.005);
    if (!(c.epsilon >= 0.0)) p.fail("epsilon", "must be >= 0");
    p.reject_unknown();
  }

  for (const auto& [name, sub] : tree) {
    if (!name.starts_with("task ")) continue;
    Section s(name, &sub);
    TaskSpec t;
    t.name = trim(name.substr(5));
    t.kind = parse_task_kind(s.text("kind", ""));
    t.metric = default_metric(t.kind);
    if (auto m = s.raw("metric")) t.metric = parse_metric(*m);
    if (auto labels = s.raw("labels")) t.labels = split_list(*labels);
    t.negative_label = s.text("negative_label", "");
    t.max_len = s.count("max_len", 128);
    t.train_path = resolve(base_dir, s.text("train", ""));
    t.dev_path = resolve(base_dir, s.text("dev", ""));
    t.test_path = resolve(base_dir, s.text("test", ""));
    s.reject_unknown();
    if (t.train_path.empty()) s.fail("train", "required");
    if (t.test_path.empty()) s.fail("test", "required");
    for (const TaskSpec& other : c.tasks)
      if (other.name == t.name) throw ConfigError("task '" + t.name + "' defined twice");
    c.tasks.push_back(std::move(t));
  }
  if (c.tasks.empty()) throw ConfigError("config defines no [task <name>] section");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace mtl
