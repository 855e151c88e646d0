#include "mtl/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

void same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ContractViolation(std::string(what) + ": " + std::to_string(a) + " predictions but " + std::to_string(b) +
                            " gold labels");
}

MetricResult f1_result(MetricId id, std::size_t tp, std::size_t fp, std::size_t fn, std::size_t support) {
  MetricResult r{id, 0.0, support, 0.0, 0.0};
  r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.value = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

}  // namespace

MetricResult pearson(std::span<const double> preds, std::span<const double> golds) {
  same_length(preds.size(), golds.size(), "pearson");
  const std::size_t n = preds.size();
  if (n < 2) throw MetricError("pearson needs at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += preds[i];
    my += golds[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = preds[i] - mx, dy = golds[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw MetricError("pearson: predictions have zero variance");
  if (syy == 0.0) throw MetricError("pearson: gold scores have zero variance");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return MetricResult{MetricId::pearson, r, n, 0.0, 0.0};
}

MetricResult accuracy(std::span<const int> preds, std::span<const int> golds) {
  same_length(preds.size(), golds.size(), "accuracy");
  if (preds.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  return MetricResult{MetricId::accuracy, static_cast<double>(hits) / static_cast<double>(preds.size()), preds.size(),
                      0.0, 0.0};
}

MetricResult micro_f1(std::span<const int> preds, std::span<const int> golds, const std::set<int>& positive_classes) {
  same_length(preds.size(), golds.size(), "micro_f1");
  if (preds.empty()) throw MetricError("micro_f1 of an empty set");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred_pos = positive_classes.count(preds[i]) > 0;
    const bool gold_pos = positive_classes.count(golds[i]) > 0;
    if (preds[i] == golds[i]) {
      tp += gold_pos;
    } else {
      fp += pred_pos;
      fn += gold_pos;
    }
  }
  return f1_result(MetricId::micro_f1, tp, fp, fn, preds.size());
}

std::vector<Entity> decode_entities(std::span<const std::string> tags) {
  std::vector<Entity> out;
  bool open = false;
  Entity cur;
  auto close = [&] {
    if (open) out.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t.size() > 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-') {
      const std::string type = t.substr(2);
      if (t[0] == 'I' && open && cur.type == type) {
        cur.end = i;
        continue;
      }
      close();
      cur = Entity{type, i, i};
      open = true;
    } else {
      close();
    }
  }
  close();
  return out;
}

MetricResult entity_f1(const std::vector<std::vector<std::string>>& preds,
                       const std::vector<std::vector<std::string>>& golds) {
  same_length(preds.size(), golds.size(), "entity_f1");
  std::size_t tp = 0, fp = 0, fn = 0, gold_total = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    same_length(preds[s].size(), golds[s].size(), "entity_f1 sentence");
    const auto p = decode_entities(preds[s]);
    const auto g = decode_entities(golds[s]);
    const std::set<Entity> gold_set(g.begin(), g.end());
    std::size_t hit = 0;
    for (const Entity& e : p) hit += gold_set.count(e);
    tp += hit;
    fp += p.size() - hit;
    fn += g.size() - hit;
    gold_total += g.size();
  }
  return f1_result(MetricId::entity_f1, tp, fp, fn, gold_total);
}

}  // namespace mtl
