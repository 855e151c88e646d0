#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mtl/heads.hpp"

namespace mtl {

struct MetricResult {
  MetricId metric = MetricId::accuracy;
  double value = 0.0;
  std::size_t support = 0;  // examples, or gold entities for entity_f1
  double precision = 0.0;   // F1 metrics only
  double recall = 0.0;
};

/// Sample Pearson correlation. Throws MetricError on fewer than two points
/// or zero variance on either side.
MetricResult pearson(std::span<const double> preds, std::span<const double> golds);

MetricResult accuracy(std::span<const int> preds, std::span<const int> golds);

/// F1 from TP/FP/FN pooled over `positive_classes`; 0 when P + R = 0.
MetricResult micro_f1(std::span<const int> preds, std::span<const int> golds, const std::set<int>& positive_classes);

struct Entity {
  std::string type;
  std::size_t start = 0, end = 0;  // inclusive
  auto operator<=>(const Entity&) const = default;
};

/// Maximal typed spans. An I-X that does not continue an X span starts a new one.
std::vector<Entity> decode_entities(std::span<const std::string> tags);

/// Exact (type, start, end) matching over all sentences.
MetricResult entity_f1(const std::vector<std::vector<std::string>>& preds,
                       const std::vector<std::vector<std::string>>& golds);

}  // namespace mtl
