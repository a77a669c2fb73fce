#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "sdd/data_view.hpp"
#include "sdd/rule.hpp"
#include "sdd/weight.hpp"

namespace sdd {

struct ScoredRule {
  Rule rule;
  double weight = 0;
  double count = 0;           // scaled Count(r)
  double marginal_count = 0;  // scaled MCount(r, R)
  std::optional<double> sum;  // scaled Sum(r) when aggregating a measure
  std::optional<double> marginal_sum;

  /// The aggregate shown to the user: Sum when present, Count otherwise.
  double value() const { return sum ? *sum : count; }
  double marginal_value() const { return marginal_sum ? *marginal_sum : marginal_count; }
};

/// Rules ordered by non-increasing weight with their (marginal) aggregates.
struct ScoredRuleList {
  std::vector<ScoredRule> rules;
  double score = 0;

  std::size_t size() const noexcept { return rules.size(); }
  bool empty() const noexcept { return rules.empty(); }
};

/// Count(r) (or Sum(r)) over the view, multiplied by the view's scale.
inline double count(const DataView& data, const Rule& rule, const Aggregate& agg = {}) {
  data.check(agg);
  double total = 0;
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    if (covers(rule, data.row(i))) total += data.mass(agg, i);
  }
  return total * data.scale();
}

/// MCount(r, R) for every rule of the list in the given order: each tuple
/// is credited to its first covering rule.
inline std::vector<double> marginal_counts(const DataView& data, std::span<const Rule> rules, const Aggregate& agg = {}) {
  data.check(agg);
  std::vector<double> out(rules.size(), 0.0);
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    auto row = data.row(i);
    for (std::size_t r = 0; r < rules.size(); ++r) {
      if (covers(rules[r], row)) {
        out[r] += data.mass(agg, i);
        break;
      }
    }
  }
  for (auto& v : out) v *= data.scale();
  return out;
}

/// Score of a list taken in the given order: sum of MCount(r) * W(r).
inline double list_score(const DataView& data, std::span<const Rule> rules, const WeightFunction& weight,
                         const Aggregate& agg = {}) {
  auto marginal = marginal_counts(data, rules, agg);
  double total = 0;
  for (std::size_t r = 0; r < rules.size(); ++r) total += marginal[r] * weight(rules[r]);
  return total;
}

/// Sorts by non-increasing weight; equal weights fall back to pattern order.
inline void sort_by_weight(std::vector<Rule>& rules, const WeightFunction& weight) {
  std::stable_sort(rules.begin(), rules.end(), [&](const Rule& a, const Rule& b) {
    double wa = weight(a);
    double wb = weight(b);
    if (wa != wb) return wa > wb;
    return pattern_less(a, b);
  });
}

/// Scores a set of rules: orders it by weight, then computes Count, MCount
/// and Score = sum MCount * W in one pass.
inline ScoredRuleList score(const DataView& data, std::vector<Rule> rules, const WeightFunction& weight,
                            const Aggregate& agg = {}) {
  data.check(agg);
  sort_by_weight(rules, weight);
  ScoredRuleList out;
  out.rules.resize(rules.size());
  std::vector<double> counts(rules.size(), 0.0), mcounts(rules.size(), 0.0);
  std::vector<double> sums(rules.size(), 0.0), msums(rules.size(), 0.0);
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    auto row = data.row(i);
    const double mass = agg.is_sum() ? data.mass(agg, i) : 0.0;
    bool credited = false;
    for (std::size_t r = 0; r < rules.size(); ++r) {
      if (!covers(rules[r], row)) continue;
      counts[r] += 1;
      sums[r] += mass;
      if (!credited) {
        mcounts[r] += 1;
        msums[r] += mass;
        credited = true;
      }
    }
  }
  const double scale = data.scale();
  for (std::size_t r = 0; r < rules.size(); ++r) {
    auto& e = out.rules[r];
    e.rule = rules[r];
    e.weight = weight(rules[r]);
    e.count = counts[r] * scale;
    e.marginal_count = mcounts[r] * scale;
    if (agg.is_sum()) {
      e.sum = sums[r] * scale;
      e.marginal_sum = msums[r] * scale;
    }
    out.score += e.marginal_value() * e.weight;
  }
  return out;
}

}  // namespace sdd
