#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "sdd/rule.hpp"
#include "sdd/scoring.hpp"
#include "sdd/session.hpp"
#include "sdd/table.hpp"

namespace sdd {

using Json = nlohmann::json;

/// Integral values are written as integers so exact counts read as 8993,
/// not 8993.0.
inline Json number_json(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) return static_cast<std::int64_t>(v);
  return v;
}

inline Json aggregate_json(const Aggregate& agg, const Table& table) {
  if (!agg.is_sum()) return {{"kind", "count"}};
  return {{"kind", "sum"}, {"measure", table.measures().at(agg.measure).name}};
}

inline Json node_json(const DrillNode& node, const Table& table, NodePath& path) {
  Json j;
  j["path"] = path;
  j["rule"] = format_rule(node.rule, table.columns());
  j["cells"] = rule_cells(node.rule, table.columns());
  j["count"] = number_json(node.count);
  if (node.sum) j["sum"] = number_json(*node.sum);
  j["value"] = number_json(node.displayed());
  j["count_is_exact"] = node.count_is_exact;
  j["weight"] = number_json(node.weight);
  j["leaf_probability"] = node.leaf_probability;
  j["expanded"] = node.expanded;
  j["star_column"] = node.star_column ? Json(table.column(*node.star_column).name()) : Json(nullptr);
  j["children"] = Json::array();
  for (std::size_t i = 0; i < node.children.size(); ++i) {
    path.push_back(i);
    j["children"].push_back(node_json(node.children[i], table, path));
    path.pop_back();
  }
  return j;
}

/// Serialized session tree:
///   {"columns": [...], "aggregate": {...}, "root": node}
/// where each node carries path, rule text, cells, count (and sum), value,
/// count_is_exact, weight, leaf_probability, expanded, star_column and
/// children in display order.
inline Json tree_json(const DrillNode& root, const Table& table, const Aggregate& agg) {
  Json j;
  j["columns"] = Json::array();
  for (const auto& c : table.columns()) j["columns"].push_back(c.name());
  j["aggregate"] = aggregate_json(agg, table);
  NodePath path;
  j["root"] = node_json(root, table, path);
  return j;
}

inline Json tree_json(const Session& session) {
  return tree_json(session.tree(), session.table(), session.config().aggregate);
}

inline Json scored_rule_json(const ScoredRule& r, const Table& table) {
  Json j;
  j["rule"] = format_rule(r.rule, table.columns());
  j["cells"] = rule_cells(r.rule, table.columns());
  j["count"] = number_json(r.count);
  j["marginal_count"] = number_json(r.marginal_count);
  if (r.sum) {
    j["sum"] = number_json(*r.sum);
    j["marginal_sum"] = number_json(r.marginal_sum.value_or(0));
  }
  j["weight"] = number_json(r.weight);
  return j;
}

inline Json rule_list_json(const ScoredRuleList& list, const Table& table) {
  Json j;
  j["rules"] = Json::array();
  for (const auto& r : list.rules) j["rules"].push_back(scored_rule_json(r, table));
  j["score"] = number_json(list.score);
  return j;
}

}  // namespace sdd
