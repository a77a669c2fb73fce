#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "sdd/data_view.hpp"
#include "sdd/error.hpp"
#include "sdd/reservoir.hpp"
#include "sdd/rule.hpp"
#include "sdd/scoring.hpp"
#include "sdd/weight.hpp"

namespace sdd {

/// Restricts results to super-rules of `base` that, when `star_column` is
/// set, also instantiate that column.
struct DrillConstraint {
  Rule base;
  std::optional<std::size_t> star_column;

  static DrillConstraint root(std::size_t arity) { return {Rule(arity), std::nullopt}; }

  void validate(std::size_t arity) const {
    if (base.arity() != arity) throw Error(ErrorCode::invalid_argument, "constraint arity mismatch");
    if (star_column) {
      if (*star_column >= arity) throw Error(ErrorCode::unknown_column, "star column out of range");
      if (!base.is_star(*star_column)) {
        throw Error(ErrorCode::column_instantiated, "column is already instantiated in the base rule");
      }
    }
  }

  bool admits(const Rule& rule) const {
    if (!is_subrule(base, rule) || rule == base) return false;
    return !star_column || !rule.is_star(*star_column);
  }
};

/// A counted candidate. `count` and `marginal_value` are scaled by the
/// view's N_s and refer to Sum rather than Count under a Sum aggregate.
struct CandidateEntry {
  Rule rule;
  double weight = 0;
  double count = 0;
  double marginal_value = 0;
  double upper_bound = std::numeric_limits<double>::infinity();
};

struct SearchStats {
  std::size_t passes = 0;
  std::size_t counted = 0;    // candidates whose marginal value was computed
  std::size_t pruned = 0;     // deleted because their bound fell below H
  std::size_t discarded = 0;  // some immediate sub-rule was not counted
  bool keep_trace = false;     // record every counted candidate in `trace`
  std::vector<CandidateEntry> trace;
};

namespace detail {

/// W(TOP(t, S)) for every row: the largest weight of a solution rule
/// covering it, 0 when none does.
inline std::vector<double> top_weights(const DataView& data, std::span<const Rule> solution,
                                       const WeightFunction& weight) {
  std::vector<double> solution_weights;
  for (const auto& r : solution) solution_weights.push_back(weight(r));
  std::vector<double> out(data.num_rows(), 0.0);
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    auto row = data.row(i);
    for (std::size_t s = 0; s < solution.size(); ++s) {
      if (solution_weights[s] > out[i] && covers(solution[s], row)) out[i] = solution_weights[s];
    }
  }
  return out;
}

inline bool better_candidate(const CandidateEntry& a, const CandidateEntry& b) {
  if (a.marginal_value != b.marginal_value) return a.marginal_value > b.marginal_value;
  return pattern_less(a.rule, b.rule);
}

}  // namespace detail

/// Finds the rule with the highest marginal value
///   sum over covered t of max(0, W(R) - W(TOP(t, S)))
/// among super-rules admitted by `constraint`, in level-wise counting passes.
/// Level L holds rules instantiating L of the base rule's free columns (plus
/// the star column in star mode). A rule is counted at level L only if every
/// admissible immediate sub-rule was counted at level L-1 and its bound
///   M = min over counted sub-rules R' of MV(R') + Count(R') * (m_w - W(R'))
/// is not below H, the best marginal value seen in earlier passes.
inline std::optional<CandidateEntry> find_best_marginal_rule(std::span<const Rule> solution, const DataView& data,
                                                             double m_w, const WeightFunction& weight,
                                                             const DrillConstraint& constraint,
                                                             const Aggregate& agg = {},
                                                             SearchStats* stats = nullptr) {
  const std::size_t width = data.width();
  constraint.validate(width);
  data.check(agg);
  if (!(m_w > 0)) throw Error(ErrorCode::invalid_argument, "m_w must be positive");

  const auto top = detail::top_weights(data, solution, weight);
  const bool star_mode = constraint.star_column.has_value();
  std::vector<std::size_t> free_cols;
  for (std::size_t c = 0; c < width; ++c) {
    if (constraint.base.is_star(c) && (!star_mode || c != *constraint.star_column)) free_cols.push_back(c);
  }

  enum class Status { counted, pruned, discarded };
  struct Node {
    Status status = Status::counted;
    double weight = 0;
    double count = 0;
    double marginal = 0;
    double bound = std::numeric_limits<double>::infinity();
  };
  using LevelMap = std::unordered_map<Rule, Node, RuleHash, RuleEqual>;
  std::vector<LevelMap> levels;

  auto counted_at = [&](std::size_t level, const Rule& r) -> const Node* {
    if (level >= levels.size()) return nullptr;
    auto it = levels[level].find(r);
    if (it == levels[level].end() || it->second.status != Status::counted) return nullptr;
    return &it->second;
  };

  double best_h = 0;
  SearchStats local;
  // Free-column positions instantiated by the rule being built, ascending.
  std::vector<std::size_t> chosen;
  Rule scratch;

  // Decides the status of a new level-L candidate held in `scratch` whose
  // free columns are `chosen`.
  auto classify = [&](std::size_t level) {
    Node node;
    node.weight = weight(scratch);
    if (level == 0) return node;  // star-mode anchor: no counted sub-rule
    // Immediate sub-rules drop one chosen free column.
    Rule sub = scratch;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      sub[chosen[i]] = kStar;
      const bool required = star_mode || level > 1;
      if (required && !counted_at(level - 1, sub)) {
        node.status = Status::discarded;
        return node;
      }
      sub[chosen[i]] = scratch[chosen[i]];
    }
    // Bound over every counted proper sub-rule that keeps the anchor.
    const std::size_t n = chosen.size();
    for (std::size_t mask = 0; mask + 1 < (std::size_t{1} << n); ++mask) {
      std::size_t kept = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (std::size_t{1} << i)) {
          sub[chosen[i]] = scratch[chosen[i]];
          ++kept;
        } else {
          sub[chosen[i]] = kStar;
        }
      }
      if (const Node* s = counted_at(kept, sub)) {
        node.bound = std::min(node.bound, s->marginal + s->count * (m_w - s->weight));
      }
    }
    if (node.bound < best_h) node.status = Status::pruned;
    return node;
  };

  const std::size_t first_level = star_mode ? 0 : 1;
  const std::size_t last_level = free_cols.size();
  for (std::size_t level = first_level; level <= last_level; ++level) {
    if (level > first_level) {
      bool any = false;
      for (const auto& [r, node] : levels[level - 1]) any = any || node.status == Status::counted;
      if (!any) break;
    }
    if (levels.size() <= level) levels.resize(level + 1);
    LevelMap& current = levels[level];
    ++local.passes;

    for (std::size_t i = 0; i < data.num_rows(); ++i) {
      auto row = data.row(i);
      if (!covers(constraint.base, row)) continue;
      const double mass = data.mass(agg, i);
      scratch = constraint.base;
      if (star_mode) scratch[*constraint.star_column] = row[*constraint.star_column];
      chosen.clear();

      // Depth-first over ascending free columns; every prefix must itself
      // have been counted at its level.
      std::function<void(std::size_t)> descend = [&](std::size_t start) {
        const std::size_t depth = chosen.size();
        if (depth == level) {
          auto it = current.find(scratch);
          if (it == current.end()) {
            Node node = classify(level);
            switch (node.status) {
              case Status::counted: ++local.counted; break;
              case Status::pruned: ++local.pruned; break;
              case Status::discarded: ++local.discarded; break;
            }
            it = current.emplace(scratch, node).first;
          }
          Node& node = it->second;
          if (node.status == Status::counted) {
            node.count += mass;
            node.marginal += mass * std::max(0.0, node.weight - top[i]);
          }
          return;
        }
        if (depth > 0 && !counted_at(depth, scratch)) return;
        for (std::size_t p = start; p + (level - depth) <= free_cols.size(); ++p) {
          const std::size_t col = free_cols[p];
          scratch[col] = row[col];
          chosen.push_back(col);
          descend(p + 1);
          chosen.pop_back();
          scratch[col] = kStar;
        }
      };
      descend(0);
    }

    for (const auto& [r, node] : current) {
      if (node.status == Status::counted) best_h = std::max(best_h, node.marginal);
    }
  }

  std::optional<CandidateEntry> best;
  for (const auto& level : levels) {
    for (const auto& [r, node] : level) {
      if (node.status != Status::counted) continue;
      CandidateEntry e{r, node.weight, node.count, node.marginal, node.bound};
      if (stats && stats->keep_trace) {
        stats->trace.push_back({r, node.weight, node.count * data.scale(), node.marginal * data.scale(),
                                node.bound * data.scale()});
      }
      if (!best || detail::better_candidate(e, *best)) best = std::move(e);
    }
  }
  if (best) {
    best->count *= data.scale();
    best->marginal_value *= data.scale();
    best->upper_bound *= data.scale();
  }
  if (stats) {
    stats->passes += local.passes;
    stats->counted += local.counted;
    stats->pruned += local.pruned;
    stats->discarded += local.discarded;
  }
  return best;
}

struct BrsOptions {
  std::size_t k = 4;
  double m_w = 5;
  std::optional<DrillConstraint> constraint;  // unset: unconstrained from the trivial rule
  Aggregate aggregate;
  std::optional<std::chrono::milliseconds> time_limit = std::chrono::seconds(5);
  std::function<void(const CandidateEntry&)> emit;  // called as each rule is found
};

/// Greedy best rule set: adds the best marginal rule k times, stopping early
/// when no rule adds value or the time limit has passed.
inline ScoredRuleList best_rule_set(const DataView& data, const WeightFunction& weight, const BrsOptions& options,
                                    SearchStats* stats = nullptr) {
  const auto constraint = options.constraint.value_or(DrillConstraint::root(data.width()));
  constraint.validate(data.width());
  data.check(options.aggregate);
  if (options.aggregate.is_sum()) {
    for (std::size_t i = 0; i < data.num_rows(); ++i) {
      if (data.mass(options.aggregate, i) < 0) {
        throw Error(ErrorCode::invalid_argument, "sum aggregate needs non-negative measure values");
      }
    }
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<Rule> solution;
  for (std::size_t iter = 0; iter < options.k; ++iter) {
    if (iter > 0 && options.time_limit && std::chrono::steady_clock::now() - start >= *options.time_limit) break;
    auto found = find_best_marginal_rule(solution, data, options.m_w, weight, constraint, options.aggregate, stats);
    if (!found || !(found->marginal_value > 0)) break;
    solution.push_back(found->rule);
    if (options.emit) options.emit(*found);
  }
  return score(data, std::move(solution), weight, options.aggregate);
}

struct DrillReduction {
  DataView view;
  WeightConfig config;
  DrillConstraint constraint;
};

/// Filters the data to the tuples of `base` and derives the constraint and
/// weight configuration of a rule or star drill-down.
inline DrillReduction drill_reduce(const DataView& data, const WeightConfig& config, const Rule& base,
                                   std::optional<std::size_t> star_column = std::nullopt) {
  DrillConstraint constraint{base, star_column};
  constraint.validate(data.width());
  WeightConfig effective = config;
  effective.star_column = star_column;
  DataView view = base.is_trivial() ? data : DataView::filtered(data, base);
  return {std::move(view), std::move(effective), std::move(constraint)};
}

/// Every distinct rule that covers at least one tuple, plus the trivial rule.
inline std::vector<Rule> rule_universe(const DataView& data, std::size_t limit = 5000) {
  std::unordered_map<Rule, bool, RuleHash, RuleEqual> seen;
  const std::size_t width = data.width();
  if (width >= 63) throw Error(ErrorCode::too_large, "too many columns for exhaustive enumeration");
  seen.emplace(Rule(width), true);
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    auto row = data.row(i);
    for (std::size_t mask = 1; mask < (std::size_t{1} << width); ++mask) {
      Rule r(width);
      for (std::size_t c = 0; c < width; ++c) {
        if (mask & (std::size_t{1} << c)) r[c] = row[c];
      }
      seen.emplace(std::move(r), true);
      if (seen.size() > limit) throw Error(ErrorCode::too_large, "rule universe exceeds limit");
    }
  }
  std::vector<Rule> out;
  for (auto& [r, _] : seen) out.push_back(r);
  std::sort(out.begin(), out.end(), pattern_less);
  return out;
}

/// Exact optimum over k-subsets of the rule universe. Exponential; meant as
/// a test oracle on small tables.
inline ScoredRuleList brute_force_best_set(const DataView& data, const WeightFunction& weight, std::size_t k,
                                           double max_combinations = 5e7) {
  if (k == 0) return {};
  auto universe = rule_universe(data);
  const std::size_t n = universe.size();
  k = std::min(k, n);
  double combos = 1;
  for (std::size_t i = 0; i < k; ++i) combos = combos * static_cast<double>(n - i) / static_cast<double>(i + 1);
  if (combos > max_combinations) throw Error(ErrorCode::too_large, "too many rule subsets to enumerate");

  // Per rule: weight and the rows it covers.
  std::vector<double> w(n);
  std::vector<std::vector<std::uint32_t>> covered(n);
  for (std::size_t r = 0; r < n; ++r) {
    w[r] = weight(universe[r]);
    for (std::size_t i = 0; i < data.num_rows(); ++i) {
      if (covers(universe[r], data.row(i))) covered[r].push_back(static_cast<std::uint32_t>(i));
    }
  }
  // Score of a set is the sum over tuples of the largest covering weight.
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  std::vector<double> best_w(data.num_rows());
  double best_score = -1;
  std::vector<std::size_t> best_idx;
  while (true) {
    std::fill(best_w.begin(), best_w.end(), 0.0);
    for (std::size_t i : idx) {
      for (auto row : covered[i]) best_w[row] = std::max(best_w[row], w[i]);
    }
    double s = 0;
    for (double v : best_w) s += v;
    if (s > best_score) {
      best_score = s;
      best_idx = idx;
    }
    std::size_t pos = k;
    while (pos > 0 && idx[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t j = pos; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  std::vector<Rule> rules;
  for (std::size_t i : best_idx) rules.push_back(universe[i]);
  return score(data, std::move(rules), weight);
}

/// Suggests m_w as twice the largest weight BRS picks on a uniform probe
/// sample, run without an effective cap. Never below 1.
inline double estimate_mw(const DataView& data, const WeightFunction& weight, std::size_t k, std::size_t probe_size,
                          Rng& rng, const Aggregate& agg = {}) {
  if (probe_size == 0) throw Error(ErrorCode::invalid_argument, "probe size must be at least 1");
  DataView probe = data;
  if (data.num_rows() > probe_size) {
    auto picks = sample_indices(data.num_rows(), probe_size, rng);
    DataView::Storage s;
    s.measures.resize(data.num_measures());
    for (auto i : picks) {
      auto row = data.row(i);
      s.codes.insert(s.codes.end(), row.begin(), row.end());
      s.row_ids.push_back(data.row_id(i));
      for (std::size_t m = 0; m < data.num_measures(); ++m) s.measures[m].push_back(data.measure(m, i));
    }
    probe = DataView::owning(data.columns(), std::move(s));
  }
  BrsOptions options;
  options.k = k;
  options.m_w = std::max(weight.max_weight(), 1.0);
  options.aggregate = agg;
  options.time_limit.reset();
  auto list = best_rule_set(probe, weight, options);
  double x = 0;
  for (const auto& r : list.rules) x = std::max(x, r.weight);
  return std::max(2 * x, 1.0);
}

}  // namespace sdd
