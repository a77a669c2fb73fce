#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdd/allocation.hpp"
#include "sdd/brs.hpp"
#include "sdd/data_view.hpp"
#include "sdd/error.hpp"
#include "sdd/reservoir.hpp"
#include "sdd/rule.hpp"
#include "sdd/sample.hpp"
#include "sdd/scoring.hpp"
#include "sdd/table.hpp"
#include "sdd/weight.hpp"

namespace sdd {

struct DrillNode {
  Rule rule;
  double count = 0;                 // Count(rule), scaled when estimated
  std::optional<double> sum;        // Sum(rule) under a Sum aggregate
  bool count_is_exact = false;
  double weight = 0;
  double leaf_probability = 0;
  bool expanded = false;
  std::optional<std::size_t> star_column;  // set when expanded by a star drill-down
  std::vector<DrillNode> children;

  /// The value shown to the user: Sum under a Sum aggregate, else Count.
  double displayed() const { return sum.value_or(count); }
  bool is_leaf() const { return children.empty(); }
};

/// Child indices from the root; empty addresses the root.
using NodePath = std::vector<std::size_t>;

struct SessionConfig {
  std::size_t k = 4;
  std::optional<double> m_w = 5.0;  // unset: estimated from a probe sample
  std::size_t min_ss = 5000;
  std::size_t memory = 50000;  // M, in tuples
  WeightConfig weight;
  Aggregate aggregate;
  std::optional<std::chrono::milliseconds> time_limit = std::chrono::seconds(5);
  std::uint64_t seed = 1;
  bool auto_prefetch = true;
  // Planning inflates minSS by this fraction plus z = 3 standard deviations
  // so that a planned union lands above minSS once drawn.
  double prefetch_margin = 0.1;

  void validate(std::size_t arity) const {
    if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
    if (min_ss == 0 || min_ss > memory) throw Error(ErrorCode::invalid_argument, "need 0 < minSS <= M");
    if (m_w && !(*m_w > 0)) throw Error(ErrorCode::invalid_argument, "m_w must be positive");
    if (!weight.preferences.empty() && weight.preferences.size() != arity) {
      throw Error(ErrorCode::invalid_argument, "one column preference per column");
    }
    if (prefetch_margin < 0) throw Error(ErrorCode::invalid_argument, "prefetch margin must be non-negative");
  }
};

/// How the rows behind the last expansion were obtained.
enum class DataSource { none, find, combine, create };

inline std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::none: return "none";
    case DataSource::find: return "find";
    case DataSource::combine: return "combine";
    case DataSource::create: return "create";
  }
  return "none";
}

struct SessionCounters {
  std::size_t finds = 0;
  std::size_t combines = 0;
  std::size_t creates = 0;          // foreground table scans
  std::size_t prefetch_scans = 0;   // completed background scans
  std::size_t expansions = 0;
  DataSource last_source = DataSource::none;
  double last_expand_ms = 0;
  double last_prefetch_ms = 0;
  double last_plan_objective = 0;
};

struct SessionStats {
  SessionCounters counters;
  std::size_t pool_samples = 0;
  std::size_t pool_rows = 0;
  std::size_t pool_capacity = 0;
  std::size_t evictions = 0;
  double m_w = 0;
  bool prefetch_running = false;
};

/// Uniform leaf probabilities over the current leaves.
inline void assign_leaf_probabilities(DrillNode& root) {
  std::vector<DrillNode*> leaves;
  std::function<void(DrillNode&)> walk = [&](DrillNode& n) {
    n.leaf_probability = 0;
    if (n.is_leaf()) {
      leaves.push_back(&n);
      return;
    }
    for (auto& c : n.children) walk(c);
  };
  walk(root);
  for (auto* l : leaves) l->leaf_probability = 1.0 / static_cast<double>(leaves.size());
}

namespace detail {

inline void flatten(const DrillNode& n, std::ptrdiff_t parent, std::vector<const DrillNode*>& nodes,
                    std::vector<std::ptrdiff_t>& parents) {
  auto self = static_cast<std::ptrdiff_t>(nodes.size());
  nodes.push_back(&n);
  parents.push_back(parent);
  for (const auto& c : n.children) flatten(c, self, nodes, parents);
}

inline void collect_rules(const DrillNode& n, std::vector<Rule>& out) {
  out.push_back(n.rule);
  for (const auto& c : n.children) collect_rules(c, out);
}

}  // namespace detail

/// Allocation problem over a drill tree: selectivities from the displayed
/// counts, leaf probabilities as stored.
inline AllocationProblem allocation_problem(const DrillNode& root, std::size_t memory, std::size_t min_ss) {
  std::vector<const DrillNode*> nodes;
  AllocationProblem p;
  detail::flatten(root, -1, nodes, p.parent);
  p.memory = memory;
  p.min_ss = min_ss;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    p.probability.push_back(nodes[i]->is_leaf() ? nodes[i]->leaf_probability : 0.0);
    double s = 1.0;
    if (p.parent[i] >= 0) {
      double parent_count = nodes[static_cast<std::size_t>(p.parent[i])]->count;
      s = parent_count > 0 ? std::clamp(nodes[i]->count / parent_count, 0.0, 1.0) : 0.0;
    }
    p.selectivity.push_back(s);
  }
  return p;
}

/// Plans sample budgets for a tree: the knapsack DP, or the convex
/// relaxation when the tree is too wide for it. Memory the plan leaves
/// unused is spread over the planned samples in proportion to their size,
/// or given to the root when nothing was planned.
inline AllocationPlan plan_prefetch(const DrillNode& root, std::size_t memory, std::size_t min_ss, double margin) {
  auto planned_ss = static_cast<std::size_t>(
      std::ceil(static_cast<double>(min_ss) * (1 + margin) + 3 * std::sqrt(static_cast<double>(min_ss))));
  if (margin == 0) planned_ss = min_ss;
  auto problem = allocation_problem(root, memory, planned_ss);
  AllocationPlan plan;
  try {
    plan = allocate_dp(problem);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::too_large) throw;
    plan = allocate_convex(problem);
  }
  // Report satisfaction against the real minSS.
  problem.min_ss = min_ss;
  plan.objective = satisfied_probability(problem, std::span<const std::size_t>(plan.budgets));
  const std::size_t used = plan.total();
  if (used < memory) {
    const std::size_t slack = memory - used;
    if (used == 0) {
      plan.budgets[0] += slack;
    } else {
      std::size_t given = 0;
      for (auto& b : plan.budgets) {
        auto extra = static_cast<std::size_t>(static_cast<double>(slack) * static_cast<double>(b) / static_cast<double>(used));
        b += extra;
        given += extra;
      }
      for (auto& b : plan.budgets) {
        if (given == slack) break;
        if (b > 0) {
          ++b;
          ++given;
        }
      }
    }
  }
  return plan;
}

/// Drill-tree state machine over one table. Gestures are serialized; a
/// background worker builds samples for likely next drill-downs and
/// refreshes displayed counts to exact values.
class Session {
 public:
  Session(std::shared_ptr<const Table> table, SessionConfig config)
      : table_(std::move(table)), config_(std::move(config)), rng_(config_.seed), prefetch_rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL),
        pool_(config_.memory) {
    if (!table_) throw Error(ErrorCode::invalid_argument, "session needs a table");
    config_.validate(table_->num_columns());
    check_measures();
    data_ = DataView::of(*table_);
    reset_tree();
    worker_ = std::thread([this] { prefetch_loop(); });
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  ~Session() {
    {
      std::lock_guard lock(job_mu_);
      stopping_ = true;
    }
    job_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  const Table& table() const { return *table_; }
  std::span<const ColumnSchema> columns() const { return table_->columns(); }

  SessionConfig config() const {
    std::lock_guard lock(state_mu_);
    return config_;
  }

  /// Consistent copy of the tree.
  DrillNode tree() const {
    std::lock_guard lock(state_mu_);
    return root_;
  }

  double m_w() const {
    std::lock_guard lock(state_mu_);
    return m_w_;
  }

  SessionStats stats() const {
    SessionStats s;
    {
      std::lock_guard lock(state_mu_);
      s.counters = counters_;
      s.m_w = m_w_;
    }
    auto snap = pool_.snapshot();
    s.pool_samples = snap->size();
    for (const auto& x : *snap) s.pool_rows += x->size();
    s.pool_capacity = pool_.capacity();
    s.evictions = pool_.evictions();
    {
      std::lock_guard lock(job_mu_);
      s.prefetch_running = job_pending_ || job_running_;
    }
    return s;
  }

  PoolSnapshot pool() const { return pool_.snapshot(); }

  /// Looks a node up by its text form (full or shorthand, see
  /// parse_rule_lenient); the first match in depth-first order wins.
  NodePath resolve(std::string_view rule_text) const {
    Rule rule;
    try {
      rule = parse_rule_lenient(rule_text, columns());
    } catch (const Error& e) {
      throw Error(ErrorCode::unknown_node, e.what());
    }
    std::lock_guard lock(state_mu_);
    NodePath path;
    if (find_path(root_, rule, path)) return path;
    throw Error(ErrorCode::unknown_node, "no displayed node '" + std::string(rule_text) + "'");
  }

  ScoredRuleList expand(const NodePath& path) { return expand_impl(path, std::nullopt, std::nullopt, nullptr); }

  /// Expansion whose children all instantiate `column`.
  ScoredRuleList expand_star(const NodePath& path, std::size_t column) {
    return expand_impl(path, column, std::nullopt, nullptr);
  }
  ScoredRuleList expand_star(const NodePath& path, std::string_view column) {
    return expand_star(path, table_->require_column(column));
  }

  /// Calls `emit` as each child rule is found.
  ScoredRuleList expand_streaming(const NodePath& path, std::optional<std::size_t> star_column,
                                  const std::function<void(const CandidateEntry&)>& emit) {
    return expand_impl(path, star_column, std::nullopt, emit);
  }

  /// A traditional drill-down on `column`: one child per distinct value.
  ScoredRuleList emulate_regular_drilldown(const NodePath& path, std::size_t column) {
    if (column >= table_->num_columns()) throw Error(ErrorCode::unknown_column, "column out of range");
    Regular regular;
    regular.config.kind = WeightKind::parametric;
    regular.config.column_weights.assign(table_->num_columns(), 0.0);
    regular.config.column_weights[column] = 1.0;
    return expand_impl(path, column, regular, nullptr);
  }
  ScoredRuleList emulate_regular_drilldown(const NodePath& path, std::string_view column) {
    return emulate_regular_drilldown(path, table_->require_column(column));
  }

  void collapse(const NodePath& path) {
    {
      std::lock_guard gesture(gesture_mu_);
      std::lock_guard lock(state_mu_);
      DrillNode& node = at(path);
      if (!node.expanded) throw Error(ErrorCode::node_not_expanded, "node is not expanded");
      node.children.clear();
      node.expanded = false;
      node.star_column.reset();
      assign_leaf_probabilities(root_);
    }
    if (config_.auto_prefetch) request_prefetch();
  }

  /// Replaces the configuration and resets the tree to the root.
  void set_config(SessionConfig config) {
    config.validate(table_->num_columns());
    {
      std::lock_guard gesture(gesture_mu_);
      std::lock_guard lock(state_mu_);
      auto previous = std::move(config_);
      config_ = std::move(config);
      try {
        check_measures();
      } catch (...) {
        config_ = std::move(previous);
        throw;
      }
      pool_.set_capacity(config_.memory);
      reset_tree_locked();
    }
  }

  /// Schedules a prefetch; a request still waiting in the queue is replaced.
  void request_prefetch() {
    {
      std::lock_guard lock(job_mu_);
      job_pending_ = true;
    }
    job_cv_.notify_all();
  }

  /// Blocks until no prefetch is queued or running.
  void wait_for_prefetch() {
    std::unique_lock lock(job_mu_);
    job_done_cv_.wait(lock, [&] { return !job_pending_ && !job_running_; });
  }

  /// Runs one prefetch on the calling thread.
  void prefetch_now() { run_prefetch(); }

 private:
  struct Regular {
    WeightConfig config;
  };

  void check_measures() const {
    if (!config_.aggregate.is_sum()) return;
    if (config_.aggregate.measure >= table_->measures().size()) {
      throw Error(ErrorCode::unknown_column, "unknown measure column");
    }
    for (double v : table_->measures()[config_.aggregate.measure].values) {
      if (v < 0) throw Error(ErrorCode::invalid_argument, "sum aggregate needs non-negative measure values");
    }
  }

  void reset_tree() {
    std::lock_guard gesture(gesture_mu_);
    std::lock_guard lock(state_mu_);
    reset_tree_locked();
  }

  // Root node, root sample and m_w. Caller holds both locks.
  void reset_tree_locked() {
    pool_.clear();
    root_ = DrillNode{};
    root_.rule = Rule(table_->num_columns());
    root_.count_is_exact = true;
    root_.leaf_probability = 1.0;
    const Rule root_rule = root_.rule;
    std::vector<Budget> budgets{{root_rule, std::min(config_.memory, table_->num_rows())}};
    auto created = create_pass(data_, budgets, rng_, std::span<const Rule>(&root_rule, 1), config_.aggregate);
    root_.count = created.counts[0];
    if (config_.aggregate.is_sum()) root_.sum = created.tallies[0];
    if (!created.samples[0]->empty()) pool_.install(created.samples, live_fn(), priority_fn());
    m_w_ = config_.m_w.value_or(0.0);
    if (!config_.m_w) {
      WeightFunction w(config_.weight, columns());
      auto probe = created.samples[0]->view(columns());
      m_w_ = table_->num_rows() == 0 ? 1.0 : estimate_mw(probe, w, config_.k, config_.min_ss, rng_, config_.aggregate);
    }
  }

  static bool find_path(const DrillNode& n, const Rule& rule, NodePath& path) {
    if (n.rule == rule) return true;
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      path.push_back(i);
      if (find_path(n.children[i], rule, path)) return true;
      path.pop_back();
    }
    return false;
  }

  DrillNode& at(const NodePath& path) {
    DrillNode* n = &root_;
    for (auto i : path) {
      if (i >= n->children.size()) throw Error(ErrorCode::unknown_node, "no node at the given path");
      n = &n->children[i];
    }
    return *n;
  }

  std::function<bool(const Rule&)> live_fn() const {
    auto rules = std::make_shared<std::vector<Rule>>();
    detail::collect_rules(root_, *rules);
    return [rules](const Rule& r) { return std::find(rules->begin(), rules->end(), r) != rules->end(); };
  }

  std::function<double(const Rule&)> priority_fn() const {
    auto probs = std::make_shared<std::vector<std::pair<Rule, double>>>();
    std::function<void(const DrillNode&)> walk = [&](const DrillNode& n) {
      probs->push_back({n.rule, n.is_leaf() ? n.leaf_probability : 1.0});
      for (const auto& c : n.children) walk(c);
    };
    walk(root_);
    return [probs](const Rule& r) {
      for (const auto& [rule, p] : *probs) {
        if (rule == r) return p;
      }
      return 0.0;
    };
  }

  // Rows for a drill-down on `rule`: a pooled sample, a union of pooled
  // samples, or a fresh scan, in that order. Estimated samples above minSS
  // are cut down to minSS.
  DataView obtain(const Rule& rule, DataSource& source) {
    auto snap = pool_.snapshot();
    std::optional<Sample> chosen;
    if (auto s = find(*snap, rule, config_.min_ss)) {
      source = DataSource::find;
      chosen = *s;
    } else if (auto c = combine(*snap, rule, config_.min_ss)) {
      source = DataSource::combine;
      chosen = std::move(*c);
    } else {
      source = DataSource::create;
      std::vector<Budget> budgets{{rule, config_.memory}};
      auto created = create_pass(data_, budgets, rng_);
      chosen = *created.samples[0];
      if (!chosen->complete() && chosen->size() > config_.min_ss) chosen = subsample(*chosen, config_.min_ss, rng_);
      if (!chosen->empty()) {
        std::lock_guard lock(state_mu_);
        pool_.install({std::make_shared<const Sample>(*chosen)}, live_fn(), priority_fn());
      }
    }
    if (!chosen->complete() && chosen->size() > config_.min_ss) chosen = subsample(*chosen, config_.min_ss, rng_);
    return chosen->view(columns());
  }

  ScoredRuleList expand_impl(const NodePath& path, std::optional<std::size_t> star_column,
                             std::optional<Regular> regular,
                             const std::function<void(const CandidateEntry&)>& emit) {
    const auto start = std::chrono::steady_clock::now();
    std::unique_lock gesture(gesture_mu_);
    Rule rule;
    {
      std::lock_guard lock(state_mu_);
      DrillNode& node = at(path);
      if (node.expanded) throw Error(ErrorCode::node_expanded, "node is already expanded");
      rule = node.rule;
    }
    if (star_column) {
      if (*star_column >= table_->num_columns()) throw Error(ErrorCode::unknown_column, "column out of range");
      if (!rule.is_star(*star_column)) {
        throw Error(ErrorCode::column_instantiated,
                    "column '" + table_->column(*star_column).name() + "' is already instantiated");
      }
    }
    if (table_->num_rows() == 0) return {};

    DataSource source = DataSource::none;
    DataView view = obtain(rule, source);
    auto reduction = drill_reduce(view, regular ? regular->config : config_.weight, rule, star_column);
    WeightFunction weight(reduction.config, columns());
    BrsOptions options;
    options.k = config_.k;
    options.m_w = m_w_;
    options.constraint = reduction.constraint;
    options.aggregate = config_.aggregate;
    options.time_limit = config_.time_limit;
    options.emit = emit;
    if (regular) {
      std::unordered_map<Code, bool> distinct;
      for (std::size_t i = 0; i < reduction.view.num_rows(); ++i) distinct[reduction.view.row(i)[*star_column]] = true;
      options.k = distinct.size();
      options.m_w = 1.0;
      options.time_limit.reset();
    }
    auto list = best_rule_set(reduction.view, weight, options);

    {
      std::lock_guard lock(state_mu_);
      DrillNode& node = at(path);
      node.expanded = true;
      node.star_column = star_column;
      node.children.clear();
      for (const auto& r : list.rules) {
        DrillNode child;
        child.rule = r.rule;
        child.count = r.count;
        child.sum = r.sum;
        child.count_is_exact = reduction.view.exact();
        child.weight = r.weight;
        node.children.push_back(std::move(child));
      }
      assign_leaf_probabilities(root_);
      ++counters_.expansions;
      counters_.last_source = source;
      switch (source) {
        case DataSource::find: ++counters_.finds; break;
        case DataSource::combine: ++counters_.combines; break;
        case DataSource::create: ++counters_.creates; break;
        case DataSource::none: break;
      }
      counters_.last_expand_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    gesture.unlock();
    if (config_.auto_prefetch) request_prefetch();
    return list;
  }

  void prefetch_loop() {
    std::unique_lock lock(job_mu_);
    for (;;) {
      job_cv_.wait(lock, [&] { return stopping_ || job_pending_; });
      if (stopping_) return;
      job_pending_ = false;
      job_running_ = true;
      lock.unlock();
      try {
        run_prefetch();
      } catch (...) {
        // A failed prefetch leaves the pool and counts as they were.
      }
      lock.lock();
      job_running_ = false;
      if (!job_pending_) job_done_cv_.notify_all();
    }
  }

  void run_prefetch() {
    const auto start = std::chrono::steady_clock::now();
    DrillNode snapshot;
    SessionConfig config;
    {
      std::lock_guard lock(state_mu_);
      snapshot = root_;
      config = config_;
    }
    auto plan = plan_prefetch(snapshot, config.memory, config.min_ss, config.prefetch_margin);
    std::vector<const DrillNode*> nodes;
    std::vector<std::ptrdiff_t> parents;
    detail::flatten(snapshot, -1, nodes, parents);
    std::vector<Budget> budgets;
    std::vector<Rule> rules;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      rules.push_back(nodes[i]->rule);
      if (plan.budgets[i] > 0) budgets.push_back({nodes[i]->rule, plan.budgets[i]});
    }
    auto created = create_pass(data_, budgets, prefetch_rng_, rules, config.aggregate);

    std::lock_guard gesture(gesture_mu_);
    std::lock_guard lock(state_mu_);
    std::vector<SamplePtr> fresh;
    for (auto& s : created.samples) {
      if (!s->empty()) fresh.push_back(std::move(s));
    }
    pool_.install(std::move(fresh), live_fn(), priority_fn());
    std::function<void(DrillNode&)> refresh = [&](DrillNode& n) {
      for (std::size_t i = 0; i < rules.size(); ++i) {
        if (rules[i] == n.rule) {
          n.count = created.counts[i];
          if (config_.aggregate.is_sum()) n.sum = created.tallies[i];
          n.count_is_exact = true;
          break;
        }
      }
      for (auto& c : n.children) refresh(c);
    };
    if (config.aggregate.kind == config_.aggregate.kind && config.aggregate.measure == config_.aggregate.measure) {
      refresh(root_);
    }
    ++counters_.prefetch_scans;
    counters_.last_plan_objective = plan.objective;
    counters_.last_prefetch_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }

  std::shared_ptr<const Table> table_;
  DataView data_;
  SessionConfig config_;
  Rng rng_;
  Rng prefetch_rng_;
  SamplePool pool_;
  DrillNode root_;
  double m_w_ = 5;
  SessionCounters counters_;

  std::mutex gesture_mu_;
  mutable std::mutex state_mu_;

  mutable std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::condition_variable job_done_cv_;
  bool job_pending_ = false;
  bool job_running_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace sdd
