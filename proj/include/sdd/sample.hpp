#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdd/data_view.hpp"
#include "sdd/error.hpp"
#include "sdd/reservoir.hpp"
#include "sdd/rule.hpp"
#include "sdd/table.hpp"

namespace sdd {

/// A uniform sample of the tuples covered by `filter`. Columns instantiated
/// in the filter are not stored; their value is implied by the filter.
struct Sample {
  Rule filter;
  double scale = 1.0;       // N_s
  std::size_t capacity = 0;  // n_r
  double population = 0;    // Count(filter): exact for drawn samples, estimated for unions
  std::vector<std::size_t> stored;
  std::vector<Code> cells;
  std::vector<RowId> row_ids;
  std::vector<std::vector<double>> measures;

  std::size_t size() const noexcept { return row_ids.size(); }
  bool empty() const noexcept { return row_ids.empty(); }
  /// Holds every tuple of its filter, so counts over it are exact.
  bool complete() const noexcept { return scale == 1.0 && static_cast<double>(size()) == population; }

  /// Reconstructs the full code vector of row `i`.
  void row(std::size_t i, std::vector<Code>& out) const {
    out.assign(filter.cells().begin(), filter.cells().end());
    const std::size_t w = stored.size();
    for (std::size_t j = 0; j < w; ++j) out[stored[j]] = cells[i * w + j];
  }

  /// Appends one full row, eliding the filter's columns.
  void push(std::span<const Code> full, RowId id, std::span<const double> measure_values) {
    for (auto c : stored) cells.push_back(full[c]);
    row_ids.push_back(id);
    if (measures.size() < measure_values.size()) measures.resize(measure_values.size());
    for (std::size_t m = 0; m < measure_values.size(); ++m) measures[m].push_back(measure_values[m]);
  }

  static Sample empty_for(const Rule& filter) {
    Sample s;
    s.filter = filter;
    for (std::size_t c = 0; c < filter.arity(); ++c) {
      if (filter.is_star(c)) s.stored.push_back(c);
    }
    return s;
  }

  /// Materializes the rows as a view whose aggregates are scaled by N_s.
  DataView view(std::span<const ColumnSchema> columns) const {
    DataView::Storage st;
    st.codes.reserve(size() * filter.arity());
    std::vector<Code> full;
    for (std::size_t i = 0; i < size(); ++i) {
      row(i, full);
      st.codes.insert(st.codes.end(), full.begin(), full.end());
    }
    st.row_ids = row_ids;
    st.measures = measures;
    return DataView::owning(columns, std::move(st), scale, complete());
  }
};

using SamplePtr = std::shared_ptr<const Sample>;
using PoolSnapshot = std::shared_ptr<const std::vector<SamplePtr>>;

/// Per-rule memory budget n_r, in tuples.
struct Budget {
  Rule rule;
  std::size_t size = 0;
};

struct CreateResult {
  std::vector<SamplePtr> samples;  // one per budget, same order
  std::vector<double> tallies;     // aggregate of each `count_rules` entry over the full data
  std::vector<double> counts;      // Count of each `count_rules` entry, whatever the aggregate
};

/// One scan over `data`: an independent reservoir per budget plus exact
/// tallies for `count_rules`. Each sample's N_s is its rule's exact cover
/// count divided by the number of tuples kept.
inline CreateResult create_pass(const DataView& data, std::span<const Budget> budgets, Rng& rng,
                                std::span<const Rule> count_rules = {}, const Aggregate& agg = {}) {
  data.check(agg);
  std::vector<Reservoir<std::uint32_t>> reservoirs;
  reservoirs.reserve(budgets.size());
  for (const auto& b : budgets) reservoirs.emplace_back(b.size);
  std::vector<double> tallies(count_rules.size(), 0.0);
  std::vector<double> counts(count_rules.size(), 0.0);
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    auto row = data.row(i);
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      if (covers(budgets[b].rule, row)) reservoirs[b].offer(static_cast<std::uint32_t>(i), rng);
    }
    for (std::size_t r = 0; r < count_rules.size(); ++r) {
      if (covers(count_rules[r], row)) {
        tallies[r] += data.mass(agg, i);
        counts[r] += 1;
      }
    }
  }
  CreateResult out;
  for (auto& t : tallies) t *= data.scale();
  for (auto& t : counts) t *= data.scale();
  std::vector<double> measure_values(data.num_measures());
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    auto s = Sample::empty_for(budgets[b].rule);
    s.capacity = budgets[b].size;
    auto picks = reservoirs[b].items();
    std::sort(picks.begin(), picks.end());
    for (auto i : picks) {
      for (std::size_t m = 0; m < data.num_measures(); ++m) measure_values[m] = data.measure(m, i);
      s.push(data.row(i), data.row_id(i), measure_values);
    }
    s.population = static_cast<double>(reservoirs[b].seen());
    s.scale = s.empty() ? 1.0 : s.population / static_cast<double>(s.size());
    out.samples.push_back(std::make_shared<const Sample>(std::move(s)));
  }
  out.tallies = std::move(tallies);
  out.counts = std::move(counts);
  return out;
}

/// A pooled sample drawn for exactly `rule` that is large enough, or that
/// holds every tuple of the rule.
inline SamplePtr find(std::span<const SamplePtr> pool, const Rule& rule, std::size_t min_ss) {
  SamplePtr best;
  for (const auto& s : pool) {
    if (!(s->filter == rule)) continue;
    if (s->size() < min_ss && !s->complete()) continue;
    if (!best || s->size() > best->size()) best = s;
  }
  return best;
}

/// Unions the tuples covered by `rule` from every pooled sample whose
/// filter is a sub-rule of `rule`, de-duplicated by row id. Succeeds when
/// the union reaches `min_ss` tuples, or when some contributor is complete
/// (the result is then exact).
inline std::optional<Sample> combine(std::span<const SamplePtr> pool, const Rule& rule, std::size_t min_ss) {
  struct Part {
    SamplePtr sample;
    std::vector<std::size_t> hits;
  };
  std::vector<Part> parts;
  std::vector<Code> full;
  for (const auto& s : pool) {
    if (!is_subrule(s->filter, rule)) continue;
    Part p{s, {}};
    for (std::size_t i = 0; i < s->size(); ++i) {
      s->row(i, full);
      if (covers(rule, full)) p.hits.push_back(i);
    }
    parts.push_back(std::move(p));
  }
  if (parts.empty()) return std::nullopt;
  std::stable_sort(parts.begin(), parts.end(), [](const Part& a, const Part& b) {
    if (a.sample->size() != b.sample->size()) return a.sample->size() > b.sample->size();
    return pattern_less(a.sample->filter, b.sample->filter);
  });

  auto gather = [&](std::span<const Part> from) {
    Sample out = Sample::empty_for(rule);
    std::unordered_set<RowId> seen;
    std::vector<double> mv;
    for (const auto& p : from) {
      mv.assign(p.sample->measures.size(), 0.0);
      for (auto i : p.hits) {
        if (!seen.insert(p.sample->row_ids[i]).second) continue;
        p.sample->row(i, full);
        for (std::size_t m = 0; m < mv.size(); ++m) mv[m] = p.sample->measures[m][i];
        out.push(full, p.sample->row_ids[i], mv);
      }
    }
    out.capacity = out.size();
    return out;
  };

  for (const auto& p : parts) {
    if (!p.sample->complete()) continue;
    Sample exact = gather(std::span<const Part>(&p, 1));
    exact.population = static_cast<double>(exact.size());
    exact.scale = 1.0;
    return exact;
  }

  Sample out = gather(parts);
  if (out.size() < min_ss || out.empty()) return std::nullopt;
  // Estimated cover count: exact when a sample was drawn for this very rule,
  // otherwise from the largest contributor.
  double estimate = static_cast<double>(parts.front().hits.size()) * parts.front().sample->scale;
  for (const auto& p : parts) {
    if (p.sample->filter == rule) {
      estimate = p.sample->population;
      break;
    }
  }
  out.population = estimate;
  out.scale = estimate / static_cast<double>(out.size());
  return out;
}

/// Uniform subsample of `n` rows; N_s grows so the estimated count is kept.
inline Sample subsample(const Sample& s, std::size_t n, Rng& rng) {
  if (n >= s.size()) return s;
  Sample out = Sample::empty_for(s.filter);
  out.capacity = n;
  auto picks = sample_indices(s.size(), n, rng);
  std::vector<Code> full;
  std::vector<double> mv(s.measures.size());
  for (auto i : picks) {
    s.row(i, full);
    for (std::size_t m = 0; m < mv.size(); ++m) mv[m] = s.measures[m][i];
    out.push(full, s.row_ids[i], mv);
  }
  out.population = s.scale * static_cast<double>(s.size());
  out.scale = out.population / static_cast<double>(n);
  return out;
}

/// Normal-approximation interval for a count estimated from a sample of
/// `sample_size` tuples scaled by N_s.
inline std::pair<double, double> confidence_interval(double estimate, std::size_t sample_size, double scale,
                                                     double z) {
  if (sample_size == 0) throw Error(ErrorCode::invalid_argument, "confidence interval of an empty sample");
  const double n = static_cast<double>(sample_size);
  const double p = std::clamp(estimate / (scale * n), 0.0, 1.0);
  const double half = z * scale * std::sqrt(n * p * (1 - p));
  return {std::max(0.0, estimate - half), std::min(scale * n, estimate + half)};
}

inline std::pair<double, double> confidence_interval(double estimate, const Sample& sample, double z) {
  return confidence_interval(estimate, sample.size(), sample.scale, z);
}

/// S(sub, super): the fraction of the sub-rule's tuples the super-rule covers.
inline double selectivity_ratio(double count_sub, double count_super) {
  if (!(count_sub > 0)) throw Error(ErrorCode::invalid_argument, "selectivity ratio of a rule covering nothing");
  return std::clamp(count_super / count_sub, 0.0, 1.0);
}

/// rho * |C| * |c_min|, rounded up.
inline std::size_t suggest_min_ss(const Table& table, double rho) {
  if (!(rho > 0)) throw Error(ErrorCode::invalid_argument, "rho must be positive");
  if (table.num_rows() == 0 || table.num_columns() == 0) {
    throw Error(ErrorCode::invalid_argument, "cannot suggest minSS for an empty table");
  }
  std::size_t c_min = table.column(0).distinct_count();
  for (const auto& c : table.columns()) c_min = std::min(c_min, c.distinct_count());
  return static_cast<std::size_t>(
      std::ceil(rho * static_cast<double>(table.num_columns()) * static_cast<double>(c_min) - 1e-9));
}

/// Samples shared between foreground drill-downs and the prefetch job.
/// Readers take an immutable snapshot; writers publish a whole new vector.
class SamplePool {
 public:
  explicit SamplePool(std::size_t capacity = 0) : capacity_(capacity), current_(std::make_shared<std::vector<SamplePtr>>()) {}

  PoolSnapshot snapshot() const {
    std::lock_guard lock(mu_);
    return current_;
  }

  std::size_t capacity() const {
    std::lock_guard lock(mu_);
    return capacity_;
  }

  void set_capacity(std::size_t capacity) {
    std::lock_guard lock(mu_);
    capacity_ = capacity;
  }

  std::size_t total_rows() const {
    auto snap = snapshot();
    std::size_t n = 0;
    for (const auto& s : *snap) n += s->size();
    return n;
  }

  /// Adds `fresh` (replacing samples with the same filter) and evicts until
  /// the pool fits its capacity: first samples whose filter is no longer
  /// live, then the lowest priority ones. Fresh samples are never evicted.
  void install(std::vector<SamplePtr> fresh, const std::function<bool(const Rule&)>& live,
               const std::function<double(const Rule&)>& priority) {
    std::lock_guard lock(mu_);
    std::vector<SamplePtr> kept;
    for (const auto& s : *current_) {
      bool replaced = std::any_of(fresh.begin(), fresh.end(), [&](const SamplePtr& f) { return f->filter == s->filter; });
      if (!replaced) kept.push_back(s);
    }
    std::size_t used = 0;
    for (const auto& s : fresh) used += s->size();
    for (const auto& s : kept) used += s->size();
    if (used > capacity_) {
      // Eviction order: stale first, then by ascending priority, then smaller first.
      std::vector<std::pair<std::pair<int, double>, std::size_t>> order;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        const bool alive = live && live(kept[i]->filter);
        order.push_back({{alive ? 1 : 0, priority ? priority(kept[i]->filter) : 0.0}, i});
      }
      std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<bool> drop(kept.size(), false);
      for (const auto& [key, i] : order) {
        if (used <= capacity_) break;
        drop[i] = true;
        used -= kept[i]->size();
        ++evictions_;
      }
      std::vector<SamplePtr> survivors;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (!drop[i]) survivors.push_back(kept[i]);
      }
      kept = std::move(survivors);
    }
    for (auto& s : fresh) kept.push_back(std::move(s));
    current_ = std::make_shared<const std::vector<SamplePtr>>(std::move(kept));
  }

  void clear() {
    std::lock_guard lock(mu_);
    current_ = std::make_shared<const std::vector<SamplePtr>>();
  }

  std::size_t evictions() const {
    std::lock_guard lock(mu_);
    return evictions_;
  }

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::shared_ptr<const std::vector<SamplePtr>> current_;
  std::size_t evictions_ = 0;
};

}  // namespace sdd
