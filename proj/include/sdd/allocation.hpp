#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "sdd/error.hpp"
#include "sdd/lp.hpp"

namespace sdd {

/// Sample-memory allocation over the displayed drill tree. Nodes are
/// indexed 0..N-1; leaves are the nodes without children.
struct AllocationProblem {
  std::vector<std::ptrdiff_t> parent;      // -1 for roots
  std::vector<double> probability;         // p_r, read for leaves only
  std::vector<double> selectivity;         // S(parent(r), r)
  std::vector<std::vector<double>> ratio;  // full S(i, j); empty = parent/child only
  std::size_t memory = 0;                  // M
  std::size_t min_ss = 1;

  std::size_t size() const noexcept { return parent.size(); }

  std::vector<bool> leaves() const {
    std::vector<bool> leaf(size(), true);
    for (auto p : parent) {
      if (p >= 0) leaf[static_cast<std::size_t>(p)] = false;
    }
    return leaf;
  }

  /// S(i, j): expected fraction of a sample drawn for i usable by j.
  double ratio_of(std::size_t i, std::size_t j) const {
    if (!ratio.empty()) return ratio[i][j];
    if (i == j) return 1.0;
    if (parent[j] == static_cast<std::ptrdiff_t>(i)) return selectivity[j];
    return 0.0;
  }

  void validate() const {
    const std::size_t n = size();
    if (probability.size() != n || selectivity.size() != n) {
      throw Error(ErrorCode::invalid_argument, "allocation problem vectors differ in length");
    }
    if (min_ss == 0) throw Error(ErrorCode::invalid_argument, "minSS must be positive");
    for (std::size_t i = 0; i < n; ++i) {
      if (parent[i] >= static_cast<std::ptrdiff_t>(n)) throw Error(ErrorCode::invalid_argument, "parent out of range");
      if (selectivity[i] < 0 || selectivity[i] > 1) {
        throw Error(ErrorCode::invalid_argument, "selectivity ratios lie in [0, 1]");
      }
      if (probability[i] < 0) throw Error(ErrorCode::invalid_argument, "probabilities must be non-negative");
    }
    if (!ratio.empty()) {
      if (ratio.size() != n) throw Error(ErrorCode::invalid_argument, "ratio matrix has the wrong size");
      for (const auto& row : ratio) {
        if (row.size() != n) throw Error(ErrorCode::invalid_argument, "ratio matrix has the wrong size");
      }
    }
  }
};

struct AllocationPlan {
  std::vector<std::size_t> budgets;  // n_r per node
  double objective = 0;

  std::size_t total() const { return std::accumulate(budgets.begin(), budgets.end(), std::size_t{0}); }
};

/// ess(j) = sum over i of S(i, j) * n_i.
inline double effective_sample_size(const AllocationProblem& p, std::span<const double> n, std::size_t j) {
  double ess = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (n[i] != 0) ess += p.ratio_of(i, j) * n[i];
  }
  return ess;
}

namespace detail {

inline std::vector<double> as_real(std::span<const std::size_t> n) { return {n.begin(), n.end()}; }

inline constexpr double kSatisfyEps = 1e-9;

}  // namespace detail

/// Probability that the next drill-down lands on a leaf with ess >= minSS.
inline double satisfied_probability(const AllocationProblem& p, std::span<const double> n) {
  const auto leaf = p.leaves();
  double total = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (leaf[j] && effective_sample_size(p, n, j) >= static_cast<double>(p.min_ss) - detail::kSatisfyEps) {
      total += p.probability[j];
    }
  }
  return total;
}

inline double satisfied_probability(const AllocationProblem& p, std::span<const std::size_t> n) {
  auto real = detail::as_real(n);
  return satisfied_probability(p, std::span<const double>(real));
}

/// The relaxed objective: sum over leaves of p * max(-1, -ess / minSS).
inline double hinge_objective(const AllocationProblem& p, std::span<const double> n) {
  const auto leaf = p.leaves();
  double total = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!leaf[j]) continue;
    total += p.probability[j] * std::max(-1.0, -effective_sample_size(p, n, j) / static_cast<double>(p.min_ss));
  }
  return total;
}

inline double hinge_objective(const AllocationProblem& p, std::span<const std::size_t> n) {
  auto real = detail::as_real(n);
  return hinge_objective(p, std::span<const double>(real));
}

/// Memory quantum of the DP, in tuples.
inline std::size_t allocation_quantum(const AllocationProblem& p, std::size_t max_units = 2000) {
  std::size_t q = std::max<std::size_t>(1, p.min_ss / 100);
  if (p.memory / q > max_units) q = (p.memory + max_units - 1) / max_units;
  return q;
}

/// Knapsack over per-parent option groups under the parent/child
/// simplification: a leaf's ess only counts samples drawn for itself and for
/// its parent. For a parent r0 with leaf children r1..rd, every grid budget
/// n0 of the parent is tried; children with n0 * S(r0, ri) >= minSS come for
/// free, and any subset of the others may be topped up with their own
/// samples of minSS - n0 * S(r0, ri) tuples (rounded up to the grid). The
/// cost of an option is therefore n0 + the top-ups. A parentless leaf forms
/// its own group. Groups are then combined by
///   A[i+1][j] = max over u of A[i][j - u] + best_i[u].
inline AllocationPlan allocate_dp(const AllocationProblem& p, std::size_t max_children = 12) {
  p.validate();
  const std::size_t n = p.size();
  const auto leaf = p.leaves();
  const std::size_t q = allocation_quantum(p);
  const std::size_t units = p.memory / q;
  const double min_ss = static_cast<double>(p.min_ss);
  const double qd = static_cast<double>(q);
  auto grid_ceil = [&](double tuples) {
    return static_cast<std::size_t>(std::max(0.0, std::ceil(tuples / qd - detail::kSatisfyEps)));
  };

  struct Option {
    double value = -1;
    std::size_t parent_units = 0;
    std::vector<std::pair<std::size_t, std::size_t>> top_ups;  // (node, units)
  };
  struct Group {
    std::optional<std::size_t> parent;
    std::vector<Option> best;  // indexed by cost in units; value < 0 = unreachable
  };
  std::vector<Group> groups;

  std::vector<std::vector<std::size_t>> leaf_children(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (p.parent[i] >= 0 && leaf[i]) leaf_children[static_cast<std::size_t>(p.parent[i])].push_back(i);
  }

  for (std::size_t r = 0; r < n; ++r) {
    if (p.parent[r] < 0 && leaf[r]) {
      Group g;
      g.best.assign(units + 1, Option{});
      g.best[0].value = 0;
      const std::size_t need = grid_ceil(min_ss);
      if (need <= units) g.best[need] = Option{p.probability[r], 0, {{r, need}}};
      groups.push_back(std::move(g));
      continue;
    }
    const auto& kids = leaf_children[r];
    if (kids.empty()) continue;
    if (kids.size() > max_children) {
      throw Error(ErrorCode::too_large, "node has more leaf children than the enumeration allows");
    }
    Group g;
    g.parent = r;
    g.best.assign(units + 1, Option{});
    double min_ratio = 1.0;
    bool any_positive = false;
    for (auto c : kids) {
      if (p.selectivity[c] > 0) {
        min_ratio = std::min(min_ratio, p.selectivity[c]);
        any_positive = true;
      }
    }
    const std::size_t g_max = any_positive ? std::min(units, grid_ceil(min_ss / min_ratio)) : 0;
    std::vector<std::size_t> open;
    std::vector<std::size_t> open_cost;
    for (std::size_t pu = 0; pu <= g_max; ++pu) {
      const double n0 = static_cast<double>(pu) * qd;
      double free_value = 0;
      open.clear();
      open_cost.clear();
      for (auto c : kids) {
        const double got = n0 * p.selectivity[c];
        if (got >= min_ss - detail::kSatisfyEps) {
          free_value += p.probability[c];
        } else {
          open.push_back(c);
          open_cost.push_back(grid_ceil(min_ss - got));
        }
      }
      const std::size_t m = open.size();
      for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
        std::size_t cost = pu;
        double value = free_value;
        for (std::size_t i = 0; i < m; ++i) {
          if (mask >> i & 1) {
            cost += open_cost[i];
            value += p.probability[open[i]];
          }
        }
        if (cost > units || value <= g.best[cost].value) continue;
        Option o{value, pu, {}};
        for (std::size_t i = 0; i < m; ++i) {
          if (mask >> i & 1) o.top_ups.push_back({open[i], open_cost[i]});
        }
        g.best[cost] = std::move(o);
      }
    }
    groups.push_back(std::move(g));
  }

  // a[j]: best value of the groups so far within j units.
  std::vector<double> a(units + 1, 0.0);
  std::vector<std::vector<std::size_t>> pick(groups.size(), std::vector<std::size_t>(units + 1, 0));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& best = groups[gi].best;
    std::vector<std::size_t> reachable;
    for (std::size_t u = 0; u <= units; ++u) {
      if (best[u].value >= 0) reachable.push_back(u);
    }
    std::vector<double> next(units + 1, -1.0);
    for (std::size_t j = 0; j <= units; ++j) {
      for (auto u : reachable) {
        if (u > j) break;
        const double v = a[j - u] + best[u].value;
        if (v > next[j] + 1e-15) {
          next[j] = v;
          pick[gi][j] = u;
        }
      }
    }
    a = std::move(next);
  }

  AllocationPlan plan;
  plan.budgets.assign(n, 0);
  std::size_t j = units;
  for (std::size_t gi = groups.size(); gi-- > 0;) {
    const std::size_t u = pick[gi][j];
    const auto& o = groups[gi].best[u];
    if (groups[gi].parent) plan.budgets[*groups[gi].parent] = o.parent_units * q;
    for (const auto& [node, tu] : o.top_ups) plan.budgets[node] = tu * q;
    j -= u;
  }
  plan.objective = satisfied_probability(p, std::span<const std::size_t>(plan.budgets));
  return plan;
}

struct ConvexOptions {
  std::size_t iterations = 2000;
  std::optional<double> step;  // initial step; default M / sqrt(iterations)
  bool polish = true;          // finish with an exact LP solve of the relaxation
};

struct ConvexTrace {
  std::vector<double> accepted;  // objective after each accepted iterate
};

namespace detail {

/// Euclidean projection onto {x >= 0, sum x <= m}.
inline void project_capped_simplex(std::vector<double>& x, double m) {
  for (auto& v : x) v = std::max(0.0, v);
  double sum = std::accumulate(x.begin(), x.end(), 0.0);
  if (sum <= m) return;
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double acc = 0;
  double theta = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    acc += sorted[i];
    double t = (acc - m) / static_cast<double>(i + 1);
    if (i + 1 == sorted.size() || sorted[i + 1] <= t) {
      theta = t;
      break;
    }
  }
  for (auto& v : x) v = std::max(0.0, v - theta);
}

inline std::vector<double> hinge_subgradient(const AllocationProblem& p, const std::vector<double>& n,
                                             const std::vector<bool>& leaf) {
  std::vector<double> g(p.size(), 0.0);
  const double ms = static_cast<double>(p.min_ss);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!leaf[j] || p.probability[j] == 0) continue;
    if (effective_sample_size(p, n, j) >= ms) continue;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double s = p.ratio_of(i, j);
      if (s != 0) g[i] -= p.probability[j] * s / ms;
    }
  }
  return g;
}

/// max sum p_l y_l  s.t.  y_l <= 1,  minSS * y_l <= ess_l,  sum n <= M.
inline std::vector<double> solve_relaxation(const AllocationProblem& p, const std::vector<bool>& leaf) {
  const std::size_t n = p.size();
  std::vector<std::size_t> ls;
  for (std::size_t j = 0; j < n; ++j) {
    if (leaf[j]) ls.push_back(j);
  }
  lp::Problem prob;
  const std::size_t vars = n + ls.size();
  prob.c.assign(vars, 0.0);
  for (std::size_t k = 0; k < ls.size(); ++k) prob.c[n + k] = p.probability[ls[k]];
  for (std::size_t k = 0; k < ls.size(); ++k) {
    std::vector<double> cap(vars, 0.0);
    cap[n + k] = 1.0;
    prob.a.push_back(cap);
    prob.b.push_back(1.0);
    std::vector<double> cover(vars, 0.0);
    cover[n + k] = static_cast<double>(p.min_ss);
    for (std::size_t i = 0; i < n; ++i) cover[i] = -p.ratio_of(i, ls[k]);
    prob.a.push_back(cover);
    prob.b.push_back(0.0);
  }
  std::vector<double> mem(vars, 0.0);
  for (std::size_t i = 0; i < n; ++i) mem[i] = 1.0;
  // Among optimal allocations prefer the one using the least memory, which
  // leaves room for rounding up.
  prob.tie_break.assign(vars, 0.0);
  for (std::size_t i = 0; i < n; ++i) prob.tie_break[i] = -1.0;
  prob.a.push_back(mem);
  prob.b.push_back(static_cast<double>(p.memory));
  auto sol = lp::solve(prob);
  std::vector<double> out(sol.x.begin(), sol.x.begin() + static_cast<std::ptrdiff_t>(n));
  detail::project_capped_simplex(out, static_cast<double>(p.memory));
  return out;
}

/// Integer budgets near a real solution within sum <= M: the better of
/// ceil-then-trim (largest fractional part first) and floor-then-fill.
/// Integer local search: drops units that buy nothing, spends the slack
/// greedily and moves single units between nodes while the objective drops.
inline void improve_integer(const AllocationProblem& p, std::vector<std::size_t>& b) {
  const std::size_t n = b.size();
  auto eval = [&](const std::vector<std::size_t>& v) { return hinge_objective(p, std::span<const std::size_t>(v)); };
  const double tol = 1e-12;
  double f = eval(b);
  std::size_t used = std::accumulate(b.begin(), b.end(), std::size_t{0});
  for (std::size_t round = 0; round < 8 * n + 64; ++round) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      while (b[i] > 0) {
        --b[i];
        double g = eval(b);
        if (g <= f + tol) {
          f = std::min(f, g);
          --used;
          changed = true;
        } else {
          ++b[i];
          break;
        }
      }
    }
    while (used < p.memory) {
      std::size_t best = n;
      double best_f = f - tol;
      for (std::size_t i = 0; i < n; ++i) {
        ++b[i];
        double g = eval(b);
        --b[i];
        if (g < best_f) {
          best_f = g;
          best = i;
        }
      }
      if (best == n) break;
      ++b[best];
      ++used;
      f = best_f;
      changed = true;
    }
    std::size_t from = n, to = n;
    double best_f = f - tol;
    for (std::size_t i = 0; i < n; ++i) {
      if (b[i] == 0) continue;
      --b[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        ++b[j];
        double g = eval(b);
        --b[j];
        if (g < best_f) {
          best_f = g;
          from = i;
          to = j;
        }
      }
      ++b[i];
    }
    if (from != n) {
      --b[from];
      ++b[to];
      f = best_f;
      changed = true;
    }
    if (!changed) break;
  }
}

/// Fills leaf budgets greedily by probability, given the internal budgets
/// already in `b`. Returns false when the internal budgets exceed memory.
inline bool fill_leaves(const AllocationProblem& p, const std::vector<bool>& leaf, std::vector<std::size_t>& b) {
  std::size_t used = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (leaf[i]) b[i] = 0;
    else used += b[i];
  }
  if (used > p.memory) return false;
  std::size_t left = p.memory - used;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (leaf[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return p.probability[x] > p.probability[y]; });
  auto real = as_real(b);
  for (auto l : order) {
    double need = static_cast<double>(p.min_ss) - effective_sample_size(p, std::span<const double>(real), l);
    if (need <= 0) continue;
    auto units = std::min(left, static_cast<std::size_t>(std::ceil(need - kSatisfyEps)));
    b[l] = units;
    real[l] = static_cast<double>(units);
    left -= units;
  }
  return true;
}

/// Coordinate search over internal budgets with greedily filled leaves.
/// Candidate values for a node are 0 and the budgets at which one of its
/// descendants becomes satisfied from that node alone.
inline void search_internal(const AllocationProblem& p, std::vector<std::size_t>& best) {
  const std::size_t n = best.size();
  const auto leaf = p.leaves();
  auto eval = [&](const std::vector<std::size_t>& v) { return hinge_objective(p, std::span<const std::size_t>(v)); };
  double best_f = eval(best);
  auto consider = [&](std::vector<std::size_t> cand) {
    if (!fill_leaves(p, leaf, cand)) return false;
    double f = eval(cand);
    if (f < best_f - 1e-12) {
      best_f = f;
      best = std::move(cand);
      return true;
    }
    return false;
  };
  consider(best);
  consider(std::vector<std::size_t>(n, 0));
  for (std::size_t sweep = 0; sweep < 16; ++sweep) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (leaf[i]) continue;
      std::vector<std::size_t> values{0};
      auto others = as_real(best);
      others[i] = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (leaf[j]) others[j] = 0;
      }
      for (std::size_t j = 0; j < n; ++j) {
        double r = p.ratio_of(i, j);
        if (j == i || !leaf[j] || r <= 0) continue;
        double need = static_cast<double>(p.min_ss) - effective_sample_size(p, std::span<const double>(others), j);
        if (need <= 0) continue;
        auto v = static_cast<std::size_t>(std::ceil(need / r - kSatisfyEps));
        if (v <= p.memory) values.push_back(v);
        if (v > 0 && v - 1 <= p.memory) values.push_back(v - 1);
      }
      for (auto v : values) {
        auto cand = best;
        cand[i] = v;
        changed |= consider(std::move(cand));
      }
    }
    if (!changed) break;
  }
}

inline std::vector<std::size_t> round_budgets(const AllocationProblem& p, const std::vector<double>& x) {
  const std::size_t n = x.size();
  auto eval = [&](const std::vector<std::size_t>& b) { return hinge_objective(p, std::span<const std::size_t>(b)); };

  std::vector<std::size_t> up(n);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    up[i] = static_cast<std::size_t>(std::ceil(x[i] - 1e-9));
    total += up[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] - std::floor(x[a]) > x[b] - std::floor(x[b]);
  });
  for (std::size_t pass = 0; total > p.memory && pass < 64; ++pass) {
    for (auto i : order) {
      if (total <= p.memory) break;
      if (up[i] > 0) {
        --up[i];
        --total;
      }
    }
  }

  std::vector<std::size_t> down(n);
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    down[i] = static_cast<std::size_t>(std::floor(x[i] + 1e-9));
    used += down[i];
  }
  while (used > p.memory) {
    auto it = std::max_element(down.begin(), down.end());
    --*it;
    --used;
  }
  for (std::size_t extra = 0; used < p.memory && extra < 4 * n + 16; ++extra) {
    double base = eval(down);
    std::size_t best = n;
    double best_gain = 1e-15;
    for (std::size_t i = 0; i < n; ++i) {
      ++down[i];
      double gain = base - eval(down);
      --down[i];
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    if (best == n) break;
    ++down[best];
    ++used;
  }
  auto b = eval(down) < eval(up) ? down : up;
  improve_integer(p, b);
  search_internal(p, b);
  improve_integer(p, b);
  return b;
}

}  // namespace detail

/// Projected subgradient descent on the hinge relaxation
///   minimize sum over leaves of p * max(-1, -ess / minSS)
///   subject to n >= 0, sum n <= M,
/// from n = 0 with normalized steps step / sqrt(t); an iterate is accepted
/// only if it does not increase the objective. The result is optionally
/// refined by solving the relaxation as a linear program, then rounded to
/// integers within the memory bound.
inline AllocationPlan allocate_convex(const AllocationProblem& p, const ConvexOptions& options = {},
                                      ConvexTrace* trace = nullptr) {
  p.validate();
  const std::size_t n = p.size();
  const auto leaf = p.leaves();
  const double m = static_cast<double>(p.memory);
  AllocationPlan plan;
  plan.budgets.assign(n, 0);
  if (n == 0 || p.memory == 0) {
    plan.objective = 0;
    return plan;
  }
  const double step0 = options.step.value_or(m / std::sqrt(static_cast<double>(std::max<std::size_t>(1, options.iterations))));

  std::vector<double> x(n, 0.0);
  double fx = hinge_objective(p, std::span<const double>(x));
  if (trace) trace->accepted.push_back(fx);
  for (std::size_t t = 1; t <= options.iterations; ++t) {
    auto g = detail::hinge_subgradient(p, x, leaf);
    double norm = 0;
    for (double v : g) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0) break;
    const double step = step0 / std::sqrt(static_cast<double>(t));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - step * g[i] / norm;
    detail::project_capped_simplex(y, m);
    const double fy = hinge_objective(p, std::span<const double>(y));
    if (fy <= fx) {
      x = std::move(y);
      fx = fy;
      if (trace) trace->accepted.push_back(fx);
    }
  }
  if (options.polish) {
    auto z = detail::solve_relaxation(p, leaf);
    const double fz = hinge_objective(p, std::span<const double>(z));
    if (fz < fx) {
      x = std::move(z);
      fx = fz;
      if (trace) trace->accepted.push_back(fx);
    }
  }
  plan.budgets = detail::round_budgets(p, x);
  plan.objective = hinge_objective(p, std::span<const std::size_t>(plan.budgets));
  return plan;
}

}  // namespace sdd
