#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "sdd/error.hpp"

namespace sdd::lp {

/// maximize c.x subject to A x <= b, x >= 0, with b >= 0 so that the origin
/// is feasible. A non-empty `tie_break` is maximized second, among the
/// optima of c.x.
struct Problem {
  std::vector<double> c;
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  std::vector<double> tie_break;
};

enum class Status { optimal, unbounded };

struct Solution {
  Status status = Status::optimal;
  std::vector<double> x;
  double objective = 0;
};

/// Dense tableau simplex with Bland's rule (no cycling).
inline Solution solve(const Problem& p, double eps = 1e-11) {
  const std::size_t n = p.c.size();
  const std::size_t m = p.a.size();
  if (p.b.size() != m) throw Error(ErrorCode::invalid_argument, "lp: b has the wrong length");
  for (std::size_t i = 0; i < m; ++i) {
    if (p.a[i].size() != n) throw Error(ErrorCode::invalid_argument, "lp: ragged constraint matrix");
    if (p.b[i] < 0) throw Error(ErrorCode::invalid_argument, "lp: right-hand side must be non-negative");
  }
  // Columns 0..n-1 structural, n..n+m-1 slack, last column rhs. Row m is
  // the objective, row m+1 the tie-break objective.
  const std::size_t cols = n + m + 1;
  const bool lexicographic = !p.tie_break.empty();
  if (lexicographic && p.tie_break.size() != n) throw Error(ErrorCode::invalid_argument, "lp: tie_break length");
  std::vector<std::vector<double>> t(m + 2, std::vector<double>(cols, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[i][j] = p.a[i][j];
    t[i][n + i] = 1.0;
    t[i][cols - 1] = p.b[i];
    basis[i] = n + i;
  }
  for (std::size_t j = 0; j < n; ++j) {
    t[m][j] = -p.c[j];
    if (lexicographic) t[m + 1][j] = -p.tie_break[j];
  }

  auto pivot_on = [&](std::size_t leave, std::size_t enter) {
    const double pivot = t[leave][enter];
    for (auto& v : t[leave]) v /= pivot;
    for (std::size_t i = 0; i < m + 2; ++i) {
      if (i == leave) continue;
      const double f = t[i][enter];
      if (f == 0) continue;
      for (std::size_t j = 0; j < cols; ++j) t[i][j] -= f * t[leave][j];
    }
    basis[leave] = enter;
  };
  // Bland: lowest eligible column enters; ties in the ratio test go to the
  // lowest basic index.
  auto ratio_test = [&](std::size_t enter) {
    std::size_t leave = m;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (t[i][enter] > eps) {
        double r = t[i][cols - 1] / t[i][enter];
        if (r < best_ratio - eps || (std::abs(r - best_ratio) <= eps && leave < m && basis[i] < basis[leave])) {
          best_ratio = r;
          leave = i;
        }
      }
    }
    return leave;
  };

  for (std::size_t phase = 0; phase < (lexicographic ? 2u : 1u); ++phase) {
    const std::size_t row = m + phase;
    for (;;) {
      std::size_t enter = cols;
      for (std::size_t j = 0; j + 1 < cols; ++j) {
        if (phase == 1 && std::abs(t[m][j]) > eps) continue;  // would leave the optimal face
        if (t[row][j] < -eps) {
          enter = j;
          break;
        }
      }
      if (enter == cols) break;
      std::size_t leave = ratio_test(enter);
      if (leave == m) {
        if (phase == 0) return {Status::unbounded, {}, std::numeric_limits<double>::infinity()};
        break;
      }
      pivot_on(leave, enter);
    }
  }

  Solution s;
  s.x.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (basis[i] < n) s.x[basis[i]] = std::max(0.0, t[i][cols - 1]);
  }
  s.objective = 0;
  for (std::size_t j = 0; j < n; ++j) s.objective += p.c[j] * s.x[j];
  return s;
}

}  // namespace sdd::lp
