#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sdd/table.hpp"

namespace sdd::fixtures {

/// Builds a table from string rows; codes follow first appearance.
inline Table make_table(const std::vector<std::string>& names, const std::vector<std::vector<std::string>>& rows,
                        std::vector<MeasureColumn> measures = {}) {
  std::vector<ColumnSchema> columns;
  for (const auto& n : names) columns.emplace_back(n);
  std::vector<Code> codes;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < names.size(); ++c) codes.push_back(columns[c].intern(row[c]));
  }
  return Table(std::move(columns), std::move(codes), std::move(measures));
}

/// Builds a table straight from codes, with value strings "0", "1", ...
inline Table make_coded(std::size_t width, const std::vector<std::vector<Code>>& rows,
                        const std::vector<std::size_t>& domain = {}) {
  std::vector<ColumnSchema> columns;
  for (std::size_t c = 0; c < width; ++c) {
    columns.emplace_back(std::string(1, static_cast<char>('A' + c)));
    std::size_t d = domain.empty() ? 0 : domain[c];
    for (const auto& row : rows) d = std::max<std::size_t>(d, static_cast<std::size_t>(row[c]) + 1);
    for (std::size_t v = 0; v < d; ++v) columns.back().intern(std::to_string(v));
  }
  std::vector<Code> codes;
  for (const auto& row : rows) codes.insert(codes.end(), row.begin(), row.end());
  return Table(std::move(columns), std::move(codes));
}

/// 1000 rows over (A, B): 100 copies of (a, b1) and 900 rows (a, b_i) with
/// distinct b_i.
inline Table fixture_f1() {
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({"a", "b1"});
  for (int i = 0; i < 900; ++i) rows.push_back({"a", "x" + std::to_string(i)});
  return make_table({"A", "B"}, rows);
}

/// Binary X, Y, Z: (0,0,0) x3, (0,1,1) x2, (1,1,1) x2, (1,0,0) x1.
inline Table fixture_f2() {
  std::vector<std::vector<std::string>> rows;
  auto add = [&](int n, std::vector<std::string> r) {
    for (int i = 0; i < n; ++i) rows.push_back(r);
  };
  add(3, {"0", "0", "0"});
  add(2, {"0", "1", "1"});
  add(2, {"1", "1", "1"});
  add(1, {"1", "0", "0"});
  return make_table({"X", "Y", "Z"}, rows);
}

/// Random table: `rows` rows, `width` columns, values drawn from [0, values).
inline Table random_table(std::mt19937_64& rng, std::size_t rows, std::size_t width, int values) {
  std::uniform_int_distribution<int> pick(0, values - 1);
  std::vector<std::vector<Code>> data(rows, std::vector<Code>(width));
  for (auto& r : data) {
    for (auto& v : r) v = pick(rng);
  }
  return make_coded(width, data);
}

/// Random table with skewed, correlated columns: each value is drawn from a
/// geometric-like distribution, and column c copies column c-1 with
/// probability `copy`.
inline Table skewed_table(std::mt19937_64& rng, std::size_t rows, std::size_t width, int values, double copy = 0.3) {
  std::vector<double> weights;
  for (int v = 0; v < values; ++v) weights.push_back(std::pow(0.55, v));
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::bernoulli_distribution same(copy);
  std::vector<std::vector<Code>> data(rows, std::vector<Code>(width));
  for (auto& r : data) {
    for (std::size_t c = 0; c < width; ++c) r[c] = (c > 0 && same(rng)) ? r[c - 1] : pick(rng);
  }
  std::vector<std::size_t> domain(width, static_cast<std::size_t>(values));
  return make_coded(width, data, domain);
}

}  // namespace sdd::fixtures
