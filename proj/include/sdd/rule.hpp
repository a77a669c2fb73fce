#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdd/csv.hpp"
#include "sdd/error.hpp"
#include "sdd/table.hpp"

namespace sdd {

/// A pattern with one entry per column: a dictionary code or kStar.
class Rule {
 public:
  Rule() = default;
  explicit Rule(std::size_t arity) : cells_(arity, kStar) {}
  explicit Rule(std::vector<Code> cells) : cells_(std::move(cells)) {}
  Rule(std::initializer_list<Code> cells) : cells_(cells) {}

  static Rule trivial(std::size_t arity) { return Rule(arity); }

  std::size_t arity() const noexcept { return cells_.size(); }

  /// Number of instantiated (non-star) cells.
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](Code c) { return c != kStar; }));
  }

  bool is_trivial() const noexcept { return size() == 0; }
  bool is_star(std::size_t col) const { return cells_[col] == kStar; }

  Code operator[](std::size_t col) const { return cells_[col]; }
  Code& operator[](std::size_t col) { return cells_[col]; }

  std::span<const Code> cells() const noexcept { return cells_; }

  Rule with(std::size_t col, Code code) const {
    Rule r = *this;
    r.cells_[col] = code;
    return r;
  }

  bool operator==(const Rule&) const = default;

 private:
  std::vector<Code> cells_;
};

inline bool covers(std::span<const Code> rule, std::span<const Code> row) noexcept {
  for (std::size_t c = 0; c < rule.size(); ++c) {
    if (rule[c] != kStar && rule[c] != row[c]) return false;
  }
  return true;
}

inline bool covers(const Rule& rule, std::span<const Code> row) noexcept { return covers(rule.cells(), row); }

/// True iff `general` is a sub-rule of `specific`: wherever `general` is
/// instantiated, `specific` carries the same value.
inline bool is_subrule(const Rule& general, const Rule& specific) noexcept {
  if (general.arity() != specific.arity()) return false;
  for (std::size_t c = 0; c < general.arity(); ++c) {
    if (general[c] != kStar && general[c] != specific[c]) return false;
  }
  return true;
}

/// Display/tie order: lexicographic by column, codes ascending, star last.
inline std::strong_ordering pattern_order(std::span<const Code> a, std::span<const Code> b) noexcept {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t c = 0; c < n; ++c) {
    if (a[c] == b[c]) continue;
    if (a[c] == kStar) return std::strong_ordering::greater;
    if (b[c] == kStar) return std::strong_ordering::less;
    return a[c] <=> b[c];
  }
  return a.size() <=> b.size();
}

inline bool pattern_less(const Rule& a, const Rule& b) noexcept { return pattern_order(a.cells(), b.cells()) < 0; }

struct RuleHash {
  using is_transparent = void;
  std::size_t operator()(std::span<const Code> cells) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (Code c : cells) {
      h ^= static_cast<std::size_t>(static_cast<std::uint32_t>(c + 1));
      h *= 1099511628211ull;
    }
    return h;
  }
  std::size_t operator()(const Rule& r) const noexcept { return (*this)(r.cells()); }
};

struct RuleEqual {
  using is_transparent = void;
  static std::span<const Code> cells(const Rule& r) { return r.cells(); }
  static std::span<const Code> cells(std::span<const Code> s) { return s; }
  template <typename A, typename B>
  bool operator()(const A& a, const B& b) const noexcept {
    auto x = cells(a);
    auto y = cells(b);
    return std::equal(x.begin(), x.end(), y.begin(), y.end());
  }
};

// --------------------------------------------------------------------------
// Text form: comma-separated cells, `*` for star, raw dictionary strings.

inline std::string format_rule(const Rule& rule, std::span<const ColumnSchema> columns) {
  std::string out;
  for (std::size_t c = 0; c < rule.arity(); ++c) {
    if (c) out.push_back(',');
    out += rule[c] == kStar ? std::string("*") : csv::escape(columns[c].value(rule[c]));
  }
  return out;
}

inline std::vector<std::string> rule_cells(const Rule& rule, std::span<const ColumnSchema> columns) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < rule.arity(); ++c) {
    out.push_back(rule[c] == kStar ? std::string("*") : columns[c].value(rule[c]));
  }
  return out;
}

/// Parses the full text form (one cell per column). The empty string, `*`
/// and `root` denote the trivial rule.
inline Rule parse_rule(std::string_view text, std::span<const ColumnSchema> columns) {
  Rule rule(columns.size());
  if (text.empty() || text == "*" || text == "root") return rule;
  auto cells = csv::split_line(text);
  if (cells.size() != columns.size()) {
    throw Error(ErrorCode::parse, "rule '" + std::string(text) + "' has " + std::to_string(cells.size()) +
                                      " cells, expected " + std::to_string(columns.size()));
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (cells[c] == "*") continue;
    auto code = columns[c].code_of(cells[c]);
    if (!code) {
      throw Error(ErrorCode::parse, "value '" + cells[c] + "' not in column '" + columns[c].name() + "'");
    }
    rule[c] = *code;
  }
  return rule;
}

/// Accepts either the full text form or a shorthand listing only the
/// instantiated values, each either `Column=value` or a bare value that is
/// unique across columns (e.g. `Male,Never married`).
inline Rule parse_rule_lenient(std::string_view text, std::span<const ColumnSchema> columns) {
  if (text.empty() || text == "*" || text == "root") return Rule(columns.size());
  auto cells = csv::split_line(text);
  if (cells.size() == columns.size()) {
    try {
      return parse_rule(text, columns);
    } catch (const Error&) {
    }
  }
  Rule rule(columns.size());
  for (const auto& cell : cells) {
    if (cell == "*") continue;
    auto eq = cell.find('=');
    if (eq != std::string::npos) {
      auto name = detail::trim(cell.substr(0, eq));
      auto value = detail::trim(cell.substr(eq + 1));
      bool found = false;
      for (std::size_t c = 0; c < columns.size() && !found; ++c) {
        if (columns[c].name() != name) continue;
        auto code = columns[c].code_of(value);
        if (!code) throw Error(ErrorCode::parse, "value '" + value + "' not in column '" + name + "'");
        rule[c] = *code;
        found = true;
      }
      if (!found) throw Error(ErrorCode::unknown_column, "unknown column '" + name + "'");
      continue;
    }
    std::vector<std::size_t> hits;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (rule[c] == kStar && columns[c].code_of(cell)) hits.push_back(c);
    }
    if (hits.empty()) throw Error(ErrorCode::parse, "value '" + cell + "' not found in any column");
    if (hits.size() > 1) {
      throw Error(ErrorCode::parse, "value '" + cell + "' is ambiguous; write it as Column=value");
    }
    rule[hits[0]] = *columns[hits[0]].code_of(cell);
  }
  return rule;
}

}  // namespace sdd
