#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdd/error.hpp"
#include "sdd/rule.hpp"
#include "sdd/table.hpp"

namespace sdd {

enum class WeightKind { size, bits, size_minus_one, parametric };

inline std::string_view to_string(WeightKind kind) {
  switch (kind) {
    case WeightKind::size: return "size";
    case WeightKind::bits: return "bits";
    case WeightKind::size_minus_one: return "size-minus-one";
    case WeightKind::parametric: return "parametric";
  }
  return "size";
}

inline WeightKind parse_weight_kind(std::string_view s) {
  if (s == "size") return WeightKind::size;
  if (s == "bits") return WeightKind::bits;
  if (s == "size-minus-one" || s == "size_minus_one") return WeightKind::size_minus_one;
  if (s == "parametric") return WeightKind::parametric;
  throw Error(ErrorCode::invalid_argument, "unknown weight kind '" + std::string(s) + "'");
}

enum class ColumnMode { normal, favored, ignored };

struct ColumnPreference {
  ColumnMode mode = ColumnMode::normal;
  double multiplier = 2.0;  // used when favored; must exceed 1
};

struct WeightConfig {
  WeightKind kind = WeightKind::size;
  std::vector<double> column_weights;  // parametric w_c; empty means 1 per column
  double exponent = 1.0;               // parametric kappa >= 1
  std::vector<ColumnPreference> preferences;  // per column; empty means all normal
  // Rules with a star here weigh 0. Only the star drill-down sets this.
  std::optional<std::size_t> star_column;
};

/// Rounded-up bit width of a column's domain: ceil(log2 |c|), 0 for |c| <= 1.
inline double domain_bits(std::size_t distinct) {
  double bits = 0;
  std::size_t span = 1;
  while (span < distinct) {
    span <<= 1;
    bits += 1;
  }
  return bits;
}

/// A WeightConfig bound to a schema. Every built-in kind is a monotone
/// function g of the sum of per-column contributions of the instantiated
/// columns, which is what the rule search relies on.
class WeightFunction {
 public:
  WeightFunction() = default;

  WeightFunction(const WeightConfig& config, std::span<const ColumnSchema> columns)
      : config_(config), contributions_(columns.size(), 0.0) {
    if (config.kind == WeightKind::parametric) {
      if (!config.column_weights.empty() && config.column_weights.size() != columns.size()) {
        throw Error(ErrorCode::invalid_argument, "parametric weights need one entry per column");
      }
      if (config.exponent < 1.0) throw Error(ErrorCode::invalid_argument, "parametric exponent must be >= 1");
    }
    if (!config.preferences.empty() && config.preferences.size() != columns.size()) {
      throw Error(ErrorCode::invalid_argument, "column preferences need one entry per column");
    }
    if (config.star_column && *config.star_column >= columns.size()) {
      throw Error(ErrorCode::invalid_argument, "star column out of range");
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
      double base = 1.0;
      switch (config.kind) {
        case WeightKind::size:
        case WeightKind::size_minus_one: base = 1.0; break;
        case WeightKind::bits: base = domain_bits(columns[c].distinct_count()); break;
        case WeightKind::parametric:
          base = config.column_weights.empty() ? 1.0 : config.column_weights[c];
          if (base < 0) throw Error(ErrorCode::invalid_argument, "parametric weights must be non-negative");
          break;
      }
      if (!config.preferences.empty()) {
        const auto& pref = config.preferences[c];
        if (pref.mode == ColumnMode::ignored) base = 0.0;
        if (pref.mode == ColumnMode::favored) {
          if (!(pref.multiplier > 1.0)) throw Error(ErrorCode::invalid_argument, "favored multiplier must exceed 1");
          base *= pref.multiplier;
        }
      }
      contributions_[c] = base;
    }
  }

  const WeightConfig& config() const noexcept { return config_; }
  std::span<const double> contributions() const noexcept { return contributions_; }
  double contribution(std::size_t col) const { return contributions_[col]; }

  /// Maps the summed contribution of the instantiated columns to a weight.
  double aggregate(double total) const {
    switch (config_.kind) {
      case WeightKind::size:
      case WeightKind::bits: return total;
      case WeightKind::size_minus_one: return total > 1.0 ? total - 1.0 : 0.0;
      case WeightKind::parametric: return std::pow(total, config_.exponent);
    }
    return total;
  }

  double operator()(std::span<const Code> rule) const {
    if (config_.star_column && rule[*config_.star_column] == kStar) return 0.0;
    double total = 0;
    for (std::size_t c = 0; c < rule.size(); ++c) {
      if (rule[c] != kStar) total += contributions_[c];
    }
    return aggregate(total);
  }

  double operator()(const Rule& rule) const { return (*this)(rule.cells()); }

  /// Weight of the all-instantiated rule: an upper bound on any weight.
  double max_weight() const {
    double total = 0;
    for (double w : contributions_) total += w;
    return aggregate(total);
  }

 private:
  WeightConfig config_;
  std::vector<double> contributions_;
};

inline double weight(const WeightConfig& config, const Rule& rule, std::span<const ColumnSchema> columns) {
  return WeightFunction(config, columns)(rule);
}

}  // namespace sdd
