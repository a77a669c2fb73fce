#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdd/error.hpp"
#include "sdd/rule.hpp"
#include "sdd/table.hpp"

namespace sdd {

enum class AggregateKind { count, sum };

/// Count(r), or Sum(r) over one measure column.
struct Aggregate {
  AggregateKind kind = AggregateKind::count;
  std::size_t measure = 0;

  static Aggregate count() { return {}; }
  static Aggregate sum(std::size_t measure) { return {AggregateKind::sum, measure}; }
  bool is_sum() const noexcept { return kind == AggregateKind::sum; }
};

/// Rows the optimizer runs over: the whole table, a filtered copy of it, or
/// the materialized tuples of a sample. Either borrows table storage (the
/// table must outlive the view) or shares ownership of its own rows.
/// `scale` is N_s: raw aggregates are multiplied by it before display.
class DataView {
 public:
  struct Storage {
    std::vector<Code> codes;
    std::vector<RowId> row_ids;
    std::vector<std::vector<double>> measures;
  };

  DataView() = default;

  static DataView of(const Table& table) {
    DataView v;
    v.columns_ = table.columns();
    v.codes_ = table.codes();
    v.ids_ = table.row_ids();
    for (const auto& m : table.measures()) v.measures_.emplace_back(m.values);
    v.rows_ = table.num_rows();
    return v;
  }

  static DataView owning(std::span<const ColumnSchema> columns, Storage storage, double scale = 1.0,
                         bool exact = true) {
    DataView v;
    auto owned = std::make_shared<const Storage>(std::move(storage));
    v.columns_ = columns;
    v.codes_ = owned->codes;
    v.ids_ = owned->row_ids;
    for (const auto& m : owned->measures) v.measures_.emplace_back(m);
    v.rows_ = owned->row_ids.size();
    v.owned_ = std::move(owned);
    v.scale_ = scale;
    v.exact_ = exact;
    return v;
  }

  /// Rows of `source` covered by `rule`, copied into owned storage.
  static DataView filtered(const DataView& source, const Rule& rule) {
    Storage s;
    s.measures.resize(source.num_measures());
    for (std::size_t i = 0; i < source.num_rows(); ++i) {
      auto row = source.row(i);
      if (!covers(rule, row)) continue;
      s.codes.insert(s.codes.end(), row.begin(), row.end());
      s.row_ids.push_back(source.row_id(i));
      for (std::size_t m = 0; m < source.num_measures(); ++m) s.measures[m].push_back(source.measure(m, i));
    }
    return owning(source.columns(), std::move(s), source.scale(), source.exact());
  }

  std::span<const ColumnSchema> columns() const noexcept { return columns_; }
  std::size_t width() const noexcept { return columns_.size(); }
  std::size_t num_rows() const noexcept { return rows_; }
  bool empty() const noexcept { return rows_ == 0; }
  std::size_t num_measures() const noexcept { return measures_.size(); }

  std::span<const Code> row(std::size_t i) const { return codes_.subspan(i * width(), width()); }
  RowId row_id(std::size_t i) const { return ids_[i]; }
  double measure(std::size_t m, std::size_t i) const { return measures_[m][i]; }

  /// Per-row contribution to the aggregate: 1 for Count, the measure for Sum.
  double mass(const Aggregate& agg, std::size_t i) const {
    return agg.is_sum() ? measures_[agg.measure][i] : 1.0;
  }

  void check(const Aggregate& agg) const {
    if (agg.is_sum() && agg.measure >= measures_.size()) {
      throw Error(ErrorCode::unknown_column, "unknown measure column #" + std::to_string(agg.measure));
    }
  }

  double scale() const noexcept { return scale_; }
  /// True when the rows are every tuple of the filter they were drawn for.
  bool exact() const noexcept { return exact_; }

  DataView with_scale(double scale, bool exact) const {
    DataView v = *this;
    v.scale_ = scale;
    v.exact_ = exact;
    return v;
  }

 private:
  std::span<const ColumnSchema> columns_;
  std::span<const Code> codes_;
  std::span<const RowId> ids_;
  std::vector<std::span<const double>> measures_;
  std::shared_ptr<const Storage> owned_;
  std::size_t rows_ = 0;
  double scale_ = 1.0;
  bool exact_ = true;
};

}  // namespace sdd
