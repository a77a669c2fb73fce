#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdd/csv.hpp"
#include "sdd/error.hpp"

namespace sdd {

/// Dictionary code of a categorical value; kStar is the rule wildcard.
using Code = std::int32_t;
inline constexpr Code kStar = -1;

using RowId = std::uint32_t;

enum class ColumnKind { categorical, bucketized_numeric };

class ColumnSchema {
 public:
  ColumnSchema() = default;
  explicit ColumnSchema(std::string name, ColumnKind kind = ColumnKind::categorical)
      : name_(std::move(name)), kind_(kind) {}

  const std::string& name() const noexcept { return name_; }
  ColumnKind kind() const noexcept { return kind_; }
  const std::vector<std::string>& values() const noexcept { return values_; }
  const std::string& value(Code code) const { return values_.at(static_cast<std::size_t>(code)); }
  std::size_t distinct_count() const noexcept { return values_.size(); }
  const std::vector<double>& bucket_edges() const noexcept { return bucket_edges_; }

  std::optional<Code> code_of(std::string_view value) const {
    auto it = index_.find(std::string(value));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Returns the code of `value`, appending it to the dictionary if unseen.
  Code intern(const std::string& value) {
    auto [it, inserted] = index_.try_emplace(value, static_cast<Code>(values_.size()));
    if (inserted) values_.push_back(value);
    return it->second;
  }

  void set_buckets(std::vector<std::string> labels, std::vector<double> upper_edges) {
    if (labels.size() != upper_edges.size()) {
      throw Error(ErrorCode::invalid_argument, "bucket labels and edges differ in length");
    }
    for (std::size_t i = 1; i < upper_edges.size(); ++i) {
      if (!(upper_edges[i - 1] < upper_edges[i])) {
        throw Error(ErrorCode::invalid_argument, "bucket edges must be strictly ascending");
      }
    }
    kind_ = ColumnKind::bucketized_numeric;
    values_.clear();
    index_.clear();
    for (auto& label : labels) intern(label);
    bucket_edges_ = std::move(upper_edges);
  }

 private:
  std::string name_;
  ColumnKind kind_ = ColumnKind::categorical;
  std::vector<std::string> values_;
  std::unordered_map<std::string, Code> index_;
  // Upper (inclusive) edge of each bucket; bucket 0 also includes its minimum.
  std::vector<double> bucket_edges_;
};

struct MeasureColumn {
  std::string name;
  std::vector<double> values;
};

struct RowRef {
  RowId row_id;
  std::span<const Code> codes;
};

/// Forward range over the rows of a table in row-id order.
class RowRange {
 public:
  class iterator {
   public:
    using value_type = RowRef;
    using difference_type = std::ptrdiff_t;

    iterator() = default;
    iterator(const Code* base, std::size_t width, std::size_t row) : base_(base), width_(width), row_(row) {}

    RowRef operator*() const {
      return {static_cast<RowId>(row_), std::span<const Code>(base_ + row_ * width_, width_)};
    }
    iterator& operator++() {
      ++row_;
      return *this;
    }
    iterator operator++(int) {
      auto copy = *this;
      ++row_;
      return copy;
    }
    bool operator==(const iterator& other) const { return row_ == other.row_; }

   private:
    const Code* base_ = nullptr;
    std::size_t width_ = 0;
    std::size_t row_ = 0;
  };

  RowRange(const Code* base, std::size_t width, std::size_t rows) : base_(base), width_(width), rows_(rows) {}

  iterator begin() const { return {base_, width_, 0}; }
  iterator end() const { return {base_, width_, rows_}; }
  std::size_t size() const noexcept { return rows_; }

 private:
  const Code* base_;
  std::size_t width_;
  std::size_t rows_;
};

/// Immutable dictionary-encoded relation. Codes are stored row-major,
/// |T| x |C|; measure columns are kept as plain numeric vectors.
class Table {
 public:
  Table() = default;

  Table(std::vector<ColumnSchema> columns, std::vector<Code> codes, std::vector<MeasureColumn> measures = {})
      : columns_(std::move(columns)), codes_(std::move(codes)), measures_(std::move(measures)) {
    const std::size_t width = columns_.size();
    if (width == 0) {
      if (!codes_.empty()) throw Error(ErrorCode::invalid_argument, "codes given for a table without columns");
      rows_ = measures_.empty() ? 0 : measures_.front().values.size();
    } else {
      if (codes_.size() % width != 0) throw Error(ErrorCode::invalid_argument, "code matrix is ragged");
      rows_ = codes_.size() / width;
    }
    for (std::size_t i = 0; i < codes_.size(); ++i) {
      const auto& col = columns_[i % width];
      Code c = codes_[i];
      if (c < 0 || static_cast<std::size_t>(c) >= col.distinct_count()) {
        throw Error(ErrorCode::invalid_argument, "code out of range in column '" + col.name() + "'");
      }
    }
    for (const auto& m : measures_) {
      if (m.values.size() != rows_) {
        throw Error(ErrorCode::invalid_argument, "measure column '" + m.name + "' has wrong length");
      }
    }
    row_ids_.resize(rows_);
    for (std::size_t i = 0; i < rows_; ++i) row_ids_[i] = static_cast<RowId>(i);
  }

  std::size_t num_rows() const noexcept { return rows_; }
  std::size_t num_columns() const noexcept { return columns_.size(); }

  const std::vector<ColumnSchema>& columns() const noexcept { return columns_; }
  const ColumnSchema& column(std::size_t i) const { return columns_.at(i); }
  const std::vector<MeasureColumn>& measures() const noexcept { return measures_; }
  std::span<const Code> codes() const noexcept { return codes_; }
  std::span<const RowId> row_ids() const noexcept { return row_ids_; }

  std::span<const Code> row(std::size_t i) const {
    return std::span<const Code>(codes_).subspan(i * columns_.size(), columns_.size());
  }
  Code at(std::size_t row, std::size_t col) const { return codes_[row * columns_.size() + col]; }

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (columns_[i].name() == name) return i;
    }
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name) const {
    auto idx = column_index(name);
    if (!idx) throw Error(ErrorCode::unknown_column, "unknown column '" + std::string(name) + "'");
    return *idx;
  }

  std::optional<std::size_t> measure_index(std::string_view name) const {
    for (std::size_t i = 0; i < measures_.size(); ++i) {
      if (measures_[i].name == name) return i;
    }
    return std::nullopt;
  }

  RowRange scan() const { return RowRange(codes_.data(), columns_.size(), rows_); }

  /// Keeps the given categorical columns (in the given order) and all measures.
  Table select_columns(std::span<const std::size_t> keep) const {
    std::vector<ColumnSchema> cols;
    for (auto c : keep) cols.push_back(column(c));
    std::vector<Code> codes;
    codes.reserve(rows_ * keep.size());
    for (std::size_t r = 0; r < rows_; ++r) {
      for (auto c : keep) codes.push_back(at(r, c));
    }
    return Table(std::move(cols), std::move(codes), measures_);
  }

  /// Decodes a row back into its dictionary strings.
  std::vector<std::string> decode_row(std::size_t r) const {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < columns_.size(); ++c) out.push_back(columns_[c].value(at(r, c)));
    return out;
  }

 private:
  std::vector<ColumnSchema> columns_;
  std::vector<Code> codes_;
  std::vector<MeasureColumn> measures_;
  std::vector<RowId> row_ids_;
  std::size_t rows_ = 0;
};

// --------------------------------------------------------------------------
// Loading

enum class NaPolicy { keep, drop_row };
enum class BucketStrategy { equi_width, equi_depth };

struct BucketSpec {
  std::string column;
  BucketStrategy strategy = BucketStrategy::equi_width;
  int bins = 4;
};

struct LoadOptions {
  bool header = true;
  char delimiter = ',';  // '\0': whitespace separated
  std::vector<std::string> measure_columns;
  NaPolicy na_policy = NaPolicy::keep;
  std::vector<std::string> na_tokens{"", "NA"};
  std::vector<std::string> column_names;  // names when there is no header (or overrides)
  std::map<std::string, std::map<std::string, std::string>> labels;
  std::vector<BucketSpec> buckets;
  std::optional<std::size_t> use_columns;  // keep only the first n categorical columns
};

inline constexpr std::string_view kNaValue = "NA";

namespace detail {

inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

Table bucketize(const Table& table, std::string_view column, BucketStrategy strategy, int bins);

/// Reads a delimited relation from a stream; see LoadOptions for the knobs.
inline Table read_csv(std::istream& in, const LoadOptions& options = {}) {
  csv::Reader reader(in, options.delimiter);
  std::vector<std::string> fields;
  std::vector<std::string> names;
  bool have_first = false;
  std::vector<std::string> first;

  if (options.header) {
    if (reader.next(fields)) {
      for (auto& f : fields) names.push_back(detail::trim(f));
    }
  } else if (reader.next(fields)) {
    first = fields;
    have_first = true;
  }
  const std::size_t width = options.header ? names.size() : (have_first ? first.size() : options.column_names.size());
  if (!options.column_names.empty()) {
    if (options.column_names.size() != width && (options.header || have_first)) {
      throw Error(ErrorCode::parse, "schema names " + std::to_string(options.column_names.size()) +
                                        " columns but the file has " + std::to_string(width));
    }
    names = options.column_names;
  }
  if (names.empty()) {
    for (std::size_t i = 0; i < width; ++i) names.push_back("C" + std::to_string(i + 1));
  }

  std::vector<bool> is_measure(names.size(), false);
  for (const auto& m : options.measure_columns) {
    auto it = std::find(names.begin(), names.end(), m);
    if (it == names.end()) throw Error(ErrorCode::unknown_column, "declared measure column '" + m + "' not found");
    is_measure[static_cast<std::size_t>(it - names.begin())] = true;
  }

  std::vector<std::size_t> cat_src;
  std::vector<std::size_t> measure_src;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (is_measure[i]) {
      measure_src.push_back(i);
    } else if (!options.use_columns || cat_src.size() < *options.use_columns) {
      cat_src.push_back(i);
    }
  }

  std::vector<ColumnSchema> columns;
  for (auto i : cat_src) columns.emplace_back(names[i]);
  std::vector<MeasureColumn> measures;
  for (auto i : measure_src) measures.push_back({names[i], {}});

  std::vector<const std::map<std::string, std::string>*> label_maps;
  for (auto i : cat_src) {
    auto it = options.labels.find(names[i]);
    label_maps.push_back(it == options.labels.end() ? nullptr : &it->second);
  }

  auto is_na = [&](const std::string& v) {
    return std::find(options.na_tokens.begin(), options.na_tokens.end(), v) != options.na_tokens.end();
  };

  std::vector<Code> codes;
  std::vector<std::string> cells;
  auto consume = [&](const std::vector<std::string>& row, std::size_t line) {
    if (row.size() != names.size()) {
      throw Error(ErrorCode::parse, "ragged row on line " + std::to_string(line) + ": expected " +
                                        std::to_string(names.size()) + " fields, got " +
                                        std::to_string(row.size()));
    }
    bool has_na = false;
    for (auto i : cat_src) has_na = has_na || is_na(row[i]);
    for (auto i : measure_src) has_na = has_na || is_na(row[i]);
    if (has_na && options.na_policy == NaPolicy::drop_row) return;
    for (std::size_t m = 0; m < measure_src.size(); ++m) {
      const auto& cell = row[measure_src[m]];
      auto v = detail::parse_number(cell);
      if (!v) {
        throw Error(ErrorCode::not_numeric, "non-numeric value '" + cell + "' in measure column '" +
                                                measures[m].name + "' on line " + std::to_string(line));
      }
      measures[m].values.push_back(*v);
    }
    for (std::size_t c = 0; c < cat_src.size(); ++c) {
      const auto& raw = row[cat_src[c]];
      if (is_na(raw)) {
        codes.push_back(columns[c].intern(std::string(kNaValue)));
        continue;
      }
      if (label_maps[c]) {
        auto it = label_maps[c]->find(raw);
        if (it != label_maps[c]->end()) {
          codes.push_back(columns[c].intern(it->second));
          continue;
        }
      }
      codes.push_back(columns[c].intern(raw));
    }
  };

  if (have_first) consume(first, reader.record_line());
  while (reader.next(fields)) consume(fields, reader.record_line());

  Table table(std::move(columns), std::move(codes), std::move(measures));
  for (const auto& spec : options.buckets) table = bucketize(table, spec.column, spec.strategy, spec.bins);
  return table;
}

inline Table load_csv(const std::string& path, const LoadOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
  return read_csv(in, options);
}

/// Parses the plain key-value sidecar schema:
///
///     header = false
///     delimiter = whitespace          (or ',', ';', 'tab')
///     columns = Income, Gender, ...
///     measures = Sales
///     na_policy = keep | drop-row
///     na_tokens = NA, ?
///     use_columns = 7
///     label.Gender = 1=Male; 2=Female
///     bucket.Price = equi-width:4
inline LoadOptions parse_schema(std::istream& in, LoadOptions base = {}) {
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
      auto t = detail::trim(cur);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::parse, "schema line " + std::to_string(lineno) + ": missing '='");
    auto key = detail::trim(t.substr(0, eq));
    auto value = detail::trim(t.substr(eq + 1));
    if (key == "header") {
      base.header = value == "true" || value == "1" || value == "yes";
    } else if (key == "delimiter") {
      if (value == "whitespace") base.delimiter = '\0';
      else if (value == "tab") base.delimiter = '\t';
      else if (value.size() == 1) base.delimiter = value[0];
      else throw Error(ErrorCode::parse, "schema line " + std::to_string(lineno) + ": bad delimiter");
    } else if (key == "columns") {
      base.column_names = split(value, ',');
    } else if (key == "measures") {
      base.measure_columns = split(value, ',');
    } else if (key == "na_policy") {
      if (value == "keep") base.na_policy = NaPolicy::keep;
      else if (value == "drop-row") base.na_policy = NaPolicy::drop_row;
      else throw Error(ErrorCode::parse, "schema line " + std::to_string(lineno) + ": bad na_policy");
    } else if (key == "na_tokens") {
      base.na_tokens = split(value, ',');
    } else if (key == "use_columns") {
      base.use_columns = static_cast<std::size_t>(std::stoul(value));
    } else if (key.rfind("label.", 0) == 0) {
      auto& map = base.labels[key.substr(6)];
      for (const auto& pair : split(value, ';')) {
        auto p = pair.find('=');
        if (p == std::string::npos) throw Error(ErrorCode::parse, "schema line " + std::to_string(lineno) + ": bad label");
        map[detail::trim(pair.substr(0, p))] = detail::trim(pair.substr(p + 1));
      }
    } else if (key.rfind("bucket.", 0) == 0) {
      BucketSpec spec;
      spec.column = key.substr(7);
      auto colon = value.find(':');
      auto strategy = detail::trim(value.substr(0, colon));
      if (strategy == "equi-width") spec.strategy = BucketStrategy::equi_width;
      else if (strategy == "equi-depth") spec.strategy = BucketStrategy::equi_depth;
      else throw Error(ErrorCode::parse, "schema line " + std::to_string(lineno) + ": bad bucket strategy");
      if (colon != std::string::npos) spec.bins = std::stoi(value.substr(colon + 1));
      base.buckets.push_back(spec);
    } else {
      throw Error(ErrorCode::parse, "schema line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return base;
}

inline LoadOptions load_schema(const std::string& path, LoadOptions base = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open schema '" + path + "'");
  return parse_schema(in, std::move(base));
}

// --------------------------------------------------------------------------
// Bucketization

inline Table bucketize(const Table& table, std::string_view column, BucketStrategy strategy, int bins) {
  if (bins < 1) throw Error(ErrorCode::invalid_argument, "bins must be >= 1");

  std::vector<double> values(table.num_rows());
  auto cat = table.column_index(column);
  auto measure = table.measure_index(column);
  if (cat) {
    const auto& col = table.column(*cat);
    std::vector<double> decoded(col.distinct_count());
    for (std::size_t i = 0; i < col.distinct_count(); ++i) {
      auto v = detail::parse_number(col.values()[i]);
      if (!v) {
        throw Error(ErrorCode::not_numeric,
                    "column '" + std::string(column) + "' is not numeric (value '" + col.values()[i] + "')");
      }
      decoded[i] = *v;
    }
    for (std::size_t r = 0; r < table.num_rows(); ++r) values[r] = decoded[static_cast<std::size_t>(table.at(r, *cat))];
  } else if (measure) {
    values = table.measures()[*measure].values;
  } else {
    throw Error(ErrorCode::unknown_column, "unknown column '" + std::string(column) + "'");
  }

  std::vector<double> uppers;
  double lo = 0;
  if (!values.empty()) {
    auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    const double hi = *mx;
    if (strategy == BucketStrategy::equi_width) {
      const double width = (hi - lo) / bins;
      for (int i = 1; i < bins; ++i) {
        double e = lo + width * i;
        if (uppers.empty() ? e >= lo : e > uppers.back()) {
          if (e < hi) uppers.push_back(e);
        }
      }
      uppers.push_back(hi);
    } else {
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      for (int i = 1; i < bins; ++i) {
        std::size_t rank = (static_cast<std::size_t>(i) * n + static_cast<std::size_t>(bins) - 1) / static_cast<std::size_t>(bins);
        if (rank == 0) continue;
        double e = sorted[rank - 1];
        if (e < hi && (uppers.empty() || e > uppers.back())) uppers.push_back(e);
      }
      uppers.push_back(hi);
    }
  }

  std::vector<std::string> labels;
  for (std::size_t i = 0; i < uppers.size(); ++i) {
    if (i == 0) labels.push_back("[" + detail::format_number(lo) + "," + detail::format_number(uppers[0]) + "]");
    else labels.push_back("(" + detail::format_number(uppers[i - 1]) + "," + detail::format_number(uppers[i]) + "]");
  }

  ColumnSchema bucket_col{std::string(column)};
  bucket_col.set_buckets(labels, uppers);

  std::vector<Code> bucket_codes(values.size());
  for (std::size_t r = 0; r < values.size(); ++r) {
    auto it = std::lower_bound(uppers.begin(), uppers.end(), values[r]);
    bucket_codes[r] = static_cast<Code>(it - uppers.begin());
  }

  std::vector<ColumnSchema> columns = table.columns();
  std::vector<MeasureColumn> measures = table.measures();
  const std::size_t old_width = table.num_columns();
  std::vector<Code> codes;
  if (cat) {
    columns[*cat] = bucket_col;
    codes.assign(table.codes().begin(), table.codes().end());
    for (std::size_t r = 0; r < table.num_rows(); ++r) codes[r * old_width + *cat] = bucket_codes[r];
  } else {
    measures.erase(measures.begin() + static_cast<std::ptrdiff_t>(*measure));
    columns.push_back(bucket_col);
    codes.reserve(table.num_rows() * (old_width + 1));
    for (std::size_t r = 0; r < table.num_rows(); ++r) {
      auto row = table.row(r);
      codes.insert(codes.end(), row.begin(), row.end());
      codes.push_back(bucket_codes[r]);
    }
  }
  return Table(std::move(columns), std::move(codes), std::move(measures));
}

}  // namespace sdd
