#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sdd/dataset.hpp"
#include "sdd/session.hpp"
#include "sdd/tree_json.hpp"

namespace sdd::cli {

enum class OutputFormat { table, json, csv };

inline OutputFormat parse_output(const std::string& s) {
  if (s == "table") return OutputFormat::table;
  if (s == "json") return OutputFormat::json;
  if (s == "csv") return OutputFormat::csv;
  throw Error(ErrorCode::invalid_argument, "unknown output format '" + s + "'");
}

/// Flags shared by the data commands.
struct CommonOptions {
  std::string dataset;
  std::optional<std::string> schema;
  std::size_t k = 4;
  std::string weight = "size";
  std::string mw = "5";  // a number or "auto"
  std::size_t min_ss = 5000;
  std::size_t memory = 50000;
  std::optional<std::string> sum;
  std::optional<std::size_t> cols;
  std::vector<std::string> favor;
  std::vector<std::string> ignore;
  std::uint64_t seed = 1;
  std::string out = "table";
};

inline Table load(const CommonOptions& o) {
  LoadOptions base;
  if (o.sum) base.measure_columns.push_back(*o.sum);
  auto schema = o.schema ? o.schema : find_schema_sidecar(o.dataset);
  if (schema) {
    base = load_schema(*schema, base);
    if (o.sum && std::find(base.measure_columns.begin(), base.measure_columns.end(), *o.sum) == base.measure_columns.end()) {
      base.measure_columns.push_back(*o.sum);
    }
  }
  if (o.cols) base.use_columns = *o.cols;
  return load_csv(o.dataset, base);
}

inline SessionConfig session_config(const CommonOptions& o, const Table& table) {
  SessionConfig c;
  c.k = std::max<std::size_t>(1, o.k);
  if (o.mw == "auto") {
    c.m_w.reset();
  } else {
    auto v = detail::parse_number(o.mw);
    if (!v) throw Error(ErrorCode::invalid_argument, "--mw must be a number or 'auto'");
    c.m_w = *v;
  }
  c.memory = o.memory;
  c.min_ss = std::min(o.min_ss, o.memory);
  c.seed = o.seed;
  c.auto_prefetch = false;
  c.weight.kind = parse_weight_kind(o.weight);
  if (!o.favor.empty() || !o.ignore.empty()) {
    c.weight.preferences.assign(table.num_columns(), {});
    for (const auto& f : o.favor) c.weight.preferences[table.require_column(f)].mode = ColumnMode::favored;
    for (const auto& i : o.ignore) c.weight.preferences[table.require_column(i)].mode = ColumnMode::ignored;
  }
  if (o.sum) {
    auto m = table.measure_index(*o.sum);
    if (!m) throw Error(ErrorCode::unknown_column, "unknown measure column '" + *o.sum + "'");
    c.aggregate = Aggregate::sum(*m);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Output

struct Row {
  std::size_t depth = 0;
  std::vector<std::string> cells;
  double value = 0;
  double weight = 0;
  bool exact = true;
};

inline std::string format_value(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

/// Aligned text table: one column per table column, then Count (or Sum)
/// and Weight. Estimated values carry a leading `~`; nesting is shown with
/// `> ` markers on the first column.
inline void print_table(std::ostream& out, const std::vector<std::string>& names, const std::string& value_name,
                        const std::vector<Row>& rows) {
  std::vector<std::string> header = names;
  header.push_back(value_name);
  header.push_back("Weight");
  std::vector<std::vector<std::string>> grid;
  for (const auto& r : rows) {
    std::vector<std::string> line = r.cells;
    std::string marker;
    for (std::size_t d = 0; d < r.depth; ++d) marker += "> ";
    if (!line.empty()) line[0] = marker + line[0];
    line.push_back((r.exact ? "" : "~") + format_value(r.value));
    line.push_back(format_value(r.weight));
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      const bool numeric = c + 2 >= line.size();
      if (numeric) out << std::setw(static_cast<int>(width[c])) << std::right << line[c];
      else if (c + 1 == line.size()) out << line[c];
      else out << std::setw(static_cast<int>(width[c])) << std::left << line[c];
    }
    out << "\n";
  };
  emit(header);
  for (const auto& line : grid) emit(line);
}

inline void print_csv(std::ostream& out, const std::vector<std::string>& names, const std::string& value_name,
                      const std::vector<Row>& rows) {
  std::vector<std::string> header = names;
  header.push_back(value_name);
  header.push_back("Weight");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << csv::escape(header[c]);
  out << "\n";
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.cells.size(); ++c) out << (c ? "," : "") << csv::escape(r.cells[c]);
    out << "," << format_value(r.value) << "," << format_value(r.weight) << "\n";
  }
}

inline std::vector<std::string> column_names(const Table& t) {
  std::vector<std::string> names;
  for (const auto& c : t.columns()) names.push_back(c.name());
  return names;
}

inline std::string value_name(const SessionConfig& c, const Table& t) {
  return c.aggregate.is_sum() ? "Sum(" + t.measures()[c.aggregate.measure].name + ")" : "Count";
}

// ---------------------------------------------------------------------------
// summarize

/// Expands the trivial rule once and prints the k rules found.
inline int summarize(const CommonOptions& o, std::ostream& out) {
  auto format = parse_output(o.out);
  auto table = std::make_shared<const Table>(load(o));
  auto config = session_config(o, *table);
  ScoredRuleList list;
  bool exact = true;
  if (o.k > 0) {
    Session session(table, config);
    list = session.expand({});
    auto tree = session.tree();
    exact = tree.children.empty() || tree.children.front().count_is_exact;
  }
  if (format == OutputFormat::json) {
    Json j = rule_list_json(list, *table);
    j["columns"] = column_names(*table);
    j["aggregate"] = aggregate_json(config.aggregate, *table);
    j["exact"] = exact;
    out << j.dump(2) << "\n";
    return 0;
  }
  std::vector<Row> rows;
  for (const auto& r : list.rules) rows.push_back({0, rule_cells(r.rule, table->columns()), r.value(), r.weight, exact});
  if (format == OutputFormat::csv) print_csv(out, column_names(*table), value_name(config, *table), rows);
  else print_table(out, column_names(*table), value_name(config, *table), rows);
  return 0;
}

// ---------------------------------------------------------------------------
// replay

struct Gesture {
  std::string verb;  // expand | star | collapse | regular
  std::string rule;
  std::string column;
  std::size_t line = 0;
};

/// Splits on whitespace; double quotes group words.
inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, have = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      have = true;
    } else if (!quoted && std::isspace(static_cast<unsigned char>(ch))) {
      if (have) out.push_back(cur);
      cur.clear();
      have = false;
    } else {
      cur.push_back(ch);
      have = true;
    }
  }
  if (quoted) throw Error(ErrorCode::parse, "unterminated quote");
  if (have) out.push_back(cur);
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::size_t from, std::size_t to) {
  std::string s;
  for (std::size_t i = from; i < to; ++i) s += (i > from ? " " : "") + parts[i];
  return s;
}

/// One gesture per line: `expand <rule>`, `star <rule> <column>`,
/// `regular <rule> <column>`, `collapse <rule>`. `root` names the trivial
/// rule; blank lines and `#` comments are skipped. Column names with spaces
/// may be quoted or left bare.
inline std::vector<Gesture> parse_script(std::istream& in, const Table& table) {
  std::vector<Gesture> out;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    auto trimmed = detail::trim(text);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    std::vector<std::string> tokens;
    try {
      tokens = tokenize(trimmed);
    } catch (const Error& e) {
      throw Error(ErrorCode::parse, "line " + std::to_string(lineno) + ": " + e.what());
    }
    Gesture g;
    g.line = lineno;
    g.verb = tokens[0];
    if (g.verb == "expand" || g.verb == "collapse") {
      g.rule = tokens.size() > 1 ? join(tokens, 1, tokens.size()) : "root";
    } else if (g.verb == "star" || g.verb == "regular") {
      if (tokens.size() < 3) throw Error(ErrorCode::parse, "line " + std::to_string(lineno) + ": expected <rule> <column>");
      // The column is the longest suffix naming a column.
      bool found = false;
      for (std::size_t split = 2; split < tokens.size() && !found; ++split) {
        auto column = join(tokens, split, tokens.size());
        if (table.column_index(column)) {
          g.rule = join(tokens, 1, split);
          g.column = column;
          found = true;
        }
      }
      if (!found) {
        throw Error(ErrorCode::unknown_column, "line " + std::to_string(lineno) + ": no column named in '" + trimmed + "'");
      }
    } else {
      throw Error(ErrorCode::parse, "line " + std::to_string(lineno) + ": unknown gesture '" + g.verb + "'");
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline void tree_rows(const DrillNode& n, const Table& t, std::size_t depth, std::vector<Row>& rows) {
  rows.push_back({depth, rule_cells(n.rule, t.columns()), n.displayed(), n.weight, n.count_is_exact});
  for (const auto& c : n.children) tree_rows(c, t, depth + 1, rows);
}

/// Applies the gestures to a fresh session and prints the final tree.
inline int replay(const CommonOptions& o, std::istream& script, std::ostream& out, std::ostream& err) {
  auto format = parse_output(o.out);
  auto table = std::make_shared<const Table>(load(o));
  auto config = session_config(o, *table);
  Session session(table, config);
  std::vector<Gesture> gestures;
  try {
    gestures = parse_script(script, *table);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  for (const auto& g : gestures) {
    try {
      auto path = session.resolve(g.rule);
      if (g.verb == "expand") session.expand(path);
      else if (g.verb == "collapse") session.collapse(path);
      else if (g.verb == "star") session.expand_star(path, g.column);
      else session.emulate_regular_drilldown(path, g.column);
    } catch (const Error& e) {
      err << "error: line " << g.line << ": " << to_string(e.code()) << ": " << e.what() << "\n";
      return 1;
    }
  }
  if (format == OutputFormat::json) {
    out << tree_json(session).dump(2) << "\n";
    return 0;
  }
  std::vector<Row> rows;
  tree_rows(session.tree(), *table, 0, rows);
  if (format == OutputFormat::csv) print_csv(out, column_names(*table), value_name(config, *table), rows);
  else print_table(out, column_names(*table), value_name(config, *table), rows);
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string sweep = "mw";  // mw | minss
  std::vector<double> values;
  std::size_t trials = 10;
};

struct BenchRow {
  double param = 0;
  double mean_seconds = 0;
  double mean_pct_error = 0;
  double mean_wrong_rules = 0;
};

/// For each parameter value: expand the root of a fresh session `trials`
/// times (new seed each time), timing the expansion and comparing the
/// displayed rules with the rules found on the full table.
inline std::vector<BenchRow> run_bench(const Table& table_in, const CommonOptions& o, const BenchOptions& b) {
  if (b.sweep != "mw" && b.sweep != "minss") throw Error(ErrorCode::invalid_argument, "--sweep must be mw or minss");
  if (b.trials == 0) throw Error(ErrorCode::invalid_argument, "--trials must be at least 1");
  auto table = std::make_shared<const Table>(table_in);
  const DataView full = DataView::of(*table);
  std::vector<BenchRow> out;
  for (double param : b.values) {
    auto config = session_config(o, *table);
    if (b.sweep == "mw") {
      if (!(param > 0)) throw Error(ErrorCode::invalid_argument, "m_w values must be positive");
      config.m_w = param;
    } else {
      if (!(param >= 1)) throw Error(ErrorCode::invalid_argument, "minSS values must be at least 1");
      config.min_ss = static_cast<std::size_t>(param);
      config.memory = std::max(config.memory, config.min_ss);
    }
    if (!config.m_w) {
      Rng rng(o.seed);
      config.m_w = estimate_mw(full, WeightFunction(config.weight, table->columns()), config.k,
                               std::min(config.min_ss, table->num_rows() ? table->num_rows() : 1), rng, config.aggregate);
    }
    BrsOptions ref;
    ref.k = config.k;
    ref.m_w = *config.m_w;
    ref.aggregate = config.aggregate;
    ref.time_limit.reset();
    auto reference = best_rule_set(full, WeightFunction(config.weight, table->columns()), ref);

    BenchRow row;
    row.param = param;
    for (std::size_t t = 0; t < b.trials; ++t) {
      config.seed = o.seed + t;
      Session session(table, config);
      auto start = std::chrono::steady_clock::now();
      auto list = session.expand({});
      row.mean_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      double err = 0;
      std::size_t wrong = 0;
      for (const auto& r : list.rules) {
        double exact = count(full, r.rule, config.aggregate);
        err += exact > 0 ? std::abs(r.value() - exact) / exact * 100.0 : 0.0;
        bool known = std::any_of(reference.rules.begin(), reference.rules.end(),
                                 [&](const ScoredRule& x) { return x.rule == r.rule; });
        if (!known) ++wrong;
      }
      if (!list.empty()) row.mean_pct_error += err / static_cast<double>(list.size());
      row.mean_wrong_rules += static_cast<double>(wrong);
    }
    const auto n = static_cast<double>(b.trials);
    row.mean_seconds /= n;
    row.mean_pct_error /= n;
    row.mean_wrong_rules /= n;
    out.push_back(row);
  }
  return out;
}

inline int bench(const CommonOptions& o, const BenchOptions& b, std::ostream& out) {
  auto table = load(o);
  auto rows = run_bench(table, o, b);
  out << (b.sweep == "mw" ? "mw" : "minss") << ",mean_seconds,mean_pct_error,mean_wrong_rules\n";
  for (const auto& r : rows) {
    out << format_value(r.param) << "," << std::setprecision(6) << r.mean_seconds << "," << r.mean_pct_error << ","
        << r.mean_wrong_rules << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ingest

/// Loads a dataset and prints its shape; `save` writes the decoded table
/// (labels applied, columns restricted) as a plain CSV with a header.
inline int ingest(const CommonOptions& o, const std::optional<std::string>& save, std::ostream& out) {
  auto format = parse_output(o.out);
  auto table = load(o);
  if (save) {
    std::ofstream f(*save, std::ios::binary);
    if (!f) throw Error(ErrorCode::io, "cannot write '" + *save + "'");
    auto names = column_names(table);
    for (const auto& m : table.measures()) names.push_back(m.name);
    for (std::size_t c = 0; c < names.size(); ++c) f << (c ? "," : "") << csv::escape(names[c]);
    f << "\n";
    for (std::size_t r = 0; r < table.num_rows(); ++r) {
      auto cells = table.decode_row(r);
      for (const auto& m : table.measures()) cells.push_back(detail::format_number(m.values[r]));
      for (std::size_t c = 0; c < cells.size(); ++c) f << (c ? "," : "") << csv::escape(cells[c]);
      f << "\n";
    }
  }
  if (format == OutputFormat::json) {
    Json j;
    j["rows"] = table.num_rows();
    j["columns"] = Json::array();
    for (const auto& c : table.columns()) j["columns"].push_back({{"name", c.name()}, {"distinct", c.distinct_count()}});
    j["measures"] = Json::array();
    for (const auto& m : table.measures()) j["measures"].push_back(m.name);
    out << j.dump(2) << "\n";
    return 0;
  }
  out << "rows: " << table.num_rows() << "\n";
  for (const auto& c : table.columns()) out << "  " << c.name() << ": " << c.distinct_count() << " values\n";
  for (const auto& m : table.measures()) out << "  " << m.name << ": measure\n";
  return 0;
}

}  // namespace sdd::cli
