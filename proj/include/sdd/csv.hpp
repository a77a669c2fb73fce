#pragma once

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF/LF record
// terminators and line breaks embedded in quoted fields. A delimiter of '\0'
// switches to whitespace-separated mode (runs of blanks, no quoting).

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "sdd/error.hpp"

namespace sdd::csv {

class Reader {
 public:
  explicit Reader(std::istream& in, char delimiter = ',') : in_(in), delimiter_(delimiter) {}

  /// Reads the next record into `fields`. Returns false at end of input.
  /// Blank lines are skipped.
  bool next(std::vector<std::string>& fields) {
    for (;;) {
      fields.clear();
      if (in_.peek() == std::char_traits<char>::eof()) return false;
      record_line_ = line_ + 1;
      bool any = delimiter_ == '\0' ? read_whitespace(fields) : read_quoted(fields);
      if (any) return true;
    }
  }

  /// 1-based line number on which the last returned record started.
  std::size_t record_line() const noexcept { return record_line_; }

 private:
  bool read_whitespace(std::vector<std::string>& fields) {
    std::string line;
    std::getline(in_, line);
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      fields.emplace_back(line.substr(i, j - i));
      i = j;
    }
    return !fields.empty();
  }

  bool read_quoted(std::vector<std::string>& fields) {
    std::string field;
    bool quoted = false;
    bool field_started = false;
    bool saw_anything = false;
    for (;;) {
      int ch = in_.get();
      if (ch == std::char_traits<char>::eof()) {
        if (quoted) {
          throw Error(ErrorCode::parse,
                      "unterminated quoted field starting on line " + std::to_string(record_line_));
        }
        if (saw_anything) fields.push_back(std::move(field));
        ++line_;
        return saw_anything;
      }
      char c = static_cast<char>(ch);
      if (quoted) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && !field_started) {
        quoted = true;
        field_started = true;
        saw_anything = true;
      } else if (c == delimiter_) {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
        saw_anything = true;
      } else if (c == '\r' && in_.peek() == '\n') {
        continue;
      } else if (c == '\n') {
        ++line_;
        if (saw_anything) fields.push_back(std::move(field));
        return saw_anything;
      } else {
        field.push_back(c);
        field_started = true;
        saw_anything = true;
      }
    }
  }

  std::istream& in_;
  char delimiter_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

/// Splits a single line (no embedded newlines) using the same quoting rules.
inline std::vector<std::string> split_line(std::string_view line, char delimiter = ',') {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == delimiter) {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw Error(ErrorCode::parse, "unterminated quote in '" + std::string(line) + "'");
  out.push_back(std::move(field));
  return out;
}

inline std::string escape(std::string_view value, char delimiter = ',') {
  bool needs = value.find_first_of(std::string{'"', '\n', '\r', delimiter}) != std::string_view::npos;
  if (!needs) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace sdd::csv
