#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdd {

enum class ErrorCode {
  io,
  parse,
  invalid_argument,
  unknown_column,
  unknown_node,
  node_expanded,
  node_not_expanded,
  column_instantiated,
  too_large,
  not_numeric,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io_error";
    case ErrorCode::parse: return "parse_error";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unknown_column: return "unknown_column";
    case ErrorCode::unknown_node: return "unknown_node";
    case ErrorCode::node_expanded: return "node_expanded";
    case ErrorCode::node_not_expanded: return "node_not_expanded";
    case ErrorCode::column_instantiated: return "column_instantiated";
    case ErrorCode::too_large: return "too_large";
    case ErrorCode::not_numeric: return "not_numeric";
  }
  return "error";
}

/// Every failure raised by the library carries a machine-readable code; the
/// HTTP layer forwards it verbatim as `{code, message}`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sdd
