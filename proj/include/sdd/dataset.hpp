#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "sdd/table.hpp"

namespace sdd {

/// The sidecar schema of a data file: `<path>.schema`, or the path with its
/// extension replaced by `.schema`.
inline std::optional<std::string> find_schema_sidecar(const std::string& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::path p(path);
  fs::path appended = p;
  appended += ".schema";
  if (fs::is_regular_file(appended, ec)) return appended.string();
  fs::path replaced = p;
  replaced.replace_extension(".schema");
  if (replaced != p && fs::is_regular_file(replaced, ec)) return replaced.string();
  return std::nullopt;
}

/// Loads a data file with an explicit schema, else its sidecar, else `base`.
inline Table load_dataset(const std::string& path, const std::optional<std::string>& schema = std::nullopt,
                          LoadOptions base = {}) {
  auto schema_path = schema ? schema : find_schema_sidecar(path);
  if (schema_path) base = load_schema(*schema_path, std::move(base));
  return load_csv(path, base);
}

}  // namespace sdd
