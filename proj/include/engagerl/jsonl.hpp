#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "engagerl/domain.hpp"
#include "engagerl/errors.hpp"

namespace engagerl {

/// Writes `content` to `path` via a sibling temp file and rename, so readers
/// never observe a half-written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// One compact JSON document per line, UTF-8, '\n' terminated.
template <typename T>
std::string to_jsonl(const std::vector<T>& records) {
  std::string out;
  for (const auto& r : records) {
    out += Json(r).dump();
    out += '\n';
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& records) {
  write_file_atomic(path, to_jsonl(records));
}

/// Parses JSONL text. Blank lines are skipped; any other line that fails to
/// parse or to convert raises SchemaError carrying its 1-based line number.
template <typename T>
std::vector<T> parse_jsonl(const std::string& text) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    try {
      out.push_back(Json::parse(line).get<T>());
    } catch (const SchemaError& e) {
      throw SchemaError(e.what(), lineno);
    } catch (const Json::exception& e) {
      throw SchemaError(e.what(), lineno);
    }
  }
  return out;
}

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  try {
    return parse_jsonl<T>(read_file(path));
  } catch (const SchemaError& e) {
    throw SchemaError(SchemaError::Verbatim{}, path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace engagerl
