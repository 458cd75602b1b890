#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "recap/errors.hpp"

namespace recap {

using json = nlohmann::json;

// Calls fn(object, line_number) for every non-blank line. Line numbers are
// 1-based. Unparsable lines and non-object values raise FormatError.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json value = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded() || !value.is_object()) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno) + ": malformed JSON object");
    }
    try {
      fn(value, lineno);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("error reading " + path.string());
}

// Required string field; FormatError when absent or not a string.
inline std::string require_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw FormatError(where + ": missing string field \"" + key + "\"");
  }
  return it->get<std::string>();
}

inline std::string where(const std::filesystem::path& path, std::size_t lineno) {
  return path.string() + ": line " + std::to_string(lineno);
}

class LineWriter {
 public:
  explicit LineWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  void line(const std::string& s) { out_ << s << '\n'; }
  void close() {
    out_.flush();
    if (!out_) throw IoError("error writing " + path_.string());
    out_.close();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace recap
