#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kopt/errors.hpp"

namespace kopt {

using json = nlohmann::json;

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open file for writing: " + path.string());
  out << content;
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline json parse_json(std::string_view text, const std::string& what = "input") {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + what);
  return j;
}

inline json load_json_file(const std::filesystem::path& path) {
  return parse_json(read_text_file(path), path.string());
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
  return fnv1a64(read_text_file(path));
}

}  // namespace kopt
