#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace srcattr::detail {

using nlohmann::json;

// Calls f(object, line_number) for every non-blank line. Parse and schema errors
// are rethrown as std::runtime_error naming the file and 1-based line number.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& f) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto obj = json::parse(line);
      if (!obj.is_object()) throw std::runtime_error("expected a JSON object");
      f(obj, lineno);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::string required_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::runtime_error(std::string("missing key '") + key + "'");
  if (!it->is_string()) throw std::runtime_error(std::string("key '") + key + "' must be a string");
  return it->get<std::string>();
}

inline std::string optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) throw std::runtime_error(std::string("key '") + key + "' must be a string");
  return it->get<std::string>();
}

inline std::size_t required_index(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::runtime_error(std::string("missing key '") + key + "'");
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
    throw std::runtime_error(std::string("key '") + key + "' must be a non-negative integer");
  }
  return it->get<std::size_t>();
}

}  // namespace srcattr::detail
