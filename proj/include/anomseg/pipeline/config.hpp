#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomseg/nn/checkpoint.hpp" // fnv1a / hex64

namespace anomseg {

/// Flat key=value configuration with `include <path>` support. '#' starts a
/// comment; later assignments (and includes) override earlier ones.
class KvConfig {
public:
  KvConfig() = default;

  static KvConfig from_file(const std::filesystem::path& path) {
    KvConfig cfg;
    cfg.merge_file(path, 0);
    return cfg;
  }

  void merge_file(const std::filesystem::path& path, int depth) {
    if (depth > 8) throw std::runtime_error("config include depth exceeded at " + path.string());
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.rfind("include ", 0) == 0) {
        std::filesystem::path inc = trim(trimmed.substr(8));
        if (inc.is_relative()) inc = path.parent_path() / inc;
        merge_file(inc, depth + 1);
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("bad config line " + std::to_string(lineno) + " in " + path.string() +
                                 ": '" + trimmed + "'");
      set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return std::stoll(it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return std::stod(it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("bad boolean for '" + key + "': " + v);
  }

  /// Sorted key=value text; the fingerprint of a run configuration.
  std::string canonical() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  std::string hash() const { return hex64(fnv1a(canonical())); }

  const std::map<std::string, std::string>& values() const { return values_; }

private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

} // namespace anomseg
