#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mind/error.hpp"

namespace mind {

/// Flat key=value configuration. '#' starts a comment; keys may not repeat.
/// Every key must be consumed by a getter — leftovers are typos and are
/// rejected by finish().
class ConfigFile {
 public:
  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<config>") {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw IoError(origin + ":" + std::to_string(lineno) +
                      ": expected key=value, got '" + trimmed + "'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw IoError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!cfg.values_.emplace(key, value).second)
        throw IoError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                      key + "'");
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return to_double(key, it->second);
  }

  int get_int(const std::string& key, int fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return to_int(key, it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      return std::stoull(it->second);
    } catch (...) {
      throw IoError(origin_ + ": key '" + key + "' is not an unsigned integer: '" +
                    it->second + "'");
    }
  }

  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      out.push_back(to_int(key, trim(item)));
    if (out.empty())
      throw IoError(origin_ + ": key '" + key + "' has an empty list");
    return out;
  }

  /// Rejects any key no getter asked for.
  void finish() const {
    std::string unknown;
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty())
      throw IoError(origin_ + ": unknown config keys: " + unknown);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw 0;
      return x;
    } catch (...) {
      throw IoError(origin_ + ": key '" + key + "' is not a number: '" + v + "'");
    }
  }

  int to_int(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const int x = std::stoi(v, &used);
      if (used != v.size()) throw 0;
      return x;
    } catch (...) {
      throw IoError(origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
    }
  }

  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace mind
