// Copyright 2026 The Entriever Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ENTRIEVER_CONFIG_HPP
#define ENTRIEVER_CONFIG_HPP

#include <entriever/common.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

/**
 * \file
 * \brief Flat `key = value` settings. Blank lines and lines starting with `#` are ignored.
 */

namespace entriever {

class Settings {
 public:
  static Settings parse(std::istream& in, const std::string& source = "config") {
    Settings s;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') {
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorKind::kConfig, source + ":" + std::to_string(number) + ": expected 'key = value'");
      }
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw Error(ErrorKind::kConfig, source + ":" + std::to_string(number) + ": empty key");
      }
      s.values_[key] = value;
    }
    return s;
  }

  static Settings load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
      throw Error(ErrorKind::kConfig, "cannot open config file " + path);
    }
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }
  [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Rejects keys outside `known`.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (!known.contains(k)) {
        throw Error(ErrorKind::kConfig, "unknown config key '" + k + "'");
      }
    }
  }

  [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  [[nodiscard]] double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      return fallback;
    }
    double v = 0.0;
    const auto& text = it->second;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw Error(ErrorKind::kConfig, "config key '" + key + "' expects a number, got '" + text + "'");
    }
    return v;
  }

  [[nodiscard]] std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      return fallback;
    }
    std::uint64_t v = 0;
    const auto& text = it->second;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw Error(ErrorKind::kConfig, "config key '" + key + "' expects a non-negative integer, got '" + text + "'");
    }
    return v;
  }

  [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      return fallback;
    }
    if (it->second == "true" || it->second == "1") {
      return true;
    }
    if (it->second == "false" || it->second == "0") {
      return false;
    }
    throw Error(ErrorKind::kConfig, "config key '" + key + "' expects true or false, got '" + it->second + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
      return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace entriever

#endif
