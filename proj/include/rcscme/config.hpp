// include/rcscme/config.hpp

// Copyright 2026  The rcscme Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef RCSCME_CONFIG_HPP_
#define RCSCME_CONFIG_HPP_

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rcscme/error.hpp"

namespace rcscme {

/// Flat sectioned key-value text:
///
///   # comment
///   [section]
///   key = value
///
/// Keys before the first header belong to the "" section.
class KeyValueConfig {
 public:
  using Section = std::map<std::string, std::string>;

  static KeyValueConfig parse(std::istream &is, const std::string &origin = "<config>") {
    KeyValueConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        cfg.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.sections_[section][key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig parse_string(const std::string &text) {
    std::istringstream is(text);
    return parse(is);
  }

  static KeyValueConfig load(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse(is, path);
  }

  bool has_section(const std::string &s) const { return sections_.count(s) > 0; }

  const Section &section(const std::string &s) const {
    static const Section empty;
    const auto it = sections_.find(s);
    return it == sections_.end() ? empty : it->second;
  }

  const std::map<std::string, Section> &sections() const { return sections_; }

  static std::string trim(const std::string &s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

 private:
  std::map<std::string, Section> sections_;
};

inline double parse_double(const std::string &field, const std::string &v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception &) {
    throw ConfigError("field '" + field + "': expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string &field, const std::string &v) {
  long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("field '" + field + "': expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string &field, const std::string &v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("field '" + field + "': expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = KeyValueConfig::trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace rcscme

#endif  // RCSCME_CONFIG_HPP_
