// Copyright 2026 The RFCR Authors. All Rights Reserved.
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

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rfcr/error.hpp"

namespace rfcr {

/// Plain-text configuration: one `key = value` per line, `#` starts a
/// comment, blank lines are skipped. A key may repeat only when read with
/// `all()`.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string_view line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
      const auto key = std::string(trim(line.substr(0, eq)));
      if (key.empty()) throw ParseError("empty key", line_no);
      cfg.entries_[key].emplace_back(trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  void set(const std::string& key, std::string value) { entries_[key] = {std::move(value)}; }
  void erase(const std::string& key) { entries_.erase(key); }

  std::string get(const std::string& key) const {
    used_.insert(key);
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing config key '" + key + "'");
    if (it->second.size() != 1) throw ConfigError("config key '" + key + "' given more than once");
    return it->second.front();
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  std::vector<std::string> all(const std::string& key) const {
    used_.insert(key);
    auto it = entries_.find(key);
    return it == entries_.end() ? std::vector<std::string>{} : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, get(key)) : fallback;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? to_uint(key, get(key)) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
  }

  /// Comma- or whitespace-separated unsigned integers.
  std::vector<std::uint64_t> get_uint_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& tok : split_list(get(key))) out.push_back(to_uint(key, tok));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& tok : split_list(get(key))) out.push_back(to_double(key, tok));
    return out;
  }

  /// Keys present in the file but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  void reject_unused() const {
    const auto u = unused();
    if (u.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& k : u) msg += " " + k;
    throw ConfigError(msg);
  }

  /// Canonical text: keys sorted, one `key = value` per value.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, vs] : entries_) {
      for (const auto& v : vs) out += k + " = " + v + "\n";
    }
    return out;
  }

  static std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',' || ch == ' ' || ch == '\t') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
  }

  static std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* first = v.data();
    const auto* last = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
      throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::vector<std::string>> entries_;
  mutable std::set<std::string> used_;
};

/// 64-bit FNV-1a, used for config provenance hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace rfcr
