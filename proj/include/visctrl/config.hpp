#pragma once

// Flat key=value run configuration.
//
//   # comment
//   steps = 5
//   target_prompt = a photo of a cat
//
// Keys are [A-Za-z0-9_.]+, values run to the end of the line (surrounding
// blanks trimmed). Duplicate keys are rejected, and every key must be read
// by the command before `reject_unused` or the run fails.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/tensor_io.hpp"

namespace visctrl {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto blank = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && blank(s.front())) s.remove_prefix(1);
  while (!s.empty() && blank(s.back())) s.remove_suffix(1);
  return s;
}

inline bool valid_key(std::string_view k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
  });
}

}  // namespace detail

// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(std::string_view text, std::string origin = "<config>") {
    ConfigFile cfg;
    cfg.origin_ = std::move(origin);
    std::size_t line_no = 0;
    while (!text.empty()) {
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      ++line_no;
      line = detail::trim(line);
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      const std::string where = cfg.origin_ + ":" + std::to_string(line_no);
      if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
      const std::string key(detail::trim(line.substr(0, eq)));
      if (!detail::valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
      if (cfg.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      cfg.values_.emplace(key, std::string(detail::trim(line.substr(eq + 1))));
      cfg.order_.push_back(key);
    }
    return cfg;
  }

  static ConfigFile load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    ConfigFile cfg = parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path.string());
    cfg.base_ = path.parent_path();
    return cfg;
  }

  const std::string& origin() const noexcept { return origin_; }
  const std::vector<std::string>& keys() const noexcept { return order_; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, std::string value) {
    if (!detail::valid_key(key)) throw ConfigError("invalid key '" + key + "'");
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = std::move(value);
  }

  std::optional<std::string> find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string str(const std::string& key) const {
    auto v = find(key);
    if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
    return *v;
  }
  std::string str(const std::string& key, const std::string& fallback) const { return find(key).value_or(fallback); }

  std::uint64_t u64(const std::string& key) const { return parse_u64(key, str(key)); }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    auto v = find(key);
    return v ? parse_u64(key, *v) : fallback;
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(u64(key, fallback));
  }

  double real(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? parse_real(key, *v) : fallback;
  }

  bool flag(const std::string& key, bool fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    if (*v == "true") return true;
    if (*v == "false") return false;
    throw ConfigError(origin_ + ": key '" + key + "' expects true or false, got '" + *v + "'");
  }

  // Paths are relative to the config file's directory.
  std::filesystem::path path(const std::string& key) const { return resolve(str(key)); }
  std::optional<std::filesystem::path> path_opt(const std::string& key) const {
    auto v = find(key);
    if (!v) return std::nullopt;
    return resolve(*v);
  }

  // Comma-separated list of raw tokens.
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::string_view rest = str(key);
    while (true) {
      const auto comma = rest.find(',');
      const auto item = detail::trim(rest.substr(0, comma));
      if (item.empty()) throw ConfigError(origin_ + ": key '" + key + "' has an empty list item");
      out.emplace_back(item);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  std::uint64_t parse_u64(const std::string& key, const std::string& text) const {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) {
      throw ConfigError(origin_ + ": key '" + key + "' expects a non-negative integer, got '" + text + "'");
    }
    return v;
  }

  double parse_real(const std::string& key, const std::string& text) const {
    double v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) {
      throw ConfigError(origin_ + ": key '" + key + "' expects a number, got '" + text + "'");
    }
    return v;
  }

  void reject_unused() const {
    for (const auto& k : order_) {
      if (!used_.count(k)) throw ConfigError(origin_ + ": unknown key '" + k + "'");
    }
  }

  // One "key = value" line per entry, in insertion order.
  std::string serialize() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  bool operator==(const ConfigFile& o) const { return order_ == o.order_ && values_ == o.values_; }

 private:
  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_relative() && !base_.empty() ? base_ / path : path;
  }

  std::string origin_ = "<config>";
  std::filesystem::path base_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

}  // namespace visctrl
