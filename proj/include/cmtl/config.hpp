#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmtl/error.hpp"
#include "cmtl/text.hpp"

namespace cmtl {

/// Flat `key = value` text with `[section]` headers. Keys are addressed as
/// `section.key`; keys above the first header live at the top level.
/// Relative paths in values are resolved against the file's directory by
/// `path()`.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(const std::string& content, std::filesystem::path base_dir = {}) {
    ConfigFile cfg;
    cfg.base_dir_ = std::move(base_dir);
    std::istringstream in(content);
    try {
      boost::property_tree::ini_parser::read_ini(in, cfg.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ParseError(e.line(), e.message());
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    return parse(text::read_file(path), std::filesystem::path(path).parent_path());
  }

  bool has(const std::string& key) const { return tree_.get_optional<std::string>(key).has_value(); }

  bool has_section(const std::string& section) const { return tree_.get_child_optional(section).has_value(); }

  std::optional<std::string> raw(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return std::string(text::trim(*v));
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
  }

  std::string require_string(const std::string& key) const {
    auto v = raw(key);
    if (!v || v->empty()) throw Error(ErrorKind::Config, "missing key '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto parsed = text::parse_double(*v);
    if (!parsed) throw Error(ErrorKind::Config, "key '" + key + "': not a number: '" + *v + "'");
    return *parsed;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    auto parsed = text::parse_uint(*v);
    if (!parsed) throw Error(ErrorKind::Config, "key '" + key + "': not a non-negative integer: '" + *v + "'");
    return *parsed;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw Error(ErrorKind::Config, "key '" + key + "': not a boolean: '" + *v + "'");
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    std::vector<std::uint64_t> out;
    if (v->empty()) return out;
    for (auto piece : text::split(*v, ',')) {
      auto parsed = text::parse_uint(piece);
      if (!parsed) throw Error(ErrorKind::Config, "key '" + key + "': bad list entry '" + std::string(piece) + "'");
      out.push_back(*parsed);
    }
    return out;
  }

  /// Resolves a path-valued key relative to the config file's directory.
  std::optional<std::string> path(const std::string& key) const {
    auto v = raw(key);
    if (!v || v->empty()) return std::nullopt;
    return resolve(*v);
  }

  std::string resolve(const std::string& value) const {
    std::filesystem::path p(value);
    if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
    return p.string();
  }

  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

  /// Keys present in the file that are not in `known`; used to reject typos.
  std::vector<std::string> unknown_keys(const std::set<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [name, child] : tree_) {
      if (child.empty()) {
        if (!known.count(name)) out.push_back(name);
        continue;
      }
      for (const auto& [key, _] : child) {
        const auto full = name + "." + key;
        if (!known.count(full)) out.push_back(full);
      }
    }
    return out;
  }

  void reject_unknown(const std::set<std::string>& known) const {
    const auto extra = unknown_keys(known);
    if (!extra.empty()) throw Error(ErrorKind::Config, "unknown config key '" + extra.front() + "'");
  }

 private:
  boost::property_tree::ptree tree_;
  std::filesystem::path base_dir_;
};

}  // namespace cmtl
