#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pkd {

// Flat key/value configuration.
//
//   # comment
//   [pkd]              ; section header, prefixes following keys with "pkd."
//   K = 10
//   epsilon = 1e-3
//   hidden = 64 64     ; lists are whitespace or comma separated
//
// Keys are case-sensitive. A key may appear only once.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  void set(std::string key, std::string value);

  std::string get_string(std::string_view key) const;
  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::vector<double> get_doubles(std::string_view key) const;
  std::vector<std::size_t> get_sizes(std::string_view key) const;
  std::vector<std::string> get_strings(std::string_view key) const;

  // Resolves a path-valued key relative to the directory of the config file.
  std::filesystem::path get_path(std::string_view key) const;

  const std::filesystem::path& base_dir() const { return base_dir_; }
  const std::string& source() const { return source_; }
  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }

  // Sorted "key = value" lines; stable input for hashing.
  std::string canonical() const;

 private:
  std::string raw(std::string_view key) const;

  std::map<std::string, std::string, std::less<>> entries_;
  std::filesystem::path base_dir_;
  std::string source_;
};

}  // namespace pkd
