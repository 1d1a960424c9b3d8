#include "pkd/config.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>

#include "pkd/error.hpp"
#include "pkd/io.hpp"

namespace pkd {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string source) {
  KeyValueConfig cfg;
  cfg.source_ = std::move(source);
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (auto semi = line.find(';'); semi != std::string_view::npos) line = line.substr(0, semi);
    line = trim(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": " + what);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail("empty key");
    if (!section.empty()) key = section + "." + key;
    if (cfg.entries_.count(key)) fail("duplicate key '" + key + "'");
    cfg.entries_.emplace(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  KeyValueConfig cfg = parse(read_file(path), path.string());
  cfg.base_dir_ = path.parent_path();
  return cfg;
}

bool KeyValueConfig::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

void KeyValueConfig::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

std::string KeyValueConfig::raw(std::string_view key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(source_ + ": missing key '" + std::string(key) + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(std::string_view key) const { return raw(key); }

std::string KeyValueConfig::get_string(std::string_view key, std::string fallback) const {
  return has(key) ? raw(key) : fallback;
}

double KeyValueConfig::get_double(std::string_view key) const {
  const std::string v = raw(key);
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') {
    throw ConfigError(source_ + ": key '" + std::string(key) + "' is not a number: '" + v + "'");
  }
  return d;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t KeyValueConfig::get_int(std::string_view key) const {
  const std::string v = raw(key);
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(source_ + ": key '" + std::string(key) + "' is not an integer: '" + v + "'");
  }
  return out;
}

std::int64_t KeyValueConfig::get_int(std::string_view key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(source_ + ": key '" + std::string(key) + "' is not a boolean: '" + v + "'");
}

std::vector<std::string> KeyValueConfig::get_strings(std::string_view key) const {
  return split_list(raw(key));
}

std::vector<double> KeyValueConfig::get_doubles(std::string_view key) const {
  std::vector<double> out;
  for (const auto& tok : split_list(raw(key))) {
    char* end = nullptr;
    const double d = std::strtod(tok.c_str(), &end);
    if (*end != '\0') {
      throw ConfigError(source_ + ": key '" + std::string(key) + "' has non-numeric entry '" + tok + "'");
    }
    out.push_back(d);
  }
  return out;
}

std::vector<std::size_t> KeyValueConfig::get_sizes(std::string_view key) const {
  std::vector<std::size_t> out;
  for (const auto& tok : split_list(raw(key))) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      throw ConfigError(source_ + ": key '" + std::string(key) + "' has non-integer entry '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::filesystem::path KeyValueConfig::get_path(std::string_view key) const {
  std::filesystem::path p = raw(key);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p;
}

std::string KeyValueConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace pkd
