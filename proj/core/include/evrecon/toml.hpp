#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

namespace evrecon {

// Minimal TOML subset: [table] headers (dotted names allowed), key = value
// pairs with strings, integers, floats and booleans, and # comments.
// Enough for pipeline configuration files; arrays and inline tables are
// not supported.
class TomlTable {
 public:
  static TomlTable parse(std::istream& input);
  static TomlTable parse_file(const std::string& path);

  bool contains(const std::string& dotted_key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // CLI-style override; value uses the same literal syntax as the file.
  void set(const std::string& dotted_key, const std::string& raw_value);

  // Canonical "key=value" lines for a key prefix, used for stage hashing.
  std::string serialize_section(const std::string& prefix) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;  // dotted key -> raw literal
};

}  // namespace evrecon
