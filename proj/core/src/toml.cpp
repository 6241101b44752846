#include "evrecon/toml.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

}  // namespace

TomlTable TomlTable::parse(std::istream& input) {
  TomlTable table;
  std::string prefix;
  std::string line;
  size_t line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        throw CorruptHeader("toml line " + std::to_string(line_no) +
                            ": unterminated table header");
      }
      prefix = trim(line.substr(1, line.size() - 2));
      if (prefix.empty()) {
        throw CorruptHeader("toml line " + std::to_string(line_no) +
                            ": empty table name");
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CorruptHeader("toml line " + std::to_string(line_no) +
                          ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw CorruptHeader("toml line " + std::to_string(line_no) +
                          ": empty key or value");
    }
    const std::string dotted = prefix.empty() ? key : prefix + "." + key;
    table.entries_[dotted] = value;
  }
  return table;
}

TomlTable TomlTable::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open config: " + path);
  return parse(in);
}

bool TomlTable::contains(const std::string& dotted_key) const {
  return entries_.count(dotted_key) > 0;
}

std::string TomlTable::get_string(const std::string& key,
                                  const std::string& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& raw = it->second;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    return raw.substr(1, raw.size() - 2);
  }
  return raw;
}

int64_t TomlTable::get_int(const std::string& key, int64_t fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  int64_t value = 0;
  const std::string& raw = it->second;
  const auto [ptr, ec] =
      std::from_chars(raw.data(), raw.data() + raw.size(), value);
  if (ec != std::errc() || ptr != raw.data() + raw.size()) {
    throw CorruptHeader("toml key '" + key + "' is not an integer: " + raw);
  }
  return value;
}

double TomlTable::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t used = 0;
    const double value = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return value;
  } catch (const std::exception&) {
    throw CorruptHeader("toml key '" + key + "' is not a number: " + it->second);
  }
}

bool TomlTable::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw CorruptHeader("toml key '" + key + "' is not a boolean: " + it->second);
}

void TomlTable::set(const std::string& dotted_key, const std::string& raw_value) {
  entries_[dotted_key] = raw_value;
}

std::string TomlTable::serialize_section(const std::string& prefix) const {
  std::ostringstream out;
  for (const auto& [key, value] : entries_) {
    if (prefix.empty() || key.rfind(prefix, 0) == 0) {
      out << key << "=" << value << "\n";
    }
  }
  return out.str();
}

}  // namespace evrecon
