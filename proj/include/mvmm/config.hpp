#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mvmm {

// Shared text format for configs, specs, model parameters and transform
// state: `[section]` headers followed by `key = value` lines. `#` starts a
// comment; keys may repeat within a section (list-valued keys).
struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct ConfigSection {
  std::string name;
  int line = 0;
  std::vector<ConfigEntry> entries;

  const ConfigEntry* find(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key, const std::string& origin) const;
  std::vector<std::string> get_all(const std::string& key) const;
};

struct ConfigDoc {
  std::string origin;
  std::vector<ConfigSection> sections;

  static ConfigDoc parse_file(const std::string& path);
  static ConfigDoc parse_string(const std::string& text, const std::string& origin);

  const ConfigSection* find(const std::string& name) const;
  const ConfigSection& require(const std::string& name) const;

  // Rejects sections or keys outside the schema (section -> allowed keys);
  // the error names the offending key and line.
  void enforce_schema(const std::map<std::string, std::vector<std::string>>& schema) const;
};

// Value parsing helpers; all throw validation errors naming the context.
double parse_double(const std::string& value, const std::string& context);
int parse_int(const std::string& value, const std::string& context);
long long parse_int64(const std::string& value, const std::string& context);
bool parse_bool(const std::string& value, const std::string& context);
std::vector<std::string> split_tokens(const std::string& value);
std::array<double, 3> parse_triplet(const std::string& value, const std::string& context);
std::array<int, 3> parse_itriplet(const std::string& value, const std::string& context);

// %.17g formatting (doubles survive a write/parse round trip bit-exactly).
std::string format_double(double v);

}  // namespace mvmm
