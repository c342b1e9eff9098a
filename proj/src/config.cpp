#include "mvmm/config.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mvmm/error.hpp"

namespace mvmm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace

const ConfigEntry* ConfigSection::find(const std::string& key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

std::optional<std::string> ConfigSection::get(const std::string& key) const {
  const auto* e = find(key);
  return e ? std::optional<std::string>(e->value) : std::nullopt;
}

std::string ConfigSection::require(const std::string& key, const std::string& origin) const {
  const auto* e = find(key);
  if (!e)
    throw_validation(origin + ": section [" + name + "] is missing required key `" + key + "`");
  return e->value;
}

std::vector<std::string> ConfigSection::get_all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.key == key) out.push_back(e.value);
  return out;
}

ConfigDoc ConfigDoc::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_validation("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

ConfigDoc ConfigDoc::parse_string(const std::string& text, const std::string& origin) {
  ConfigDoc doc;
  doc.origin = origin;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  ConfigSection* current = nullptr;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw_validation(origin + ":" + std::to_string(lineno) + ": unterminated section header");
      ConfigSection s;
      s.name = trim(line.substr(1, line.size() - 2));
      s.line = lineno;
      if (s.name.empty())
        throw_validation(origin + ":" + std::to_string(lineno) + ": empty section name");
      doc.sections.push_back(std::move(s));
      current = &doc.sections.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw_validation(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    if (!current)
      throw_validation(origin + ":" + std::to_string(lineno) + ": key outside any [section]");
    ConfigEntry e;
    e.key = trim(line.substr(0, eq));
    e.value = trim(line.substr(eq + 1));
    e.line = lineno;
    if (e.key.empty())
      throw_validation(origin + ":" + std::to_string(lineno) + ": empty key");
    current->entries.push_back(std::move(e));
  }
  return doc;
}

const ConfigSection* ConfigDoc::find(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

const ConfigSection& ConfigDoc::require(const std::string& name) const {
  const auto* s = find(name);
  if (!s) throw_validation(origin + ": missing required section [" + name + "]");
  return *s;
}

void ConfigDoc::enforce_schema(
    const std::map<std::string, std::vector<std::string>>& schema) const {
  for (const auto& s : sections) {
    const auto it = schema.find(s.name);
    if (it == schema.end())
      throw_validation(origin + ":" + std::to_string(s.line) + ": unknown section [" + s.name +
                       "]");
    for (const auto& e : s.entries) {
      bool known = false;
      for (const auto& k : it->second)
        if (k == e.key) {
          known = true;
          break;
        }
      if (!known)
        throw_validation(origin + ":" + std::to_string(e.line) + ": unknown key `" + e.key +
                         "` in section [" + s.name + "]");
    }
  }
}

double parse_double(const std::string& value, const std::string& context) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || trim(std::string(end)) != "")
    throw_validation(context + ": expected a number, got `" + value + "`");
  return v;
}

int parse_int(const std::string& value, const std::string& context) {
  const long long v = parse_int64(value, context);
  if (v < INT32_MIN || v > INT32_MAX)
    throw_validation(context + ": integer out of range: " + value);
  return static_cast<int>(v);
}

long long parse_int64(const std::string& value, const std::string& context) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || trim(std::string(end)) != "")
    throw_validation(context + ": expected an integer, got `" + value + "`");
  return v;
}

bool parse_bool(const std::string& value, const std::string& context) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw_validation(context + ": expected true/false, got `" + value + "`");
}

std::vector<std::string> split_tokens(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream ss(value);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::array<double, 3> parse_triplet(const std::string& value, const std::string& context) {
  const auto toks = split_tokens(value);
  if (toks.size() != 3) throw_validation(context + ": expected three numbers, got `" + value + "`");
  return {parse_double(toks[0], context), parse_double(toks[1], context),
          parse_double(toks[2], context)};
}

std::array<int, 3> parse_itriplet(const std::string& value, const std::string& context) {
  const auto toks = split_tokens(value);
  if (toks.size() != 3)
    throw_validation(context + ": expected three integers, got `" + value + "`");
  return {parse_int(toks[0], context), parse_int(toks[1], context), parse_int(toks[2], context)};
}

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace mvmm
