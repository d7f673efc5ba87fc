#include "owgr/tomlmini.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "owgr/common.hpp"

namespace owgr {

const std::string& TomlValue::as_str() const {
  if (kind != Kind::Str) throw ParamError("expected a string value");
  return str;
}

double TomlValue::as_num() const {
  if (kind != Kind::Num) throw ParamError("expected a numeric value");
  return num;
}

long TomlValue::as_int() const {
  const double v = as_num();
  const long n = static_cast<long>(v);
  if (static_cast<double>(n) != v) throw ParamError("expected an integer");
  return n;
}

bool TomlValue::as_bool() const {
  if (kind != Kind::Bool) throw ParamError("expected a boolean value");
  return boolean;
}

const std::vector<TomlValue>& TomlValue::as_arr() const {
  if (kind != Kind::Arr) throw ParamError("expected an array value");
  return arr;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// strips a trailing comment unless the # sits inside a quoted string
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

TomlValue parse_scalar(const std::string& raw) {
  TomlValue v;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.kind = TomlValue::Kind::Str;
    v.str = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Kind::Bool;
    v.boolean = raw == "true";
    return v;
  }
  std::size_t pos = 0;
  double num = 0.0;
  try {
    num = std::stod(raw, &pos);
  } catch (const std::exception&) {
    throw ParamError("bad toml value: " + raw);
  }
  if (pos != raw.size()) throw ParamError("bad toml value: " + raw);
  v.kind = TomlValue::Kind::Num;
  v.num = num;
  return v;
}

TomlValue parse_value(const std::string& raw) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') throw ParamError("unterminated array: " + raw);
    TomlValue v;
    v.kind = TomlValue::Kind::Arr;
    const std::string body = raw.substr(1, raw.size() - 2);
    std::string cur;
    bool quoted = false;
    for (char c : body) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        const std::string item = trim(cur);
        if (!item.empty()) v.arr.push_back(parse_scalar(item));
        cur.clear();
      } else {
        cur += c;
      }
    }
    const std::string item = trim(cur);
    if (!item.empty()) v.arr.push_back(parse_scalar(item));
    return v;
  }
  return parse_scalar(raw);
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ParamError("bad section header at line " +
                         std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParamError("expected key = value at line " +
                       std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (key.empty() || raw.empty()) {
      throw ParamError("empty key or value at line " + std::to_string(lineno));
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) throw ParamError("duplicate key: " + full);
    table[full] = parse_value(raw);
  }
  return table;
}

TomlTable parse_toml_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_toml(buf.str());
}

}  // namespace owgr
