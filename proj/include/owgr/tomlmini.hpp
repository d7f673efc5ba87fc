#pragma once

#include <map>
#include <string>
#include <vector>

namespace owgr {

// Small TOML subset for the config files: [section] headers, `key = value`
// with strings, numbers, booleans, and flat arrays, plus # comments.
// Section names prefix keys with a dot ("sweep.case").
struct TomlValue {
  enum class Kind { Str, Num, Bool, Arr };
  Kind kind = Kind::Str;
  std::string str;
  double num = 0.0;
  bool boolean = false;
  std::vector<TomlValue> arr;

  // typed accessors; throw ParamError on kind mismatch
  const std::string& as_str() const;
  double as_num() const;
  long as_int() const;
  bool as_bool() const;
  const std::vector<TomlValue>& as_arr() const;
};

using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(const std::string& text);
TomlTable parse_toml_file(const std::string& path);

}  // namespace owgr
