#pragma once

// Reader for the plain-text case format: a small TOML subset with
// `[table]` and `[[array-of-tables]]` headers, `key = value` pairs, numbers,
// strings, booleans and (possibly multi-line) arrays of scalars.

#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace varplace {

struct Value {
  using Scalar = std::variant<double, bool, std::string>;
  std::variant<double, bool, std::string, std::vector<Scalar>> data;
  int line = 0;

  bool is_number() const { return std::holds_alternative<double>(data); }
  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const {
    return std::holds_alternative<std::vector<Scalar>>(data);
  }
};

struct Section {
  std::string name;
  bool is_array_entry = false;  // declared with [[name]]
  int line = 0;
  std::map<std::string, Value> fields;
};

struct CaseDocument {
  std::vector<Section> sections;
};

/// Throws ValidationError with "line N: ..." context on malformed text.
CaseDocument parse_case_document(std::string_view text);

}  // namespace varplace
