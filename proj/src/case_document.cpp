#include "varplace/case_document.hpp"

#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "varplace/error.hpp"

namespace varplace {
namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ValidationError("line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

// Drops a trailing `# comment`, ignoring '#' inside double-quoted strings.
std::string_view strip_comment(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
      return false;
  }
  return true;
}

class ScalarParser {
 public:
  ScalarParser(std::string_view text, int line) : text_(text), line_(line) {}

  Value::Scalar parse_scalar(std::string_view tok) {
    tok = trim(tok);
    if (tok.empty()) fail(line_, "missing value");
    if (tok.front() == '"') {
      if (tok.size() < 2 || tok.back() != '"')
        fail(line_, "unterminated string");
      return std::string(tok.substr(1, tok.size() - 2));
    }
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string_view num = tok;
    if (!num.empty() && num.front() == '+') num.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc() || ptr != num.data() + num.size())
      fail(line_, "cannot parse value '" + std::string(tok) + "'");
    return v;
  }

  Value parse_value() {
    std::string_view t = trim(text_);
    Value out;
    out.line = line_;
    if (!t.empty() && t.front() == '[') {
      if (t.back() != ']') fail(line_, "unterminated array");
      std::string_view body = trim(t.substr(1, t.size() - 2));
      std::vector<Value::Scalar> items;
      while (!body.empty()) {
        std::size_t comma = std::string_view::npos;
        bool in_string = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
          if (body[i] == '"') in_string = !in_string;
          if (body[i] == ',' && !in_string) {
            comma = i;
            break;
          }
        }
        std::string_view item = body.substr(0, comma);
        if (!trim(item).empty()) items.push_back(parse_scalar(item));
        else if (comma != std::string_view::npos)
          fail(line_, "empty array element");
        if (comma == std::string_view::npos) break;
        body = trim(body.substr(comma + 1));
      }
      out.data = std::move(items);
      return out;
    }
    auto s = parse_scalar(t);
    std::visit([&](auto&& x) { out.data = x; }, s);
    return out;
  }

 private:
  std::string_view text_;
  int line_;
};

}  // namespace

CaseDocument parse_case_document(std::string_view text) {
  CaseDocument doc;
  std::set<std::string> plain_tables;
  Section* current = nullptr;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      bool is_array = line.size() >= 4 && line.substr(0, 2) == "[[";
      std::string_view name;
      if (is_array) {
        if (line.substr(line.size() - 2) != "]]")
          fail(line_no, "malformed table header");
        name = trim(line.substr(2, line.size() - 4));
      } else {
        if (line.back() != ']') fail(line_no, "malformed table header");
        name = trim(line.substr(1, line.size() - 2));
      }
      if (!valid_name(name))
        fail(line_no, "invalid table name '" + std::string(name) + "'");
      if (!is_array && !plain_tables.insert(std::string(name)).second)
        fail(line_no, "duplicate table [" + std::string(name) + "]");
      doc.sections.push_back(Section{std::string(name), is_array, line_no, {}});
      current = &doc.sections.back();
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      fail(line_no, "expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    if (!valid_name(key)) fail(line_no, "invalid key '" + key + "'");
    if (current == nullptr)
      fail(line_no, "key '" + key + "' outside of any table");

    std::string value_text(trim(line.substr(eq + 1)));
    int value_line = line_no;
    // Multi-line arrays: keep reading until the bracket closes.
    if (!value_text.empty() && value_text.front() == '[') {
      while (value_text.find(']') == std::string::npos) {
        if (!std::getline(in, raw)) fail(value_line, "unterminated array");
        ++line_no;
        value_text += ' ';
        value_text += trim(strip_comment(raw));
      }
    }
    Value v = ScalarParser(value_text, value_line).parse_value();
    if (!current->fields.emplace(key, std::move(v)).second)
      fail(value_line, "duplicate key '" + key + "'");
  }
  return doc;
}

}  // namespace varplace
