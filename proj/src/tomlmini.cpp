#include "featprobe/tomlmini.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "featprobe/errors.hpp"

namespace featprobe {
namespace {

using nlohmann::json;

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

struct Cursor {
  const std::string& s;
  size_t pos = 0;
  int line;

  bool done() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }
  char take() { return s[pos++]; }

  void skip_ws() {
    while (!done() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
};

bool is_bare_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string parse_basic_string(Cursor& c) {
  std::string out;
  c.take();  // opening quote
  while (true) {
    if (c.done()) fail(c.line, "unterminated string");
    char ch = c.take();
    if (ch == '"') return out;
    if (ch != '\\') {
      out.push_back(ch);
      continue;
    }
    if (c.done()) fail(c.line, "unterminated escape");
    char esc = c.take();
    switch (esc) {
      case '"': out.push_back('"'); break;
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      default:
        fail(c.line, std::string("unsupported escape \\") + esc);
    }
  }
}

// One key segment: either bare (letters, digits, _, -) or quoted.
std::string parse_key_segment(Cursor& c) {
  c.skip_ws();
  if (c.done()) fail(c.line, "expected a key");
  if (c.peek() == '"') return parse_basic_string(c);
  std::string out;
  while (!c.done() && is_bare_char(c.peek())) out.push_back(c.take());
  if (out.empty()) fail(c.line, "expected a key");
  return out;
}

std::vector<std::string> parse_key_path(Cursor& c) {
  std::vector<std::string> path;
  path.push_back(parse_key_segment(c));
  c.skip_ws();
  while (!c.done() && c.peek() == '.') {
    c.take();
    path.push_back(parse_key_segment(c));
    c.skip_ws();
  }
  return path;
}

json parse_scalar(Cursor& c) {
  c.skip_ws();
  if (c.done()) fail(c.line, "expected a value");
  if (c.peek() == '"') return parse_basic_string(c);

  std::string tok;
  while (!c.done()) {
    char ch = c.peek();
    if (ch == ',' || ch == ']' || ch == '#' || ch == ' ' || ch == '\t') break;
    tok.push_back(c.take());
  }
  if (tok.empty()) fail(c.line, "expected a value");
  if (tok == "true") return true;
  if (tok == "false") return false;

  // Numbers. TOML permits underscores between digits; strip them before
  // handing the token to strtol/strtod.
  std::string digits;
  for (size_t i = 0; i < tok.size(); ++i) {
    if (tok[i] == '_') {
      bool ok = i > 0 && i + 1 < tok.size() &&
                std::isdigit(static_cast<unsigned char>(tok[i - 1])) &&
                std::isdigit(static_cast<unsigned char>(tok[i + 1]));
      if (!ok) fail(c.line, "misplaced underscore in number '" + tok + "'");
      continue;
    }
    digits.push_back(tok[i]);
  }

  bool looks_float = digits.find('.') != std::string::npos ||
                     digits.find('e') != std::string::npos ||
                     digits.find('E') != std::string::npos;
  const char* begin = digits.c_str();
  char* end = nullptr;
  if (!looks_float) {
    long long v = std::strtoll(begin, &end, 10);
    if (end == begin + digits.size()) return v;
  }
  double d = std::strtod(begin, &end);
  if (end == begin + digits.size()) return d;
  fail(c.line, "cannot parse value '" + tok + "'");
}

json parse_value(Cursor& c) {
  c.skip_ws();
  if (c.done()) fail(c.line, "expected a value");
  if (c.peek() != '[') return parse_scalar(c);

  c.take();  // '['
  json arr = json::array();
  c.skip_ws();
  if (!c.done() && c.peek() == ']') {
    c.take();
    return arr;
  }
  while (true) {
    arr.push_back(parse_scalar(c));
    c.skip_ws();
    if (c.done()) fail(c.line, "unterminated array");
    char ch = c.take();
    if (ch == ']') return arr;
    if (ch != ',') fail(c.line, "expected ',' or ']' in array");
    c.skip_ws();
    if (!c.done() && c.peek() == ']') {  // trailing comma
      c.take();
      return arr;
    }
  }
}

// Strips a trailing comment, respecting quotes.
std::string strip_comment(const std::string& raw) {
  bool quoted = false;
  for (size_t i = 0; i < raw.size(); ++i) {
    char ch = raw[i];
    if (quoted) {
      if (ch == '\\') ++i;
      else if (ch == '"') quoted = false;
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == '#') {
      return raw.substr(0, i);
    }
  }
  return raw;
}

json* descend(json& root, const std::vector<std::string>& path, int line) {
  json* node = &root;
  for (const auto& seg : path) {
    if (!node->is_object()) fail(line, "'" + seg + "' overwrites a value with a table");
    node = &(*node)[seg];
    if (node->is_null()) *node = json::object();
  }
  return node;
}

}  // namespace

json parse_toml(const std::string& text) {
  json root = json::object();
  json* table = &root;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string body = strip_comment(raw);
    Cursor c{body, 0, line_no};
    c.skip_ws();
    if (c.done()) continue;

    if (c.peek() == '[') {
      c.take();
      auto path = parse_key_path(c);
      c.skip_ws();
      if (c.done() || c.take() != ']') fail(line_no, "expected ']' after table name");
      c.skip_ws();
      if (!c.done()) fail(line_no, "trailing characters after table header");
      table = descend(root, path, line_no);
      continue;
    }

    auto path = parse_key_path(c);
    c.skip_ws();
    if (c.done() || c.take() != '=') fail(line_no, "expected '=' after key");
    json value = parse_value(c);
    c.skip_ws();
    if (!c.done()) fail(line_no, "trailing characters after value");

    json* target = table;
    for (size_t i = 0; i + 1 < path.size(); ++i) {
      if (!target->is_object())
        fail(line_no, "'" + path[i] + "' overwrites a value with a table");
      target = &(*target)[path[i]];
      if (target->is_null()) *target = json::object();
    }
    const std::string& leaf = path.back();
    if (target->contains(leaf)) fail(line_no, "duplicate key '" + leaf + "'");
    (*target)[leaf] = std::move(value);
  }
  return root;
}

json parse_toml_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str());
}

json load_config_file(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".toml") return parse_toml_file(path);
  if (ext == ".json") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    try {
      return json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
  }
  throw ConfigError("unrecognised config extension (want .toml or .json): " + path);
}

}  // namespace featprobe
