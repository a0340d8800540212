// SPDX-License-Identifier: Apache-2.0
#include "dmacos/ast.hpp"

#include <cctype>
#include <nlohmann/json.hpp>

#include "dmacos/errors.hpp"

namespace dmacos::ast {

AstNode make_leaf(std::string node_type, std::optional<std::string> token) {
  return AstNode{std::move(node_type), std::move(token), {}};
}

AstNode make_node(std::string node_type, std::vector<AstNode> children) {
  return AstNode{std::move(node_type), std::nullopt, std::move(children)};
}

// ---------------------------------------------------------------------------
// JSON

AstNode ast_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("AST node must be a JSON object");
  auto type_it = j.find("node_type");
  if (type_it == j.end() || !type_it->is_string() || type_it->get<std::string>().empty()) {
    throw FormatError("AST node needs a nonempty string \"node_type\"");
  }
  AstNode node;
  node.node_type = type_it->get<std::string>();
  if (auto tok = j.find("token"); tok != j.end() && !tok->is_null()) {
    if (!tok->is_string()) throw FormatError("AST \"token\" must be a string or null");
    node.token = tok->get<std::string>();
  }
  if (auto kids = j.find("children"); kids != j.end() && !kids->is_null()) {
    if (!kids->is_array()) throw FormatError("AST \"children\" must be an array");
    node.children.reserve(kids->size());
    for (const auto& child : *kids) node.children.push_back(ast_from_json(child));
  }
  return node;
}

nlohmann::ordered_json ast_to_json(const AstNode& node) {
  nlohmann::ordered_json j;
  j["node_type"] = node.node_type;
  j["token"] = node.token ? nlohmann::ordered_json(*node.token) : nlohmann::ordered_json(nullptr);
  j["children"] = nlohmann::ordered_json::array();
  for (const auto& c : node.children) j["children"].push_back(ast_to_json(c));
  return j;
}

// ---------------------------------------------------------------------------
// Demonstration-language parser

namespace {

enum class Tok { ident, number, def, lparen, rparen, lbrace, rbrace, comma, semicolon, equals, newline, end };

struct Lexeme {
  Tok kind;
  std::string text;
  std::size_t line;
  std::size_t column;
};

std::vector<Lexeme> lex(std::string_view src) {
  std::vector<Lexeme> out;
  std::size_t line = 1, col = 1;
  std::size_t i = 0;
  auto push = [&](Tok k, std::string text, std::size_t l, std::size_t c) { out.push_back({k, std::move(text), l, c}); };
  while (i < src.size()) {
    const char ch = src[i];
    if (ch == '\n') {
      push(Tok::newline, "\n", line, col);
      ++i, ++line, col = 1;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      ++i, ++col;
      continue;
    }
    const std::size_t start_col = col;
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      std::string word(src.substr(i, j - i));
      push(word == "def" ? Tok::def : Tok::ident, word, line, start_col);
      col += j - i;
      i = j;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(ch))) {
      std::size_t j = i;
      while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      if (j < src.size() && (std::isalpha(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
        throw SyntaxError("malformed number", line, col + (j - i));
      }
      push(Tok::number, std::string(src.substr(i, j - i)), line, start_col);
      col += j - i;
      i = j;
      continue;
    }
    Tok k;
    switch (ch) {
      case '(': k = Tok::lparen; break;
      case ')': k = Tok::rparen; break;
      case '{': k = Tok::lbrace; break;
      case '}': k = Tok::rbrace; break;
      case ',': k = Tok::comma; break;
      case ';': k = Tok::semicolon; break;
      case '=': k = Tok::equals; break;
      default: throw SyntaxError(std::string("unexpected character '") + ch + "'", line, col);
    }
    push(k, std::string(1, ch), line, col);
    ++i, ++col;
  }
  push(Tok::end, "", line, col);
  return out;
}

const char* describe(Tok k) {
  switch (k) {
    case Tok::ident: return "identifier";
    case Tok::number: return "number";
    case Tok::def: return "'def'";
    case Tok::lparen: return "'('";
    case Tok::rparen: return "')'";
    case Tok::lbrace: return "'{'";
    case Tok::rbrace: return "'}'";
    case Tok::comma: return "','";
    case Tok::semicolon: return "';'";
    case Tok::equals: return "'='";
    case Tok::newline: return "newline";
    case Tok::end: return "end of input";
  }
  return "token";
}

class Parser {
 public:
  explicit Parser(std::vector<Lexeme> toks) : toks_(std::move(toks)) {}

  AstNode parse_unit() {
    skip_separators();
    AstNode result;
    if (peek().kind == Tok::def) {
      result = parse_method();
    } else {
      std::vector<AstNode> stmts = parse_statements(Tok::end);
      if (stmts.empty()) fail("empty program");
      result = stmts.size() == 1 ? std::move(stmts.front()) : make_node("Block", std::move(stmts));
    }
    skip_separators();
    expect(Tok::end);
    return result;
  }

 private:
  const Lexeme& peek() const { return toks_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const { throw SyntaxError(msg, peek().line, peek().column); }

  const Lexeme& expect(Tok k) {
    if (peek().kind != k) fail(std::string("expected ") + describe(k) + ", found " + describe(peek().kind));
    return toks_[pos_++];
  }

  void skip_separators() {
    while (peek().kind == Tok::newline || peek().kind == Tok::semicolon) ++pos_;
  }

  void skip_newlines() {
    while (peek().kind == Tok::newline) ++pos_;
  }

  AstNode parse_method() {
    expect(Tok::def);
    std::vector<AstNode> children;
    children.push_back(make_leaf("SimpleName", expect(Tok::ident).text));
    expect(Tok::lparen);
    if (peek().kind != Tok::rparen) {
      children.push_back(make_leaf("SimpleName", expect(Tok::ident).text));
      while (peek().kind == Tok::comma) {
        ++pos_;
        children.push_back(make_leaf("SimpleName", expect(Tok::ident).text));
      }
    }
    expect(Tok::rparen);
    skip_newlines();
    expect(Tok::lbrace);
    children.push_back(make_node("Block", parse_statements(Tok::rbrace)));
    expect(Tok::rbrace);
    return make_node("MethodDecl", std::move(children));
  }

  std::vector<AstNode> parse_statements(Tok terminator) {
    std::vector<AstNode> stmts;
    skip_separators();
    while (peek().kind != terminator) {
      stmts.push_back(parse_statement());
      if (peek().kind != terminator && peek().kind != Tok::newline && peek().kind != Tok::semicolon) {
        fail(std::string("expected end of statement, found ") + describe(peek().kind));
      }
      skip_separators();
    }
    return stmts;
  }

  AstNode parse_statement() {
    AstNode lhs = parse_expr();
    if (peek().kind == Tok::equals) {
      ++pos_;
      AstNode rhs = parse_expr();
      return make_node("Assign", {std::move(lhs), std::move(rhs)});
    }
    return lhs;
  }

  AstNode parse_expr() {
    if (peek().kind == Tok::number) return make_leaf("NumberLiteral", toks_[pos_++].text);
    if (peek().kind != Tok::ident) fail(std::string("expected expression, found ") + describe(peek().kind));
    std::string name = toks_[pos_++].text;
    if (peek().kind != Tok::lparen) return make_leaf("SimpleName", std::move(name));
    ++pos_;
    std::vector<AstNode> children;
    children.push_back(make_leaf("SimpleName", std::move(name)));
    if (peek().kind != Tok::rparen) {
      children.push_back(parse_expr());
      while (peek().kind == Tok::comma) {
        ++pos_;
        children.push_back(parse_expr());
      }
    }
    expect(Tok::rparen);
    return make_node("Call", std::move(children));
  }

  std::vector<Lexeme> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

AstNode parse_toy(std::string_view source) { return Parser(lex(source)).parse_unit(); }

std::string to_toy_source(const AstNode& node) {
  const auto& t = node.node_type;
  if (t == "SimpleName" || t == "NumberLiteral") return node.token.value_or("");
  if (t == "Assign" && node.children.size() == 2) {
    return to_toy_source(node.children[0]) + " = " + to_toy_source(node.children[1]);
  }
  if (t == "Call" && !node.children.empty()) {
    std::string out = to_toy_source(node.children[0]) + "(";
    for (std::size_t i = 1; i < node.children.size(); ++i) {
      if (i > 1) out += ", ";
      out += to_toy_source(node.children[i]);
    }
    return out + ")";
  }
  if (t == "Block") {
    std::string out;
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      if (i) out += "; ";
      out += to_toy_source(node.children[i]);
    }
    return out;
  }
  if (t == "MethodDecl" && node.children.size() >= 2) {
    std::string out = "def " + to_toy_source(node.children.front()) + "(";
    for (std::size_t i = 1; i + 1 < node.children.size(); ++i) {
      if (i > 1) out += ", ";
      out += to_toy_source(node.children[i]);
    }
    const std::string body = to_toy_source(node.children.back());
    return out + ") { " + body + (body.empty() ? "}" : " }");
  }
  throw ContractError("node type " + t + " has no demonstration-language form");
}

// ---------------------------------------------------------------------------
// Identifiers

std::vector<std::string> split_identifier(std::string_view identifier) {
  std::vector<std::string> parts;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) parts.push_back(std::move(current));
    current.clear();
  };
  auto is_upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; };
  auto is_lower = [](char c) { return std::islower(static_cast<unsigned char>(c)) != 0; };
  auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };

  for (std::size_t i = 0; i < identifier.size(); ++i) {
    const char c = identifier[i];
    if (!std::isalnum(static_cast<unsigned char>(c))) {
      flush();
      continue;
    }
    if (!current.empty() && is_upper(c)) {
      const char prev = current.back();
      const bool next_lower = i + 1 < identifier.size() && is_lower(identifier[i + 1]);
      // fooBar, foo2Bar, and the last capital of an acronym: HTTPServer.
      if (is_lower(prev) || is_digit(prev) || (is_upper(prev) && next_lower)) flush();
    }
    current.push_back(c);
  }
  flush();
  if (parts.empty() && !identifier.empty()) parts.emplace_back(identifier);
  return parts;
}

std::vector<std::string> split_subtokens(std::string_view identifier) {
  auto parts = split_identifier(identifier);
  for (auto& p : parts) {
    for (char& c : p) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return parts;
}

bool is_literal_type(std::string_view node_type) {
  constexpr std::string_view suffix = "Literal";
  return node_type.size() >= suffix.size() && node_type.substr(node_type.size() - suffix.size()) == suffix;
}

// ---------------------------------------------------------------------------
// Traversals

namespace {

std::string sbt_label(const AstNode& n) { return n.token ? n.node_type + "_" + *n.token : n.node_type; }

void sbt_walk(const AstNode& n, std::vector<std::string>& out) {
  if (n.is_leaf()) {
    out.push_back(sbt_label(n));
    return;
  }
  out.emplace_back("(");
  out.push_back(sbt_label(n));
  for (const auto& c : n.children) sbt_walk(c, out);
  out.emplace_back(")");
  out.push_back(sbt_label(n));
}

void emit_subtokens(const AstNode& n, AsbtSequence& out) {
  if (!n.token || n.token->empty()) return;
  std::vector<std::string> parts =
      is_literal_type(n.node_type) ? std::vector<std::string>{*n.token} : split_identifier(*n.token);
  if (parts.size() == 1) {
    out.tokens.push_back(std::move(parts.front()));
    out.types.push_back(static_cast<int>(TypeCode::token_single));
    return;
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const TypeCode code = i == 0                  ? TypeCode::token_begin
                          : i + 1 == parts.size() ? TypeCode::token_end
                                                  : TypeCode::token_mid;
    out.tokens.push_back(std::move(parts[i]));
    out.types.push_back(static_cast<int>(code));
  }
}

void asbt_walk(const AstNode& n, AsbtSequence& out) {
  if (n.is_leaf()) {
    out.tokens.push_back(n.node_type);
    out.types.push_back(static_cast<int>(TypeCode::single_node));
    emit_subtokens(n, out);
    return;
  }
  out.tokens.push_back(n.node_type);
  out.types.push_back(static_cast<int>(TypeCode::begin_node));
  emit_subtokens(n, out);
  for (const auto& c : n.children) asbt_walk(c, out);
  out.tokens.push_back(n.node_type);
  out.types.push_back(static_cast<int>(TypeCode::end_node));
}

}  // namespace

std::vector<std::string> to_sbt(const AstNode& root) {
  std::vector<std::string> out;
  sbt_walk(root, out);
  return out;
}

AsbtSequence to_asbt(const AstNode& root) {
  AsbtSequence out;
  asbt_walk(root, out);
  return out;
}

}  // namespace dmacos::ast
