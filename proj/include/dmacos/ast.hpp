// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dmacos::ast {

/// aSBT type codes.
enum class TypeCode : std::uint8_t {
  begin_node = 0,
  end_node = 1,
  single_node = 2,
  token_begin = 3,
  token_mid = 4,
  token_end = 5,
  token_single = 6,
};

inline constexpr int kTypeCodeCount = 7;

struct AstNode {
  std::string node_type;
  std::optional<std::string> token;
  std::vector<AstNode> children;

  bool is_leaf() const noexcept { return children.empty(); }
  bool operator==(const AstNode&) const = default;
};

AstNode make_leaf(std::string node_type, std::optional<std::string> token = std::nullopt);
AstNode make_node(std::string node_type, std::vector<AstNode> children);

/// Parallel token / type-code sequences produced by to_asbt.
struct AsbtSequence {
  std::vector<std::string> tokens;
  std::vector<int> types;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const AsbtSequence&) const = default;
};

// Neutral JSON interchange: {"node_type": str, "token": str|null, "children": [...]}.
AstNode ast_from_json(const nlohmann::json& j);
nlohmann::ordered_json ast_to_json(const AstNode& node);

/// Parses the demonstration language:
///
///   method    := "def" IDENT "(" [IDENT ("," IDENT)*] ")" "{" [stmts] "}"
///   stmts     := stmt ((";" | NEWLINE) stmt)*
///   stmt      := expr ["=" expr]
///   expr      := IDENT | INT | IDENT "(" [expr ("," expr)*] ")"
///
/// A lone statement parses to its own node; several become a Block.
/// Throws SyntaxError with a 1-based line/column.
AstNode parse_toy(std::string_view source);

/// Inverse of parse_toy for trees that parse_toy can produce.
std::string to_toy_source(const AstNode& node);

/// Splits on underscores, other non-alphanumerics and camelCase boundaries,
/// keeping digits attached to the preceding run; case is preserved.
std::vector<std::string> split_identifier(std::string_view identifier);

/// split_identifier, lowercased.
std::vector<std::string> split_subtokens(std::string_view identifier);

/// Classic SBT: "(" T ... ")" T bracketing for inner nodes, "T_token" for leaves.
std::vector<std::string> to_sbt(const AstNode& root);

/// Advanced SBT. Sub-tokens keep their source casing here; vocabularies fold case.
AsbtSequence to_asbt(const AstNode& root);

/// Literal node types ("...Literal") are emitted as one code-6 sub-token.
bool is_literal_type(std::string_view node_type);

}  // namespace dmacos::ast
