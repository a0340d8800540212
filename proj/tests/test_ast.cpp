// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <nlohmann/json.hpp>
#include <random>

#include "dmacos/ast.hpp"
#include "dmacos/errors.hpp"
#include "oracles.hpp"

using namespace dmacos::ast;
using namespace dmacos::oracles;

namespace {

AstNode worked_example() {
  return make_node("Assign", {make_leaf("SimpleName", "storage_client"),
                              make_node("Call", {make_leaf("SimpleName", "Client")})});
}

std::string joined(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : " ") + s;
  return out;
}

}  // namespace

TEST(Asbt, WorkedExample) {
  const AsbtSequence s = to_asbt(worked_example());
  EXPECT_EQ(s.tokens, (std::vector<std::string>{"Assign", "SimpleName", "storage", "client", "Call", "SimpleName",
                                                "Client", "Call", "Assign"}));
  EXPECT_EQ(s.types, (std::vector<int>{0, 2, 3, 5, 0, 2, 6, 1, 1}));
}

TEST(Asbt, SingleNodeSingleSubtoken) {
  const AsbtSequence s = to_asbt(make_leaf("SimpleName", "x"));
  EXPECT_EQ(s.tokens, (std::vector<std::string>{"SimpleName", "x"}));
  EXPECT_EQ(s.types, (std::vector<int>{2, 6}));
}

TEST(Asbt, ThreeSubtokensGetBeginMidEnd) {
  const AsbtSequence s = to_asbt(make_leaf("SimpleName", "a_b_c"));
  EXPECT_EQ(s.types, (std::vector<int>{2, 3, 4, 5}));
}

TEST(Asbt, LiteralsAreOneToken) {
  const AsbtSequence s = to_asbt(make_leaf("StringLiteral", "hello_world"));
  EXPECT_EQ(s.tokens, (std::vector<std::string>{"StringLiteral", "hello_world"}));
  EXPECT_EQ(s.types, (std::vector<int>{2, 6}));
}

TEST(Sbt, WorkedExample) {
  EXPECT_EQ(joined(to_sbt(worked_example())), "( Assign SimpleName_storage_client ( Call SimpleName_Client ) Call ) Assign");
}

TEST(Sbt, SingleNode) { EXPECT_EQ(to_sbt(make_leaf("SimpleName", "x")), (std::vector<std::string>{"SimpleName_x"})); }

TEST(Traversal, RandomTreesMatchRecursiveOracles) {
  TreeGen gen(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const GenNode g = gen.tree(6);
    const AstNode tree = gen.build(g);
    EXPECT_EQ(joined(to_sbt(tree)), oracle_sbt(g));

    std::vector<std::pair<std::string, int>> expected;
    oracle_asbt(g, expected);
    const AsbtSequence s = to_asbt(tree);
    ASSERT_EQ(s.tokens.size(), s.types.size());
    ASSERT_EQ(s.size(), expected.size()) << joined(s.tokens);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_EQ(s.tokens[i], expected[i].first);
      EXPECT_EQ(s.types[i], expected[i].second);
    }
  }
}

TEST(Traversal, BeginEndCodesBalancePerNodeType) {
  TreeGen gen(7);
  for (int trial = 0; trial < 300; ++trial) {
    const AsbtSequence s = to_asbt(gen.build(gen.tree(6)));
    std::map<std::string, int> balance;
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_GE(s.types[i], 0);
      EXPECT_LT(s.types[i], kTypeCodeCount);
      if (s.types[i] == 0) ++balance[s.tokens[i]];
      if (s.types[i] == 1) --balance[s.tokens[i]];
    }
    for (const auto& [type, b] : balance) EXPECT_EQ(b, 0) << type;
  }
}

TEST(Traversal, SubtokensRejoinToLowercasedIdentifier) {
  for (const std::string id : {"storage_client", "formatDecimal2", "getHTTPServer_url", "a_b_c", "x", "Client"}) {
    const AsbtSequence s = to_asbt(make_leaf("SimpleName", id));
    std::string rejoined;
    for (std::size_t i = 1; i < s.size(); ++i) rejoined += s.tokens[i];
    std::string expected;
    for (char c : id) {
      if (c != '_') expected += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    std::string lowered;
    for (char c : rejoined) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    EXPECT_EQ(lowered, expected) << id;
  }
}

TEST(Split, Examples) {
  EXPECT_EQ(split_subtokens("storage_client"), (std::vector<std::string>{"storage", "client"}));
  EXPECT_EQ(split_subtokens("x"), (std::vector<std::string>{"x"}));
  EXPECT_EQ(split_subtokens("formatDecimal2"), (std::vector<std::string>{"format", "decimal2"}));
  EXPECT_EQ(split_subtokens("HTTPServer"), (std::vector<std::string>{"http", "server"}));
  EXPECT_EQ(split_subtokens("__init__"), (std::vector<std::string>{"init"}));
  EXPECT_EQ(split_subtokens("getX"), (std::vector<std::string>{"get", "x"}));
  EXPECT_EQ(split_subtokens("___"), (std::vector<std::string>{"___"}));
  EXPECT_EQ(split_identifier("storageClient"), (std::vector<std::string>{"storage", "Client"}));
}

TEST(Parse, AssignmentExample) {
  EXPECT_EQ(parse_toy("storage_client = Client()"), worked_example());
}

TEST(Parse, SingleIdentifier) { EXPECT_EQ(parse_toy("x"), make_leaf("SimpleName", "x")); }

TEST(Parse, NestedCallsRoundTrip) {
  const AstNode expected = make_node(
      "Call", {make_leaf("SimpleName", "f"),
               make_node("Call", {make_leaf("SimpleName", "g"), make_leaf("NumberLiteral", "1")})});
  const AstNode parsed = parse_toy("f(g(1))");
  EXPECT_EQ(parsed, expected);
  EXPECT_EQ(parse_toy(to_toy_source(parsed)), parsed);
}

TEST(Parse, MethodsAndBlocks) {
  const AstNode m = parse_toy("def computeTotal(items, n) {\n  t = calc(items, 3)\n  emit(t)\n}");
  ASSERT_EQ(m.node_type, "MethodDecl");
  ASSERT_EQ(m.children.size(), 4u);
  EXPECT_EQ(m.children[0], make_leaf("SimpleName", "computeTotal"));
  EXPECT_EQ(m.children[1], make_leaf("SimpleName", "items"));
  EXPECT_EQ(m.children[3].node_type, "Block");
  EXPECT_EQ(m.children[3].children.size(), 2u);
  EXPECT_EQ(parse_toy(to_toy_source(m)), m);
  EXPECT_EQ(parse_toy("a = 1; b = 2").node_type, "Block");
}

TEST(Parse, SyntaxErrorsCarryPosition) {
  try {
    parse_toy("x = 1\n  f(1,");
    FAIL() << "expected SyntaxError";
  } catch (const dmacos::SyntaxError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_GE(e.column(), 1);
  }
  try {
    parse_toy("a = 3b");
    FAIL() << "expected SyntaxError";
  } catch (const dmacos::SyntaxError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_EQ(e.column(), 6);
  }
  EXPECT_THROW(parse_toy("a = $"), dmacos::SyntaxError);
  EXPECT_THROW(parse_toy(""), dmacos::SyntaxError);
  EXPECT_THROW(parse_toy("def f( { }"), dmacos::SyntaxError);
}

TEST(Json, RoundTripAndValidation) {
  const AstNode tree = worked_example();
  const nlohmann::json j = nlohmann::json::parse(ast_to_json(tree).dump());
  EXPECT_EQ(ast_from_json(j), tree);
  EXPECT_EQ(j["children"][0]["token"], "storage_client");
  EXPECT_TRUE(j["token"].is_null());

  EXPECT_THROW(ast_from_json(nlohmann::json::parse(R"({"node_type": ""})")), dmacos::FormatError);
  EXPECT_THROW(ast_from_json(nlohmann::json::parse(R"({"token": "x"})")), dmacos::FormatError);
  EXPECT_THROW(ast_from_json(nlohmann::json::parse(R"({"node_type": "A", "token": 3})")), dmacos::FormatError);
  EXPECT_THROW(ast_from_json(nlohmann::json::parse(R"({"node_type": "A", "children": {}})")), dmacos::FormatError);
  EXPECT_EQ(ast_from_json(nlohmann::json::parse(R"({"node_type": "A"})")), make_leaf("A"));
}
