// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "dmacos/corpus.hpp"
#include "dmacos/errors.hpp"
#include "oracles.hpp"

using namespace dmacos::corpus;
namespace fs = std::filesystem;
using Strings = std::vector<std::string>;
using dmacos::oracles::overlap_recount;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmacos_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Sample make_sample(std::string id, Strings name, Strings summary) {
  Sample s;
  s.id = std::move(id);
  s.body_tokens = {"Block", "x"};
  s.body_types = {0, 6};
  s.name_tokens = std::move(name);
  s.summary_tokens = std::move(summary);
  s.informativeness = informativeness_score(s.name_tokens, s.summary_tokens);
  return s;
}

}  // namespace

TEST(Informativeness, Examples) {
  EXPECT_DOUBLE_EQ(informativeness_score(Strings{"update", "state"},
                                         tokenize_summary("called when a command update its state")),
                   1.0);
  EXPECT_DOUBLE_EQ(informativeness_score(Strings{"foo"}, Strings{"bar", "baz"}), 0.0);
  EXPECT_DOUBLE_EQ(informativeness_score(Strings{"format", "decimal"}, Strings{"formats", "a", "decimal", "number"}),
                   0.5);
  EXPECT_THROW(informativeness_score(Strings{}, Strings{"a"}), dmacos::ContractError);
}

TEST(Informativeness, MatchesBruteForceRecount) {
  std::mt19937_64 rng(3);
  const Strings words = {"a", "b", "c", "d", "e", "f", "g", "h"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(0, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    Strings name, summary;
    const std::size_t n = 1 + len(rng) % 6;
    for (std::size_t i = 0; i < n; ++i) name.push_back(words[pick(rng)]);
    for (std::size_t i = len(rng); i > 0; --i) summary.push_back(words[pick(rng)]);
    EXPECT_EQ(informativeness_score(name, summary), overlap_recount(name, summary));

    Strings shuffled = name;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    shuffled.push_back(shuffled.front());
    EXPECT_EQ(informativeness_score(shuffled, summary), informativeness_score(name, summary));
  }
}

TEST(MaskName, ReplacesWholeIdentifiers) {
  dmacos::ast::AsbtSequence body{{"Call", "SimpleName", "format", "decimal", "SimpleName", "x", "Call"},
                                 {0, 2, 3, 5, 2, 6, 1}};
  const auto masked = mask_name(body, Strings{"format", "decimal"});
  EXPECT_EQ(masked.tokens, (Strings{"Call", "SimpleName", "<name>", "SimpleName", "x", "Call"}));
  EXPECT_EQ(masked.types, (std::vector<int>{0, 2, 6, 2, 6, 1}));
}

TEST(MaskName, NoOccurrenceLeavesBodyUnchanged) {
  dmacos::ast::AsbtSequence body{{"SimpleName", "value"}, {2, 6}};
  EXPECT_EQ(mask_name(body, Strings{"format", "decimal"}), body);
}

TEST(MaskName, TwoOccurrencesShrinkByTwiceNameLengthMinusOne) {
  dmacos::ast::AsbtSequence body{
      {"Block", "SimpleName", "Format", "Decimal", "SimpleName", "y", "SimpleName", "format", "decimal", "Block"},
      {0, 2, 3, 5, 2, 6, 2, 3, 5, 1}};
  const Strings name = {"format", "decimal"};
  const auto masked = mask_name(body, name);
  EXPECT_EQ(masked.size(), body.size() - 2 * (name.size() - 1));
  EXPECT_EQ(std::count(masked.tokens.begin(), masked.tokens.end(), "<name>"), 2);
}

TEST(MaskName, PartialIdentifierIsNotMasked) {
  dmacos::ast::AsbtSequence body{{"SimpleName", "format", "decimal", "value"}, {2, 3, 4, 5}};
  EXPECT_EQ(mask_name(body, Strings{"format", "decimal"}), body);
}

TEST(Vocab, FrequencyOrderThenLexicographic) {
  const std::vector<Strings> streams = {{"a", "a", "b"}};
  const Vocab v = build_vocab(streams, 7);
  ASSERT_EQ(v.size(), 7u);
  EXPECT_EQ(v.token(5), "a");
  EXPECT_EQ(v.token(6), "b");
  EXPECT_EQ(v.token(kPad), "<pad>");
  EXPECT_EQ(v.token(kUnk), "<unk>");
  EXPECT_EQ(v.token(kBos), "<s>");
  EXPECT_EQ(v.token(kEos), "</s>");
  EXPECT_EQ(v.token(kNameMask), "<name>");

  const Vocab tie = build_vocab(std::vector<Strings>{{"b", "a"}}, 10);
  EXPECT_EQ(tie.token(5), "a");
  EXPECT_EQ(tie.token(6), "b");
}

TEST(Vocab, CapCountsReservedEntries) {
  const Vocab v = build_vocab(std::vector<Strings>{{"a", "a", "b"}}, 6);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("a"), 5);
  EXPECT_EQ(v.id("b"), kUnk);
  EXPECT_THROW(build_vocab(std::vector<Strings>{{"a"}}, 5), dmacos::ConfigError);
}

TEST(Vocab, CaseInsensitive) {
  const Vocab v = build_vocab(std::vector<Strings>{{"Client", "client"}}, 10);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("CLIENT"), 5);
  EXPECT_EQ(v.token(5), "client");
}

TEST(Vocab, ZipfStreamKeepsBruteForceTopK) {
  std::mt19937_64 rng(11);
  Strings stream;
  for (int w = 1; w <= 60; ++w) {
    const int count = 600 / w + static_cast<int>(rng() % 3);
    for (int c = 0; c < count; ++c) stream.push_back("w" + std::to_string(w));
  }
  std::shuffle(stream.begin(), stream.end(), rng);
  const std::size_t cap = 25;
  const Vocab v = build_vocab(std::vector<Strings>{stream}, cap);

  std::map<std::string, int> counts;
  for (const auto& t : stream) ++counts[t];
  std::vector<std::pair<int, std::string>> ranked;
  for (const auto& [t, c] : counts) ranked.emplace_back(-c, t);
  std::sort(ranked.begin(), ranked.end());
  ASSERT_EQ(v.size(), cap);
  for (std::size_t i = 0; i + kReservedCount < cap; ++i) {
    EXPECT_EQ(v.token(static_cast<int>(i + kReservedCount)), ranked[i].second);
  }
}

TEST(Vocab, FromTokensValidatesReservedPrefix) {
  const Vocab v = build_vocab(std::vector<Strings>{{"x", "y"}}, 10);
  EXPECT_EQ(Vocab::from_tokens(v.tokens()), v);
  EXPECT_THROW(Vocab::from_tokens({"a", "b"}), dmacos::FormatError);
  Strings dup = v.tokens();
  dup.push_back("x");
  EXPECT_THROW(Vocab::from_tokens(dup), dmacos::FormatError);
}

TEST(EncodeAndPad, Examples) {
  const Vocab v = build_vocab(std::vector<Strings>{{"a"}}, 10);
  ASSERT_EQ(v.id("a"), 5);
  EXPECT_EQ(encode_and_pad(Strings{"a"}, v, 3), (std::vector<int>{5, 0, 0}));
  EXPECT_EQ(encode_and_pad(Strings{"a", "zzz"}, v, 2), (std::vector<int>{5, kUnk}));
  EXPECT_EQ(encode_and_pad(Strings{"a"}, v, 4, true), (std::vector<int>{kBos, 5, kEos, 0}));

  Strings fifteen;
  Strings stream;
  for (int i = 0; i < 15; ++i) {
    fifteen.push_back("t" + std::to_string(i));
    stream.push_back(fifteen.back());
  }
  const Vocab big = build_vocab(std::vector<Strings>{stream}, 100);
  const auto ids = encode_and_pad(fifteen, big, 13);
  ASSERT_EQ(ids.size(), 13u);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_EQ(big.token(ids[i]), fifteen[i]);
  EXPECT_THROW(encode_and_pad(fifteen, big, 0), dmacos::ContractError);
}

TEST(Summary, Tokenizer) {
  EXPECT_EQ(tokenize_summary("Returns the HTTP-client's id."),
            (Strings{"returns", "the", "http", "client", "s", "id"}));
  EXPECT_TRUE(tokenize_summary("  ...  ").empty());
}

TEST(Stats, Examples) {
  const std::vector<Sample> one = {make_sample("1", {"a"}, {"a"})};
  const CorpusStats s1 = corpus_stats(one);
  EXPECT_DOUBLE_EQ(s1.mean_name_in_summary, 1.0);
  EXPECT_DOUBLE_EQ(s1.fully_covered_fraction, 1.0);

  const std::vector<Sample> two = {make_sample("1", {"a"}, {"a"}), make_sample("2", {"b"}, {"c"})};
  const CorpusStats s2 = corpus_stats(two);
  EXPECT_DOUBLE_EQ(s2.mean_name_in_summary, 0.5);
  EXPECT_DOUBLE_EQ(s2.fully_covered_fraction, 0.5);
  EXPECT_THROW(corpus_stats(std::vector<Sample>{}), dmacos::ContractError);
}

TEST(Stats, MatchesBruteForceRecount) {
  std::mt19937_64 rng(5);
  const Strings words = {"get", "set", "value", "name", "the", "a", "of", "list"};
  std::vector<Sample> samples;
  for (int i = 0; i < 100; ++i) {
    Strings name, summary;
    for (std::size_t k = 1 + rng() % 3; k > 0; --k) name.push_back(words[rng() % words.size()]);
    for (std::size_t k = 1 + rng() % 8; k > 0; --k) summary.push_back(words[rng() % words.size()]);
    samples.push_back(make_sample(std::to_string(i), name, summary));
  }
  double fwd = 0, back = 0, full = 0;
  for (const auto& s : samples) {
    const double f = overlap_recount(s.name_tokens, s.summary_tokens);
    fwd += f;
    back += overlap_recount(s.summary_tokens, s.name_tokens);
    full += f == 1.0 ? 1 : 0;
  }
  const CorpusStats st = corpus_stats(samples);
  EXPECT_NEAR(st.mean_name_in_summary, fwd / 100, 1e-12);
  EXPECT_NEAR(st.mean_summary_in_name, back / 100, 1e-12);
  EXPECT_NEAR(st.fully_covered_fraction, full / 100, 1e-12);
}

TEST(Split, FractionsDeterminismAndPartition) {
  std::vector<Sample> samples;
  for (int i = 0; i < 100; ++i) samples.push_back(make_sample("s" + std::to_string(i), {"a"}, {"a"}));
  SplitSpec spec;
  spec.seed = 17;
  const Splits a = split_corpus(samples, spec);
  EXPECT_EQ(a.train.size(), 90u);
  EXPECT_EQ(a.valid.size(), 5u);
  EXPECT_EQ(a.test.size(), 5u);
  const Splits b = split_corpus(samples, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);

  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.valid, &a.test}) {
    for (const auto& s : *part) EXPECT_TRUE(ids.insert(s.id).second);
  }
  EXPECT_EQ(ids.size(), 100u);

  spec.seed = 18;
  EXPECT_NE(split_corpus(samples, spec).train, a.train);
  spec.train = 0.5;
  EXPECT_THROW(split_corpus(samples, spec), dmacos::ConfigError);
}

TEST(Profiles, LengthsAndCaps) {
  const LangProfile java = lang_profile("java");
  EXPECT_EQ(java.name_max, 10u);
  EXPECT_EQ(java.body_max, 300u);
  EXPECT_EQ(java.summary_max, 13u);
  EXPECT_EQ(java.body_vocab_cap, 50000u);
  EXPECT_EQ(java.summary_vocab_cap, 44707u);
  const LangProfile py = lang_profile("python");
  EXPECT_EQ(py.body_max, 100u);
  EXPECT_EQ(py.summary_max, 20u);
  EXPECT_EQ(py.body_vocab_cap, 50400u);
  EXPECT_EQ(py.summary_vocab_cap, 31350u);
  EXPECT_THROW(lang_profile("cobol"), dmacos::ConfigError);
}

TEST(Records, AllInputFormsAgree) {
  const nlohmann::json from_source = nlohmann::json::parse(
      R"({"id": "m1", "source": "def formatDecimal(v) { r = formatDecimal(v) }", "name": "formatDecimal", "summary": "Formats a decimal."})");
  const Sample s = sample_from_record(from_source, "fallback");
  EXPECT_EQ(s.id, "m1");
  EXPECT_EQ(s.name_tokens, (Strings{"format", "decimal"}));
  EXPECT_EQ(s.summary_tokens, (Strings{"formats", "a", "decimal"}));
  EXPECT_DOUBLE_EQ(s.informativeness, 0.5);
  EXPECT_EQ(std::count(s.body_tokens.begin(), s.body_tokens.end(), "<name>"), 2);
  EXPECT_EQ(s.body_tokens.size(), s.body_types.size());

  nlohmann::json flat;
  flat["body_tokens"] = s.body_tokens;
  flat["body_types"] = s.body_types;
  flat["name_tokens"] = s.name_tokens;
  flat["summary_tokens"] = s.summary_tokens;
  const Sample t = sample_from_record(flat, "m1");
  EXPECT_EQ(t, s);

  EXPECT_EQ(sample_from_json(nlohmann::json::parse(sample_to_json(s).dump())), s);
}

TEST(Records, MalformedLinesReportLineNumbers) {
  const fs::path dir = temp_dir("records");
  {
    std::ofstream out(dir / "in.jsonl");
    out << R"({"source": "x = y", "name": "f", "summary": "s"})" << '\n' << '\n' << "{not json\n";
  }
  try {
    read_records(dir / "in.jsonl");
    FAIL() << "expected FormatError";
  } catch (const dmacos::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"source": "x = y", "summary": "s"})" << '\n';
  }
  EXPECT_THROW(read_records(dir / "bad.jsonl"), dmacos::FormatError);
}

TEST(Records, SampleFilesRoundTrip) {
  const fs::path dir = temp_dir("roundtrip");
  const std::vector<Sample> samples = {make_sample("1", {"a", "b"}, {"a", "c"}), make_sample("2", {"q"}, {})};
  write_samples(dir / "s.jsonl", samples);
  EXPECT_EQ(read_samples(dir / "s.jsonl"), samples);

  const Vocab v = build_vocab(std::vector<Strings>{{"x", "y", "y"}}, 10);
  write_vocab(dir / "v.txt", v);
  EXPECT_EQ(read_vocab(dir / "v.txt"), v);
}
