// SPDX-License-Identifier: Apache-2.0
#include "dmacos/toy.hpp"

#include <array>
#include <cstdio>
#include <numeric>
#include <string>

#include "dmacos/errors.hpp"
#include "dmacos/rng.hpp"

namespace dmacos::toy {

namespace {

struct Lexicon {
  std::array<const char*, 8> verbs;
  std::array<const char*, 8> nouns;
  std::array<const char*, 4> helpers;
  std::array<const char*, 3> params;
  const char* sink;
  const char* prefix;
};

constexpr Lexicon kFamilyA{{"compute", "update", "format", "load", "check", "build", "parse", "reset"},
                           {"total", "state", "decimal", "config", "user", "price", "count", "buffer"},
                           {"calc", "apply", "run", "eval"},
                           {"items", "data", "values"},
                           "emit",
                           "A"};

constexpr Lexicon kFamilyB{{"send", "read", "write", "clear", "find", "merge", "open", "close"},
                           {"message", "file", "cache", "record", "index", "list", "token", "queue"},
                           {"fetch", "handle", "process", "dispatch"},
                           {"path", "stream", "target"},
                           "publish",
                           "B"};

constexpr std::size_t kTemplates = 3;
constexpr std::size_t kConstants = 4;

std::string capitalized(std::string word) {
  if (!word.empty() && word[0] >= 'a' && word[0] <= 'z') word[0] = static_cast<char>(word[0] - 'a' + 'A');
  return word;
}

}  // namespace

Family parse_family(std::string_view name) {
  if (name == "a" || name == "A") return Family::a;
  if (name == "b" || name == "B") return Family::b;
  throw ConfigError("unknown toy family '" + std::string(name) + "' (expected a or b)");
}

std::vector<nlohmann::ordered_json> make_records(std::size_t count, Family family, std::uint64_t seed) {
  const Lexicon& lex = family == Family::a ? kFamilyA : kFamilyB;
  const std::size_t combos =
      lex.verbs.size() * lex.nouns.size() * lex.helpers.size() * lex.params.size() * kTemplates * kConstants;
  if (count > combos) throw ConfigError("at most " + std::to_string(combos) + " distinct toy methods per family");

  // Verb-noun pairs are spread first so small corpora cover many distinct names.
  std::vector<std::size_t> pairs(lex.verbs.size() * lex.nouns.size());
  std::iota(pairs.begin(), pairs.end(), std::size_t{0});
  std::vector<std::size_t> variants(combos / pairs.size());
  std::iota(variants.begin(), variants.end(), std::size_t{0});
  auto rng = make_stream(seed, std::string("toy/") + lex.prefix);
  shuffle(std::span<std::size_t>(pairs), rng);
  shuffle(std::span<std::size_t>(variants), rng);

  std::vector<nlohmann::ordered_json> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pair = pairs[i % pairs.size()];
    std::size_t v = variants[(i / pairs.size() + i * 7) % variants.size()];
    const std::string verb = lex.verbs[pair / lex.nouns.size()];
    const std::string noun = lex.nouns[pair % lex.nouns.size()];
    const std::string helper = lex.helpers[v % lex.helpers.size()];
    v /= lex.helpers.size();
    const std::string param = lex.params[v % lex.params.size()];
    const std::string other = lex.params[(v + 1) % lex.params.size()];
    v /= lex.params.size();
    const std::size_t shape = v % kTemplates;
    const std::string constant = std::to_string(v / kTemplates + 2);
    const std::string name = verb + capitalized(noun);

    std::string source, summary;
    switch (shape) {
      case 0:
        source = "def " + name + "(" + param + ") { " + noun + "_value = " + helper + "(" + param + ", " + constant +
                 "); " + lex.sink + "(" + noun + "_value) }";
        summary = verb + " the " + noun + " for the given " + param;
        break;
      case 1:
        source = "def " + name + "(" + param + ", " + other + ") { " + noun + "_tmp = " + helper + "(" + param +
                 "); store(" + noun + "_tmp, " + other + ") }";
        summary = verb + " the " + noun + " and store it in " + other;
        break;
      default:
        source = "def " + name + "(" + param + ") { " + noun + "_list = " + helper + "(" + param + "); " + noun +
                 "_list = merge(" + noun + "_list, " + constant + ") }";
        summary = verb + " the list with " + helper;
        break;
    }
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", lex.prefix, i);
    nlohmann::ordered_json rec;
    rec["id"] = id;
    rec["source"] = source;
    rec["name"] = name;
    rec["summary"] = summary;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<corpus::Sample> make_samples(std::size_t count, Family family, std::uint64_t seed) {
  std::vector<corpus::Sample> out;
  for (const auto& rec : make_records(count, family, seed)) out.push_back(corpus::sample_from_record(rec, ""));
  return out;
}

}  // namespace dmacos::toy
