// SPDX-License-Identifier: Apache-2.0
#include "dmacos/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "dmacos/errors.hpp"
#include "dmacos/rng.hpp"

namespace dmacos::corpus {

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (std::string_view t : {kPadToken, kUnkToken, kBosToken, kEosToken, kNameToken}) add(std::string(t));
}

void Vocab::add(std::string token) {
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < kReservedCount) throw FormatError("vocabulary is missing reserved entries");
  for (std::size_t i = 0; i < kReservedCount; ++i) {
    if (tokens[i] != v.tokens_[i]) {
      throw FormatError("vocabulary entry " + std::to_string(i) + " should be " + v.tokens_[i] + ", found " + tokens[i]);
    }
  }
  for (std::size_t i = kReservedCount; i < tokens.size(); ++i) {
    std::string t = to_lower(tokens[i]);
    if (v.index_.count(t)) throw FormatError("duplicate vocabulary entry " + t);
    v.add(std::move(t));
  }
  return v;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(to_lower(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab build_vocab(std::span<const std::vector<std::string>> streams, std::size_t cap) {
  if (cap <= kReservedCount) {
    throw ConfigError("vocabulary cap " + std::to_string(cap) + " must exceed the " +
                      std::to_string(kReservedCount) + " reserved tokens");
  }
  Vocab v;
  std::map<std::string, std::size_t> counts;
  for (const auto& stream : streams) {
    for (const auto& t : stream) {
      std::string lower = to_lower(t);
      if (v.index_.count(lower)) continue;
      ++counts[lower];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is already lexicographic, so a stable sort on frequency keeps that tie order.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), cap - kReservedCount);
  for (std::size_t i = 0; i < keep; ++i) v.add(ranked[i].first);
  return v;
}

// ---------------------------------------------------------------------------
// Scores and masking

double informativeness_score(std::span<const std::string> name_tokens, std::span<const std::string> summary_tokens) {
  if (name_tokens.empty()) throw ContractError("informativeness_score: empty method name");
  const std::set<std::string> name(name_tokens.begin(), name_tokens.end());
  const std::set<std::string> summary(summary_tokens.begin(), summary_tokens.end());
  std::size_t shared = 0;
  for (const auto& w : name) shared += summary.count(w);
  return static_cast<double>(shared) / static_cast<double>(name.size());
}

ast::AsbtSequence mask_name(const ast::AsbtSequence& body, std::span<const std::string> name_tokens) {
  using ast::TypeCode;
  if (body.tokens.size() != body.types.size()) throw ContractError("mask_name: tokens and types differ in length");
  ast::AsbtSequence out;
  std::vector<std::string> name;
  for (const auto& t : name_tokens) name.push_back(to_lower(t));

  std::size_t i = 0;
  while (i < body.size()) {
    const int code = body.types[i];
    std::size_t end = i;  // one past the identifier starting at i, if any
    if (code == static_cast<int>(TypeCode::token_single)) {
      end = i + 1;
    } else if (code == static_cast<int>(TypeCode::token_begin)) {
      std::size_t j = i + 1;
      while (j < body.size() && body.types[j] == static_cast<int>(TypeCode::token_mid)) ++j;
      if (j < body.size() && body.types[j] == static_cast<int>(TypeCode::token_end)) end = j + 1;
    }
    if (end > i && !name.empty() && end - i == name.size()) {
      bool match = true;
      for (std::size_t k = 0; k < name.size() && match; ++k) match = to_lower(body.tokens[i + k]) == name[k];
      if (match) {
        out.tokens.emplace_back(kNameToken);
        out.types.push_back(static_cast<int>(TypeCode::token_single));
        i = end;
        continue;
      }
    }
    out.tokens.push_back(body.tokens[i]);
    out.types.push_back(code);
    ++i;
  }
  return out;
}

std::vector<int> encode_and_pad(std::span<const std::string> tokens, const Vocab& vocab, std::size_t max_len,
                                bool wrap) {
  if (max_len < 1) throw ContractError("encode_and_pad: max_len must be at least 1");
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  if (wrap) ids.push_back(kBos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  if (wrap) ids.push_back(kEos);
  ids.resize(max_len, kPad);
  return ids;
}

std::vector<std::string> tokenize_summary(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

CorpusStats corpus_stats(std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("corpus_stats: empty corpus");
  CorpusStats stats;
  stats.samples = samples.size();
  for (const auto& s : samples) {
    const double name_share = informativeness_score(s.name_tokens, s.summary_tokens);
    stats.mean_name_in_summary += name_share;
    if (!s.summary_tokens.empty()) stats.mean_summary_in_name += informativeness_score(s.summary_tokens, s.name_tokens);
    if (name_share == 1.0) stats.fully_covered_fraction += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  stats.mean_name_in_summary /= n;
  stats.mean_summary_in_name /= n;
  stats.fully_covered_fraction /= n;
  return stats;
}

Splits split_corpus(std::vector<Sample> samples, const SplitSpec& spec) {
  if (spec.train < 0 || spec.valid < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.valid + spec.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
  auto rng = make_stream(spec.seed, "corpus_shuffle");
  shuffle(std::span<Sample>(samples), rng);
  const double n = static_cast<double>(samples.size());
  const std::size_t n_train = std::min(samples.size(), static_cast<std::size_t>(std::llround(n * spec.train)));
  const std::size_t n_valid =
      std::min(samples.size() - n_train, static_cast<std::size_t>(std::llround(n * spec.valid)));
  Splits out;
  auto first = std::make_move_iterator(samples.begin());
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  out.valid.assign(first + static_cast<std::ptrdiff_t>(n_train),
                   first + static_cast<std::ptrdiff_t>(n_train + n_valid));
  out.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_valid), std::make_move_iterator(samples.end()));
  return out;
}

LangProfile lang_profile(std::string_view name) {
  if (name == "java") return {"java", 10, 300, 13, 50000, 44707};
  if (name == "python") return {"python", 10, 100, 20, 50400, 31350};
  if (name == "toy") return {"toy", 10, 100, 13, 2000, 2000};
  throw ConfigError("unknown language profile '" + std::string(name) + "' (expected java, python or toy)");
}

// ---------------------------------------------------------------------------
// Records

namespace {

std::vector<std::string> string_array(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw FormatError(std::string("\"") + field + "\" must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw FormatError(std::string("\"") + field + "\" must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

Sample sample_from_record(const nlohmann::json& record, std::string fallback_id) {
  if (!record.is_object()) throw FormatError("record must be a JSON object");
  Sample s;
  if (auto it = record.find("id"); it != record.end()) {
    s.id = it->is_string() ? it->get<std::string>() : it->dump();
  } else {
    s.id = std::move(fallback_id);
  }

  if (auto it = record.find("name_tokens"); it != record.end()) {
    for (auto& t : string_array(*it, "name_tokens")) s.name_tokens.push_back(to_lower(t));
  } else if (auto nt = record.find("name"); nt != record.end() && nt->is_string()) {
    s.name_tokens = ast::split_subtokens(nt->get<std::string>());
  } else {
    throw FormatError("record needs \"name\" or \"name_tokens\"");
  }
  if (s.name_tokens.empty()) throw FormatError("record has an empty method name");

  if (auto it = record.find("summary_tokens"); it != record.end()) {
    for (auto& t : string_array(*it, "summary_tokens")) s.summary_tokens.push_back(to_lower(t));
  } else if (auto st = record.find("summary"); st != record.end() && st->is_string()) {
    s.summary_tokens = tokenize_summary(st->get<std::string>());
  } else {
    throw FormatError("record needs \"summary\" or \"summary_tokens\"");
  }

  ast::AsbtSequence body;
  if (auto it = record.find("ast"); it != record.end()) {
    body = ast::to_asbt(ast::ast_from_json(*it));
  } else if (auto src = record.find("source"); src != record.end() && src->is_string()) {
    body = ast::to_asbt(ast::parse_toy(src->get<std::string>()));
  } else if (record.contains("body_tokens") && record.contains("body_types")) {
    body.tokens = string_array(record["body_tokens"], "body_tokens");
    for (const auto& c : record["body_types"]) {
      if (!c.is_number_integer() || c.get<int>() < 0 || c.get<int>() >= ast::kTypeCodeCount) {
        throw FormatError("\"body_types\" entries must be aSBT type codes 0-6");
      }
      body.types.push_back(c.get<int>());
    }
    if (body.tokens.size() != body.types.size()) throw FormatError("\"body_tokens\" and \"body_types\" differ in length");
  } else {
    throw FormatError("record needs \"ast\", \"source\" or \"body_tokens\"/\"body_types\"");
  }
  if (body.tokens.empty()) throw FormatError("record has an empty body");

  body = mask_name(body, s.name_tokens);
  s.body_tokens = std::move(body.tokens);
  s.body_types = std::move(body.types);
  s.informativeness = informativeness_score(s.name_tokens, s.summary_tokens);
  return s;
}

nlohmann::ordered_json sample_to_json(const Sample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["body_tokens"] = s.body_tokens;
  j["body_types"] = s.body_types;
  j["name_tokens"] = s.name_tokens;
  j["summary_tokens"] = s.summary_tokens;
  j["informativeness"] = s.informativeness;
  return j;
}

Sample sample_from_json(const nlohmann::json& j) {
  try {
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.body_tokens = j.at("body_tokens").get<std::vector<std::string>>();
    s.body_types = j.at("body_types").get<std::vector<int>>();
    s.name_tokens = j.at("name_tokens").get<std::vector<std::string>>();
    s.summary_tokens = j.at("summary_tokens").get<std::vector<std::string>>();
    s.informativeness = j.at("informativeness").get<double>();
    if (s.body_tokens.size() != s.body_types.size()) throw FormatError("body tokens and types differ in length");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed sample: ") + e.what());
  }
}

void write_samples(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

namespace {

template <typename F>
void for_each_jsonl(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(nlohmann::json::parse(line), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const SyntaxError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<Sample> read_samples(const std::filesystem::path& path) {
  std::vector<Sample> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(sample_from_json(j)); });
  return out;
}

std::vector<Sample> read_records(const std::filesystem::path& path) {
  std::vector<Sample> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    out.push_back(sample_from_record(j, "line-" + std::to_string(line)));
  });
  return out;
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

Vocab read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocab::from_tokens(std::move(tokens));
}

}  // namespace dmacos::corpus
