// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dmacos/ast.hpp"

namespace dmacos::corpus {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNameMask = 4;
inline constexpr std::size_t kReservedCount = 5;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kNameToken = "<name>";

std::string to_lower(std::string_view text);

/// One method: masked aSBT body, name sub-tokens, summary words and the
/// golden informativeness of the name with respect to the summary.
struct Sample {
  std::string id;
  std::vector<std::string> body_tokens;
  std::vector<int> body_types;
  std::vector<std::string> name_tokens;
  std::vector<std::string> summary_tokens;
  double informativeness = 0.0;

  bool operator==(const Sample&) const = default;
};

/// Case-insensitive token <-> id map. Ids 0..4 are the reserved tokens; the
/// rest are ordered by descending corpus frequency, ties lexicographic.
class Vocab {
 public:
  Vocab();

  /// Rebuilds from an id-ordered token list whose first entries are the reserved tokens.
  static Vocab from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;

  friend Vocab build_vocab(std::span<const std::vector<std::string>> streams, std::size_t cap);
};

/// Keeps the (cap - reserved) most frequent tokens. Throws ConfigError when
/// cap leaves no room beyond the reserved entries.
Vocab build_vocab(std::span<const std::vector<std::string>> streams, std::size_t cap);

/// |set(name) ∩ set(summary)| / |set(name)|, exact string match.
double informativeness_score(std::span<const std::string> name_tokens,
                             std::span<const std::string> summary_tokens);

/// Replaces every whole identifier whose sub-tokens equal `name_tokens`
/// (case-insensitively) with a single "<name>" token of type code 6.
ast::AsbtSequence mask_name(const ast::AsbtSequence& body, std::span<const std::string> name_tokens);

/// Maps to ids (OOV -> UNK), optionally wraps in BOS/EOS, truncates to max_len
/// and right-pads with PAD.
std::vector<int> encode_and_pad(std::span<const std::string> tokens, const Vocab& vocab, std::size_t max_len,
                                bool wrap = false);

/// Lowercased alphanumeric words of a natural-language summary.
std::vector<std::string> tokenize_summary(std::string_view text);

struct CorpusStats {
  std::size_t samples = 0;
  double mean_name_in_summary = 0.0;   // mean share of name words found in the summary
  double mean_summary_in_name = 0.0;   // mean share of summary words found in the name
  double fully_covered_fraction = 0.0; // names whose every word is in the summary
};

CorpusStats corpus_stats(std::span<const Sample> samples);

struct SplitSpec {
  double train = 0.90;
  double valid = 0.05;
  double test = 0.05;
  std::uint64_t seed = 0;
};

struct Splits {
  std::vector<Sample> train;
  std::vector<Sample> valid;
  std::vector<Sample> test;
};

/// Seeded shuffle then contiguous cut; sizes are rounded train/valid shares, test takes the rest.
Splits split_corpus(std::vector<Sample> samples, const SplitSpec& spec);

/// Length and vocabulary limits of a language profile.
struct LangProfile {
  std::string name;
  std::size_t name_max = 10;
  std::size_t body_max = 300;
  std::size_t summary_max = 13;
  std::size_t body_vocab_cap = 50000;
  std::size_t summary_vocab_cap = 44707;
};

LangProfile lang_profile(std::string_view name);

/// Builds a Sample from one input record. Accepts "ast" (neutral AST),
/// "source" (demonstration language) or pre-flattened "body_tokens"/"body_types";
/// "name" or "name_tokens"; "summary" or "summary_tokens".
Sample sample_from_record(const nlohmann::json& record, std::string fallback_id);

nlohmann::ordered_json sample_to_json(const Sample& sample);
Sample sample_from_json(const nlohmann::json& j);

void write_samples(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_samples(const std::filesystem::path& path);

/// Reads raw input JSONL; FormatError messages carry the 1-based line number.
std::vector<Sample> read_records(const std::filesystem::path& path);

void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab(const std::filesystem::path& path);

}  // namespace dmacos::corpus
