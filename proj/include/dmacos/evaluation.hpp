// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dmacos/corpus.hpp"
#include "dmacos/model.hpp"

namespace dmacos::eval {

using Tokens = std::vector<std::string>;

/// Corpus BLEU-4: clipped n-gram counts are summed over the corpus before the
/// precisions are formed. Orders 2-4 are add-1 smoothed; a corpus with no
/// candidate tokens or no unigram match scores 0.
double bleu4(std::span<const Tokens> references, std::span<const Tokens> candidates);

/// LCS F-measure with beta^2 = 1.2. Throws ContractError on an empty reference.
double rouge_l(const Tokens& reference, const Tokens& candidate);
/// Mean of the per-pair scores.
double rouge_l(std::span<const Tokens> references, std::span<const Tokens> candidates);

/// Exact-match unigram METEOR: F = 10PR / (R + 9P), penalty 0.5 (chunks / matches)^3.
double meteor_lite(const Tokens& reference, const Tokens& candidate);
double meteor_lite(std::span<const Tokens> references, std::span<const Tokens> candidates);

inline constexpr const char* kBleuSmoothing = "corpus-level, add-1 smoothing for n>=2, brevity penalty";

/// Output of the two-pass pipeline for one sample.
struct Summary {
  Tokens name;             // first-pass generated name
  Tokens summary;          // second-pass output, EOS excluded
  double human_score = 0.0;
  double generated_score = 0.0;
  std::optional<std::pair<double, double>> fusion;  // human, generated
};

/// Greedy two-pass inference wired the way `ablation` was trained.
Summary summarize(const model::Model& model, model::Ablation ablation, const model::EncodedSample& sample,
                  const corpus::Vocab& summary_vocab);

/// Greedy first-pass name ids; a name that is empty before EOS becomes [UNK].
std::vector<int> generate_name(const model::Model& model, const model::EncoderStates& body);

/// Maps extended ids back to token strings.
Tokens decode_tokens(std::span<const int> ids, const corpus::Vocab& summary_vocab,
                     std::span<const std::string> extended_tokens);

struct SampleRow {
  std::string id;
  Tokens reference;
  Tokens candidate;
  Tokens generated_name;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor_lite = 0.0;
};

struct MetricReport {
  std::string tag = "standard";  // standard | name_masked
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor_lite = 0.0;
  std::string config_hash;
  std::vector<SampleRow> rows;
};

struct EvalOptions {
  bool mask_names = false;
  std::size_t jobs = 1;
};

/// Summarizes every sample and scores the results against their references.
MetricReport evaluate(const model::Model& model, model::Ablation ablation, std::span<const corpus::Sample> samples,
                      const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab,
                      const EvalOptions& options = {});

struct MaskedComparison {
  MetricReport standard;
  MetricReport name_masked;
};

MaskedComparison mask_eval(const model::Model& model, model::Ablation ablation, std::span<const corpus::Sample> samples,
                           const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab, std::size_t jobs = 1);

/// Hex FNV-1a of the model configuration and ablation.
std::string config_hash(const model::ModelConfig& config, model::Ablation ablation);

nlohmann::ordered_json to_json(const MetricReport& report);
nlohmann::ordered_json to_json(const MaskedComparison& comparison);
/// Aligned plain-text table; BLEU is shown both in [0,1] and x100.
std::string to_text(std::span<const MetricReport> reports);
/// id, reference, candidate, generated name, per-sample scores.
std::string to_tsv(const MetricReport& report);

}  // namespace dmacos::eval
