// SPDX-License-Identifier: Apache-2.0
//
// The two-pass summarization network. Pass one decodes a method name from the
// aSBT body; pass two decodes the summary while attending over the body, the
// human-written name and the generated name, fusing the two name contexts by
// their predicted informativeness and mixing generation with copying from all
// three sources.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dmacos/autodiff.hpp"
#include "dmacos/corpus.hpp"

namespace dmacos::model {

struct ModelConfig {
  std::size_t hidden = 256;
  std::size_t body_embed = 100;
  std::size_t type_embed = 28;
  std::size_t word_embed = 100;  // shared by method names and summaries
  std::size_t body_vocab = 0;
  std::size_t summary_vocab = 0;
  std::size_t name_max = 10;
  std::size_t body_max = 300;
  std::size_t summary_max = 13;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::ordered_json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

enum class Ablation { full, no_mtl, no_two_pass, no_mnip };

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

/// Update gate, reset gate and candidate matrices, each [hidden x (hidden + input)]
/// applied to the concatenation [h_prev, x].
struct GruWeights {
  ad::Tensor update;
  ad::Tensor reset;
  ad::Tensor candidate;

  std::size_t hidden() const { return update.rows(); }
  std::size_t input_size() const { return update.cols() - update.rows(); }
};

ad::Tensor gru_step(const ad::Tensor& x, const ad::Tensor& h_prev, const GruWeights& weights);

/// Every learnable tensor. The name encoder and the name decoder both run
/// `name_gru`; there is no second copy.
struct ModelParams {
  ad::Tensor body_embedding;   // [body_vocab x body_embed]
  ad::Tensor type_embedding;   // [7 x type_embed]
  ad::Tensor word_embedding;   // [summary_vocab x word_embed]
  GruWeights body_gru;
  GruWeights name_gru;
  GruWeights summary_gru;
  ad::Tensor name_attention;      // body attention of the name decoder
  ad::Tensor bilinear_attention;  // summary decoder's multiple attention
  ad::Tensor name_readout;        // [hidden x 2*hidden]
  ad::Tensor name_output;         // [summary_vocab x hidden]
  ad::Tensor summary_readout;     // [hidden x 3*hidden]
  ad::Tensor summary_output;      // [summary_vocab x hidden]
  ad::Tensor scorer;              // [1 x 2*hidden]
  ad::Tensor gate_weight;         // [1 x 3*hidden]
  ad::Tensor gate_bias;           // [1]

  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  /// All tensors sorted by name.
  std::vector<ad::NamedTensor> named() const;
  ad::Tensor get(std::string_view name) const;
  void zero_grad();
  /// Independent copy of every value.
  ModelParams clone() const;
};

/// Parameter groups used by pre-training scope checks and ablations.
bool is_name_task_parameter(std::string_view name);
bool is_summary_only_parameter(std::string_view name);

struct EncoderStates {
  std::vector<ad::Tensor> states;
  ad::Tensor matrix;  // states stacked row-wise

  std::size_t size() const noexcept { return states.size(); }
  const ad::Tensor& last() const { return states.back(); }
};

struct AttentionResult {
  ad::Tensor context;
  ad::Tensor weights;
};

/// weights = softmax_i(keys_i . (W query)), context = sum_i weights_i * values_i.
AttentionResult attention(const ad::Tensor& query, const ad::Tensor& keys, const ad::Tensor& values,
                          const ad::Tensor& bilinear);

/// Softmax over the two informativeness scores.
ad::Tensor fusion_weights(const ad::Tensor& human_score, const ad::Tensor& generated_score);
ad::Tensor fuse_contexts(const ad::Tensor& human_context, const ad::Tensor& generated_context,
                         const ad::Tensor& weights);
ad::Tensor fuse_names(const ad::Tensor& human_context, const ad::Tensor& generated_context,
                      const ad::Tensor& human_score, const ad::Tensor& generated_score);

/// Summary vocabulary extended with the source tokens it lacks, per sample.
class CopyVocabulary {
 public:
  explicit CopyVocabulary(const corpus::Vocab& base);

  /// Id of a source token, extending the vocabulary if needed.
  std::size_t add(std::string_view token);
  /// Id of a target token: base id, extension id, or UNK when absent from both.
  std::size_t lookup(std::string_view token) const;
  std::size_t size() const noexcept { return base_->size() + extra_.size(); }
  std::size_t base_size() const noexcept { return base_->size(); }
  const std::string& token(std::size_t id) const;

 private:
  const corpus::Vocab* base_;
  std::vector<std::string> extra_;
  std::unordered_map<std::string, std::size_t> extra_index_;
};

/// A sample mapped to ids and truncated to the configured limits.
struct EncodedSample {
  std::string id;
  std::vector<int> body_ids;
  std::vector<int> body_types;
  std::vector<int> name_ids;             // summary-vocabulary ids
  std::vector<int> name_targets;         // same tokens, for the name decoder
  std::vector<std::size_t> summary_targets;  // extended ids
  std::vector<std::size_t> body_copy_ids;
  std::vector<std::size_t> name_copy_ids;
  std::size_t extended_size = 0;
  std::vector<std::string> extended_tokens;  // ids >= base size, in order
  double informativeness = 0.0;
};

/// `mask_human_name` replaces every human name token by UNK.
EncodedSample encode_sample(const corpus::Sample& sample, const corpus::Vocab& body_vocab,
                            const corpus::Vocab& summary_vocab, const ModelConfig& config,
                            bool mask_human_name = false);

struct DecodeResult {
  /// Argmax at each step; greedy decoding stops after emitting EOS.
  std::vector<int> token_ids;
  /// Final output distribution at each step.
  std::vector<ad::Tensor> step_distributions;
  /// Per step, one attention weight vector per source (body[, name, generated name]).
  std::vector<std::vector<ad::Tensor>> step_attention;
  /// Summary decoder only: generation distribution, scattered copy
  /// distributions per source, and the generation gate.
  std::vector<ad::Tensor> step_generation;
  std::vector<std::vector<ad::Tensor>> step_copy;
  std::vector<ad::Tensor> step_gate;
  /// Target id scored at each step under teacher forcing.
  std::vector<std::size_t> step_targets;
  /// Summary decoder only: weights given to the human and generated name contexts.
  std::optional<std::pair<double, double>> fusion;

  /// Tokens before the first EOS.
  std::vector<int> emitted() const;
};

/// A name state sequence together with where each position copies to.
struct NameSource {
  const EncoderStates* states = nullptr;
  std::span<const std::size_t> copy_ids;
};

/// Learned fusion of the human and generated name contexts.
struct TwoPassFusion {
  NameSource generated;
  ad::Tensor human_score;
  ad::Tensor generated_score;
};

/// Generated name used, with both contexts weighted 0.5.
struct FixedFusion {
  NameSource generated;
};

/// Single-pass variant: the human name context alone.
struct HumanNameOnly {};

using Fusion = std::variant<TwoPassFusion, FixedFusion, HumanNameOnly>;

struct SummaryContext {
  const EncoderStates* body = nullptr;
  std::span<const std::size_t> body_copy_ids;
  NameSource human;
  std::size_t extended_size = 0;
};

class Model {
 public:
  Model(ModelConfig config, ModelParams params);
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  const GruWeights& name_encoder_weights() const noexcept { return params_.name_gru; }
  const GruWeights& name_decoder_weights() const noexcept { return params_.name_gru; }

  /// GRU over [E_b(token); E_t(type)] from a zero state; PAD positions are dropped.
  EncoderStates encode_body(std::span<const int> token_ids, std::span<const int> type_ids) const;

  /// Teacher-forced over `targets` (EOS appended) when given, greedy otherwise.
  DecodeResult decode_name(const EncoderStates& body, std::optional<std::span<const int>> targets = std::nullopt) const;

  /// Shared name GRU over word embeddings from a zero state.
  EncoderStates encode_name(std::span<const int> name_ids) const;

  /// sigmoid(W_p [body last state; name last state]).
  ad::Tensor score_name(const EncoderStates& body, const EncoderStates& name) const;

  /// Second pass. Targets are extended ids without EOS.
  DecodeResult decode_summary(const SummaryContext& context, const Fusion& fusion,
                              std::optional<std::span<const std::size_t>> targets = std::nullopt) const;

 private:
  ad::Tensor word_input(std::size_t id) const;

  ModelConfig config_;
  ModelParams params_;
};

}  // namespace dmacos::model
