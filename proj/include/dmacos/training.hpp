// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dmacos/autodiff.hpp"
#include "dmacos/corpus.hpp"
#include "dmacos/model.hpp"

namespace dmacos::training {

struct TrainConfig {
  double alpha = 0.1;  // weight of the name-generation loss
  double beta = 0.1;   // weight of the informativeness loss
  double lr = 0.001;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 10;
  std::uint64_t seed = 0;
  model::Ablation ablation = model::Ablation::full;
  double max_grad_norm = 0.0;           // 0 disables clipping
  std::optional<double> target_bleu4;   // stop once validation BLEU-4 reaches it
  std::size_t eval_jobs = 1;

  bool operator==(const TrainConfig&) const = default;
};

/// Throws ConfigError for negative loss weights, a non-positive learning rate or a zero batch size.
void validate(const TrainConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

inline constexpr double kLogFloor = 1e-12;

/// -sum_t log p_t(target_t) over the decoder's teacher-forced steps; probabilities
/// below kLogFloor are clamped and counted in `clamped`.
ad::Tensor sequence_nll(const model::DecodeResult& decoded, std::size_t& clamped);

/// Mean over samples of (golden - predicted)^2.
ad::Tensor mean_squared_error(std::span<const ad::Tensor> predictions, std::span<const double> targets);

/// cos + alpha * mng + beta * mnip; undefined terms count as zero.
ad::Tensor joint_loss(const ad::Tensor& cos, const ad::Tensor& mng, const ad::Tensor& mnip, double alpha,
                      double beta);

/// Loss weights actually applied under an ablation: no_mtl drops both auxiliary
/// terms, no_two_pass and no_mnip drop the informativeness term.
std::pair<double, double> effective_weights(const TrainConfig& config);

struct BatchLoss {
  ad::Tensor cos;    // summed over samples
  ad::Tensor mng;    // summed over samples; undefined when unused
  ad::Tensor mnip;   // batch mean; undefined when unused
  ad::Tensor total;
  std::size_t summary_tokens = 0;
  std::size_t name_tokens = 0;
  std::size_t clamped = 0;
  /// Per sample (human, generated) context weights when a generated name is fused.
  std::vector<std::pair<double, double>> fusion;
};

/// Greedy first-pass names, computed without gradient.
std::vector<std::vector<int>> generate_names(const model::Model& model, std::span<const model::EncodedSample> batch);

/// Joint objective of one batch. `generated` holds each sample's first-pass name
/// and is treated as a constant.
BatchLoss batch_loss(const model::Model& model, std::span<const model::EncodedSample> batch,
                     std::span<const std::vector<int>> generated, const TrainConfig& config);

/// Pre-training objective: name generation plus beta times informativeness.
BatchLoss pretrain_loss(const model::Model& model, std::span<const model::EncodedSample> batch,
                        const TrainConfig& config);

class Adam {
 public:
  Adam(std::vector<ad::NamedTensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update of every parameter that holds a gradient; others keep their
  /// values and moments.
  void step();
  std::size_t steps() const noexcept { return t_; }

 private:
  struct Slot {
    ad::Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Rescales all present gradients so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<const ad::NamedTensor> params, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_cos = 0.0;
  double loss_mng = 0.0;
  double loss_mnip = 0.0;  // mean over batches
  double loss_total = 0.0;
  std::size_t summary_tokens = 0;
  std::size_t clamped = 0;
  std::optional<double> valid_bleu4;
};

struct FusionRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string sample_id;
  double human = 0.0;
  double generated = 0.0;
};

struct TrainResult {
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::optional<double> best_bleu4;
  std::vector<EpochRecord> history;
  std::vector<FusionRecord> fusion_log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Joint training. After each epoch validation BLEU-4 is measured; on return the
/// model holds the parameters of the best epoch (earliest on ties). With an
/// empty validation set the last epoch is kept.
TrainResult train(model::Model& model, std::span<const corpus::Sample> train_set,
                  std::span<const corpus::Sample> valid_set, const corpus::Vocab& body_vocab,
                  const corpus::Vocab& summary_vocab, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Optimizes only the name generator, the scorer and what they share.
TrainResult pretrain(model::Model& model, std::span<const corpus::Sample> train_set, const corpus::Vocab& body_vocab,
                     const corpus::Vocab& summary_vocab, const TrainConfig& config,
                     const EpochCallback& on_epoch = {});

/// Minibatches of sample indices: a seeded shuffle, grouped by body length, in seeded batch order.
std::vector<std::vector<std::size_t>> make_batches(std::span<const model::EncodedSample> samples,
                                                   std::size_t batch_size, std::uint64_t seed, std::size_t epoch);

struct Checkpoint {
  model::ModelConfig model_config;
  TrainConfig train_config;
  corpus::Vocab body_vocab;
  corpus::Vocab summary_vocab;
  model::ModelParams params;
  std::size_t epoch = 0;
  std::optional<double> validation_bleu4;
};

inline constexpr std::string_view kCheckpointMagic = "DMACOS1";
inline constexpr int kCheckpointVersion = 1;

/// Layout, all integers little-endian:
///   "DMACOS1" | u32 tensor count | per tensor, sorted by name:
///   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[prod dims]
///   | u64 JSON length | JSON {format_version, model_config, train_config,
///   body_vocab, summary_vocab, epoch, validation_bleu4}
std::string serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters for `target` built from a checkpoint trained on other vocabularies:
/// vocabulary-indexed rows are carried over by token string, fresh rows come from
/// a seeded initialization, all other tensors are copied and must match in shape.
model::ModelParams transfer_params(const Checkpoint& init, const model::ModelConfig& target,
                                   const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab,
                                   std::uint64_t seed);

}  // namespace dmacos::training
