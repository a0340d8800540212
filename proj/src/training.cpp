// SPDX-License-Identifier: Apache-2.0
#include "dmacos/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "dmacos/errors.hpp"
#include "dmacos/evaluation.hpp"
#include "dmacos/rng.hpp"

namespace dmacos::training {

using model::Ablation;

void validate(const TrainConfig& c) {
  if (!(c.alpha >= 0.0) || !(c.beta >= 0.0)) throw ConfigError("alpha and beta must be non-negative");
  if (!(c.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (c.batch_size == 0) throw ConfigError("batch size must be positive");
  if (c.max_grad_norm < 0.0) throw ConfigError("max gradient norm must be non-negative");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["ablation"] = std::string(model::to_string(c.ablation));
  j["max_grad_norm"] = c.max_grad_norm;
  j["target_bleu4"] = c.target_bleu4 ? nlohmann::ordered_json(*c.target_bleu4) : nlohmann::ordered_json(nullptr);
  j["eval_jobs"] = c.eval_jobs;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ablation")) c.ablation = model::parse_ablation(j.at("ablation").get<std::string>());
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    if (j.contains("target_bleu4") && !j.at("target_bleu4").is_null()) c.target_bleu4 = j.at("target_bleu4").get<double>();
    c.eval_jobs = j.value("eval_jobs", c.eval_jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Losses

ad::Tensor sequence_nll(const model::DecodeResult& decoded, std::size_t& clamped) {
  if (decoded.step_targets.size() != decoded.step_distributions.size() || decoded.step_targets.empty()) {
    throw ContractError("sequence_nll needs a teacher-forced decode");
  }
  ad::Tensor total;
  for (std::size_t t = 0; t < decoded.step_targets.size(); ++t) {
    const ad::Tensor p = ad::element(decoded.step_distributions[t], decoded.step_targets[t]);
    if (p.item() < kLogFloor) ++clamped;
    const ad::Tensor term = ad::log(p, kLogFloor);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, -1.0);
}

ad::Tensor mean_squared_error(std::span<const ad::Tensor> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size() || predictions.empty()) {
    throw ContractError("mean_squared_error: predictions and targets must be nonempty and aligned");
  }
  ad::Tensor total;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const ad::Tensor diff = ad::sub(predictions[i], ad::Tensor::scalar(targets[i]));
    const ad::Tensor sq = ad::mul(diff, diff);
    total = total.defined() ? ad::add(total, sq) : sq;
  }
  return ad::scale(total, 1.0 / static_cast<double>(predictions.size()));
}

ad::Tensor joint_loss(const ad::Tensor& cos, const ad::Tensor& mng, const ad::Tensor& mnip, double alpha,
                      double beta) {
  ad::Tensor total = cos;
  if (mng.defined() && alpha != 0.0) total = ad::add(total, ad::scale(mng, alpha));
  if (mnip.defined() && beta != 0.0) total = ad::add(total, ad::scale(mnip, beta));
  return total;
}

std::pair<double, double> effective_weights(const TrainConfig& c) {
  switch (c.ablation) {
    case Ablation::full: return {c.alpha, c.beta};
    case Ablation::no_mtl: return {0.0, 0.0};
    case Ablation::no_two_pass:
    case Ablation::no_mnip: return {c.alpha, 0.0};
  }
  return {c.alpha, c.beta};
}

namespace {

bool uses_generated_name(Ablation a) { return a == Ablation::full || a == Ablation::no_mnip; }

ad::Tensor accumulate(const ad::Tensor& total, const ad::Tensor& term) {
  return total.defined() ? ad::add(total, term) : term;
}

}  // namespace

std::vector<std::vector<int>> generate_names(const model::Model& model, std::span<const model::EncodedSample> batch) {
  ad::NoGradGuard no_grad;
  std::vector<std::vector<int>> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(eval::generate_name(model, model.encode_body(s.body_ids, s.body_types)));
  return out;
}

BatchLoss batch_loss(const model::Model& model, std::span<const model::EncodedSample> batch,
                     std::span<const std::vector<int>> generated, const TrainConfig& config) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  const Ablation ablation = config.ablation;
  const bool two_pass = uses_generated_name(ablation);
  if (two_pass && generated.size() != batch.size()) {
    throw ContractError("batch_loss: one generated name per sample is required");
  }
  const auto [alpha, beta] = effective_weights(config);

  BatchLoss out;
  std::vector<ad::Tensor> predicted_scores;
  std::vector<double> golden_scores;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const model::EncodedSample& s = batch[i];
    const model::EncoderStates body = model.encode_body(s.body_ids, s.body_types);

    if (ablation != Ablation::no_mtl) {
      const model::DecodeResult name = model.decode_name(body, std::span<const int>(s.name_targets));
      out.mng = accumulate(out.mng, sequence_nll(name, out.clamped));
      out.name_tokens += name.step_targets.size();
    }

    model::EncoderStates human;
    if (ablation == Ablation::no_mtl) {
      ad::NoGradGuard frozen;
      human = model.encode_name(s.name_ids);
    } else {
      human = model.encode_name(s.name_ids);
    }

    model::SummaryContext ctx{&body, s.body_copy_ids, {&human, s.name_copy_ids}, s.extended_size};
    model::Fusion fusion = model::HumanNameOnly{};
    model::EncoderStates gen_states;
    std::vector<std::size_t> gen_copy;
    if (two_pass) {
      gen_states = model.encode_name(generated[i]);
      gen_copy.assign(generated[i].begin(), generated[i].end());
    }
    const model::NameSource gen_source{&gen_states, gen_copy};
    if (ablation == Ablation::full) {
      const ad::Tensor human_score = model.score_name(body, human);
      predicted_scores.push_back(human_score);
      golden_scores.push_back(s.informativeness);
      fusion = model::TwoPassFusion{gen_source, human_score, model.score_name(body, gen_states)};
    } else if (ablation == Ablation::no_mnip) {
      fusion = model::FixedFusion{gen_source};
    }

    const model::DecodeResult summary =
        model.decode_summary(ctx, fusion, std::span<const std::size_t>(s.summary_targets));
    out.cos = accumulate(out.cos, sequence_nll(summary, out.clamped));
    out.summary_tokens += summary.step_targets.size();
    if (summary.fusion) out.fusion.push_back(*summary.fusion);
  }
  if (!predicted_scores.empty()) out.mnip = mean_squared_error(predicted_scores, golden_scores);
  out.total = joint_loss(out.cos, out.mng, out.mnip, alpha, beta);
  return out;
}

BatchLoss pretrain_loss(const model::Model& model, std::span<const model::EncodedSample> batch,
                        const TrainConfig& config) {
  if (batch.empty()) throw ContractError("pretrain_loss: empty batch");
  BatchLoss out;
  std::vector<ad::Tensor> predicted_scores;
  std::vector<double> golden_scores;
  for (const auto& s : batch) {
    const model::EncoderStates body = model.encode_body(s.body_ids, s.body_types);
    const model::DecodeResult name = model.decode_name(body, std::span<const int>(s.name_targets));
    out.mng = accumulate(out.mng, sequence_nll(name, out.clamped));
    out.name_tokens += name.step_targets.size();
    predicted_scores.push_back(model.score_name(body, model.encode_name(s.name_ids)));
    golden_scores.push_back(s.informativeness);
  }
  out.mnip = mean_squared_error(predicted_scores, golden_scores);
  out.total = out.mng;
  if (config.beta != 0.0) out.total = ad::add(out.total, ad::scale(out.mnip, config.beta));
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

Adam::Adam(std::vector<ad::NamedTensor> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, t] : params) {
    if (!t.requires_grad()) throw ContractError("Adam: " + name + " is not a parameter");
    slots_.push_back({t, std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)});
  }
}

void Adam::step() {
  ++t_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    const auto g = slot.param.grad();
    auto w = slot.param.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = slot.m[i] / bias1;
      const double v_hat = slot.v[i] / bias2;
      w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

double clip_grad_norm(std::span<const ad::NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      ad::Tensor handle = t;
      for (double& g : handle.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const model::EncodedSample> samples,
                                                   std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, "batches/" + std::to_string(epoch));
  shuffle(std::span<std::size_t>(order), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].body_ids.size() < samples[b].body_ids.size();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  shuffle(std::span<std::vector<std::size_t>>(batches), rng);
  return batches;
}

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const model::ModelParams& params) {
  Snapshot out;
  for (const auto& [name, t] : params.named()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void restore(model::ModelParams& params, const Snapshot& snap) {
  auto named = params.named();
  for (std::size_t i = 0; i < named.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), named[i].second.mutable_values().begin());
}

std::vector<model::EncodedSample> encode_all(std::span<const corpus::Sample> samples, const corpus::Vocab& body_vocab,
                                             const corpus::Vocab& summary_vocab, const model::ModelConfig& config) {
  std::vector<model::EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model::encode_sample(s, body_vocab, summary_vocab, config));
  return out;
}

void check_vocabs(const model::Model& model, const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab) {
  if (body_vocab.size() != model.config().body_vocab || summary_vocab.size() != model.config().summary_vocab) {
    throw ConfigError("vocabulary sizes do not match the model");
  }
}

enum class Objective { joint, pretrain };

TrainResult run(model::Model& model, std::span<const corpus::Sample> train_set, std::span<const corpus::Sample> valid_set,
                const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab, const TrainConfig& config,
                const EpochCallback& on_epoch, Objective objective) {
  validate(config);
  check_vocabs(model, body_vocab, summary_vocab);
  if (config.max_epochs > 0 && train_set.empty()) throw ContractError("training set is empty");
  const std::vector<model::EncodedSample> encoded = encode_all(train_set, body_vocab, summary_vocab, model.config());
  const bool two_pass = objective == Objective::joint && uses_generated_name(config.ablation);

  TrainResult result;
  auto params = model.params().named();
  Adam optimizer(params, config.lr);
  model.params().zero_grad();
  Snapshot best;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    std::size_t batches_seen = 0;
    for (const auto& indices : make_batches(encoded, config.batch_size, config.seed, epoch)) {
      std::vector<model::EncodedSample> batch;
      batch.reserve(indices.size());
      for (std::size_t i : indices) batch.push_back(encoded[i]);
      const std::vector<std::vector<int>> generated =
          two_pass ? generate_names(model, batch) : std::vector<std::vector<int>>{};

      ad::Tape tape;
      const BatchLoss loss = objective == Objective::joint ? batch_loss(model, batch, generated, config)
                                                           : pretrain_loss(model, batch, config);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss " + std::to_string(total) + " at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step + 1) + " (first sample " + batch.front().id + ")");
      }
      tape.backward(loss.total);
      if (config.max_grad_norm > 0.0) clip_grad_norm(params, config.max_grad_norm);
      optimizer.step();
      model.params().zero_grad();
      ++step;

      if (loss.cos.defined()) record.loss_cos += loss.cos.item();
      if (loss.mng.defined()) record.loss_mng += loss.mng.item();
      if (loss.mnip.defined()) record.loss_mnip += loss.mnip.item();
      record.loss_total += total;
      record.summary_tokens += loss.summary_tokens;
      record.clamped += loss.clamped;
      for (std::size_t k = 0; k < loss.fusion.size(); ++k) {
        result.fusion_log.push_back({epoch, step, batch[k].id, loss.fusion[k].first, loss.fusion[k].second});
      }
      ++batches_seen;
    }
    if (batches_seen > 0) record.loss_mnip /= static_cast<double>(batches_seen);

    if (objective == Objective::joint && !valid_set.empty()) {
      record.valid_bleu4 =
          eval::evaluate(model, config.ablation, valid_set, body_vocab, summary_vocab, {false, config.eval_jobs}).bleu4;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    const bool improved = !record.valid_bleu4 || !result.best_bleu4 || *record.valid_bleu4 > *result.best_bleu4;
    if (improved) {
      result.best_epoch = epoch;
      result.best_bleu4 = record.valid_bleu4;
      best = snapshot(model.params());
    }
    if (config.target_bleu4 && record.valid_bleu4 && *record.valid_bleu4 >= *config.target_bleu4) break;
  }
  if (!best.empty()) restore(model.params(), best);
  return result;
}

}  // namespace

TrainResult train(model::Model& model, std::span<const corpus::Sample> train_set,
                  std::span<const corpus::Sample> valid_set, const corpus::Vocab& body_vocab,
                  const corpus::Vocab& summary_vocab, const TrainConfig& config, const EpochCallback& on_epoch) {
  return run(model, train_set, valid_set, body_vocab, summary_vocab, config, on_epoch, Objective::joint);
}

TrainResult pretrain(model::Model& model, std::span<const corpus::Sample> train_set, const corpus::Vocab& body_vocab,
                     const corpus::Vocab& summary_vocab, const TrainConfig& config, const EpochCallback& on_epoch) {
  return run(model, train_set, {}, body_vocab, summary_vocab, config, on_epoch, Objective::pretrain);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t uint(int width) {
    const std::string_view raw = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = width - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(raw[static_cast<std::size_t>(i)]);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void assign_tensor(model::ModelParams& p, const std::string& name, ad::Tensor t) {
  model::GruWeights* gru = nullptr;
  std::string_view gate;
  if (name.starts_with("body_gru.")) gru = &p.body_gru, gate = std::string_view(name).substr(9);
  if (name.starts_with("name_gru.")) gru = &p.name_gru, gate = std::string_view(name).substr(9);
  if (name.starts_with("summary_gru.")) gru = &p.summary_gru, gate = std::string_view(name).substr(12);
  if (gru) {
    if (gate == "update") gru->update = std::move(t);
    else if (gate == "reset") gru->reset = std::move(t);
    else if (gate == "candidate") gru->candidate = std::move(t);
    else throw FormatError("unknown checkpoint tensor " + name);
    return;
  }
  if (name == "body_embedding") p.body_embedding = std::move(t);
  else if (name == "type_embedding") p.type_embedding = std::move(t);
  else if (name == "word_embedding") p.word_embedding = std::move(t);
  else if (name == "name_attention") p.name_attention = std::move(t);
  else if (name == "bilinear_attention") p.bilinear_attention = std::move(t);
  else if (name == "name_readout") p.name_readout = std::move(t);
  else if (name == "name_output") p.name_output = std::move(t);
  else if (name == "summary_readout") p.summary_readout = std::move(t);
  else if (name == "summary_output") p.summary_output = std::move(t);
  else if (name == "scorer") p.scorer = std::move(t);
  else if (name == "gate.weight") p.gate_weight = std::move(t);
  else if (name == "gate.bias") p.gate_bias = std::move(t);
  else throw FormatError("unknown checkpoint tensor " + name);
}

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic);
  const auto named = ckpt.params.named();
  put_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  nlohmann::ordered_json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["model_config"] = model::to_json(ckpt.model_config);
  meta["train_config"] = to_json(ckpt.train_config);
  meta["body_vocab"] = ckpt.body_vocab.tokens();
  meta["summary_vocab"] = ckpt.summary_vocab.tokens();
  meta["epoch"] = ckpt.epoch;
  meta["validation_bleu4"] =
      ckpt.validation_bleu4 ? nlohmann::ordered_json(*ckpt.validation_bleu4) : nlohmann::ordered_json(nullptr);
  const std::string json = meta.dump();
  put_u64(out, json.size());
  out += json;
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  const std::uint64_t count = in.uint(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name(in.take(in.uint(4)));
    const std::uint64_t rank = in.uint(4);
    if (rank == 0 || rank > 2) throw FormatError("tensor " + name + " has unsupported rank " + std::to_string(rank));
    ad::Shape shape;
    std::uint64_t size = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape.push_back(in.uint(8));
      size *= shape.back();
    }
    if (size > bytes.size() / 8) throw FormatError("tensor " + name + " larger than the file");
    std::vector<double> values(size);
    for (double& v : values) v = std::bit_cast<double>(in.uint(8));
    assign_tensor(ckpt.params, name, ad::Tensor::parameter(std::move(shape), std::move(values)));
  }
  const std::string_view json = in.take(in.uint(8));
  if (!in.done()) throw FormatError("trailing bytes after checkpoint metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(json);
    if (meta.at("format_version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + meta.at("format_version").dump());
    }
    ckpt.model_config = model::model_config_from_json(meta.at("model_config"));
    ckpt.train_config = train_config_from_json(meta.at("train_config"));
    ckpt.body_vocab = corpus::Vocab::from_tokens(meta.at("body_vocab").get<std::vector<std::string>>());
    ckpt.summary_vocab = corpus::Vocab::from_tokens(meta.at("summary_vocab").get<std::vector<std::string>>());
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
    if (!meta.at("validation_bleu4").is_null()) ckpt.validation_bleu4 = meta.at("validation_bleu4").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  for (const auto& [name, t] : ckpt.params.named()) {
    if (!t.defined()) throw FormatError("checkpoint lacks tensor " + name);
  }
  model::Model(ckpt.model_config, ckpt.params);  // validates shapes against the config
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

model::ModelParams transfer_params(const Checkpoint& init, const model::ModelConfig& target,
                                   const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab,
                                   std::uint64_t seed) {
  model::ModelParams out = model::ModelParams::initialize(target, seed);
  for (auto& [name, dst] : out.named()) {
    const ad::Tensor src = init.params.get(name);
    const corpus::Vocab* from = nullptr;
    const corpus::Vocab* to = nullptr;
    if (name == "body_embedding") {
      from = &init.body_vocab, to = &body_vocab;
    } else if (name == "word_embedding" || name == "name_output" || name == "summary_output") {
      from = &init.summary_vocab, to = &summary_vocab;
    }
    ad::Tensor handle = dst;
    auto values = handle.mutable_values();
    if (from) {
      if (src.cols() != dst.cols()) {
        throw ConfigError("cannot transfer " + name + ": width " + std::to_string(src.cols()) + " vs " +
                          std::to_string(dst.cols()));
      }
      const std::size_t width = dst.cols();
      for (std::size_t id = 0; id < to->size(); ++id) {
        if (auto old = from->find(to->token(static_cast<int>(id)))) {
          const auto row = src.values().subspan(static_cast<std::size_t>(*old) * width, width);
          std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(id * width));
        }
      }
    } else {
      if (src.shape() != dst.shape()) {
        throw ConfigError("cannot transfer " + name + ": shape " + ad::shape_to_string(src.shape()) + " vs " +
                          ad::shape_to_string(dst.shape()));
      }
      std::copy(src.values().begin(), src.values().end(), values.begin());
    }
  }
  return out;
}

}  // namespace dmacos::training
