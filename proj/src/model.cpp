// SPDX-License-Identifier: Apache-2.0
#include "dmacos/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "dmacos/ast.hpp"
#include "dmacos/errors.hpp"
#include "dmacos/rng.hpp"

namespace dmacos::model {

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["body_embed"] = c.body_embed;
  j["type_embed"] = c.type_embed;
  j["word_embed"] = c.word_embed;
  j["body_vocab"] = c.body_vocab;
  j["summary_vocab"] = c.summary_vocab;
  j["name_max"] = c.name_max;
  j["body_max"] = c.body_max;
  j["summary_max"] = c.summary_max;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.hidden = j.at("hidden").get<std::size_t>();
    c.body_embed = j.at("body_embed").get<std::size_t>();
    c.type_embed = j.at("type_embed").get<std::size_t>();
    c.word_embed = j.at("word_embed").get<std::size_t>();
    c.body_vocab = j.at("body_vocab").get<std::size_t>();
    c.summary_vocab = j.at("summary_vocab").get<std::size_t>();
    c.name_max = j.at("name_max").get<std::size_t>();
    c.body_max = j.at("body_max").get<std::size_t>();
    c.summary_max = j.at("summary_max").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::full;
  if (name == "no_mtl") return Ablation::no_mtl;
  if (name == "no_two_pass") return Ablation::no_two_pass;
  if (name == "no_mnip") return Ablation::no_mnip;
  throw ConfigError("unknown ablation '" + std::string(name) + "' (expected full, no_mtl, no_two_pass or no_mnip)");
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::full: return "full";
    case Ablation::no_mtl: return "no_mtl";
    case Ablation::no_two_pass: return "no_two_pass";
    case Ablation::no_mnip: return "no_mnip";
  }
  return "full";
}

// ---------------------------------------------------------------------------
// GRU

ad::Tensor gru_step(const ad::Tensor& x, const ad::Tensor& h_prev, const GruWeights& w) {
  if (x.size() != w.input_size() || h_prev.size() != w.hidden()) {
    throw DimensionError("gru_step: input " + ad::shape_to_string(x.shape()) + " and state " +
                         ad::shape_to_string(h_prev.shape()) + " do not fit weights " +
                         ad::shape_to_string(w.update.shape()));
  }
  const ad::Tensor hx = ad::concat({h_prev, x});
  const ad::Tensor z = ad::sigmoid(ad::matvec(w.update, hx));
  const ad::Tensor r = ad::sigmoid(ad::matvec(w.reset, hx));
  const ad::Tensor candidate = ad::tanh(ad::matvec(w.candidate, ad::concat({ad::mul(r, h_prev), x})));
  return ad::add(ad::mul(ad::one_minus(z), h_prev), ad::mul(z, candidate));
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

ad::Tensor init_matrix(std::uint64_t seed, const std::string& name, std::size_t rows, std::size_t cols) {
  auto rng = make_stream(seed, "init/" + name);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = uniform(rng, -limit, limit);
  return ad::Tensor::parameter({rows, cols}, std::move(v));
}

ad::Tensor init_embedding(std::uint64_t seed, const std::string& name, std::size_t rows, std::size_t cols) {
  auto rng = make_stream(seed, "init/" + name);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = uniform(rng, -0.1, 0.1);
  return ad::Tensor::parameter({rows, cols}, std::move(v));
}

GruWeights init_gru(std::uint64_t seed, const std::string& prefix, std::size_t hidden, std::size_t input) {
  return GruWeights{init_matrix(seed, prefix + ".update", hidden, hidden + input),
                    init_matrix(seed, prefix + ".reset", hidden, hidden + input),
                    init_matrix(seed, prefix + ".candidate", hidden, hidden + input)};
}

ad::Tensor clone_tensor(const ad::Tensor& t) {
  return ad::Tensor::parameter(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

}  // namespace

ModelParams ModelParams::initialize(const ModelConfig& c, std::uint64_t seed) {
  if (c.hidden == 0 || c.body_embed == 0 || c.type_embed == 0 || c.word_embed == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (c.body_vocab <= corpus::kReservedCount || c.summary_vocab <= corpus::kReservedCount) {
    throw ConfigError("vocabulary sizes must exceed the reserved tokens");
  }
  const std::size_t h = c.hidden;
  ModelParams p;
  p.body_embedding = init_embedding(seed, "body_embedding", c.body_vocab, c.body_embed);
  p.type_embedding = init_embedding(seed, "type_embedding", ast::kTypeCodeCount, c.type_embed);
  p.word_embedding = init_embedding(seed, "word_embedding", c.summary_vocab, c.word_embed);
  p.body_gru = init_gru(seed, "body_gru", h, c.body_embed + c.type_embed);
  p.name_gru = init_gru(seed, "name_gru", h, c.word_embed);
  p.summary_gru = init_gru(seed, "summary_gru", h, c.word_embed);
  p.name_attention = init_matrix(seed, "name_attention", h, h);
  p.bilinear_attention = init_matrix(seed, "bilinear_attention", h, h);
  p.name_readout = init_matrix(seed, "name_readout", h, 2 * h);
  p.name_output = init_matrix(seed, "name_output", c.summary_vocab, h);
  p.summary_readout = init_matrix(seed, "summary_readout", h, 3 * h);
  p.summary_output = init_matrix(seed, "summary_output", c.summary_vocab, h);
  p.scorer = init_matrix(seed, "scorer", 1, 2 * h);
  p.gate_weight = init_matrix(seed, "gate.weight", 1, 3 * h);
  p.gate_bias = ad::Tensor::parameter({1}, {0.0});
  return p;
}

std::vector<ad::NamedTensor> ModelParams::named() const {
  std::vector<ad::NamedTensor> out = {
      {"body_embedding", body_embedding},
      {"type_embedding", type_embedding},
      {"word_embedding", word_embedding},
      {"body_gru.update", body_gru.update},
      {"body_gru.reset", body_gru.reset},
      {"body_gru.candidate", body_gru.candidate},
      {"name_gru.update", name_gru.update},
      {"name_gru.reset", name_gru.reset},
      {"name_gru.candidate", name_gru.candidate},
      {"summary_gru.update", summary_gru.update},
      {"summary_gru.reset", summary_gru.reset},
      {"summary_gru.candidate", summary_gru.candidate},
      {"name_attention", name_attention},
      {"bilinear_attention", bilinear_attention},
      {"name_readout", name_readout},
      {"name_output", name_output},
      {"summary_readout", summary_readout},
      {"summary_output", summary_output},
      {"scorer", scorer},
      {"gate.weight", gate_weight},
      {"gate.bias", gate_bias},
  };
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

ad::Tensor ModelParams::get(std::string_view name) const {
  for (auto& [n, t] : named()) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named " + std::string(name));
}

void ModelParams::zero_grad() {
  for (auto& [n, t] : named()) {
    ad::Tensor handle = t;
    handle.zero_grad();
  }
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.body_embedding = clone_tensor(body_embedding);
  p.type_embedding = clone_tensor(type_embedding);
  p.word_embedding = clone_tensor(word_embedding);
  for (auto [dst, src] : {std::pair{&p.body_gru, &body_gru}, {&p.name_gru, &name_gru}, {&p.summary_gru, &summary_gru}}) {
    *dst = GruWeights{clone_tensor(src->update), clone_tensor(src->reset), clone_tensor(src->candidate)};
  }
  p.name_attention = clone_tensor(name_attention);
  p.bilinear_attention = clone_tensor(bilinear_attention);
  p.name_readout = clone_tensor(name_readout);
  p.name_output = clone_tensor(name_output);
  p.summary_readout = clone_tensor(summary_readout);
  p.summary_output = clone_tensor(summary_output);
  p.scorer = clone_tensor(scorer);
  p.gate_weight = clone_tensor(gate_weight);
  p.gate_bias = clone_tensor(gate_bias);
  return p;
}

bool is_name_task_parameter(std::string_view name) {
  return name.starts_with("name_gru.") || name == "name_attention" || name == "name_readout" ||
         name == "name_output" || name == "scorer";
}

bool is_summary_only_parameter(std::string_view name) {
  return name.starts_with("summary_gru.") || name == "bilinear_attention" || name == "summary_readout" ||
         name == "summary_output" || name.starts_with("gate.");
}

// ---------------------------------------------------------------------------
// Attention and fusion

AttentionResult attention(const ad::Tensor& query, const ad::Tensor& keys, const ad::Tensor& values,
                          const ad::Tensor& bilinear) {
  if (!keys.defined() || !values.defined()) throw ContractError("attention: no keys");
  if (keys.rank() != 2 || values.rank() != 2 || keys.rows() != values.rows()) {
    throw DimensionError("attention: keys " + ad::shape_to_string(keys.shape()) + " and values " +
                         ad::shape_to_string(values.shape()) + " are not aligned");
  }
  const ad::Tensor projected = ad::matvec(bilinear, query);
  const ad::Tensor weights = ad::softmax(ad::matvec(keys, projected));
  return {ad::matvec_t(values, weights), weights};
}

ad::Tensor fusion_weights(const ad::Tensor& human_score, const ad::Tensor& generated_score) {
  return ad::softmax(ad::concat({human_score, generated_score}));
}

ad::Tensor fuse_contexts(const ad::Tensor& human_context, const ad::Tensor& generated_context,
                         const ad::Tensor& weights) {
  return ad::add(ad::scale_by(human_context, ad::element(weights, 0)),
                 ad::scale_by(generated_context, ad::element(weights, 1)));
}

ad::Tensor fuse_names(const ad::Tensor& human_context, const ad::Tensor& generated_context,
                      const ad::Tensor& human_score, const ad::Tensor& generated_score) {
  return fuse_contexts(human_context, generated_context, fusion_weights(human_score, generated_score));
}

// ---------------------------------------------------------------------------
// Copy vocabulary and sample encoding

CopyVocabulary::CopyVocabulary(const corpus::Vocab& base) : base_(&base) {}

std::size_t CopyVocabulary::add(std::string_view token) {
  const std::string lower = corpus::to_lower(token);
  if (auto id = base_->find(lower)) return static_cast<std::size_t>(*id);
  auto [it, inserted] = extra_index_.emplace(lower, base_->size() + extra_.size());
  if (inserted) extra_.push_back(lower);
  return it->second;
}

std::size_t CopyVocabulary::lookup(std::string_view token) const {
  const std::string lower = corpus::to_lower(token);
  if (auto id = base_->find(lower)) return static_cast<std::size_t>(*id);
  if (auto it = extra_index_.find(lower); it != extra_index_.end()) return it->second;
  return static_cast<std::size_t>(corpus::kUnk);
}

const std::string& CopyVocabulary::token(std::size_t id) const {
  if (id < base_->size()) return base_->token(static_cast<int>(id));
  if (id - base_->size() >= extra_.size()) throw ContractError("extended id out of range");
  return extra_[id - base_->size()];
}

EncodedSample encode_sample(const corpus::Sample& sample, const corpus::Vocab& body_vocab,
                            const corpus::Vocab& summary_vocab, const ModelConfig& config, bool mask_human_name) {
  if (sample.body_tokens.size() != sample.body_types.size()) {
    throw ContractError("sample " + sample.id + ": body tokens and types are not aligned");
  }
  EncodedSample e;
  e.id = sample.id;
  e.informativeness = sample.informativeness;
  CopyVocabulary copy(summary_vocab);

  const std::size_t body_len = std::min(sample.body_tokens.size(), config.body_max);
  for (std::size_t i = 0; i < body_len; ++i) {
    e.body_ids.push_back(body_vocab.id(sample.body_tokens[i]));
    e.body_types.push_back(sample.body_types[i]);
    e.body_copy_ids.push_back(copy.add(sample.body_tokens[i]));
  }

  const std::size_t name_len = std::min(sample.name_tokens.size(), config.name_max);
  for (std::size_t i = 0; i < name_len; ++i) {
    const std::string_view tok = mask_human_name ? corpus::kUnkToken : std::string_view(sample.name_tokens[i]);
    e.name_ids.push_back(summary_vocab.id(tok));
    e.name_targets.push_back(summary_vocab.id(sample.name_tokens[i]));
    e.name_copy_ids.push_back(copy.add(tok));
  }

  const std::size_t summary_len = std::min(sample.summary_tokens.size(), config.summary_max - 1);
  for (std::size_t i = 0; i < summary_len; ++i) e.summary_targets.push_back(copy.lookup(sample.summary_tokens[i]));

  e.extended_size = copy.size();
  for (std::size_t id = copy.base_size(); id < copy.size(); ++id) e.extended_tokens.push_back(copy.token(id));
  return e;
}

std::vector<int> DecodeResult::emitted() const {
  std::vector<int> out;
  for (int id : token_ids) {
    if (id == corpus::kEos) break;
    out.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::size_t argmax(const ad::Tensor& t) {
  const auto v = t.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
std::vector<T> with_eos(std::span<const T> targets, std::size_t max_steps) {
  std::vector<T> out(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(
                                                            std::min(targets.size(), max_steps - 1)));
  out.push_back(static_cast<T>(corpus::kEos));
  return out;
}

EncoderStates finish(std::vector<ad::Tensor> states) {
  EncoderStates out;
  out.matrix = ad::stack(states);
  out.states = std::move(states);
  return out;
}

}  // namespace

Model::Model(ModelConfig config, ModelParams params) : config_(config), params_(std::move(params)) {
  if (params_.body_embedding.rows() != config_.body_vocab || params_.word_embedding.rows() != config_.summary_vocab ||
      params_.body_gru.hidden() != config_.hidden) {
    throw ConfigError("parameters do not match the model configuration");
  }
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : Model(config, ModelParams::initialize(config, seed)) {}

ad::Tensor Model::word_input(std::size_t id) const {
  if (id >= config_.summary_vocab) id = static_cast<std::size_t>(corpus::kUnk);
  return ad::row(params_.word_embedding, id);
}

EncoderStates Model::encode_body(std::span<const int> token_ids, std::span<const int> type_ids) const {
  if (token_ids.size() != type_ids.size()) {
    throw DimensionError("encode_body: " + std::to_string(token_ids.size()) + " tokens but " +
                         std::to_string(type_ids.size()) + " types");
  }
  std::vector<ad::Tensor> states;
  ad::Tensor h = ad::Tensor::zeros({config_.hidden});
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (token_ids[i] == corpus::kPad) continue;
    if (token_ids[i] < 0 || static_cast<std::size_t>(token_ids[i]) >= config_.body_vocab) {
      throw ConfigError("body token id " + std::to_string(token_ids[i]) + " outside the body vocabulary");
    }
    if (type_ids[i] < 0 || type_ids[i] >= ast::kTypeCodeCount) {
      throw ContractError("invalid aSBT type code " + std::to_string(type_ids[i]));
    }
    const ad::Tensor x = ad::concat({ad::row(params_.body_embedding, static_cast<std::size_t>(token_ids[i])),
                                     ad::row(params_.type_embedding, static_cast<std::size_t>(type_ids[i]))});
    h = gru_step(x, h, params_.body_gru);
    states.push_back(h);
  }
  if (states.empty()) throw ContractError("encode_body: input has no non-padding tokens");
  return finish(std::move(states));
}

DecodeResult Model::decode_name(const EncoderStates& body, std::optional<std::span<const int>> targets) const {
  if (body.size() == 0) throw ContractError("decode_name: empty body states");
  DecodeResult out;
  std::vector<int> gold;
  if (targets) gold = with_eos<int>(*targets, config_.name_max);
  const std::size_t steps = targets ? gold.size() : config_.name_max;

  ad::Tensor s = body.last();
  std::size_t prev = static_cast<std::size_t>(corpus::kBos);
  for (std::size_t t = 0; t < steps; ++t) {
    s = gru_step(word_input(prev), s, params_.name_gru);
    const AttentionResult att = attention(s, body.matrix, body.matrix, params_.name_attention);
    const ad::Tensor hidden = ad::tanh(ad::matvec(params_.name_readout, ad::concat({s, att.context})));
    const ad::Tensor dist = ad::softmax(ad::matvec(params_.name_output, hidden));
    const std::size_t best = argmax(dist);
    out.token_ids.push_back(static_cast<int>(best));
    out.step_distributions.push_back(dist);
    out.step_attention.push_back({att.weights});
    if (targets) {
      out.step_targets.push_back(static_cast<std::size_t>(gold[t]));
      prev = static_cast<std::size_t>(gold[t]);
    } else {
      if (best == static_cast<std::size_t>(corpus::kEos)) break;
      prev = best;
    }
  }
  return out;
}

EncoderStates Model::encode_name(std::span<const int> name_ids) const {
  const std::size_t n = std::min(name_ids.size(), config_.name_max);
  if (n == 0) throw ContractError("encode_name: empty method name");
  std::vector<ad::Tensor> states;
  ad::Tensor h = ad::Tensor::zeros({config_.hidden});
  for (std::size_t i = 0; i < n; ++i) {
    if (name_ids[i] < 0) throw ContractError("encode_name: negative token id");
    h = gru_step(word_input(static_cast<std::size_t>(name_ids[i])), h, params_.name_gru);
    states.push_back(h);
  }
  return finish(std::move(states));
}

ad::Tensor Model::score_name(const EncoderStates& body, const EncoderStates& name) const {
  if (body.size() == 0 || name.size() == 0) throw ContractError("score_name: empty state sequence");
  return ad::sigmoid(ad::matvec(params_.scorer, ad::concat({body.last(), name.last()})));
}

DecodeResult Model::decode_summary(const SummaryContext& ctx, const Fusion& fusion,
                                   std::optional<std::span<const std::size_t>> targets) const {
  if (!ctx.body || ctx.body->size() == 0 || !ctx.human.states || ctx.human.states->size() == 0) {
    throw ContractError("decode_summary: body and human name states are required");
  }
  if (ctx.body_copy_ids.size() != ctx.body->size() || ctx.human.copy_ids.size() != ctx.human.states->size()) {
    throw DimensionError("decode_summary: copy ids are not aligned with source states");
  }
  const std::size_t vocab = config_.summary_vocab;
  if (ctx.extended_size < vocab) throw ContractError("decode_summary: extended vocabulary smaller than base");

  DecodeResult out;
  const NameSource* generated = nullptr;
  ad::Tensor weights;
  if (const auto* f = std::get_if<TwoPassFusion>(&fusion)) {
    generated = &f->generated;
    weights = fusion_weights(f->human_score, f->generated_score);
  } else if (const auto* f = std::get_if<FixedFusion>(&fusion)) {
    generated = &f->generated;
    weights = ad::Tensor::vector({0.5, 0.5});
  }
  if (generated) {
    if (!generated->states || generated->states->size() == 0) {
      throw ContractError("decode_summary: generated name states are required for two-pass decoding");
    }
    if (generated->copy_ids.size() != generated->states->size()) {
      throw DimensionError("decode_summary: generated-name copy ids are not aligned");
    }
    out.fusion = std::pair{weights.at(0), weights.at(1)};
  }
  const double copy_share = 1.0 / (generated ? 3.0 : 2.0);

  std::vector<std::size_t> identity(vocab);
  std::iota(identity.begin(), identity.end(), std::size_t{0});

  std::vector<std::size_t> gold;
  if (targets) gold = with_eos<std::size_t>(*targets, config_.summary_max);
  const std::size_t steps = targets ? gold.size() : config_.summary_max;

  ad::Tensor s = ctx.body->last();
  std::size_t prev = static_cast<std::size_t>(corpus::kBos);
  for (std::size_t t = 0; t < steps; ++t) {
    s = gru_step(word_input(prev), s, params_.summary_gru);
    const EncoderStates& body = *ctx.body;
    const AttentionResult att_body = attention(s, body.matrix, body.matrix, params_.bilinear_attention);
    const AttentionResult att_name =
        attention(s, ctx.human.states->matrix, ctx.human.states->matrix, params_.bilinear_attention);

    std::vector<ad::Tensor> step_att = {att_body.weights, att_name.weights};
    std::vector<ad::Tensor> copies = {ad::scatter_add(att_body.weights, ctx.body_copy_ids, ctx.extended_size),
                                      ad::scatter_add(att_name.weights, ctx.human.copy_ids, ctx.extended_size)};
    ad::Tensor name_context = att_name.context;
    if (generated) {
      const AttentionResult att_gen =
          attention(s, generated->states->matrix, generated->states->matrix, params_.bilinear_attention);
      name_context = fuse_contexts(att_name.context, att_gen.context, weights);
      step_att.push_back(att_gen.weights);
      copies.push_back(ad::scatter_add(att_gen.weights, generated->copy_ids, ctx.extended_size));
    }

    const ad::Tensor features = ad::concat({s, att_body.context, name_context});
    const ad::Tensor generation =
        ad::softmax(ad::matvec(params_.summary_output, ad::tanh(ad::matvec(params_.summary_readout, features))));
    const ad::Tensor gate = ad::sigmoid(ad::add(ad::matvec(params_.gate_weight, features), params_.gate_bias));

    ad::Tensor copy_total = copies[0];
    for (std::size_t k = 1; k < copies.size(); ++k) copy_total = ad::add(copy_total, copies[k]);
    const ad::Tensor mixture =
        ad::add(ad::scale_by(ad::scatter_add(generation, identity, ctx.extended_size), gate),
                ad::scale_by(copy_total, ad::scale(ad::one_minus(gate), copy_share)));

    const std::size_t best = argmax(mixture);
    out.token_ids.push_back(static_cast<int>(best));
    out.step_distributions.push_back(mixture);
    out.step_attention.push_back(std::move(step_att));
    out.step_generation.push_back(generation);
    out.step_copy.push_back(std::move(copies));
    out.step_gate.push_back(gate);
    if (targets) {
      out.step_targets.push_back(gold[t]);
      prev = gold[t];
    } else {
      if (best == static_cast<std::size_t>(corpus::kEos)) break;
      prev = best;
    }
  }
  return out;
}

}  // namespace dmacos::model
