// SPDX-License-Identifier: Apache-2.0
#include "dmacos/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "dmacos/errors.hpp"

namespace dmacos::eval {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void check_aligned(std::size_t refs, std::size_t cands) {
  if (refs != cands) {
    throw ContractError("metric inputs differ in length: " + std::to_string(refs) + " references, " +
                        std::to_string(cands) + " candidates");
  }
  if (refs == 0) throw ContractError("metric over an empty corpus");
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

double bleu4(std::span<const Tokens> references, std::span<const Tokens> candidates) {
  check_aligned(references.size(), candidates.size());
  std::size_t matched[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  std::size_t ref_len = 0, cand_len = 0;
  for (std::size_t k = 0; k < references.size(); ++k) {
    ref_len += references[k].size();
    cand_len += candidates[k].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts ref = ngrams(references[k], n);
      for (const auto& [gram, count] : ngrams(candidates[k], n)) {
        total[n - 1] += count;
        if (auto it = ref.find(gram); it != ref.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (cand_len == 0 || matched[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(matched[0]) / static_cast<double>(total[0]));
  for (std::size_t n = 1; n < 4; ++n) {
    log_sum += std::log((static_cast<double>(matched[n]) + 1.0) / (static_cast<double>(total[n]) + 1.0));
  }
  const double brevity =
      cand_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return brevity * std::exp(log_sum / 4.0);
}

double rouge_l(const Tokens& reference, const Tokens& candidate) {
  if (reference.empty()) throw ContractError("rouge_l: empty reference");
  const std::size_t lcs = lcs_length(reference, candidate);
  if (lcs == 0) return 0.0;
  constexpr double beta_sq = 1.2;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  return (1.0 + beta_sq) * p * r / (r + beta_sq * p);
}

double rouge_l(std::span<const Tokens> references, std::span<const Tokens> candidates) {
  check_aligned(references.size(), candidates.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < references.size(); ++k) sum += rouge_l(references[k], candidates[k]);
  return sum / static_cast<double>(references.size());
}

double meteor_lite(const Tokens& reference, const Tokens& candidate) {
  if (reference.empty()) throw ContractError("meteor_lite: empty reference");
  // alignment[i] = reference position matched by candidate token i, leftmost unused first
  std::vector<bool> used(reference.size(), false);
  std::vector<std::ptrdiff_t> alignment(candidate.size(), -1);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (!used[j] && reference[j] == candidate[i]) {
        used[j] = true;
        alignment[i] = static_cast<std::ptrdiff_t>(j);
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;
  std::size_t chunks = 0;
  std::ptrdiff_t last = -2;
  bool in_chunk = false;
  for (std::ptrdiff_t a : alignment) {
    if (a < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || a != last + 1) ++chunks;
    in_chunk = true;
    last = a;
  }
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
  return f_mean * (1.0 - penalty);
}

double meteor_lite(std::span<const Tokens> references, std::span<const Tokens> candidates) {
  check_aligned(references.size(), candidates.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < references.size(); ++k) sum += meteor_lite(references[k], candidates[k]);
  return sum / static_cast<double>(references.size());
}

// ---------------------------------------------------------------------------
// Inference

std::vector<int> generate_name(const model::Model& model, const model::EncoderStates& body) {
  ad::NoGradGuard no_grad;
  std::vector<int> ids = model.decode_name(body).emitted();
  if (ids.empty()) ids.push_back(corpus::kUnk);
  return ids;
}

Tokens decode_tokens(std::span<const int> ids, const corpus::Vocab& summary_vocab,
                     std::span<const std::string> extended_tokens) {
  Tokens out;
  for (int id : ids) {
    const auto u = static_cast<std::size_t>(id);
    if (u < summary_vocab.size()) {
      out.push_back(summary_vocab.token(id));
    } else if (u - summary_vocab.size() < extended_tokens.size()) {
      out.push_back(extended_tokens[u - summary_vocab.size()]);
    } else {
      throw ContractError("decoded id " + std::to_string(id) + " outside the extended vocabulary");
    }
  }
  return out;
}

Summary summarize(const model::Model& model, model::Ablation ablation, const model::EncodedSample& sample,
                  const corpus::Vocab& summary_vocab) {
  if (summary_vocab.size() != model.config().summary_vocab) {
    throw ConfigError("summary vocabulary has " + std::to_string(summary_vocab.size()) +
                      " entries but the model expects " + std::to_string(model.config().summary_vocab));
  }
  ad::NoGradGuard no_grad;
  const model::EncoderStates body = model.encode_body(sample.body_ids, sample.body_types);
  const model::EncoderStates human = model.encode_name(sample.name_ids);
  const std::vector<int> generated_ids = generate_name(model, body);
  const std::vector<std::size_t> generated_copy(generated_ids.begin(), generated_ids.end());
  const model::EncoderStates generated = model.encode_name(generated_ids);

  Summary out;
  const ad::Tensor human_score = model.score_name(body, human);
  const ad::Tensor generated_score = model.score_name(body, generated);
  out.human_score = human_score.item();
  out.generated_score = generated_score.item();
  out.name = decode_tokens(generated_ids, summary_vocab, {});

  model::SummaryContext ctx{&body, sample.body_copy_ids, {&human, sample.name_copy_ids}, sample.extended_size};
  model::Fusion fusion = model::HumanNameOnly{};
  const model::NameSource gen_source{&generated, generated_copy};
  if (ablation == model::Ablation::full) {
    fusion = model::TwoPassFusion{gen_source, human_score, generated_score};
  } else if (ablation == model::Ablation::no_mnip) {
    fusion = model::FixedFusion{gen_source};
  }
  const model::DecodeResult decoded = model.decode_summary(ctx, fusion);
  out.fusion = decoded.fusion;
  out.summary = decode_tokens(decoded.emitted(), summary_vocab, sample.extended_tokens);
  return out;
}

MetricReport evaluate(const model::Model& model, model::Ablation ablation, std::span<const corpus::Sample> samples,
                      const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab,
                      const EvalOptions& options) {
  if (samples.empty()) throw ContractError("evaluate: no samples");
  if (body_vocab.size() != model.config().body_vocab || summary_vocab.size() != model.config().summary_vocab) {
    throw ConfigError("vocabulary sizes do not match the model");
  }
  MetricReport report;
  report.tag = options.mask_names ? "name_masked" : "standard";
  report.config_hash = config_hash(model.config(), ablation);
  report.rows.resize(samples.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        const model::EncodedSample enc =
            model::encode_sample(samples[i], body_vocab, summary_vocab, model.config(), options.mask_names);
        const Summary s = summarize(model, ablation, enc, summary_vocab);
        SampleRow& row = report.rows[i];
        row.id = samples[i].id;
        row.reference = samples[i].summary_tokens;
        row.candidate = s.summary;
        row.generated_name = s.name;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, samples.size());
  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<Tokens> refs, cands;
  for (auto& row : report.rows) {
    refs.push_back(row.reference);
    cands.push_back(row.candidate);
    const Tokens single_ref[] = {row.reference};
    const Tokens single_cand[] = {row.candidate};
    row.bleu4 = bleu4(single_ref, single_cand);
    row.rouge_l = row.reference.empty() ? 0.0 : rouge_l(row.reference, row.candidate);
    row.meteor_lite = row.reference.empty() ? 0.0 : meteor_lite(row.reference, row.candidate);
  }
  report.bleu4 = bleu4(refs, cands);
  double rouge = 0.0, meteor = 0.0;
  for (const auto& row : report.rows) {
    rouge += row.rouge_l;
    meteor += row.meteor_lite;
  }
  report.rouge_l = rouge / static_cast<double>(report.rows.size());
  report.meteor_lite = meteor / static_cast<double>(report.rows.size());
  return report;
}

MaskedComparison mask_eval(const model::Model& model, model::Ablation ablation, std::span<const corpus::Sample> samples,
                           const corpus::Vocab& body_vocab, const corpus::Vocab& summary_vocab, std::size_t jobs) {
  return {evaluate(model, ablation, samples, body_vocab, summary_vocab, {false, jobs}),
          evaluate(model, ablation, samples, body_vocab, summary_vocab, {true, jobs})};
}

std::string config_hash(const model::ModelConfig& config, model::Ablation ablation) {
  nlohmann::ordered_json j = model::to_json(config);
  j["ablation"] = std::string(model::to_string(ablation));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["tag"] = r.tag;
  j["bleu4"] = r.bleu4;
  j["rouge_l"] = r.rouge_l;
  j["meteor_lite"] = r.meteor_lite;
  j["bleu_smoothing"] = kBleuSmoothing;
  j["config_hash"] = r.config_hash;
  j["samples"] = r.rows.size();
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json o;
    o["id"] = row.id;
    o["reference"] = join(row.reference);
    o["candidate"] = join(row.candidate);
    o["generated_name"] = join(row.generated_name);
    o["bleu4"] = row.bleu4;
    o["rouge_l"] = row.rouge_l;
    o["meteor_lite"] = row.meteor_lite;
    rows.push_back(std::move(o));
  }
  j["rows"] = std::move(rows);
  return j;
}

nlohmann::ordered_json to_json(const MaskedComparison& c) {
  nlohmann::ordered_json j;
  j["standard"] = to_json(c.standard);
  j["name_masked"] = to_json(c.name_masked);
  nlohmann::ordered_json delta;
  delta["bleu4"] = c.name_masked.bleu4 - c.standard.bleu4;
  delta["rouge_l"] = c.name_masked.rouge_l - c.standard.rouge_l;
  delta["meteor_lite"] = c.name_masked.meteor_lite - c.standard.meteor_lite;
  j["delta"] = std::move(delta);
  return j;
}

std::string to_text(std::span<const MetricReport> reports) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %9s %8s %12s %8s\n", "experiment", "bleu4", "bleu4x100", "rouge_l",
                "meteor_lite", "samples");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %8.4f %9.2f %8.4f %12.4f %8zu\n", r.tag.c_str(), r.bleu4, 100.0 * r.bleu4,
                  r.rouge_l, r.meteor_lite, r.rows.size());
    out << line;
  }
  out << "bleu4: " << kBleuSmoothing << '\n';
  return out.str();
}

std::string to_tsv(const MetricReport& r) {
  std::ostringstream out;
  out << "id\treference\tcandidate\tgenerated_name\tbleu4\trouge_l\tmeteor_lite\n";
  char nums[96];
  for (const auto& row : r.rows) {
    std::snprintf(nums, sizeof nums, "%.17g\t%.17g\t%.17g", row.bleu4, row.rouge_l, row.meteor_lite);
    out << row.id << '\t' << join(row.reference) << '\t' << join(row.candidate) << '\t' << join(row.generated_name)
        << '\t' << nums << '\n';
  }
  return out.str();
}

}  // namespace dmacos::eval
