// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dmacos/ast.hpp"
#include "dmacos/corpus.hpp"
#include "dmacos/evaluation.hpp"
#include "dmacos/model.hpp"
#include "dmacos/toy.hpp"
#include "dmacos/training.hpp"
#include "../tests/oracles.hpp"
#include "../tests/support.hpp"

using namespace dmacos;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

bool same_values(const ad::Tensor& a, const ad::Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

std::vector<model::EncodedSample> random_encoded(std::mt19937_64& rng, std::size_t count, std::size_t vocab) {
  std::uniform_int_distribution<int> word(static_cast<int>(corpus::kReservedCount), static_cast<int>(vocab) - 1);
  std::uniform_int_distribution<int> type(0, ast::kTypeCodeCount - 1);
  std::vector<model::EncodedSample> out;
  for (std::size_t k = 0; k < count; ++k) {
    model::EncodedSample e;
    e.id = "s" + std::to_string(k);
    e.extended_size = vocab + 3;
    std::uniform_int_distribution<std::size_t> copy(corpus::kReservedCount, e.extended_size - 1);
    for (int i = 0; i < 7; ++i) {
      e.body_ids.push_back(word(rng));
      e.body_types.push_back(type(rng));
      e.body_copy_ids.push_back(copy(rng));
    }
    for (int i = 0; i < 3; ++i) {
      e.name_ids.push_back(word(rng));
      e.name_copy_ids.push_back(static_cast<std::size_t>(e.name_ids.back()));
    }
    e.name_targets = e.name_ids;
    for (int i = 0; i < 4; ++i) e.summary_targets.push_back(copy(rng));
    e.extended_tokens = {"x1", "x2", "x3"};
    e.informativeness = std::uniform_real_distribution<double>(0, 1)(rng);
    out.push_back(std::move(e));
  }
  return out;
}

model::ModelConfig random_config(std::size_t hidden, std::size_t vocab) {
  model::ModelConfig c;
  c.hidden = hidden;
  c.body_embed = 8;
  c.type_embed = 4;
  c.word_embed = 8;
  c.body_vocab = vocab;
  c.summary_vocab = vocab;
  c.name_max = 5;
  c.body_max = 20;
  c.summary_max = 6;
  return c;
}

Outcome gradient_integrity() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  const model::Model net(random_config(16, 50), 101);
  const auto batch = random_encoded(rng, 2, 50);
  const auto generated = training::generate_names(net, batch);
  training::TrainConfig cfg;
  const auto loss = [&] { return training::batch_loss(net, batch, generated, cfg).total; };
  double magnitude = 0.0;
  {
    ad::NoGradGuard no_grad;
    magnitude = std::abs(loss().item());
  }
  ad::GradCheckOptions opts;
  opts.entries_per_tensor = 32;
  opts.seed = 7;
  opts.eps = 1e-4;
  // A central difference resolves gradients only to |f|*u/eps; a relative
  // tolerance of 1e-4 is therefore measurable only above that bound / 1e-4.
  opts.denominator_floor =
      std::max(opts.denominator_floor, magnitude * std::numeric_limits<double>::epsilon() / (opts.eps * 1e-4));
  const auto report = ad::grad_check(loss, net.params().named(), opts);
  ad::GradCheckOptions raw = opts;
  raw.denominator_floor = 1e-300;
  const double unfloored = ad::grad_check(loss, net.params().named(), raw).max_rel_error();
  std::string worst;
  double worst_err = 0.0;
  std::size_t checked = 0;
  for (const auto& t : report.tensors) {
    checked += t.checked;
    if (t.max_rel_error >= worst_err) {
      worst_err = t.max_rel_error;
      worst = t.name;
    }
  }
  const double elapsed = seconds_since(start);
  return {worst_err < 1e-4 && elapsed < 60.0 && report.tensors.size() == 21,
          std::to_string(report.tensors.size()) + " tensors, " + std::to_string(checked) +
              " entries, max rel error " + fmt("%.3g", worst_err) + " (" + worst + ") with eps 1e-4 and denominator floor " +
              fmt("%.3g", opts.denominator_floor) + " from |loss| " + fmt("%.4g", magnitude) +
              "; unfloored max " + fmt("%.3g", unfloored) + ", " + fmt("%.1f s", elapsed)};
}

// ---------------------------------------------------------------------------
// 2. Distribution invariants

Outcome distribution_invariants() {
  std::mt19937_64 rng(202);
  std::size_t checked = 0;
  double worst = 0.0;
  bool negative = false;
  auto check = [&](const ad::Tensor& d) {
    double total = 0.0;
    for (double v : d.values()) {
      if (v < 0.0) negative = true;
      total += v;
    }
    worst = std::max(worst, std::abs(total - 1.0));
    ++checked;
  };
  for (int pass = 0; pass < 1000; ++pass) {
    const model::Model net(random_config(8, 30), static_cast<std::uint64_t>(pass));
    const auto enc = random_encoded(rng, 1, 30).front();
    const auto body = net.encode_body(enc.body_ids, enc.body_types);
    const auto name = net.encode_name(enc.name_ids);
    const auto name_decode = net.decode_name(body);
    for (const auto& d : name_decode.step_distributions) check(d);
    for (const auto& a : name_decode.step_attention) check(a[0]);

    std::vector<int> gen_ids = name_decode.emitted();
    if (gen_ids.empty()) gen_ids = {corpus::kUnk};
    const auto gen = net.encode_name(gen_ids);
    const std::vector<std::size_t> gen_copy(gen_ids.begin(), gen_ids.end());
    const model::SummaryContext ctx{&body, enc.body_copy_ids, {&name, enc.name_copy_ids}, enc.extended_size};
    model::Fusion fusion = model::HumanNameOnly{};
    if (pass % 3 == 0) {
      fusion = model::TwoPassFusion{{&gen, gen_copy}, net.score_name(body, name), net.score_name(body, gen)};
    } else if (pass % 3 == 1) {
      fusion = model::FixedFusion{{&gen, gen_copy}};
    }
    const auto d = pass % 2 == 0 ? net.decode_summary(ctx, fusion)
                                 : net.decode_summary(ctx, fusion, std::span<const std::size_t>(enc.summary_targets));
    for (std::size_t t = 0; t < d.step_distributions.size(); ++t) {
      check(d.step_distributions[t]);
      check(d.step_generation[t]);
      for (const auto& c : d.step_copy[t]) check(c);
      for (const auto& a : d.step_attention[t]) check(a);
    }
    if (d.fusion) {
      if (d.fusion->first < 0 || d.fusion->second < 0) negative = true;
      worst = std::max(worst, std::abs(d.fusion->first + d.fusion->second - 1.0));
      ++checked;
    }
  }
  return {!negative && worst <= 1e-6,
          std::to_string(checked) + " distributions over 1000 passes, max |sum-1| " + fmt("%.3g", worst) +
              (negative ? ", negative entry found" : ", all nonnegative")};
}

// ---------------------------------------------------------------------------
// 3. aSBT oracle

Outcome asbt_oracle() {
  const ast::AstNode example =
      ast::make_node("Assign", {ast::make_leaf("SimpleName", "storage_client"),
                                ast::make_node("Call", {ast::make_leaf("SimpleName", "Client")})});
  const ast::AsbtSequence s = ast::to_asbt(example);
  const bool worked = s.tokens == std::vector<std::string>{"Assign", "SimpleName", "storage", "client", "Call",
                                                           "SimpleName", "Client", "Call", "Assign"} &&
                      s.types == std::vector<int>{0, 2, 3, 5, 0, 2, 6, 1, 1};

  oracles::TreeGen gen(303);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const oracles::GenNode g = gen.tree(6);
    const ast::AstNode tree = gen.build(g);
    std::string sbt;
    for (const auto& t : ast::to_sbt(tree)) sbt += (sbt.empty() ? "" : " ") + t;
    std::vector<std::pair<std::string, int>> expected;
    oracles::oracle_asbt(g, expected);
    const ast::AsbtSequence got = ast::to_asbt(tree);
    bool ok = sbt == oracles::oracle_sbt(g) && got.size() == expected.size();
    for (std::size_t i = 0; ok && i < expected.size(); ++i) {
      ok = got.tokens[i] == expected[i].first && got.types[i] == expected[i].second;
    }
    mismatches += ok ? 0 : 1;
  }
  return {worked && mismatches == 0, std::string("worked example ") + (worked ? "exact" : "MISMATCH") + ", " +
                                         std::to_string(mismatches) + "/1000 random trees differ from the oracles"};
}

// ---------------------------------------------------------------------------
// 4. Informativeness oracle

Outcome informativeness_oracle() {
  std::mt19937_64 rng(404);
  const std::vector<std::string> words = {"get", "set", "value", "name", "list", "the", "of", "item", "count", "a"};
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> name, summary;
    for (std::size_t n = 1 + rng() % 6; n > 0; --n) name.push_back(words[rng() % words.size()]);
    for (std::size_t n = rng() % 15; n > 0; --n) summary.push_back(words[rng() % words.size()]);
    if (corpus::informativeness_score(name, summary) != oracles::overlap_recount(name, summary)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + "/1000 pairs differ from the set-overlap recount"};
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(505);
  const std::vector<std::string> words = {"returns", "the", "value", "of", "a", "list", "set", "name", "for"};
  auto sentence = [&](std::size_t min_len) {
    std::vector<std::string> out;
    for (std::size_t n = min_len + rng() % (13 - min_len); n > 0; --n) out.push_back(words[rng() % words.size()]);
    return out;
  };
  double bleu_err = 0.0, rouge_err = 0.0;
  bool identical_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<std::vector<std::string>> ref = {sentence(1)}, cand = {sentence(0)};
    bleu_err = std::max(bleu_err, std::abs(eval::bleu4(ref, cand) - oracles::bleu_reference(ref, cand)));
    rouge_err = std::max(rouge_err, std::abs(eval::rouge_l(ref[0], cand[0]) - oracles::rouge_reference(ref[0], cand[0])));
    identical_ok = identical_ok && eval::bleu4(ref, ref) == 1.0 && eval::rouge_l(ref[0], ref[0]) == 1.0;
  }
  return {bleu_err <= 1e-9 && rouge_err <= 1e-9 && identical_ok,
          "200 pairs, max |BLEU4 diff| " + fmt("%.3g", bleu_err) + ", max |ROUGE-L diff| " + fmt("%.3g", rouge_err) +
              (identical_ok ? ", identical pairs score 1.0" : ", identical pair below 1.0")};
}

// ---------------------------------------------------------------------------
// Overfitting helpers shared by criteria 6 and 8

struct ToyRun {
  std::vector<corpus::Sample> samples;
  fixtures::Vocabs vocabs;
  model::ModelConfig config;
};

ToyRun toy_run(std::size_t count, toy::Family family, std::uint64_t seed) {
  ToyRun r;
  r.samples = toy::make_samples(count, family, seed);
  r.vocabs = fixtures::build_vocabs(r.samples);
  r.config = fixtures::tiny_config(r.vocabs, 64);
  r.config.body_embed = 32;
  r.config.type_embed = 8;
  r.config.word_embed = 32;
  return r;
}

training::TrainConfig overfit_config(std::uint64_t seed, std::size_t epochs) {
  training::TrainConfig c;
  c.seed = seed;
  c.max_epochs = epochs;
  c.batch_size = 8;
  c.lr = 0.01;
  return c;
}

double name_accuracy(const model::Model& net, const ToyRun& run) {
  std::size_t exact = 0;
  for (const auto& s : run.samples) {
    const auto enc = model::encode_sample(s, run.vocabs.body, run.vocabs.summary, net.config());
    ad::NoGradGuard no_grad;
    if (eval::generate_name(net, net.encode_body(enc.body_ids, enc.body_types)) == enc.name_targets) ++exact;
  }
  return static_cast<double>(exact) / static_cast<double>(run.samples.size());
}

// ---------------------------------------------------------------------------
// 6. Overfit sanity

Outcome overfit_sanity() {
  const auto start = Clock::now();
  const ToyRun run = toy_run(32, toy::Family::a, 606);
  model::Model net(run.config, 606);
  // No validation split: the final epoch is kept so the name decoder gets the full budget.
  const auto result = training::train(net, run.samples, {}, run.vocabs.body, run.vocabs.summary,
                                      overfit_config(606, 500));
  const double bleu = eval::evaluate(net, model::Ablation::full, run.samples, run.vocabs.body, run.vocabs.summary).bleu4;
  const double names = name_accuracy(net, run);
  const double elapsed = seconds_since(start);
  return {bleu >= 0.95 && names >= 0.90 && elapsed < 600.0,
          "training BLEU4 " + fmt("%.4f", bleu) + ", exact names " + fmt("%.3f", names) + " after " +
              std::to_string(result.history.size()) + " epochs, " + fmt("%.1f s", elapsed)};
}

// ---------------------------------------------------------------------------
// 7. Ablation wiring

Outcome ablation_wiring() {
  const ToyRun run = toy_run(16, toy::Family::a, 707);
  model::ModelConfig small = fixtures::tiny_config(run.vocabs, 16);

  model::Model no_mtl(small, 707);
  training::train(no_mtl, run.samples, {}, run.vocabs.body, run.vocabs.summary, [] {
    auto c = overfit_config(707, 3);
    c.ablation = model::Ablation::no_mtl;
    return c;
  }());
  const training::Checkpoint ck{small, {}, run.vocabs.body, run.vocabs.summary, no_mtl.params(), 3, {}};
  const training::Checkpoint reloaded = training::deserialize(training::serialize(ck));
  const model::ModelParams init = model::ModelParams::initialize(small, 707);
  std::size_t frozen = 0, moved = 0;
  for (const auto& [name, t] : reloaded.params.named()) {
    if (!model::is_name_task_parameter(name)) continue;
    (same_values(t, init.get(name)) ? frozen : moved) += 1;
  }

  model::Model no_mnip(small, 708);
  auto c = overfit_config(708, 3);
  c.ablation = model::Ablation::no_mnip;
  const auto result = training::train(no_mnip, run.samples, {}, run.vocabs.body, run.vocabs.summary, c);
  std::size_t off = 0;
  for (const auto& r : result.fusion_log) off += (r.human == 0.5 && r.generated == 0.5) ? 0 : 1;

  const bool pass = moved == 0 && frozen > 0 && !result.fusion_log.empty() && off == 0;
  return {pass, "no_mtl: " + std::to_string(frozen) + " name-task tensors bit-exact, " + std::to_string(moved) +
                    " changed; no_mnip: " + std::to_string(result.fusion_log.size()) + " logged steps, " +
                    std::to_string(off) + " not 0.5/0.5"};
}

// ---------------------------------------------------------------------------
// 8. Masked-name direction

Outcome masked_direction() {
  int degraded = 0;
  std::string detail;
  for (std::uint64_t seed : {801, 802, 803}) {
    const ToyRun run = toy_run(32, toy::Family::a, seed);
    model::Model net(run.config, seed);
    auto c = overfit_config(seed, 500);
    c.target_bleu4 = 0.95;
    const auto result = training::train(net, run.samples, run.samples, run.vocabs.body, run.vocabs.summary, c);
    const auto cmp = eval::mask_eval(net, model::Ablation::full, run.samples, run.vocabs.body, run.vocabs.summary);
    if (cmp.name_masked.bleu4 <= cmp.standard.bleu4) ++degraded;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": " +
              fmt("%.4f", cmp.standard.bleu4) + " -> " + fmt("%.4f", cmp.name_masked.bleu4) + " masked (" +
              std::to_string(result.history.size()) + " epochs)";
  }
  return {degraded >= 2, std::to_string(degraded) + "/3 seeds degrade; " + detail};
}

// ---------------------------------------------------------------------------
// 9. Pre-training workflow

Outcome pretraining_workflow() {
  const ToyRun a = toy_run(32, toy::Family::a, 901);
  const ToyRun b = toy_run(32, toy::Family::b, 902);
  model::ModelConfig cfg_a = fixtures::tiny_config(a.vocabs, 32);
  model::ModelConfig cfg_b = fixtures::tiny_config(b.vocabs, 32);

  model::Model pre(cfg_a, 903);
  training::pretrain(pre, a.samples, a.vocabs.body, a.vocabs.summary, overfit_config(903, 30));
  const training::Checkpoint ck{cfg_a, overfit_config(903, 30), a.vocabs.body, a.vocabs.summary, pre.params(), 30, {}};

  auto fine_cfg = overfit_config(904, 3);
  model::Model warm(cfg_b, training::transfer_params(ck, cfg_b, b.vocabs.body, b.vocabs.summary, 904));
  const auto warm_run = training::train(warm, b.samples, b.samples, b.vocabs.body, b.vocabs.summary, fine_cfg);
  model::Model cold(cfg_b, 904);
  const auto cold_run = training::train(cold, b.samples, b.samples, b.vocabs.body, b.vocabs.summary, fine_cfg);

  const double warm_cos = warm_run.history.front().loss_cos, cold_cos = cold_run.history.front().loss_cos;
  const bool finite = std::isfinite(warm_cos) && std::isfinite(cold_cos);
  return {finite && warm_run.history.size() == 3 && cold_run.history.size() == 3,
          "epoch-1 loss_cos pretrained-init " + fmt("%.3f", warm_cos) + " vs random-init " + fmt("%.3f", cold_cos) +
              " (reported, not asserted); final valid BLEU4 " + fmt("%.4f", *warm_run.best_bleu4) + " vs " +
              fmt("%.4f", *cold_run.best_bleu4)};
}

// ---------------------------------------------------------------------------
// 10. Determinism

Outcome determinism() {
  const ToyRun run = toy_run(16, toy::Family::a, 1001);
  const model::ModelConfig cfg = fixtures::tiny_config(run.vocabs, 16);
  std::vector<std::string> checkpoints, reports;
  for (int attempt = 0; attempt < 2; ++attempt) {
    model::Model net(cfg, 1001);
    const auto tc = overfit_config(1001, 3);
    const auto result = training::train(net, run.samples, run.samples, run.vocabs.body, run.vocabs.summary, tc);
    checkpoints.push_back(training::serialize(
        {cfg, tc, run.vocabs.body, run.vocabs.summary, net.params(), result.best_epoch, result.best_bleu4}));
    const auto cmp = eval::mask_eval(net, model::Ablation::full, run.samples, run.vocabs.body, run.vocabs.summary, 2);
    reports.push_back(eval::to_json(cmp).dump() + eval::to_tsv(cmp.standard) + eval::to_tsv(cmp.name_masked));
  }
  const bool same_ckpt = checkpoints[0] == checkpoints[1];
  const bool same_report = reports[0] == reports[1];
  return {same_ckpt && same_report, std::string("checkpoints ") + (same_ckpt ? "bit-identical" : "DIFFER") + " (" +
                                        std::to_string(checkpoints[0].size()) + " bytes), reports " +
                                        (same_report ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"distribution invariants", distribution_invariants},
      {"aSBT oracle", asbt_oracle},
      {"informativeness oracle", informativeness_oracle},
      {"metric oracles", metric_oracles},
      {"overfit sanity", overfit_sanity},
      {"ablation wiring", ablation_wiring},
      {"masked-name direction", masked_direction},
      {"pre-training workflow", pretraining_workflow},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
