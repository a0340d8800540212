// SPDX-License-Identifier: Apache-2.0
#include "dmacos/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dmacos/ast.hpp"
#include "dmacos/corpus.hpp"
#include "dmacos/errors.hpp"
#include "dmacos/evaluation.hpp"
#include "dmacos/model.hpp"
#include "dmacos/toy.hpp"
#include "dmacos/training.hpp"

namespace dmacos::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string blob_sha1(const std::string& body) {
  const std::string header = "blob " + std::to_string(body.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, body.data(), body.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace

std::string git_blob_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return blob_sha1(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("short write to " + path.string());
}

ordered_json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Content id of every file of a prepared corpus plus a combined id over them.
ordered_json hash_corpus(const fs::path& dir) {
  ordered_json files = ordered_json::object();
  std::string listing;
  for (const char* name : {"train.jsonl", "valid.jsonl", "test.jsonl", "body_vocab.txt", "summary_vocab.txt"}) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) continue;
    const std::string id = git_blob_sha1(p);
    files[name] = id;
    listing += id + ' ' + name + '\n';
  }
  ordered_json out;
  out["path"] = dir.string();
  out["sha1"] = blob_sha1(listing);
  out["files"] = std::move(files);
  return out;
}

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) {
    j_["command"] = std::move(command);
    j_["argv"] = args;
    j_["started_at"] = utc_now();
  }

  void set(const std::string& key, ordered_json value) { j_[key] = std::move(value); }
  void add_input(const std::string& role, ordered_json hash) { j_["inputs"][role] = std::move(hash); }
  void add_artifact(const fs::path& p) { j_["artifacts"].push_back(p.string()); }

  void finish(const fs::path& path, bool ok, const std::string& error = {}) {
    j_["finished_at"] = utc_now();
    j_["status"] = ok ? "ok" : "failed";
    if (!ok) j_["error"] = error;
    write_text(path, j_.dump(2) + '\n');
  }

 private:
  ordered_json j_ = ordered_json::object();
};

/// Reads a prepared corpus directory.
struct Corpus {
  fs::path dir;
  corpus::Vocab body_vocab;
  corpus::Vocab summary_vocab;
  corpus::LangProfile profile;

  std::vector<corpus::Sample> split(const std::string& name) const {
    const fs::path p = dir / (name + ".jsonl");
    if (!fs::exists(p)) throw ConfigError("corpus split missing: " + p.string());
    return corpus::read_samples(p);
  }
};

Corpus open_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("corpus directory not found: " + dir.string());
  Corpus c;
  c.dir = dir;
  c.body_vocab = corpus::read_vocab(dir / "body_vocab.txt");
  c.summary_vocab = corpus::read_vocab(dir / "summary_vocab.txt");
  const ordered_json p = read_json_file(dir / "profile.json");
  c.profile.name = p.value("name", std::string("custom"));
  c.profile.name_max = p.at("name_max").get<std::size_t>();
  c.profile.body_max = p.at("body_max").get<std::size_t>();
  c.profile.summary_max = p.at("summary_max").get<std::size_t>();
  c.profile.body_vocab_cap = p.value("body_vocab_cap", c.profile.body_vocab_cap);
  c.profile.summary_vocab_cap = p.value("summary_vocab_cap", c.profile.summary_vocab_cap);
  return c;
}

/// Precedence: command-line flag, then --config file, then the given default.
class Settings {
 public:
  void load(const std::string& path) {
    if (!path.empty()) file_ = read_json_file(path);
  }

  template <typename T>
  T pick(const CLI::Option* flag, const T& flag_value, const char* key, const T& fallback) const {
    if (flag && flag->count() > 0) return flag_value;
    if (file_.contains(key)) {
      try {
        return file_.at(key).get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
      }
    }
    return fallback;
  }

  std::uint64_t seed(const CLI::Option* flag, std::uint64_t flag_value) const {
    if (flag->count() > 0) return flag_value;
    if (file_.contains("seed")) return file_.at("seed").get<std::uint64_t>();
    if (const char* env = std::getenv("DMACOS_SEED"); env && *env) {
      try {
        return std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("DMACOS_SEED is not an unsigned integer: ") + env);
      }
    }
    return 0;
  }

 private:
  ordered_json file_ = ordered_json::object();
};

/// Flags shared by the training commands.
struct TrainFlags {
  std::string corpus, out, config, init, ablation = "full", history, fusion_log;
  std::uint64_t seed = 0;
  std::size_t epochs = 10, batch_size = 16, hidden = 256, body_embed = 100, type_embed = 28, word_embed = 100, jobs = 1;
  double lr = 0.001, alpha = 0.1, beta = 0.1, max_grad_norm = 0.0, target_bleu4 = 0.0;
  CLI::Option *seed_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr, *hidden_opt = nullptr,
              *body_embed_opt = nullptr, *type_embed_opt = nullptr, *word_embed_opt = nullptr, *lr_opt = nullptr,
              *alpha_opt = nullptr, *beta_opt = nullptr, *clip_opt = nullptr, *target_opt = nullptr,
              *ablation_opt = nullptr, *jobs_opt = nullptr;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool joint) {
  cmd->add_option("--corpus", f.corpus, "Prepared corpus directory")->required();
  cmd->add_option("--out", f.out, "Checkpoint to write")->required();
  cmd->add_option("--config", f.config, "JSON file of settings (flags take precedence)");
  f.seed_opt = cmd->add_option("--seed", f.seed, "Run seed (default: config, then DMACOS_SEED, then 0)");
  f.epochs_opt = cmd->add_option("--max-epochs,--epochs", f.epochs, "Number of epochs");
  f.batch_opt = cmd->add_option("--batch-size", f.batch_size, "Minibatch size");
  f.hidden_opt = cmd->add_option("--hidden", f.hidden, "GRU hidden size");
  f.body_embed_opt = cmd->add_option("--body-embed", f.body_embed, "Body token embedding size");
  f.type_embed_opt = cmd->add_option("--type-embed", f.type_embed, "Node type embedding size");
  f.word_embed_opt = cmd->add_option("--word-embed", f.word_embed, "Name and summary word embedding size");
  f.lr_opt = cmd->add_option("--lr", f.lr, "Adam learning rate");
  f.beta_opt = cmd->add_option("--beta", f.beta, "Weight of the informativeness loss");
  f.clip_opt = cmd->add_option("--max-grad-norm", f.max_grad_norm, "Gradient norm limit (0 disables)");
  if (joint) {
    cmd->add_option("--init", f.init, "Checkpoint to start from (e.g. a pre-trained one)");
    f.ablation_opt = cmd->add_option("--ablation", f.ablation, "full | no_mtl | no_two_pass | no_mnip");
    f.alpha_opt = cmd->add_option("--alpha", f.alpha, "Weight of the name generation loss");
    f.target_opt = cmd->add_option("--target-bleu", f.target_bleu4, "Stop once validation BLEU-4 reaches this");
    f.jobs_opt = cmd->add_option("--jobs", f.jobs, "Threads for validation decoding");
    cmd->add_option("--fusion-log", f.fusion_log, "Per-step fusion weight TSV (default: <out>.fusion.tsv)");
  }
  cmd->add_option("--history", f.history, "Per-epoch history JSON (default: <out>.history.json)");
}

training::TrainConfig resolve_train_config(const TrainFlags& f, const Settings& s) {
  training::TrainConfig c;
  c.seed = s.seed(f.seed_opt, f.seed);
  c.max_epochs = s.pick(f.epochs_opt, f.epochs, "max_epochs", c.max_epochs);
  c.batch_size = s.pick(f.batch_opt, f.batch_size, "batch_size", c.batch_size);
  c.lr = s.pick(f.lr_opt, f.lr, "lr", c.lr);
  c.beta = s.pick(f.beta_opt, f.beta, "beta", c.beta);
  c.max_grad_norm = s.pick(f.clip_opt, f.max_grad_norm, "max_grad_norm", c.max_grad_norm);
  c.alpha = s.pick(f.alpha_opt, f.alpha, "alpha", c.alpha);
  c.ablation = model::parse_ablation(s.pick(f.ablation_opt, f.ablation, "ablation", std::string("full")));
  c.eval_jobs = s.pick(f.jobs_opt, f.jobs, "jobs", c.eval_jobs);
  const double target = s.pick(f.target_opt, f.target_bleu4, "target_bleu4", 0.0);
  if (target > 0.0) c.target_bleu4 = target;
  training::validate(c);
  return c;
}

model::ModelConfig resolve_model_config(const TrainFlags& f, const Settings& s, const Corpus& corpus,
                                        const model::ModelConfig& defaults) {
  model::ModelConfig m = defaults;
  m.hidden = s.pick(f.hidden_opt, f.hidden, "hidden", m.hidden);
  m.body_embed = s.pick(f.body_embed_opt, f.body_embed, "body_embed", m.body_embed);
  m.type_embed = s.pick(f.type_embed_opt, f.type_embed, "type_embed", m.type_embed);
  m.word_embed = s.pick(f.word_embed_opt, f.word_embed, "word_embed", m.word_embed);
  m.body_vocab = corpus.body_vocab.size();
  m.summary_vocab = corpus.summary_vocab.size();
  m.name_max = corpus.profile.name_max;
  m.body_max = corpus.profile.body_max;
  m.summary_max = corpus.profile.summary_max;
  return m;
}

ordered_json history_json(const training::TrainResult& r) {
  ordered_json j;
  j["best_epoch"] = r.best_epoch;
  j["best_valid_bleu4"] = r.best_bleu4 ? ordered_json(*r.best_bleu4) : ordered_json(nullptr);
  auto epochs = ordered_json::array();
  for (const auto& e : r.history) {
    ordered_json o;
    o["epoch"] = e.epoch;
    o["loss_cos"] = e.loss_cos;
    o["loss_mng"] = e.loss_mng;
    o["loss_mnip"] = e.loss_mnip;
    o["loss_total"] = e.loss_total;
    o["summary_tokens"] = e.summary_tokens;
    o["loss_cos_per_token"] = e.summary_tokens ? e.loss_cos / static_cast<double>(e.summary_tokens) : 0.0;
    o["log_clamps"] = e.clamped;
    o["valid_bleu4"] = e.valid_bleu4 ? ordered_json(*e.valid_bleu4) : ordered_json(nullptr);
    epochs.push_back(std::move(o));
  }
  j["epochs"] = std::move(epochs);
  return j;
}

void print_epoch(std::ostream& out, const training::EpochRecord& e) {
  char line[200];
  std::snprintf(line, sizeof line, "epoch %zu  loss %.6f  cos %.6f  mng %.6f  mnip %.6f", e.epoch, e.loss_total,
                e.loss_cos, e.loss_mng, e.loss_mnip);
  out << line;
  if (e.valid_bleu4) out << "  valid_bleu4 " << std::fixed << std::setprecision(4) << *e.valid_bleu4 << std::defaultfloat;
  if (e.clamped) out << "  clamps " << e.clamped;
  out << '\n';
}

fs::path default_path(const std::string& given, const std::string& base, const char* suffix) {
  return given.empty() ? fs::path(base + suffix) : fs::path(given);
}

// ---------------------------------------------------------------------------
// Commands

struct PrepFlags {
  std::string input, out, profile = "java", config;
  std::uint64_t seed = 0;
  double train = 0.9, valid = 0.05, test = 0.05;
  CLI::Option *seed_opt = nullptr, *train_opt = nullptr, *valid_opt = nullptr, *test_opt = nullptr;
};

void cmd_prep(const PrepFlags& f, Manifest& manifest, std::ostream& out) {
  Settings s;
  s.load(f.config);
  const fs::path dir(f.out);
  if (!fs::exists(f.input)) throw ConfigError("input not found: " + f.input);
  corpus::LangProfile profile = corpus::lang_profile(f.profile);
  profile.name_max = s.pick<std::size_t>(nullptr, 0, "name_max", profile.name_max);
  profile.body_max = s.pick<std::size_t>(nullptr, 0, "body_max", profile.body_max);
  profile.summary_max = s.pick<std::size_t>(nullptr, 0, "summary_max", profile.summary_max);
  profile.body_vocab_cap = s.pick<std::size_t>(nullptr, 0, "body_vocab_cap", profile.body_vocab_cap);
  profile.summary_vocab_cap = s.pick<std::size_t>(nullptr, 0, "summary_vocab_cap", profile.summary_vocab_cap);
  corpus::SplitSpec spec;
  spec.seed = s.seed(f.seed_opt, f.seed);
  spec.train = s.pick(f.train_opt, f.train, "train_fraction", spec.train);
  spec.valid = s.pick(f.valid_opt, f.valid, "valid_fraction", spec.valid);
  spec.test = s.pick(f.test_opt, f.test, "test_fraction", spec.test);

  ordered_json input_hash;
  input_hash["path"] = f.input;
  input_hash["sha1"] = git_blob_sha1(f.input);
  manifest.add_input("input", input_hash);

  std::vector<corpus::Sample> samples = corpus::read_records(f.input);
  const corpus::CorpusStats stats = corpus::corpus_stats(samples);
  const corpus::Splits splits = corpus::split_corpus(std::move(samples), spec);

  std::vector<std::vector<std::string>> body_streams, summary_streams;
  for (const auto& s2 : splits.train) {
    body_streams.push_back(s2.body_tokens);
    summary_streams.push_back(s2.name_tokens);
    summary_streams.push_back(s2.summary_tokens);
  }
  const corpus::Vocab body_vocab = corpus::build_vocab(body_streams, profile.body_vocab_cap);
  const corpus::Vocab summary_vocab = corpus::build_vocab(summary_streams, profile.summary_vocab_cap);

  fs::create_directories(dir);
  corpus::write_samples(dir / "train.jsonl", splits.train);
  corpus::write_samples(dir / "valid.jsonl", splits.valid);
  corpus::write_samples(dir / "test.jsonl", splits.test);
  corpus::write_vocab(dir / "body_vocab.txt", body_vocab);
  corpus::write_vocab(dir / "summary_vocab.txt", summary_vocab);

  ordered_json prof;
  prof["name"] = profile.name;
  prof["name_max"] = profile.name_max;
  prof["body_max"] = profile.body_max;
  prof["summary_max"] = profile.summary_max;
  prof["body_vocab_cap"] = profile.body_vocab_cap;
  prof["summary_vocab_cap"] = profile.summary_vocab_cap;
  write_text(dir / "profile.json", prof.dump(2) + '\n');

  ordered_json st;
  st["samples"] = stats.samples;
  st["train"] = splits.train.size();
  st["valid"] = splits.valid.size();
  st["test"] = splits.test.size();
  st["body_vocab"] = body_vocab.size();
  st["summary_vocab"] = summary_vocab.size();
  st["mean_name_words_in_summary"] = stats.mean_name_in_summary;
  st["mean_summary_words_in_name"] = stats.mean_summary_in_name;
  st["names_fully_in_summary"] = stats.fully_covered_fraction;
  write_text(dir / "stats.json", st.dump(2) + '\n');

  ordered_json cfg;
  cfg["profile"] = prof;
  cfg["split"] = {{"train", spec.train}, {"valid", spec.valid}, {"test", spec.test}};
  manifest.set("config", cfg);
  manifest.set("seed", spec.seed);
  for (const char* name :
       {"train.jsonl", "valid.jsonl", "test.jsonl", "body_vocab.txt", "summary_vocab.txt", "profile.json", "stats.json"}) {
    manifest.add_artifact(dir / name);
  }
  out << "prepared " << stats.samples << " samples: " << splits.train.size() << " train, " << splits.valid.size()
      << " valid, " << splits.test.size() << " test\n"
      << "vocabularies: body " << body_vocab.size() << ", summary " << summary_vocab.size() << '\n'
      << "name words found in summary: " << std::fixed << std::setprecision(4) << stats.mean_name_in_summary
      << ", summary words found in name: " << stats.mean_summary_in_name << std::defaultfloat << '\n';
}

void record_run_config(Manifest& manifest, const model::ModelConfig& m, const training::TrainConfig& t) {
  ordered_json cfg;
  cfg["model"] = model::to_json(m);
  cfg["training"] = training::to_json(t);
  manifest.set("config", cfg);
  manifest.set("seed", t.seed);
}

void cmd_pretrain(const TrainFlags& f, Manifest& manifest, std::ostream& out) {
  Settings s;
  s.load(f.config);
  const Corpus corpus = open_corpus(f.corpus);
  manifest.add_input("corpus", hash_corpus(corpus.dir));
  const training::TrainConfig tc = resolve_train_config(f, s);
  const model::ModelConfig mc = resolve_model_config(f, s, corpus, {});
  record_run_config(manifest, mc, tc);

  model::Model net(mc, tc.seed);
  const auto train_set = corpus.split("train");
  const training::TrainResult result = training::pretrain(net, train_set, corpus.body_vocab, corpus.summary_vocab, tc,
                                                          [&](const auto& e) { print_epoch(out, e); });
  training::Checkpoint ckpt{mc, tc, corpus.body_vocab, corpus.summary_vocab, net.params(), result.best_epoch, {}};
  const fs::path ckpt_path(f.out);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  training::save_checkpoint(ckpt_path, ckpt);
  const fs::path history = default_path(f.history, f.out, ".history.json");
  write_text(history, history_json(result).dump(2) + '\n');
  manifest.add_artifact(ckpt_path);
  manifest.add_artifact(history);
  out << "wrote " << ckpt_path.string() << '\n';
}

void cmd_train(const TrainFlags& f, Manifest& manifest, std::ostream& out) {
  Settings s;
  s.load(f.config);
  const Corpus corpus = open_corpus(f.corpus);
  manifest.add_input("corpus", hash_corpus(corpus.dir));
  const training::TrainConfig tc = resolve_train_config(f, s);

  std::optional<training::Checkpoint> init;
  if (!f.init.empty()) {
    if (!fs::exists(f.init)) throw ConfigError("init checkpoint not found: " + f.init);
    init = training::load_checkpoint(f.init);
    ordered_json h;
    h["path"] = f.init;
    h["sha1"] = git_blob_sha1(f.init);
    const fs::path init_manifest(f.init + ".manifest.json");
    if (fs::exists(init_manifest)) {
      const ordered_json m = read_json_file(init_manifest);
      if (m.contains("inputs") && m["inputs"].contains("corpus")) h["corpus"] = m["inputs"]["corpus"];
    }
    manifest.add_input("init_checkpoint", h);
  }
  const model::ModelConfig mc = resolve_model_config(f, s, corpus, init ? init->model_config : model::ModelConfig{});
  record_run_config(manifest, mc, tc);

  model::Model net = init ? model::Model(mc, training::transfer_params(*init, mc, corpus.body_vocab,
                                                                       corpus.summary_vocab, tc.seed))
                          : model::Model(mc, tc.seed);
  const auto train_set = corpus.split("train");
  const auto valid_set = corpus.split("valid");
  const training::TrainResult result =
      training::train(net, train_set, valid_set, corpus.body_vocab, corpus.summary_vocab, tc,
                      [&](const auto& e) { print_epoch(out, e); });

  training::Checkpoint ckpt{mc, tc, corpus.body_vocab, corpus.summary_vocab, net.params(), result.best_epoch,
                            result.best_bleu4};
  const fs::path ckpt_path(f.out);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  training::save_checkpoint(ckpt_path, ckpt);
  const fs::path history = default_path(f.history, f.out, ".history.json");
  write_text(history, history_json(result).dump(2) + '\n');
  const fs::path fusion = default_path(f.fusion_log, f.out, ".fusion.tsv");
  std::ostringstream tsv;
  tsv << "epoch\tstep\tsample_id\thuman_weight\tgenerated_weight\n";
  for (const auto& r : result.fusion_log) {
    char nums[80];
    std::snprintf(nums, sizeof nums, "%.17g\t%.17g", r.human, r.generated);
    tsv << r.epoch << '\t' << r.step << '\t' << r.sample_id << '\t' << nums << '\n';
  }
  write_text(fusion, tsv.str());
  manifest.add_artifact(ckpt_path);
  manifest.add_artifact(history);
  manifest.add_artifact(fusion);
  out << "best epoch " << result.best_epoch;
  if (result.best_bleu4) out << " (valid_bleu4 " << *result.best_bleu4 << ')';
  out << "\nwrote " << ckpt_path.string() << '\n';
}

struct EvalFlags {
  std::string ckpt, corpus, split = "test", out;
  bool masked = false;
  std::size_t jobs = 1;
};

void check_corpus_matches(const training::Checkpoint& ckpt, const Corpus& corpus) {
  if (!(ckpt.body_vocab == corpus.body_vocab) || !(ckpt.summary_vocab == corpus.summary_vocab)) {
    throw ConfigError("vocabulary of corpus " + corpus.dir.string() + " differs from the checkpoint's");
  }
}

void cmd_eval(const EvalFlags& f, Manifest& manifest, std::ostream& out) {
  if (!fs::exists(f.ckpt)) throw ConfigError("checkpoint not found: " + f.ckpt);
  const training::Checkpoint ckpt = training::load_checkpoint(f.ckpt);
  const Corpus corpus = open_corpus(f.corpus);
  check_corpus_matches(ckpt, corpus);
  ordered_json h;
  h["path"] = f.ckpt;
  h["sha1"] = git_blob_sha1(f.ckpt);
  manifest.add_input("checkpoint", h);
  manifest.add_input("corpus", hash_corpus(corpus.dir));
  manifest.set("config", {{"split", f.split}, {"masked", f.masked}, {"jobs", f.jobs}});
  manifest.set("seed", ckpt.train_config.seed);

  const model::Model net(ckpt.model_config, ckpt.params);
  const auto samples = corpus.split(f.split);
  const fs::path dir(f.out);
  fs::create_directories(dir);
  std::vector<eval::MetricReport> reports;
  if (f.masked) {
    const eval::MaskedComparison cmp = eval::mask_eval(net, ckpt.train_config.ablation, samples, corpus.body_vocab,
                                                       corpus.summary_vocab, f.jobs);
    write_text(dir / "report.json", eval::to_json(cmp).dump(2) + '\n');
    reports = {cmp.standard, cmp.name_masked};
  } else {
    reports.push_back(eval::evaluate(net, ckpt.train_config.ablation, samples, corpus.body_vocab,
                                     corpus.summary_vocab, {false, f.jobs}));
    write_text(dir / "report.json", eval::to_json(reports[0]).dump(2) + '\n');
  }
  manifest.add_artifact(dir / "report.json");
  for (const auto& r : reports) {
    const fs::path tsv = dir / ("samples_" + r.tag + ".tsv");
    write_text(tsv, eval::to_tsv(r));
    manifest.add_artifact(tsv);
  }
  const std::string table = eval::to_text(reports);
  write_text(dir / "report.txt", table);
  manifest.add_artifact(dir / "report.txt");
  out << table;
}

struct SummarizeFlags {
  std::string ckpt, ast, source, name, manifest;
};

void cmd_summarize(const SummarizeFlags& f, std::ostream& out) {
  if (!fs::exists(f.ckpt)) throw ConfigError("checkpoint not found: " + f.ckpt);
  const training::Checkpoint ckpt = training::load_checkpoint(f.ckpt);
  ast::AstNode tree;
  if (!f.ast.empty()) {
    const ordered_json j = read_json_file(f.ast);
    tree = ast::ast_from_json(nlohmann::json::parse(j.dump()));
  } else {
    tree = ast::parse_toy(f.source);
  }
  std::string name = f.name;
  if (name.empty() && !tree.children.empty() && tree.children.front().node_type == "SimpleName" &&
      tree.children.front().token) {
    name = *tree.children.front().token;
  }
  if (name.empty()) throw ConfigError("method name not found in the input; pass --name");

  nlohmann::json record;
  record["id"] = "input";
  record["ast"] = nlohmann::json::parse(ast::ast_to_json(tree).dump());
  record["name"] = name;
  record["summary"] = "";
  const corpus::Sample sample = corpus::sample_from_record(record, "input");
  const model::Model net(ckpt.model_config, ckpt.params);
  const model::EncodedSample enc =
      model::encode_sample(sample, ckpt.body_vocab, ckpt.summary_vocab, ckpt.model_config);
  const eval::Summary s = eval::summarize(net, ckpt.train_config.ablation, enc, ckpt.summary_vocab);

  auto join = [](const std::vector<std::string>& t) {
    std::string r;
    for (const auto& w : t) r += (r.empty() ? "" : " ") + w;
    return r;
  };
  out << "generated_name: " << join(s.name) << '\n'
      << "human_name_score: " << s.human_score << '\n'
      << "generated_name_score: " << s.generated_score << '\n';
  if (s.fusion) out << "fusion_weights: " << s.fusion->first << ' ' << s.fusion->second << '\n';
  else out << "fusion_weights: none (human name only)\n";
  out << "summary: " << join(s.summary) << '\n';
}

struct ToyFlags {
  std::string out, family = "a";
  std::size_t count = 32;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void cmd_make_toy(const ToyFlags& f, Manifest& manifest, std::ostream& out) {
  Settings s;
  const std::uint64_t seed = s.seed(f.seed_opt, f.seed);
  std::string text;
  for (const auto& rec : toy::make_records(f.count, toy::parse_family(f.family), seed)) text += rec.dump() + '\n';
  write_text(f.out, text);
  manifest.set("config", {{"count", f.count}, {"family", f.family}});
  manifest.set("seed", seed);
  manifest.add_artifact(f.out);
  out << "wrote " << f.count << " toy methods to " << f.out << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-pass neural code summarization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dmacos 1.0.0");

  PrepFlags prep;
  auto* prep_cmd = app.add_subcommand("prep", "Split a JSONL corpus and build vocabularies");
  prep_cmd->add_option("--input", prep.input, "Input JSONL")->required();
  prep_cmd->add_option("--out", prep.out, "Output directory")->required();
  prep_cmd->add_option("--lang-profile", prep.profile, "java | python | toy");
  prep_cmd->add_option("--config", prep.config, "JSON file of settings");
  prep.seed_opt = prep_cmd->add_option("--seed", prep.seed, "Split seed");
  prep.train_opt = prep_cmd->add_option("--train-fraction", prep.train, "Training share");
  prep.valid_opt = prep_cmd->add_option("--valid-fraction", prep.valid, "Validation share");
  prep.test_opt = prep_cmd->add_option("--test-fraction", prep.test, "Test share");

  TrainFlags pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Pre-train the name generator and informativeness scorer");
  add_train_flags(pre_cmd, pre, false);

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "Train the summarizer");
  add_train_flags(train_cmd, tr, true);

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a corpus split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--corpus", ev.corpus, "Prepared corpus directory")->required();
  eval_cmd->add_option("--split", ev.split, "train | valid | test");
  eval_cmd->add_option("--out", ev.out, "Report directory")->required();
  eval_cmd->add_flag("--masked", ev.masked, "Also evaluate with every method name replaced by <unk>");
  eval_cmd->add_option("--jobs", ev.jobs, "Decoding threads");

  SummarizeFlags sm;
  auto* sum_cmd = app.add_subcommand("summarize", "Summarize one method");
  sum_cmd->add_option("--ckpt", sm.ckpt, "Checkpoint")->required();
  auto* ast_opt = sum_cmd->add_option("--ast", sm.ast, "Neutral AST JSON file");
  auto* src_opt = sum_cmd->add_option("--source", sm.source, "Method in the demonstration language");
  ast_opt->excludes(src_opt);
  sum_cmd->add_option("--name", sm.name, "Human-written method name (default: taken from the input)");
  sum_cmd->add_option("--manifest", sm.manifest, "Write a run manifest here");

  ToyFlags toy_flags;
  auto* toy_cmd = app.add_subcommand("make-toy", "Write a synthetic toy-language corpus");
  toy_cmd->add_option("--out", toy_flags.out, "Output JSONL")->required();
  toy_cmd->add_option("--count", toy_flags.count, "Number of methods");
  toy_cmd->add_option("--family", toy_flags.family, "a | b (disjoint vocabularies)");
  toy_flags.seed_opt = toy_cmd->add_option("--seed", toy_flags.seed, "Generator seed");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // Help and version requests succeed; every usage error maps to 2.
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  if (sum_cmd->parsed() && sm.ast.empty() && sm.source.empty()) {
    err << "summarize: one of --ast or --source is required\n";
    return 2;
  }

  std::optional<Manifest> manifest;
  fs::path manifest_path;
  const std::vector<std::string> argv_copy(args.begin() + (args.empty() ? 0 : 1), args.end());
  try {
    if (prep_cmd->parsed()) {
      manifest.emplace("prep", argv_copy);
      manifest_path = fs::path(prep.out) / "manifest.json";
      cmd_prep(prep, *manifest, out);
    } else if (pre_cmd->parsed()) {
      manifest.emplace("pretrain", argv_copy);
      manifest_path = pre.out + ".manifest.json";
      cmd_pretrain(pre, *manifest, out);
    } else if (train_cmd->parsed()) {
      manifest.emplace("train", argv_copy);
      manifest_path = tr.out + ".manifest.json";
      cmd_train(tr, *manifest, out);
    } else if (eval_cmd->parsed()) {
      manifest.emplace("eval", argv_copy);
      manifest_path = fs::path(ev.out) / "manifest.json";
      cmd_eval(ev, *manifest, out);
    } else if (sum_cmd->parsed()) {
      if (!sm.manifest.empty()) {
        manifest.emplace("summarize", argv_copy);
        manifest_path = sm.manifest;
        manifest->add_input("checkpoint", {{"path", sm.ckpt}, {"sha1", git_blob_sha1(sm.ckpt)}});
      }
      cmd_summarize(sm, out);
    } else if (toy_cmd->parsed()) {
      manifest.emplace("make-toy", argv_copy);
      manifest_path = toy_flags.out + ".manifest.json";
      cmd_make_toy(toy_flags, *manifest, out);
    }
    if (manifest) manifest->finish(manifest_path, true);
    return 0;
  } catch (const SyntaxError& e) {
    err << "error: syntax error at line " << e.line() << ", column " << e.column() << ": " << e.what() << '\n';
    if (manifest) manifest->finish(manifest_path, false, e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    try {
      if (manifest) manifest->finish(manifest_path, false, e.what());
    } catch (const std::exception& inner) {
      err << "error: could not write manifest: " << inner.what() << '\n';
    }
  }
  return 1;
}

}  // namespace dmacos::cli
