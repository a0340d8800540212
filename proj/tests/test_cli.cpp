// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dmacos/cli.hpp"
#include "dmacos/evaluation.hpp"
#include "dmacos/training.hpp"

using namespace dmacos;
namespace fs = std::filesystem;

namespace {

struct RunOutput {
  int code;
  std::string out;
  std::string err;
};

RunOutput dmacos_run(std::vector<std::string> args) {
  args.insert(args.begin(), "dmacos");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.empty() ? 0 : 1;
  return n;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("dmacos_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& rel) const { return (root_ / rel).string(); }

  // Toy input of `count` methods prepared into `dir`.
  void prepare(const std::string& dir, std::size_t count = 40, const std::string& family = "a") {
    const std::string input = path(dir + ".jsonl");
    ASSERT_EQ(dmacos_run({"make-toy", "--out", input, "--count", std::to_string(count), "--family", family,
                          "--seed", "1"})
                  .code,
              0);
    const RunOutput r = dmacos_run({"prep", "--input", input, "--out", path(dir), "--lang-profile", "toy", "--seed",
                                    "1"});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::vector<std::string> small_model_flags() const {
    return {"--hidden", "12", "--body-embed", "8", "--type-embed", "4", "--word-embed", "8", "--batch-size", "8"};
  }

  RunOutput train(const std::string& corpus, const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"train", "--corpus", path(corpus), "--out", path(out), "--seed", "2"};
    for (const auto& a : small_model_flags()) args.push_back(a);
    for (const auto& a : extra) args.push_back(a);
    return dmacos_run(args);
  }

  fs::path root_;
};

}  // namespace

TEST_F(CliTest, PrepSplitsNinetyFiveFiveAndIsReproducible) {
  prepare("c1", 100);
  EXPECT_EQ(line_count(path("c1/train.jsonl")), 90u);
  EXPECT_EQ(line_count(path("c1/valid.jsonl")), 5u);
  EXPECT_EQ(line_count(path("c1/test.jsonl")), 5u);
  for (const char* f : {"body_vocab.txt", "summary_vocab.txt", "profile.json", "stats.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(path(std::string("c1/") + f))) << f;
  }
  const RunOutput again = dmacos_run({"prep", "--input", path("c1.jsonl"), "--out", path("c2"), "--lang-profile",
                                      "toy", "--seed", "1"});
  ASSERT_EQ(again.code, 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "body_vocab.txt", "summary_vocab.txt",
                        "profile.json", "stats.json"}) {
    EXPECT_EQ(slurp(path(std::string("c1/") + f)), slurp(path(std::string("c2/") + f))) << f;
  }
  const nlohmann::json manifest = read_json(path("c1/manifest.json"));
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_EQ(manifest["inputs"]["input"]["sha1"].get<std::string>().size(), 40u);
  const nlohmann::json stats = read_json(path("c1/stats.json"));
  EXPECT_TRUE(stats.contains("mean_name_words_in_summary"));
}

TEST_F(CliTest, JavaProfileSetsLengthLimits) {
  ASSERT_EQ(dmacos_run({"make-toy", "--out", path("in.jsonl"), "--count", "20"}).code, 0);
  ASSERT_EQ(dmacos_run({"prep", "--input", path("in.jsonl"), "--out", path("c"), "--lang-profile", "java"}).code, 0);
  const nlohmann::json profile = read_json(path("c/profile.json"));
  EXPECT_EQ(profile["name_max"], 10);
  EXPECT_EQ(profile["body_max"], 300);
  EXPECT_EQ(profile["summary_max"], 13);
}

TEST_F(CliTest, MalformedInputLineIsReportedWithItsNumber) {
  std::ofstream(path("bad.jsonl")) << R"({"source": "x = y", "name": "f", "summary": "s"})" << "\n{oops\n";
  const RunOutput r = dmacos_run({"prep", "--input", path("bad.jsonl"), "--out", path("c")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(":2:"), std::string::npos) << r.err;
  EXPECT_EQ(read_json(path("c/manifest.json"))["status"], "failed");
}

TEST_F(CliTest, MissingCorpusIsAnExplicitErrorAndManifestRecordsFailure) {
  const RunOutput r = train("nowhere", "m.ckpt");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos) << r.err;
  const nlohmann::json manifest = read_json(path("m.ckpt.manifest.json"));
  EXPECT_EQ(manifest["status"], "failed");
  EXPECT_TRUE(manifest.contains("error"));
  EXPECT_EQ(dmacos_run({"train"}).code, 2);
  EXPECT_EQ(dmacos_run({"--help"}).code, 0);
}

TEST_F(CliTest, ZeroEpochsWritesTheInitialization) {
  prepare("c");
  ASSERT_EQ(train("c", "m.ckpt", {"--max-epochs", "0"}).code, 0);
  const training::Checkpoint ck = training::load_checkpoint(path("m.ckpt"));
  const model::ModelParams fresh = model::ModelParams::initialize(ck.model_config, 2);
  const auto a = ck.params.named(), b = fresh.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].second.values().begin(), a[i].second.values().end(), b[i].second.values().begin()))
        << a[i].first;
  }
  EXPECT_EQ(ck.epoch, 0u);
}

TEST_F(CliTest, FlagsOverrideConfigFileAndEnvironmentSeedIsTheFallback) {
  prepare("c");
  std::ofstream(path("cfg.json")) << R"({"hidden": 10, "max_epochs": 0, "lr": 0.5})";
  ASSERT_EQ(dmacos_run({"train", "--corpus", path("c"), "--out", path("m.ckpt"), "--config", path("cfg.json"),
                        "--hidden", "14", "--seed", "4"})
                .code,
            0);
  const training::Checkpoint ck = training::load_checkpoint(path("m.ckpt"));
  EXPECT_EQ(ck.model_config.hidden, 14u);
  EXPECT_EQ(ck.train_config.lr, 0.5);
  EXPECT_EQ(ck.train_config.max_epochs, 0u);
  EXPECT_EQ(ck.train_config.seed, 4u);

  ::setenv("DMACOS_SEED", "19", 1);
  ASSERT_EQ(dmacos_run({"train", "--corpus", path("c"), "--out", path("e.ckpt"), "--config", path("cfg.json")}).code,
            0);
  ::unsetenv("DMACOS_SEED");
  EXPECT_EQ(training::load_checkpoint(path("e.ckpt")).train_config.seed, 19u);
}

TEST_F(CliTest, NoMtlLeavesNameTaskParametersAtInitialization) {
  prepare("c");
  ASSERT_EQ(train("c", "init.ckpt", {"--max-epochs", "0"}).code, 0);
  ASSERT_EQ(train("c", "m.ckpt", {"--max-epochs", "2", "--ablation", "no_mtl"}).code, 0);
  const auto a = training::load_checkpoint(path("init.ckpt")).params.named();
  const auto b = training::load_checkpoint(path("m.ckpt")).params.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool same =
        std::equal(a[i].second.values().begin(), a[i].second.values().end(), b[i].second.values().begin());
    if (model::is_name_task_parameter(a[i].first)) EXPECT_TRUE(same) << a[i].first;
    if (model::is_summary_only_parameter(a[i].first)) EXPECT_FALSE(same) << a[i].first;
  }
}

TEST_F(CliTest, TrainingAndEvaluationAreReproducible) {
  prepare("c");
  ASSERT_EQ(train("c", "a.ckpt", {"--max-epochs", "2"}).code, 0);
  ASSERT_EQ(train("c", "b.ckpt", {"--max-epochs", "2"}).code, 0);
  EXPECT_EQ(slurp(path("a.ckpt")), slurp(path("b.ckpt")));
  EXPECT_EQ(slurp(path("a.ckpt.history.json")), slurp(path("b.ckpt.history.json")));
  EXPECT_EQ(slurp(path("a.ckpt.fusion.tsv")), slurp(path("b.ckpt.fusion.tsv")));
  const nlohmann::json manifest = read_json(path("a.ckpt.manifest.json"));
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["seed"], 2);
  EXPECT_TRUE(manifest["config"].contains("model"));

  for (const char* out : {"r1", "r2"}) {
    const RunOutput r = dmacos_run({"eval", "--ckpt", path("a.ckpt"), "--corpus", path("c"), "--split", "train",
                                    "--out", path(out), "--jobs", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"report.json", "report.txt", "samples_standard.tsv"}) {
    EXPECT_EQ(slurp(path(std::string("r1/") + f)), slurp(path(std::string("r2/") + f))) << f;
  }
}

TEST_F(CliTest, ReportBleuEqualsBleuOfTheEmittedTsv) {
  prepare("c");
  ASSERT_EQ(train("c", "a.ckpt", {"--max-epochs", "1"}).code, 0);
  ASSERT_EQ(dmacos_run({"eval", "--ckpt", path("a.ckpt"), "--corpus", path("c"), "--split", "train", "--out",
                        path("r")})
                .code,
            0);
  std::ifstream tsv(path("r/samples_standard.tsv"));
  std::string line;
  std::getline(tsv, line);
  std::vector<eval::Tokens> refs, cands;
  auto words = [](const std::string& s) {
    eval::Tokens out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  while (std::getline(tsv, line)) {
    std::vector<std::string> cols;
    std::istringstream in(line);
    for (std::string c; std::getline(in, c, '\t');) cols.push_back(c);
    refs.push_back(words(cols.at(1)));
    cands.push_back(words(cols.at(2)));
  }
  const nlohmann::json report = read_json(path("r/report.json"));
  EXPECT_NEAR(report["bleu4"].get<double>(), eval::bleu4(refs, cands), 1e-12);
}

TEST_F(CliTest, MaskedEvaluationEmitsBothTags) {
  prepare("c");
  ASSERT_EQ(train("c", "a.ckpt", {"--max-epochs", "1"}).code, 0);
  ASSERT_EQ(dmacos_run({"eval", "--ckpt", path("a.ckpt"), "--corpus", path("c"), "--out", path("r"), "--masked"})
                .code,
            0);
  const nlohmann::json report = read_json(path("r/report.json"));
  EXPECT_EQ(report["standard"]["tag"], "standard");
  EXPECT_EQ(report["name_masked"]["tag"], "name_masked");
  EXPECT_TRUE(report.contains("delta"));
  EXPECT_TRUE(fs::exists(path("r/samples_name_masked.tsv")));

  ASSERT_EQ(dmacos_run({"eval", "--ckpt", path("a.ckpt"), "--corpus", path("c"), "--out", path("plain")}).code, 0);
  EXPECT_EQ(read_json(path("plain/report.json")).dump(), report["standard"].dump());
}

TEST_F(CliTest, EvalRejectsAForeignCorpus) {
  prepare("c");
  prepare("other", 40, "b");
  ASSERT_EQ(train("c", "a.ckpt", {"--max-epochs", "0"}).code, 0);
  const RunOutput r = dmacos_run({"eval", "--ckpt", path("a.ckpt"), "--corpus", path("other"), "--out", path("r")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("vocabulary"), std::string::npos) << r.err;
}

TEST_F(CliTest, SummarizePrintsAllFieldsDeterministically) {
  prepare("c");
  ASSERT_EQ(train("c", "a.ckpt", {"--max-epochs", "1"}).code, 0);
  const std::vector<std::string> args = {"summarize", "--ckpt", path("a.ckpt"), "--source",
                                         "def updateState(items) { state_value = calc(items, 2); emit(state_value) }"};
  const RunOutput a = dmacos_run(args), b = dmacos_run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  for (const char* key : {"generated_name:", "human_name_score:", "generated_name_score:", "fusion_weights:",
                          "summary:"}) {
    EXPECT_NE(a.out.find(key), std::string::npos) << key;
  }
  std::istringstream fusion(a.out.substr(a.out.find("fusion_weights:") + 15));
  double h = 0, g = 0;
  fusion >> h >> g;
  EXPECT_NEAR(h + g, 1.0, 1e-5);

  const RunOutput bad = dmacos_run({"summarize", "--ckpt", path("a.ckpt"), "--source", "def f( {"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("syntax error"), std::string::npos);
  EXPECT_EQ(dmacos_run({"summarize", "--ckpt", path("a.ckpt")}).code, 2);
}

TEST_F(CliTest, PretrainThenFineTuneOnAnotherCorpus) {
  prepare("a", 30, "a");
  prepare("b", 30, "b");
  std::vector<std::string> args = {"pretrain", "--corpus", path("a"), "--out", path("pre.ckpt"), "--max-epochs", "1",
                                   "--seed", "3"};
  for (const auto& f : small_model_flags()) args.push_back(f);
  ASSERT_EQ(dmacos_run(args).code, 0);
  const RunOutput r = train("b", "fine.ckpt", {"--max-epochs", "1", "--init", path("pre.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json manifest = read_json(path("fine.ckpt.manifest.json"));
  const std::string corpus_a = read_json(path("pre.ckpt.manifest.json"))["inputs"]["corpus"]["sha1"];
  EXPECT_EQ(manifest["inputs"]["init_checkpoint"]["corpus"]["sha1"], corpus_a);
  EXPECT_NE(manifest["inputs"]["corpus"]["sha1"], corpus_a);

  // Pre-training leaves summary-only parameters at their seeded initialization.
  const training::Checkpoint pre = training::load_checkpoint(path("pre.ckpt"));
  const model::ModelParams fresh = model::ModelParams::initialize(pre.model_config, 3);
  for (const auto& [name, t] : pre.params.named()) {
    if (!model::is_summary_only_parameter(name)) continue;
    const ad::Tensor ref = fresh.get(name);
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), ref.values().begin())) << name;
  }
}
