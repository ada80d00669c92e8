#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "disarm/persist.hpp"

namespace fs = std::filesystem;
using namespace disarm;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("disarm_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "spec.json") << R"({"feature_dim": 16, "style_dims": 4, "proposals_per_scene": 30})";
    ASSERT_EQ(run("gen-data --spec " + (dir / "spec.json").string() + " --scenes 8 --seed 3 --out " + data()).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string data() { return (dir / "data.jsonl").string(); }
  static std::string quick_train() { return " --preset desk --epochs 3 --batch 4 --m 5 --candidates 10"; }

  static Result run(const std::string& args, const std::string& env = "") {
    const char* bin = std::getenv("DISARM_CLI");
    if (!bin) return {};
    const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
    const std::string cmd = env + " " + bin + " " + args + " >" + o.string() + " 2>" + e.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
  }

  void SetUp() override {
    if (!std::getenv("DISARM_CLI")) GTEST_SKIP() << "DISARM_CLI not set";
  }
};

fs::path Cli::dir;

// Metrics lines with the timing field removed.
std::vector<nlohmann::json> metrics(const fs::path& out) {
  std::vector<nlohmann::json> v;
  std::ifstream is(out / "metrics.jsonl");
  for (std::string line; std::getline(is, line);) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("wall_time_s"));
    j.erase("wall_time_s");
    v.push_back(j);
  }
  return v;
}

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("train --data " + data()).code, 1);  // missing --out
  const auto r = run("cost-report --k -1");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(run("--version").code, 0);
}

TEST_F(Cli, GenDataZeroScenesIsHeaderOnly) {
  const auto p = dir / "empty.jsonl";
  ASSERT_EQ(run("gen-data --scenes 0 --out " + p.string()).code, 0);
  const auto text = slurp(p);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_TRUE(fs::exists(p.string() + ".manifest.json"));
  const auto ev = run("eval --oracle --data " + p.string());
  EXPECT_EQ(ev.code, 2);
  EXPECT_NE(ev.err.find("no scenes"), std::string::npos) << ev.err;
}

TEST_F(Cli, GenDataIsDeterministic) {
  const auto a = dir / "a.jsonl", b = dir / "b.jsonl";
  ASSERT_EQ(run("gen-data --scenes 3 --seed 11 --out " + a.string()).code, 0);
  ASSERT_EQ(run("gen-data --scenes 3 --out " + b.string(), "DISARM_SEED=11").code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(run("gen-data --scenes 1 --out " + b.string(), "DISARM_SEED=eleven").code, 1);
}

TEST_F(Cli, GenDataBadSpecIsADataError) {
  const auto s = dir / "bad_spec.json";
  std::ofstream(s) << R"({"ambiguity_rate": 3})";
  const auto r = run("gen-data --spec " + s.string() + " --out " + (dir / "x.jsonl").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ambiguity_rate"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainDefaultsEchoTheReferenceConstants) {
  const auto out = dir / "defaults";
  // Zero epochs: only the resolved configuration and the initial model.
  const auto r = run("train --data " + data() + " --epochs 0 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["config"]["train"]["lr"], 0.008);
  EXPECT_EQ(m["config"]["train"]["batch"], 8);
  EXPECT_EQ(m["config"]["model"]["candidate_keep"], 128);
  EXPECT_EQ(m["config"]["model"]["anchors"], 15);
  EXPECT_EQ(m["config"]["train"]["epochs"], 0);
  EXPECT_NE(r.out.find("M=15 candidates=128"), std::string::npos) << r.out;
}

TEST_F(Cli, ZeroEpochsSavesTheInitialization) {
  const auto out = dir / "init";
  ASSERT_EQ(run("train --data " + data() + " --epochs 0 --m 5 --candidates 10 --seed 9 --out " + out.string()).code, 0);
  const Model saved = load_model(out / "model");
  const Model fresh = Model::create(saved.config, saved.classes, 9);
  for (auto g : kAllGroups) EXPECT_TRUE(saved.net(g) == fresh.net(g)) << group_name(g);
}

TEST_F(Cli, TrainingIsReproducible) {
  const auto a = dir / "run_a", b = dir / "run_b";
  ASSERT_EQ(run("train --data " + data() + quick_train() + " --seed 2 --out " + a.string()).code, 0);
  ASSERT_EQ(run("train --data " + data() + quick_train() + " --seed 2 --out " + b.string()).code, 0);
  const auto ma = metrics(a), mb = metrics(b);
  ASSERT_EQ(ma.size(), 3u);
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(slurp(a / "model" / "model.json"), slurp(b / "model" / "model.json"));
  for (const char* stage : {"WarmUp", "FreezeAnchorsAndFeatures", "FineTune"})
    EXPECT_TRUE(fs::exists(a / "checkpoints" / stage)) << stage;

  // Replay reruns the recorded command into the same directory.
  ASSERT_EQ(run("replay --manifest " + (a / "manifest.json").string()).code, 0);
  EXPECT_EQ(metrics(a), mb);
}

TEST_F(Cli, NumericFailureKeepsPartialState) {
  const auto out = dir / "blowup";
  const auto r = run("train --data " + data() + quick_train() + " --optimizer sgd --lr 1e300 --out " + out.string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("epoch 0 batch"), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(out / "partial"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST_F(Cli, EvalChecksCompatibility) {
  const auto out = dir / "for_eval";
  ASSERT_EQ(run("train --data " + data() + quick_train() + " --out " + out.string()).code, 0);
  const auto ok = run("eval --data " + data() + " --ckpt " + (out / "model").string() + " --format kv");
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("mAP@0.25="), std::string::npos);
  EXPECT_NE(ok.out.find("mAP@0.50="), std::string::npos);

  const auto m = run("eval --data " + data() + " --ckpt " + (out / "model").string() + " --m 15");
  EXPECT_EQ(m.code, 2);
  EXPECT_NE(m.err.find("config mismatch: M"), std::string::npos) << m.err;

  const auto other = dir / "f32.jsonl";
  std::ofstream(dir / "f32.json") << R"({"feature_dim": 32, "style_dims": 4, "proposals_per_scene": 30})";
  ASSERT_EQ(run("gen-data --spec " + (dir / "f32.json").string() + " --scenes 2 --out " + other.string()).code, 0);
  const auto f = run("eval --data " + other.string() + " --ckpt " + (out / "model").string());
  EXPECT_EQ(f.code, 2);
  EXPECT_NE(f.err.find("config mismatch: F"), std::string::npos) << f.err;

  EXPECT_EQ(run("eval --data " + data() + " --ckpt " + (out / "model").string() + " --iou 0.7").code, 1);
}

TEST_F(Cli, OracleScoresOne) {
  const auto r = run("eval --oracle --format kv --data " + data());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mAP@0.25=1\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("mAP@0.50=1\n"), std::string::npos) << r.out;
}

TEST_F(Cli, GradCheck) {
  const auto ok = run("grad-check --trials 3");
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("grad-check passed (3 trials"), std::string::npos) << ok.out;
  EXPECT_EQ(run("grad-check --trials 2 --tolerance 0").code, 3);
  const auto none = run("grad-check --trials 0");
  EXPECT_EQ(none.code, 0);
  EXPECT_NE(none.err.find("warning"), std::string::npos);
}

TEST_F(Cli, CostReport) {
  const auto r = run("cost-report --format kv");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("parameter_count=156306\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("storage_bytes_f32=625224\n"), std::string::npos) << r.out;
  const auto z = run("cost-report --format kv --k 0");
  EXPECT_NE(z.out.find("flops_per_forward=0\n"), std::string::npos) << z.out;
  const auto t = run("cost-report");
  EXPECT_NE(t.out.find("MiB"), std::string::npos);
}

TEST_F(Cli, AblateRejectsUnknownTags) {
  const auto m = dir / "matrix.json";
  std::ofstream(m) << R"({"strategies": ["Nearest"]})";
  const auto r = run("ablate --data " + data() + " --matrix " + m.string() + " --out " + (dir / "abl").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("valid tags"), std::string::npos) << r.err;
}

TEST_F(Cli, AblateSmallMatrix) {
  const auto m = dir / "small_matrix.json";
  std::ofstream(m) << R"({"cells": [{"strategy": "Random"}, {"context": false}]})";
  const auto out = dir / "abl_small";
  const auto r = run("ablate --data " + data() + quick_train() + " --seeds 1 --matrix " + m.string() +
                     " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = slurp(out / "results.tsv");
  EXPECT_NE(table.find("Random/Full"), std::string::npos) << table;
  EXPECT_NE(table.find("NoContext"), std::string::npos) << table;
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}
