#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dream/config.hpp"

namespace dream {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path kDir = fs::temp_directory_path() / "dream_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(DREAM_CLI_PATH) + " --log-every 0 " + args + " > " +
                          (kDir / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// A tiny model at the default image side (64 tokens), trained for a few steps.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    const json config = {{"model.width", 16},        {"model.heads", 2},          {"model.enc_blocks", 1},
                         {"model.dec_blocks", 1},    {"model.text_blocks", 1},    {"model.cond_dim", 16},
                         {"model.contrastive_dim", 8}, {"model.buffer_tokens", 2}, {"model.head_layers", 1},
                         {"train.batch_size", 8},    {"train.samples_per_epoch", 16}, {"train.epochs", 1},
                         {"train.lr_warmup_epochs", 0.5}, {"mask.warmup_epochs", 1}, {"train.val_samples", 8},
                         {"eval.probe_train_samples", 32}, {"eval.probe_test_samples", 16},
                         {"eval.retrieval_samples", 16}, {"eval.probe_iterations", 50}};
    std::ofstream(kDir / "tiny.json") << config.dump(2);
    ASSERT_EQ(run("train --config " + (kDir / "tiny.json").string() + " --out-dir " + (kDir / "run").string()), 0)
        << slurp(kDir / "last.log");
  }
  static std::string ckpt() { return (kDir / "run" / "checkpoint.bin").string(); }
  static std::string tiny() { return (kDir / "tiny.json").string(); }
};

TEST_F(Cli, TrainWritesArtifactsAndEchoesConfig) {
  const json m = read_json(kDir / "run" / "manifest.json");
  EXPECT_EQ(m["command"], "train");
  EXPECT_TRUE(m.contains("started") && m.contains("finished"));
  const RunConfig echoed = parse_run_config(m["config"]);
  const RunConfig original = load_run_config(tiny());
  EXPECT_EQ(echoed, original);
  const std::string metrics = slurp(kDir / "run" / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 2);  // header + two steps
}

TEST_F(Cli, ZeroEpochTrainWritesHeaderOnly) {
  ASSERT_EQ(run("train --config " + tiny() + " --set train.epochs=0 --out-dir " + (kDir / "empty").string()), 0)
      << slurp(kDir / "last.log");
  const std::string metrics = slurp(kDir / "empty" / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1);
  EXPECT_TRUE(fs::exists(kDir / "empty" / "checkpoint.bin"));
}

TEST_F(Cli, SampleWritesImageAndManifest) {
  const auto out = kDir / "plain.ppm";
  ASSERT_EQ(run("sample --checkpoint " + ckpt() + " --prompt 'red circle large TL' --inference-steps 5 --out " +
                out.string()),
            0)
      << slurp(kDir / "last.log");
  EXPECT_TRUE(fs::exists(out));
  const json m = read_json(out.string() + ".json");
  EXPECT_EQ(m["prompt"], "red circle large TL");
  EXPECT_EQ(m["k"], 1);
  EXPECT_EQ(m["t_switch"], 0);
}

TEST_F(Cli, BudgetDeterminesSwitchStep) {
  const auto out = kDir / "sad.ppm";
  ASSERT_EQ(run("sample-sad --checkpoint " + ckpt() +
                " --prompt 'blue square small BR' --k 9 --budget 128 --steps 64 --inference-steps 3 --out " +
                out.string()),
            0)
      << slurp(kDir / "last.log");
  const json m = read_json(out.string() + ".json");
  EXPECT_EQ(m["t_switch"], 8);
  EXPECT_EQ(m["steps"], 64);
  EXPECT_EQ(m["prompt_tokens"].size(), 8u);
  EXPECT_EQ(m["selected_score"], m["candidate_scores"][m["selected"].get<std::size_t>()]);
  EXPECT_EQ(m["candidate_scores"].size(), 9u);
  EXPECT_EQ(m["nfe"]["trajectory_steps"], 128);
}

TEST_F(Cli, InfeasibleBudgetExitsFive) {
  EXPECT_EQ(run("sample-sad --checkpoint " + ckpt() + " --prompt 'red circle large TL' --k 6 --budget 128 --out " +
                (kDir / "x.ppm").string()),
            5);
  EXPECT_NE(slurp(kDir / "last.log").find("nearest feasible"), std::string::npos);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("train --set no.such_key=1 --out-dir " + (kDir / "bad").string()), 2);
  std::ofstream(kDir / "broken.json") << "{\"train.epochs\": ";
  EXPECT_EQ(run("train --config " + (kDir / "broken.json").string() + " --out-dir " + (kDir / "bad").string()), 2);
  EXPECT_EQ(run("sample --checkpoint " + ckpt() + " --prompt 'purple blob' --out " + (kDir / "x.ppm").string()), 2);
  EXPECT_EQ(run("eval --checkpoint " + ckpt() + " --mask-grid 0,abc --out " + (kDir / "x.csv").string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, IoErrorsExitThree) {
  EXPECT_EQ(run("sample --checkpoint " + (kDir / "missing.bin").string() + " --prompt 'red circle large TL' --out " +
                (kDir / "x.ppm").string()),
            3);
  EXPECT_EQ(run("train --config " + (kDir / "missing.json").string() + " --out-dir " + (kDir / "bad").string()), 3);
}

TEST_F(Cli, EvalWritesCsv) {
  const auto out = kDir / "eval.csv";
  ASSERT_EQ(run("eval --checkpoint " + ckpt() + " --config " + tiny() + " --mask-grid 0,0.9 --out " + out.string()), 0)
      << slurp(kDir / "last.log");
  const std::string csv = slurp(out);
  EXPECT_EQ(csv.rfind("metric,split,mask_ratio,value,seed\n", 0), 0u);
  EXPECT_NE(csv.find("retrieval_i2t,val,0.9,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out.string() + ".json"));
}

TEST_F(Cli, GenDataWritesCache) {
  const auto out = kDir / "data.bin";
  ASSERT_EQ(run("gen-data --seed 2 --count 5 --side 16 --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out));
  EXPECT_EQ(read_json(out.string() + ".json")["config"]["count"], 5);
}

}  // namespace
}  // namespace dream
