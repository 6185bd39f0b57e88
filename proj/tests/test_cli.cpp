// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmf/bytes.hpp"
#include "xmf/cli.hpp"
#include "xmf/metrics.hpp"

namespace xmf::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int run_args(std::initializer_list<std::string> args) {
  std::vector<std::string> store{"xmf"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : store) argv.push_back(s.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("xmf_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return path(name);
  }
  json read_json(const std::string& name) const {
    std::ifstream in(dir_ / name);
    return json::parse(in);
  }
  std::string small_config(const std::string& data_extra = "") const {
    return write("cfg.json", R"({"data": {"num_samples": 80)" + data_extra +
                                 R"(}, "train": {"epochs": 2, "batch_size": 8}})");
  }
  fs::path dir_;
};

TEST_F(Cli, DatagenDeterministicAndEchoesConfig) {
  const std::string cfg = small_config();
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("a/d.mmf")}), kOk);
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("b/d.mmf")}), kOk);
  EXPECT_EQ(bytes::read_file(path("a/d.mmf")), bytes::read_file(path("b/d.mmf")));
  EXPECT_EQ(data::mmf_read(path("a/d.mmf")).size(), 80u);
  const json echo = read_json("a/datagen.config.json");
  EXPECT_EQ(echo["version"], kVersion);
  EXPECT_EQ(echo["config"]["data"]["num_samples"], 80);
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--seed", "9", "--out", path("c/d.mmf")}), kOk);
  EXPECT_NE(bytes::read_file(path("a/d.mmf")), bytes::read_file(path("c/d.mmf")));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run_args({"datagen", "--config", write("bad.json", "{\"data\": {\n  \"seed\": }"),
                      "--out", path("x.mmf")}),
            kUsage);
  EXPECT_EQ(run_args({"datagen", "--config", write("unk.json", R"({"data": {"nm": 3}})"), "--out",
                      path("x.mmf")}),
            kUsage);
  EXPECT_EQ(run_args({"datagen", "--config", write("neg.json", R"({"data": {"num_samples": -3}})"),
                      "--out", path("x.mmf")}),
            kUsage);
  EXPECT_EQ(run_args({"datagen", "--config",
                      write("type.json", R"({"train": {"lr": "fast"}})"), "--out", path("x.mmf")}),
            kUsage);
  EXPECT_EQ(run_args({"train"}), kUsage);
  EXPECT_EQ(run_args({}), kUsage);
  EXPECT_EQ(run_args({"--version"}), kOk);
}

TEST(Config, ParseErrorsNameKeyAndPosition) {
  try {
    parse_run_config(json::parse(R"({"model": {"d": 4, "bogus": 1}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.bogus"), std::string::npos) << e.what();
  }
  const fs::path p = fs::temp_directory_path() / "xmf_test_cli_bad.json";
  std::ofstream(p) << "{\n  \"data\": {,}\n}";
  try {
    load_run_config(p);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, RoundTripAndSeedScheme) {
  SeedOverrides seeds;
  const RunConfig c = parse_run_config(
      json::parse(R"({"seed": 5, "train": {"lambda": 0.3, "kernel": {"sigma": 0.7}},
                      "eval": {"missing_rates": [0, 0.5]}, "data": {"seed": 11}})"),
      &seeds);
  EXPECT_TRUE(seeds.data);
  EXPECT_FALSE(seeds.train);
  EXPECT_EQ(c.data.seed, 11u);
  EXPECT_EQ(c.train.seed, derive_seed(5, "train"));
  EXPECT_EQ(c.eval_seed, derive_seed(5, "eval"));
  EXPECT_EQ(c.model.lambda, 0.3);
  EXPECT_EQ(*c.model.kernel.sigma, 0.7);
  EXPECT_EQ(to_json(parse_run_config(to_json(c))), to_json(c));
  const RunConfig d = RunConfig::defaults(1);
  EXPECT_EQ(d.data.seed, derive_seed(1, "data"));
  EXPECT_EQ(d.bench.lengths.size() * d.bench.methods.size(), 15u);
}

TEST_F(Cli, TrainEvalAndReproducibility) {
  const std::string cfg = small_config();
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("d.mmf")}), kOk);
  ASSERT_EQ(run_args({"train", "--config", cfg, "--data", path("d.mmf"), "--out", path("t1")}), kOk);
  ASSERT_EQ(run_args({"train", "--config", cfg, "--data", path("d.mmf"), "--out", path("t2")}), kOk);
  EXPECT_EQ(bytes::read_file(path("t1/model.amb1")), bytes::read_file(path("t2/model.amb1")));
  const json m = read_json("t1/metrics.json");
  EXPECT_EQ(m["lambda"], 0.1);
  EXPECT_EQ(m["train_samples"], 64);
  EXPECT_TRUE(fs::exists(path("t1/epochs.csv")));
  EXPECT_TRUE(fs::exists(path("t1/train.config.json")));

  ASSERT_EQ(run_args({"train", "--config", cfg, "--data", path("d.mmf"), "--out", path("ng"),
                      "--no-global", "--no-local"}),
            kOk);
  EXPECT_EQ(read_json("ng/metrics.json")["lambda"], 0.0);
  EXPECT_EQ(read_json("ng/metrics.json")["local_alignment"], false);

  ASSERT_EQ(run_args({"eval", "--config", cfg, "--checkpoint", path("t1/model.amb1"), "--data",
                      path("d.mmf"), "--missing-rates", "0", "--out", path("e0.json")}),
            kOk);
  EXPECT_EQ(read_json("e0.json")["accuracy"], m["test_accuracy"]);

  ASSERT_EQ(run_args({"eval", "--config", cfg, "--checkpoint", path("t1/model.amb1"), "--data",
                      path("d.mmf"), "--missing-rates", "0.1,0.4,0.7", "--out", path("e.json")}),
            kOk);
  const json e = read_json("e.json");
  ASSERT_EQ(e["by_rate"].size(), 3u);
  EXPECT_DOUBLE_EQ(e["delta"].get<double>(),
                   e["by_rate"][0]["accuracy"].get<double>() - e["by_rate"][2]["accuracy"].get<double>());
}

TEST_F(Cli, LambdaSweep) {
  const std::string cfg = small_config();
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("d.mmf")}), kOk);
  ASSERT_EQ(run_args({"train", "--config", cfg, "--data", path("d.mmf"), "--out", path("s"),
                      "--lambda-sweep", "--epochs", "1"}),
            kOk);
  std::ifstream in(path("s/lambda_sweep.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_EQ(read_json("s/lambda_0.01/metrics.json")["lambda"], 0.01);
}

TEST_F(Cli, EvalDimensionMismatchExitsTwo) {
  const std::string cfg = small_config();
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("d.mmf")}), kOk);
  ASSERT_EQ(run_args({"train", "--config", cfg, "--data", path("d.mmf"), "--out", path("t"),
                      "--epochs", "1"}),
            kOk);
  const std::string other = write("other.json", R"({"data": {"num_samples": 20, "d_audio": 6}})");
  ASSERT_EQ(run_args({"datagen", "--config", other, "--out", path("o.mmf")}), kOk);
  EXPECT_EQ(run_args({"eval", "--checkpoint", path("t/model.amb1"), "--data", path("o.mmf")}),
            kUsage);
}

TEST_F(Cli, DivergenceExitsThree) {
  const std::string cfg = small_config();
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("d.mmf")}), kOk);
  EXPECT_EQ(run_args({"train", "--config", cfg, "--data", path("d.mmf"), "--out", path("t"),
                      "--lr", "1e200"}),
            kNumeric);
}

TEST_F(Cli, AlignNoiselessUnshiftedIsNearDiagonal) {
  // Single samples can swap two tokens whose content codes happen to be
  // small, so the diagonal fraction is averaged over every sample.
  const std::string cfg = small_config(R"(, "noise_std": 0, "misalignment_max_shift": 0)");
  ASSERT_EQ(run_args({"datagen", "--config", cfg, "--out", path("d.mmf")}), kOk);
  double on_diagonal = 0.0, rows = 0.0;
  for (int k = 0; k < 80; ++k) {
    const std::string out = path("plans" + std::to_string(k));
    ASSERT_EQ(run_args({"align", "--config", cfg, "--data", path("d.mmf"), "--sample",
                        std::to_string(k), "--out", out}),
              kOk);
    for (const char* name : {"a2l.csv", "v2l.csv"}) {
      const metrics::PlanTable t = metrics::read_plan_csv(fs::path(out) / name);
      const std::size_t Ts = t.mass.rows(), Tl = t.mass.cols();
      for (std::size_t i = 0; i < Ts; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < Tl; ++j) row += t.mass(i, j);
        EXPECT_NEAR(row, 1.0 / double(Ts), 1e-15);
        on_diagonal += t.mass(i, i * Tl / Ts) > 0.0;
        rows += 1.0;
      }
    }
  }
  EXPECT_GE(on_diagonal / rows, 0.95);
  EXPECT_EQ(run_args({"align", "--data", path("d.mmf"), "--sample", "80", "--out", path("p2")}),
            kUsage);
}

TEST_F(Cli, BenchWritesOneRowPerPoint) {
  ASSERT_EQ(run_args({"bench", "--out", path("b"), "--lengths", "30,60,120", "--repeats", "5"}),
            kOk);
  std::ifstream in(path("b/bench.csv"));
  std::string line;
  int rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) rows += line.rfind("#", 0) != 0;
  EXPECT_EQ(rows, 9);
  EXPECT_TRUE(fs::exists(path("b/bench.json")));
  EXPECT_EQ(run_args({"bench", "--out", path("b2"), "--lengths", "30,60", "--repeats", "5"}),
            kUsage);
}

TEST_F(Cli, GradcheckExitCodes) {
  EXPECT_EQ(run_args({"gradcheck", "--configs", "5"}), kOk);
  EXPECT_EQ(run_args({"gradcheck", "--configs", "5", "--inject-fault", "mmd"}), kCheckFailed);
}

}  // namespace
}  // namespace xmf::cli
