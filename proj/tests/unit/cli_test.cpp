// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "depthrnn/cli/dispatch.hpp"
#include "depthrnn/cli/run_config.hpp"
#include "depthrnn/errors.hpp"
#include "depthrnn/io/checkpoint.hpp"
#include "depthrnn/io/format.hpp"

namespace depthrnn {
namespace {

namespace fs = std::filesystem;

TEST(Checkpoint, RoundTripAndDeterminism) {
  Parameter a("a", Tensor::matrix({{1.5, -2}, {0.1, 1e-300}}));
  Parameter b("b", Tensor::scalar(3.25));
  const std::vector<const Parameter*> ps = {&a, &b};
  const std::string bytes = io::serialize(ps, {{"kind", "test"}});
  EXPECT_EQ(bytes, io::serialize(ps, {{"kind", "test"}}));
  const io::Checkpoint c = io::deserialize(bytes);
  EXPECT_EQ(c.metadata.at("kind"), "test");
  EXPECT_EQ(c.find("a"), a.value);
  EXPECT_EQ(c.find("b"), b.value);

  Parameter a2("a", Tensor({2, 2})), b2("b", Tensor::scalar(0));
  const std::vector<Parameter*> targets = {&a2, &b2};
  io::assign(c, targets);
  EXPECT_EQ(a2.value, a.value);
  Parameter wrong("a", Tensor({3}));
  const std::vector<Parameter*> bad = {&wrong};
  EXPECT_THROW(io::assign(c, bad), ConfigError);
  EXPECT_THROW(io::deserialize(bytes.substr(0, 12)), ConfigError);
}

TEST(Checkpoint, Sha256KnownVector) {
  EXPECT_EQ(io::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Format, RoundTrip) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 12345.0}) {
    EXPECT_EQ(std::stod(io::format_double(x)), x);
  }
}

TEST(RunConfig, DefaultsRoundTrip) {
  const cli::RunConfig c = cli::default_run_config();
  const std::string json = cli::to_json(c);
  EXPECT_EQ(cli::to_json(cli::parse_run_config(json)), json);
}

void expect_config_error(const std::string& json, const std::string& path) {
  try {
    cli::parse_run_config(json);
    FAIL() << "accepted: " << json;
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind(path, 0), 0u) << e.what();
  }
}

TEST(RunConfig, ErrorsNameTheField) {
  expect_config_error(R"({"finetune": {"learning_rate": "fast"}})", "finetune.learning_rate");
  expect_config_error(R"({"backbone": {"d_model": 30, "n_heads": 4}})", "backbone");
  expect_config_error(R"({"bogus": 1})", "bogus");
  expect_config_error(R"({"mode": {"variant": "lstm"}})", "mode.variant");
  expect_config_error(R"({"data": {"n_objects": 4, "scene_len": 6}})", "data");
  expect_config_error("{not json", "");
}

TEST(RunConfig, SeedsAreDerived) {
  cli::RunConfig c = cli::default_run_config();
  c.seed = 3;
  EXPECT_NE(c.derived_seed("pretrain"), c.derived_seed("finetune"));
  EXPECT_EQ(c.dataset_spec("eval").world_seed, c.dataset_spec("pretrain").world_seed);
  EXPECT_GT(c.dataset_spec("pretrain").bias.flip_fraction, 0.0);
  EXPECT_EQ(c.dataset_spec("eval").bias.flip_fraction, 0.0);
}

class DispatchTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("depthrnn_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = cli::parse_run_config(R"({
      "seed": 4,
      "backbone": {"n_layers": 2, "d_model": 8, "n_heads": 2, "max_seq": 12, "ff_mult": 2},
      "data": {"n_objects": 12, "scene_len": 4, "n_topics": 3, "pretrain_examples": 60,
               "finetune_examples": 30, "eval_examples": 30},
      "pretrain": {"learning_rate": 1e-2, "epochs": 2},
      "finetune": {"learning_rate": 1e-2, "epochs": 1},
      "gradcheck": {"instances": 1, "dims": [2]}
    })");
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::string_view cmd, const cli::RunConfig& c) {
    std::ostringstream log;
    const int code = cli::dispatch(cmd, c, dir_, log);
    last_log_ = log.str();
    return code;
  }

  fs::path dir_;
  cli::RunConfig config_;
  std::string last_log_;
};

TEST_F(DispatchTest, PipelineArtifactsAndIdempotence) {
  ASSERT_EQ(run("pretrain", config_), cli::kOk) << last_log_;
  for (const char* f : {"backbone.ckpt", "backbone.json", "pretrain_record.csv",
                        "data/pretrain.jsonl", "data/finetune.jsonl", "data/eval.jsonl",
                        "data/vocab.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  const std::string ckpt = io::read_file(dir_ / "backbone.ckpt");
  ASSERT_EQ(run("finetune", config_), cli::kOk) << last_log_;
  ASSERT_EQ(run("eval", config_), cli::kOk) << last_log_;
  EXPECT_TRUE(fs::exists(dir_ / "eval_dgdpu.json"));
  EXPECT_TRUE(fs::exists(dir_ / "eval_dgdpu.csv"));
  const std::string report = io::read_file(dir_ / "eval_dgdpu.json");

  ASSERT_EQ(run("pretrain", config_), cli::kOk) << last_log_;
  EXPECT_EQ(io::read_file(dir_ / "backbone.ckpt"), ckpt);
  ASSERT_EQ(run("finetune", config_), cli::kOk);
  ASSERT_EQ(run("eval", config_), cli::kOk);
  EXPECT_EQ(io::read_file(dir_ / "eval_dgdpu.json"), report);
}

TEST_F(DispatchTest, ForcedVanillaEvalMatchesVanilla) {
  ASSERT_EQ(run("pretrain", config_), cli::kOk) << last_log_;
  cli::RunConfig v = config_, fv = config_;
  v.mode.variant = "vanilla";
  fv.mode.variant = "forced_vanilla";
  ASSERT_EQ(run("eval", v), cli::kOk) << last_log_;
  ASSERT_EQ(run("eval", fv), cli::kOk) << last_log_;
  std::string a = io::read_file(dir_ / "eval_vanilla.csv");
  std::string b = io::read_file(dir_ / "eval_forced_vanilla.csv");
  // Identical modulo the mode column.
  auto strip = [](std::string s, const std::string& mode) {
    for (std::size_t p; (p = s.find(mode + ",")) != std::string::npos;) s.erase(p, mode.size() + 1);
    return s;
  };
  EXPECT_EQ(strip(a, "vanilla"), strip(b, "forced_vanilla"));
}

TEST_F(DispatchTest, AblateWritesFourRows) {
  ASSERT_EQ(run("pretrain", config_), cli::kOk) << last_log_;
  ASSERT_EQ(run("ablate", config_), cli::kOk) << last_log_;
  std::ifstream in(dir_ / "ablate.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "variant,trainable_parameters,random_accuracy,popular_accuracy,"
            "adversarial_accuracy,overall_accuracy,overall_f1");
  std::vector<std::string> names;
  while (std::getline(in, line)) names.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(names, (std::vector<std::string>{"dgdpu", "gru", "constraint_only", "correction_only"}));
}

TEST_F(DispatchTest, ErrorExitCodes) {
  EXPECT_EQ(run("finetune", config_), cli::kMissingArtifact);
  EXPECT_EQ(run("launch", config_), cli::kConfigInvalid);
  cli::RunConfig vanilla = config_;
  vanilla.mode.variant = "vanilla";
  ASSERT_EQ(run("pretrain", config_), cli::kOk);
  EXPECT_EQ(run("finetune", vanilla), cli::kConfigInvalid);
  std::ofstream(dir_ / "bad.json") << R"({"pretrain": {"epochs": -1}})";
  std::ostringstream log;
  EXPECT_EQ(cli::run("pretrain", dir_ / "bad.json", std::nullopt, dir_, log), cli::kConfigInvalid);
  EXPECT_NE(log.str().find("pretrain.epochs"), std::string::npos) << log.str();
  cli::RunConfig diverge = config_;
  diverge.pretrain.learning_rate = 1e6;
  diverge.pretrain.optimizer = training::OptimizerKind::kSgd;
  diverge.pretrain.epochs = 30;
  EXPECT_EQ(run("pretrain", diverge), cli::kDiverged) << last_log_;
}

TEST_F(DispatchTest, TamperedBackboneIsRejected) {
  ASSERT_EQ(run("pretrain", config_), cli::kOk);
  std::string bytes = io::read_file(dir_ / "backbone.ckpt");
  bytes[bytes.size() - 1] ^= 0x01;
  io::write_file(dir_ / "backbone.ckpt", bytes);
  EXPECT_EQ(run("finetune", config_), cli::kIntegrity) << last_log_;
}

TEST_F(DispatchTest, GradcheckReport) {
  EXPECT_EQ(run("gradcheck", config_), cli::kOk) << last_log_;
  const std::string report = io::read_file(dir_ / "gradcheck.json");
  EXPECT_NE(report.find("\"passed\": true"), std::string::npos);
  EXPECT_NE(report.find("recurrence_n3"), std::string::npos);
}

}  // namespace
}  // namespace depthrnn
