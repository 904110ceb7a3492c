// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include "flowvoc/config.hpp"

using namespace flowvoc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("flowvoc_config_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(RunConfig, DefaultsCarryRecipeValues) {
  const RunConfig c = resolve_config({}, {});
  EXPECT_EQ(c.train.lr_init, 7.5e-5);
  EXPECT_EQ(c.train.lr_final, 5e-6);
  EXPECT_EQ(c.train.batch, 16);
  EXPECT_EQ(c.train.steps, 1000000);
  EXPECT_EQ(c.train.beta1, 0.9);
  EXPECT_EQ(c.train.beta2, 0.99);
  EXPECT_EQ(c.train.weight_decay, 5e-4);
  EXPECT_EQ(c.distill.steps, 25000);
  EXPECT_EQ(c.distill.lr, 2e-5);
  EXPECT_EQ(c.distill.beta1, 0.8);
  EXPECT_EQ(c.distill.beta2, 0.95);
  EXPECT_EQ(c.distill.weight_decay, 1e-2);
  EXPECT_EQ(c.distill.ema_decay, 0.999);
  EXPECT_EQ(c.mel.n_mels, 100);
  EXPECT_EQ(c.mel.hop_length, 256);
  EXPECT_EQ(c.mel.sample_rate, 24000);
  EXPECT_EQ(c.loss.lambda0, 0.02);
  EXPECT_EQ(c.loss.lambda1, 0.02);
  EXPECT_EQ(c.eval.n_steps, 6);
  EXPECT_EQ(c.network, NetworkConfig::reference());
  EXPECT_EQ(c.keep_last, 3);
}

TEST(RunConfig, PrecedenceDefaultFileOverride) {
  const auto dir = scratch("precedence");
  write(dir / "c.json", R"({"train": {"lr_init": 1e-3, "batch": 4}, "seed": 5})");
  const RunConfig from_file = resolve_config(dir / "c.json", {});
  EXPECT_EQ(from_file.train.lr_init, 1e-3);
  EXPECT_EQ(from_file.train.batch, 4);
  EXPECT_EQ(from_file.train.lr_final, 5e-6);  // untouched default
  EXPECT_EQ(from_file.seed, 5u);
  const RunConfig overridden =
      resolve_config(dir / "c.json", {"train.batch=8", "paths.manifest=data/m.txt", "seed=9"});
  EXPECT_EQ(overridden.train.batch, 8);
  EXPECT_EQ(overridden.train.lr_init, 1e-3);
  EXPECT_EQ(overridden.paths.manifest, "data/m.txt");
  EXPECT_EQ(overridden.train_config().seed, 9u);
  EXPECT_EQ(overridden.distill_config().seed, 9u);
}

TEST(RunConfig, ListsAndNestedOverrides) {
  const RunConfig c = resolve_config({}, {"network.channels=[64,32,16,8,8]", "network.time_hidden_dim=64",
                                          "eval.tools.pesq=python3 x.py"});
  EXPECT_EQ(c.network.channels, (std::vector<int>{64, 32, 16, 8, 8}));
  EXPECT_EQ(c.eval.tools.at("pesq"), "python3 x.py");
}

TEST(RunConfig, RejectsUnknownKeysAndDuplicateSeeds) {
  EXPECT_THROW(resolve_config({}, {"train.learning_rate=1"}), InvariantError);
  EXPECT_THROW(resolve_config({}, {"nosuch=1"}), InvariantError);
  EXPECT_THROW(resolve_config({}, {"train.seed=1"}), InvariantError);
  EXPECT_THROW(resolve_config({}, {"batch"}), InvariantError);
  const auto dir = scratch("unknown");
  write(dir / "c.json", R"({"train": {"bogus": 1}})");
  EXPECT_THROW(resolve_config(dir / "c.json", {}), InvariantError);
  write(dir / "s.json", R"({"distill": {"seed": 1}})");
  EXPECT_THROW(resolve_config(dir / "s.json", {}), InvariantError);
  EXPECT_THROW(resolve_config(dir / "missing.json", {}), IngestionError);
}

TEST(RunConfig, ValidatesCrossModuleConsistency) {
  EXPECT_THROW(resolve_config({}, {"mel.hop_length=128"}), InvariantError);
  EXPECT_THROW(resolve_config({}, {"train.lr_final=1"}), InvariantError);
  EXPECT_THROW(resolve_config({}, {"network.channels=[64,32]"}), InvariantError);
}

TEST(RunConfig, SerializedConfigReplaysExactly) {
  const auto dir = scratch("replay");
  const RunConfig c = resolve_config({}, {"train.lr_init=0.00123456789", "seed=42", "classic_stft=true",
                                          "network.channels=[64,32,16,8,8]"});
  write_config(dir / "config.json", c);
  const RunConfig again = resolve_config(dir / "config.json", {});
  EXPECT_EQ(nlohmann::json(again), nlohmann::json(c));
  EXPECT_FALSE(nlohmann::json(c)["train"].contains("seed"));
}
