#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pts/config.hpp"

using namespace pts;

TEST(RunConfig, EmptyTextGivesDefaults) {
  const RunConfig cfg = parse_run_config("");
  const TrainConfig& t = cfg.train;
  EXPECT_EQ(t.model.encoder.xi, 0.1);
  EXPECT_EQ(t.model.prompt_length, 5u);
  EXPECT_EQ(t.model.kappa, 0.5);
  EXPECT_EQ(t.loss.alpha, 0.8);
  EXPECT_EQ(t.loss.gamma, 2.5);
  EXPECT_EQ(t.loss.epsilon, 0.12);
  EXPECT_EQ(t.loss.lambda1, 0.7);
  EXPECT_EQ(t.loss.lambda2, 0.3);
  EXPECT_EQ(t.lr, 2e-4);
  EXPECT_EQ(t.weight_decay, 0.05);
  EXPECT_EQ(t.t0_epochs, 10u);
  EXPECT_EQ(t.t_mult, 2u);
  EXPECT_EQ(t.epochs, 50u);
  EXPECT_EQ(t.batch_size, 32u);
  EXPECT_EQ(t.model.encoder.dims, (std::vector<std::size_t>{768, 512, 256}));
  EXPECT_EQ(t.model.plif.v_threshold, 1.0);
  EXPECT_EQ(t.model.plif.surrogate_steepness, 5.0);
  EXPECT_EQ(t.model.num_classes, 4u);
  EXPECT_TRUE(cfg.data.empty());
  EXPECT_TRUE(cfg.out.empty());
}

TEST(RunConfig, ParsesValuesCommentsAndWhitespace) {
  const RunConfig cfg = parse_run_config(
      "# a comment\n"
      "\n"
      "  model.kappa =  0.8  \r\n"
      "model.prompt_length=3\n"
      "encoder.dims = 64, 32,16\n"
      "model.bias_hidden = 8\n"
      "model.column_norm = abs_sum\n"
      "plif.smooth = true\n"
      "data = /tmp/x.ptsf\n");
  EXPECT_EQ(cfg.train.model.kappa, 0.8);
  EXPECT_EQ(cfg.train.model.prompt_length, 3u);
  EXPECT_EQ(cfg.train.model.encoder.dims, (std::vector<std::size_t>{64, 32, 16}));
  EXPECT_EQ(cfg.train.model.column_norm, ColumnNorm::kAbsSum);
  EXPECT_TRUE(cfg.train.model.plif.smooth);
  EXPECT_EQ(cfg.data, "/tmp/x.ptsf");
}

TEST(RunConfig, RejectsUnknownKeys) {
  try {
    parse_run_config("model.kapa = 0.5\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.kapa"), std::string::npos);
  }
}

TEST(RunConfig, RejectsDuplicateKeys) {
  EXPECT_THROW(parse_run_config("train.lr = 1e-3\ntrain.lr = 2e-3\n"), ConfigError);
}

TEST(RunConfig, RejectsMalformedValues) {
  for (const char* text : {"train.lr = fast\n", "train.lr = 1e-3x\n", "train.epochs = -5\n",
                           "train.epochs = 2.5\n", "plif.smooth = maybe\n",
                           "model.column_norm = l2\n", "encoder.dims = 64,,16\n", "train.lr\n"}) {
    EXPECT_THROW(parse_run_config(text), ConfigError) << text;
  }
}

TEST(RunConfig, ValidationFailuresAreConfigErrors) {
  for (const char* text : {"train.lr = 1e-7\n", "model.kappa = 0\n", "loss.epsilon = 1\n",
                           "model.prompt_length = 0\n", "train.batch_size = 0\n",
                           "encoder.xi = -1\n", "model.num_classes = 1\n"}) {
    EXPECT_THROW(parse_run_config(text), ConfigError) << text;
  }
  EXPECT_THROW(parse_run_config("train.lr = 1e-7\n"), std::invalid_argument);
}

TEST(RunConfig, DumpParsesBackToTheSameValues) {
  RunConfig cfg;
  cfg.train.lr = 1.0 / 3000.0;
  cfg.train.model.kappa = 0.1 + 0.2;
  cfg.train.model.encoder.dims = {40, 20, 12};
  cfg.train.model.bias_hidden = 6;
  cfg.train.model.column_norm = ColumnNorm::kAbsSum;
  cfg.train.seed = 1234567890123ull;
  cfg.out = "runs/a";
  const std::string text = dump_run_config(cfg);
  const RunConfig back = parse_run_config(text);
  for (const auto& k : config_keys()) {
    EXPECT_EQ(get_config_value(back, k.name), get_config_value(cfg, k.name)) << k.name;
  }
  EXPECT_EQ(back.train.lr, cfg.train.lr);
  EXPECT_EQ(back.train.model.kappa, cfg.train.model.kappa);
  EXPECT_EQ(dump_run_config(back), text);
}

TEST(RunConfig, SetAndGetByKey) {
  RunConfig cfg;
  set_config_value(cfg, "model.kappa", "0.7");
  EXPECT_EQ(cfg.train.model.kappa, 0.7);
  EXPECT_EQ(get_config_value(cfg, "model.kappa"), "0.7");
  set_config_value(cfg, "model.prompt_length", " 6 ");
  EXPECT_EQ(get_config_value(cfg, "model.prompt_length"), "6");
  EXPECT_THROW(set_config_value(cfg, "nope", "1"), ConfigError);
  EXPECT_THROW(get_config_value(cfg, "nope"), ConfigError);
}

TEST(RunConfig, KeysAreUniqueAndDocumented) {
  std::set<std::string> names;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(names.insert(k.name).second) << k.name;
    EXPECT_FALSE(k.description.empty()) << k.name;
  }
  for (const char* key : {"encoder.xi", "model.prompt_length", "model.kappa", "loss.alpha",
                          "loss.gamma", "loss.epsilon", "loss.lambda1", "loss.lambda2", "train.lr"}) {
    EXPECT_TRUE(names.count(key)) << key;
  }
}

TEST(RunConfig, LoadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "pts_test_config.cfg";
  std::ofstream(path) << "model.kappa = 0.6\n";
  EXPECT_EQ(load_run_config(path).train.model.kappa, 0.6);
  std::filesystem::remove(path);
  EXPECT_THROW(load_run_config(path), ConfigError);
}
