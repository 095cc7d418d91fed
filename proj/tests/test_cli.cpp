#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pts/checkpoint.hpp"
#include "pts/cli.hpp"
#include "pts/config.hpp"
#include "pts/dataset.hpp"

using namespace pts;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pts_snn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("pts_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  // Two-class synthetic data at D=16 with three folds.
  std::string small_data() {
    const std::string path = (root_ / "data.ptsf").string();
    const CliRun r = cli({"gen-synthetic", "--classes", "2", "--per-class", "6", "--t", "5", "--d", "16",
                       "--seed", "7", "--folds", "3", "--out", path});
    EXPECT_EQ(r.code, 0) << r.err;
    return path;
  }

  std::string small_config(const std::string& extra = "train.epochs = 2\n") {
    const std::string path = (root_ / "small.cfg").string();
    std::ofstream(path) << "encoder.dims = 16,12,8\n"
                           "model.bias_hidden = 4\n"
                           "model.backend_hidden = 8\n"
                           "model.num_classes = 2\n"
                           "model.prompt_length = 2\n"
                           "train.batch_size = 4\n"
                        << extra;
    return path;
  }

  fs::path root_;
};

}  // namespace

TEST_F(CliTest, GradcheckListsEveryStageOnce) {
  const CliRun r = cli({"gradcheck", "--dims", "small"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  for (const char* stage : {"input", "soft_saturate", "encoder.block1", "encoder.block2", "prompts",
                            "ssla", "bias_generator", "backend"}) {
    const std::string row = std::string("\n") + stage + ",";
    const auto first = r.out.find(row);
    ASSERT_NE(first, std::string::npos) << stage;
    EXPECT_EQ(r.out.find(row, first + 1), std::string::npos) << stage;
  }
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, GradcheckNamesTheFaultyStage) {
  const CliRun r = cli({"gradcheck", "--dims", "small", "--inject-fault", "bias_generator"});
  EXPECT_EQ(r.code, kExitNumeric);
  EXPECT_NE(r.err.find("bias_generator"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(cli({"gradcheck", "--inject-fault", "decoder"}).code, kExitConfig);
  EXPECT_EQ(cli({"gradcheck", "--dims", "huge"}).code, kExitConfig);
}

TEST_F(CliTest, MissingDataIsExitTwoAndWritesNothing) {
  const fs::path out = root_ / "run";
  const CliRun r = cli({"train", "--data", (root_ / "absent.ptsf").string(), "--out", out.string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("absent.ptsf"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, CorruptDataIsExitTwo) {
  const std::string data = small_data();
  std::fstream(data, std::ios::in | std::ios::out | std::ios::binary).write("XXXX", 4);
  EXPECT_EQ(cli({"train", "--config", small_config(), "--data", data, "--out", (root_ / "o").string()}).code,
            kExitData);
}

TEST_F(CliTest, ConfigErrorsAreExitOne) {
  const std::string data = small_data();
  const fs::path bad = root_ / "bad.cfg";
  std::ofstream(bad) << "model.kapa = 0.5\n";
  const CliRun r = cli({"train", "--config", bad.string(), "--data", data, "--out", (root_ / "o").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.kapa"), std::string::npos);
  EXPECT_EQ(cli({"train", "--config", (root_ / "none.cfg").string(), "--data", data}).code, kExitConfig);
  EXPECT_EQ(cli({"train", "--config", small_config(), "--set", "train.lr", "--data", data}).code,
            kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({}).code, kExitConfig);
}

TEST_F(CliTest, MismatchedDataWidthIsExitTwo) {
  const std::string data = small_data();
  EXPECT_EQ(cli({"train", "--data", data, "--out", (root_ / "o").string()}).code, kExitData);
}

TEST_F(CliTest, EmptyConfigRunsWithDefaults) {
  const std::string data = (root_ / "wide.ptsf").string();
  ASSERT_EQ(cli({"gen-synthetic", "--classes", "4", "--per-class", "2", "--t", "3", "--d", "768",
                 "--folds", "2", "--out", data})
                .code,
            0);
  const fs::path cfg = root_ / "empty.cfg";
  std::ofstream(cfg).close();
  const fs::path out = root_ / "run";
  const CliRun r = cli({"train", "--config", cfg.string(), "--data", data, "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const RunConfig resolved = load_run_config(out / "config.resolved.txt");
  const RunConfig defaults = parse_run_config("");
  EXPECT_EQ(resolved.train.model.encoder.xi, 0.1);
  EXPECT_EQ(resolved.train.model.prompt_length, 5u);
  EXPECT_EQ(resolved.train.model.kappa, 0.5);
  EXPECT_EQ(resolved.train.loss.alpha, 0.8);
  EXPECT_EQ(resolved.train.loss.gamma, 2.5);
  EXPECT_EQ(resolved.train.loss.epsilon, 0.12);
  EXPECT_EQ(resolved.train.loss.lambda1, 0.7);
  EXPECT_EQ(resolved.train.loss.lambda2, 0.3);
  EXPECT_EQ(resolved.train.lr, 2e-4);
  for (const auto& k : config_keys()) {
    if (k.name == "data" || k.name == "out") continue;
    EXPECT_EQ(get_config_value(resolved, k.name), get_config_value(defaults, k.name)) << k.name;
  }
  EXPECT_EQ(line_count(slurp(out / "metrics.csv")), 1u + 50 * 2);
  for (const char* f : {"checkpoint.ptsc", "loss_curve.csv", "summary.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
}

TEST_F(CliTest, SameSeedGivesIdenticalMetrics) {
  const std::string data = small_data(), cfg = small_config();
  const fs::path a = root_ / "a", b = root_ / "b";
  ASSERT_EQ(cli({"train", "--config", cfg, "--data", data, "--out", a.string(), "--seed", "5"}).code, 0);
  ASSERT_EQ(cli({"train", "--config", cfg, "--data", data, "--out", b.string(), "--seed", "5"}).code, 0);
  const std::string metrics = slurp(a / "metrics.csv");
  EXPECT_EQ(metrics, slurp(b / "metrics.csv"));
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')),
            "fold,epoch,split,wa,ua,loss");
  EXPECT_EQ(line_count(metrics), 1u + 2 * 2);  // train and eval rows per epoch
  EXPECT_EQ(get_config_value(load_run_config(a / "config.resolved.txt"), "train.seed"), "5");
}

TEST_F(CliTest, DivergentTrainingIsExitThree) {
  const std::string data = small_data();
  const CliRun r = cli({"train", "--config", small_config("train.epochs = 2\ntrain.lr = 1e300\ntrain.grad_clip = 0\n"),
                     "--data", data, "--out", (root_ / "o").string()});
  EXPECT_EQ(r.code, kExitNumeric) << r.err;
}

TEST_F(CliTest, EvalAndEnergyReadACheckpoint) {
  const std::string data = small_data();
  const fs::path run = root_ / "run";
  ASSERT_EQ(cli({"train", "--config", small_config(), "--data", data, "--out", run.string()}).code, 0);
  const std::string ck = (run / "checkpoint.ptsc").string();

  const CliRun ev = cli({"eval", "--checkpoint", ck, "--data", data, "--out", (root_ / "ev").string()});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  EXPECT_NE(ev.out.find("\"wa\""), std::string::npos);
  EXPECT_TRUE(fs::exists(root_ / "ev" / "eval.json"));

  const fs::path en = root_ / "energy";
  const CliRun e = cli({"energy", "--checkpoint", ck, "--data", data, "--out", en.string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_NE(e.out.find("\"total_mj\""), std::string::npos);
  EXPECT_NE(e.out.find("# stage encoder.block1"), std::string::npos);
  const std::string csv = slurp(en / "energy.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,kind,macs,acs,spikes,rate");
  EXPECT_TRUE(fs::exists(en / "firing_rates.csv"));
  EXPECT_TRUE(fs::exists(en / "energy.json"));

  EXPECT_EQ(cli({"eval", "--checkpoint", (root_ / "none.ptsc").string(), "--data", data}).code, kExitData);
}

TEST_F(CliTest, CrossValidationOverDatasetFolds) {
  const std::string data = small_data();
  const fs::path out = root_ / "cv";
  const CliRun r = cli({"cv", "--config", small_config(), "--data", data, "--out", out.string(),
                     "--folds", "auto"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string summary = slurp(out / "cv_summary.csv");
  EXPECT_EQ(line_count(summary), 5u);  // header, three folds, mean
  EXPECT_NE(summary.find("\nmean,"), std::string::npos);
  EXPECT_EQ(line_count(slurp(out / "metrics.csv")), 1u + 3 * 2 * 2);
  EXPECT_EQ(cli({"cv", "--config", small_config(), "--data", data, "--out", out.string(), "--folds", "1"}).code,
            kExitConfig);
}

TEST_F(CliTest, SweepsKappaAndPromptLength) {
  const std::string data = small_data(), cfg = small_config("train.epochs = 1\n");
  const CliRun kappa = cli({"sweep", "--config", cfg, "--data", data, "--out", (root_ / "k").string(),
                         "--param", "kappa", "--grid", "0.4:1.0:0.1"});
  ASSERT_EQ(kappa.code, kExitOk) << kappa.err;
  const std::string k = slurp(root_ / "k" / "sweep.csv");
  EXPECT_EQ(line_count(k), 8u);
  EXPECT_NE(k.find("\nkappa,1,"), std::string::npos) << k;
  const CliRun lp = cli({"sweep", "--config", cfg, "--data", data, "--out", (root_ / "lp").string(),
                      "--param", "prompt_length", "--grid", "2:6:1"});
  ASSERT_EQ(lp.code, kExitOk) << lp.err;
  EXPECT_EQ(line_count(slurp(root_ / "lp" / "sweep.csv")), 6u);
  EXPECT_EQ(cli({"sweep", "--config", cfg, "--data", data, "--out", (root_ / "x").string(), "--param",
                 "xi", "--grid", "1,2"})
                .code,
            kExitConfig);
  EXPECT_EQ(cli({"sweep", "--config", cfg, "--data", data, "--out", (root_ / "x").string(), "--param",
                 "kappa", "--grid", "1:0:0.1"})
                .code,
            kExitConfig);
}

TEST_F(CliTest, ConvertPacksInterchangeFiles) {
  std::vector<std::string> args{"convert"};
  for (int i = 0; i < 4; ++i) {
    const fs::path p = root_ / ("utt" + std::to_string(i) + ".txt");
    std::ofstream(p) << (i % 2) << " 2 3\n1 2 3\n4 5 " << i << "\n";
    args.push_back(p.string());
  }
  const std::string out = (root_ / "packed.ptsf").string();
  args.insert(args.end(), {"--classes", "2", "--folds", "2", "--out", out});
  const CliRun r = cli(args);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Dataset ds = read_dataset(out);
  ASSERT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.samples[3].id, "utt3");
  EXPECT_EQ(ds.samples[3].label, 1u);
  EXPECT_EQ(ds.samples[3].fold, 1u);
  EXPECT_EQ(ds.samples[3].values.back(), 3.0);
  std::ofstream(root_ / "utt0.txt") << "5 2 3\n1 2 3\n4 5 6\n";
  args.back() = (root_ / "bad.ptsf").string();
  EXPECT_EQ(cli(args).code, kExitData);
}

TEST_F(CliTest, BinaryReportsExitCodes) {
  const char* bin = std::getenv("PTS_SNN_BIN");
  if (bin == nullptr) GTEST_SKIP() << "PTS_SNN_BIN not set";
  const std::string quiet = " >/dev/null 2>&1";
  int status = std::system((std::string(bin) + " --help" + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(status), 0);
  status = std::system((std::string(bin) + " train --data " + (root_ / "absent.ptsf").string() +
                        " --out " + (root_ / "o").string() + quiet)
                           .c_str());
  EXPECT_EQ(WEXITSTATUS(status), kExitData);
  status = std::system((std::string(bin) + " gradcheck --inject-fault ssla" + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(status), kExitNumeric);
}
