#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "thumbnet/dataio/loaders.hpp"
#include "thumbnet/dataio/ppm.hpp"
#include "thumbnet/dataio/synth.hpp"

namespace tn = thumbnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("thumbnet_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int code = -1;
  std::string out;
};

// Runs the installed CLI binary and captures exit code plus combined output.
RunResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "thumbnet_cli_run.log";
  const std::string cmd = std::string(THUMBNET_CLI_BIN) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream is(log);
  std::ostringstream buf;
  buf << is.rdbuf();
  r.out = buf.str();
  return r;
}

// One tiny shared dataset for every test in this binary.
const fs::path& data_dir() {
  static const fs::path dir = [] {
    const fs::path p = fresh_dir("data");
    tn::SynthOptions opts;
    opts.train_per_class = 24;
    opts.test_per_class = 8;
    opts.seed = 7;
    tn::write_synth_cifar_dir(p.string(), opts);
    return p;
  }();
  return dir;
}

std::string base_train_args(const fs::path& out, const std::string& extra) {
  return "train-teacher --data " + data_dir().string() +
         " --backbone resnet-mini --classes 10 --edge 32 --no-augment --out " +
         out.string() + " " + extra;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

// Field-wise comparison of two metrics CSVs: identical layout, numeric cells
// equal within tol.
void expect_metrics_close(const fs::path& a, const fs::path& b, double tol) {
  const std::vector<std::string> la = read_lines(a), lb = read_lines(b);
  ASSERT_EQ(la.size(), lb.size());
  ASSERT_GT(la.size(), 1u);
  EXPECT_EQ(la[0], lb[0]);
  for (std::size_t i = 1; i < la.size(); ++i) {
    std::stringstream sa(la[i]), sb(lb[i]);
    std::string ca, cb;
    while (std::getline(sa, ca, ',')) {
      ASSERT_TRUE(std::getline(sb, cb, ','));
      if (ca.empty() || (ca[0] >= 'a' && ca[0] <= 'z')) {
        EXPECT_EQ(ca, cb);
      } else {
        EXPECT_NEAR(std::stod(ca), std::stod(cb), tol) << "row " << i;
      }
    }
    EXPECT_FALSE(std::getline(sb, cb, ','));
  }
}

}  // namespace

TEST(CliUsage, HelpExitsCleanlyAndMissingArgumentsDoNot) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("train-teacher --help").code, 0);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("no-such-command").code, 2);
}

TEST(CliUsage, MissingDatasetPathNamesTheProblem) {
  const fs::path out = fresh_dir("usage_missing");
  RunResult r = run_cli("train-teacher --backbone resnet-mini --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("dataset path"), std::string::npos) << r.out;

  r = run_cli("train-teacher --data /no/such/dir --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/no/such/dir"), std::string::npos) << r.out;
}

TEST(CliUsage, BadFlagValuesExitWithUsageErrors) {
  const fs::path out = fresh_dir("usage_bad");
  EXPECT_EQ(run_cli(base_train_args(out, "--format yaml --epochs 1")).code, 2);
  RunResult r = run_cli("train-thumbnet --data " + data_dir().string() +
                        " --method q --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("method"), std::string::npos);
  EXPECT_EQ(run_cli("train-teacher --data " + data_dir().string() + " --epochs 1").code, 2)
      << "training without --out must be rejected";
}

TEST(CliUsage, DistillingMethodsRequireATeacherAndPlainOnesDoNot) {
  const fs::path out = fresh_dir("usage_teacher");
  const std::string common = "train-thumbnet --data " + data_dir().string() +
                             " --backbone resnet-mini --no-augment --factor 2 --epochs 1 " +
                             "--seed 3 --out " + out.string();
  RunResult r = run_cli(common + " --method d");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--teacher"), std::string::npos);
  EXPECT_EQ(run_cli(common + " --method b --tag plain").code, 0);
}

TEST(CliConfig, FileFlagsAndUnknownKeys) {
  const fs::path out = fresh_dir("config");
  const fs::path good = out / "good.json";
  std::ofstream(good) << R"({
    "dataset": {"path": ")" << data_dir().string() << R"("},
    "backbone": {"name": "resnet-mini", "classes": 10, "edge": 32},
    "training": {"epochs": 0, "augment": false},
    "seed": 5
  })";
  EXPECT_EQ(run_cli("train-teacher --config " + good.string() + " --out " + out.string() +
                    " --tag fromfile")
                .code,
            0);
  EXPECT_TRUE(fs::exists(out / "fromfile_final.tnck"));

  const fs::path bad = out / "bad.json";
  std::ofstream(bad) << R"({"datset": {"path": "x"}})";
  RunResult r = run_cli("train-teacher --config " + bad.string() + " --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("datset"), std::string::npos);

  const fs::path broken = out / "broken.json";
  std::ofstream(broken) << "{not json";
  EXPECT_EQ(run_cli("train-teacher --config " + broken.string()).code, 2);
}

TEST(CliData, CorruptDatasetFileIsADataError) {
  const fs::path dir = fresh_dir("corrupt");
  for (int i = 1; i <= 5; ++i)
    std::ofstream(dir / ("data_batch_" + std::to_string(i) + ".bin")) << "short";
  std::ofstream(dir / "test_batch.bin") << "short";
  RunResult r = run_cli("train-teacher --data " + dir.string() + " --epochs 1 --out " +
                        (dir / "out").string());
  EXPECT_EQ(r.code, 3);
}

TEST(CliTrain, ZeroEpochsWritesTheInitializationCheckpoint) {
  const fs::path out = fresh_dir("zero_epochs");
  RunResult r = run_cli(base_train_args(out, "--epochs 0 --seed 11 --tag init"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(out / "init_final.tnck"));
  const std::vector<std::string> lines = read_lines(out / "init_metrics.csv");
  ASSERT_EQ(lines.size(), 1u) << "zero-epoch run should log the header only";
}

TEST(CliTrain, IdenticalSeedsReproduceTheMetricsLog) {
  const fs::path a = fresh_dir("repro_a"), b = fresh_dir("repro_b");
  const std::string teach = base_train_args(a, "--epochs 2 --seed 21 --tag t");
  ASSERT_EQ(run_cli(teach).code, 0);
  const std::string common =
      "train-thumbnet --data " + data_dir().string() +
      " --backbone resnet-mini --no-augment --factor 2 --method e --epochs 2 --seed 21 " +
      "--teacher " + (a / "t_final.tnck").string();
  ASSERT_EQ(run_cli(common + " --out " + (a / "r1").string()).code, 0);
  ASSERT_EQ(run_cli(common + " --out " + (b / "r2").string()).code, 0);
  expect_metrics_close(a / "r1" / "run_metrics.csv", b / "r2" / "run_metrics.csv", 1e-6);
}

TEST(CliTrain, DivergenceExitsWithANumericFault) {
  const fs::path out = fresh_dir("diverge");
  RunResult r = run_cli(base_train_args(out, "--epochs 8 --seed 2 --lr 1e30 --tag boom"));
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("diverged"), std::string::npos) << r.out;
}

TEST(CliEval, RandomInitialClassifierSitsAtChance) {
  const fs::path out = fresh_dir("eval_chance");
  ASSERT_EQ(run_cli(base_train_args(out, "--epochs 0 --seed 31 --tag raw")).code, 0);
  RunResult r = run_cli("eval --data " + data_dir().string() + " --split test --checkpoint " +
                        (out / "raw_final.tnck").string() + " --format csv");
  ASSERT_EQ(r.code, 0) << r.out;
  // csv: header then one row: top1_error, top5_error, mean_loss, samples.
  std::stringstream body(r.out.substr(r.out.find('\n') + 1));
  std::string c1, c5, loss, n;
  std::getline(body, c1, ',');
  std::getline(body, c5, ',');
  std::getline(body, loss, ',');
  std::getline(body, n, ',');
  EXPECT_NEAR(std::stod(c1), 0.9, 0.05);
  EXPECT_NEAR(std::stod(c5), 0.5, 0.08);
  EXPECT_EQ(std::stoi(n), 80);
}

TEST(CliEval, MissingAndForeignCheckpointsFail) {
  EXPECT_EQ(run_cli("eval --data " + data_dir().string() + " --checkpoint /no/file.tnck").code,
            3);
  const fs::path junk = fresh_dir("eval_junk") / "junk.tnck";
  std::ofstream(junk, std::ios::binary) << "not a checkpoint at all";
  EXPECT_EQ(run_cli("eval --data " + data_dir().string() + " --checkpoint " + junk.string())
                .code,
            3);
}

TEST(CliAnalyze, TextAndCsvReportsCarryTheSameRatio) {
  RunResult text = run_cli("analyze --backbone vgg-mini --classes 10 --edge 32 --factor 2");
  ASSERT_EQ(text.code, 0);
  EXPECT_NE(text.out.find("reduction ratios"), std::string::npos);

  RunResult csv = run_cli(
      "analyze --backbone vgg-mini --classes 10 --edge 32 --factor 2 --format csv");
  ASSERT_EQ(csv.code, 0);
  EXPECT_NE(csv.out.find("ratio,"), std::string::npos);
  EXPECT_EQ(run_cli("analyze --backbone no-such-net --factor 2").code, 2);
}

TEST(CliDownscale, WritesOnePpmPerRequestedImage) {
  const fs::path out = fresh_dir("downscale");
  ASSERT_EQ(run_cli(base_train_args(out, "--epochs 1 --seed 41 --tag t")).code, 0);
  const std::string bundle_run =
      "train-thumbnet --data " + data_dir().string() +
      " --backbone resnet-mini --no-augment --factor 2 --method c --epochs 1 --seed 41 " +
      "--teacher " + (out / "t_final.tnck").string() + " --out " + out.string() + " --tag s";
  ASSERT_EQ(run_cli(bundle_run).code, 0);

  const fs::path ppm_dir = out / "thumbs";
  RunResult r = run_cli("downscale --data " + data_dir().string() +
                        " --split test --checkpoint " + (out / "s_final.tnck").string() +
                        " --count 5 --out " + ppm_dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t ppms = 0;
  for (const auto& entry : fs::directory_iterator(ppm_dir))
    if (entry.path().extension() == ".ppm") ++ppms;
  EXPECT_EQ(ppms, 5u);

  // A classifier checkpoint has no downscaler to export with.
  EXPECT_EQ(run_cli("downscale --data " + data_dir().string() + " --checkpoint " +
                    (out / "t_final.tnck").string() + " --count 2 --out " + ppm_dir.string())
                .code,
            2);
}
