#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "can/cli.hpp"
#include "can/data.hpp"

using namespace can;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::size_t columns(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

// Shared synthetic data and one trained run, built once for the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::path(::testing::TempDir()) / "can_cli";
    fs::remove_all(root_);
    const auto r = run({"synth", "--sensors", "3", "--length", "240", "--seed", "5", "--spikes", "2", "--drifts", "1",
                        "--out", (root_ / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = run(train_args(root_ / "run"));
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static std::vector<std::string> train_args(const fs::path& out) {
    return {"train", "--data", (root_ / "data" / "train.csv").string(), "--out", out.string(), "--seed", "3",
            "--window", "3", "--layers", "1", "--heads", "2", "--d-model", "8", "--epochs", "3"};
  }
  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST(CliUsage, HelpAndMissingCommand) {
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("synth"), std::string::npos);
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"synth", "--sensors", "3"}).code, kExitUsage);
}

TEST_F(Cli, SynthWritesThreeFiles) {
  for (const char* f : {"train.csv", "test.csv", "truth-graph.json"}) EXPECT_TRUE(fs::exists(root_ / "data" / f)) << f;
  const auto test = load_csv(root_ / "data" / "test.csv");
  EXPECT_EQ(test.sensors(), 3u);
  EXPECT_EQ(test.length(), 240u);
  EXPECT_GT(std::accumulate(test.labels.begin(), test.labels.end(), 0), 0);
  const auto graph = nlohmann::json::parse(read_bytes(root_ / "data" / "truth-graph.json"));
  EXPECT_EQ(graph["sensor_cluster"].size(), 3u);
}

TEST_F(Cli, SynthWithoutAnomaliesHasNoLabels) {
  const auto dir = root_ / "clean";
  ASSERT_EQ(run({"synth", "--sensors", "2", "--length", "100", "--seed", "1", "--spikes", "0", "--out", dir.string()}).code, 0);
  const auto test = load_csv(dir / "test.csv");
  EXPECT_EQ(std::accumulate(test.labels.begin(), test.labels.end(), 0), 0);
}

TEST_F(Cli, TrainWritesCheckpointLogAndSummary) {
  const auto dir = root_ / "run";
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  const auto log = lines(read_bytes(dir / "train.log"));
  ASSERT_FALSE(log.empty());
  const auto first = nlohmann::json::parse(log.front());
  for (const char* k : {"epoch", "train_loss", "val_loss", "phi", "lr"}) EXPECT_TRUE(first.contains(k)) << k;
  const auto summary = nlohmann::json::parse(read_bytes(dir / "summary.json"));
  EXPECT_GT(summary["parameter_count"].get<int>(), 0);
  EXPECT_GE(summary["epochs_run"].get<int>(), 1);
}

TEST_F(Cli, TrainEchoesResolvedConfig) {
  const auto r = run(train_args(root_ / "echo"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("window = 3"), std::string::npos);
  EXPECT_NE(r.out.find("seed = 3"), std::string::npos);
  EXPECT_NE(r.out.find("top_k = 10"), std::string::npos);
}

TEST_F(Cli, ConfigFileThenFlagsThenSet) {
  const auto cfg = root_ / "can.cfg";
  std::ofstream(cfg) << "# run\nwindow = 4\nlayers = 1\nheads = 2\nd_model = 8\nmax_epochs = 1\nseed = 9\nbeta = 0.5\n";
  auto args = std::vector<std::string>{"train", "--data", (root_ / "data" / "train.csv").string(), "--config",
                                       cfg.string(), "--out", (root_ / "cfg_run").string(), "--window", "2",
                                       "--set", "beta=0.25"};
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("window = 2"), std::string::npos);
  EXPECT_NE(r.out.find("seed = 9"), std::string::npos);
  EXPECT_NE(r.out.find("beta = 0.25"), std::string::npos);
}

TEST_F(Cli, TrainErrors) {
  const auto missing = root_ / "nope.csv";
  const auto r = run({"train", "--data", missing.string(), "--out", (root_ / "x").string(), "--seed", "1"});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find(missing.string()), std::string::npos);

  const auto data = (root_ / "data" / "train.csv").string();
  EXPECT_EQ(run({"train", "--data", data, "--out", (root_ / "x").string()}).code, kExitUsage);
  const auto unknown = run({"train", "--data", data, "--out", (root_ / "x").string(), "--seed", "1", "--set", "windw=3"});
  EXPECT_EQ(unknown.code, kExitUsage);
  EXPECT_NE(unknown.err.find("windw"), std::string::npos);
  EXPECT_EQ(run({"train", "--data", data, "--out", (root_ / "x").string(), "--seed", "1", "--d-model", "30"}).code,
            kExitUsage);
  EXPECT_EQ(run({"train", "--data", data, "--out", (root_ / "x").string(), "--seed", "1", "--ablation", "no-brain"}).code,
            kExitUsage);
  EXPECT_EQ(run({"train", "--data", data, "--out", (root_ / "x").string(), "--seed", "1", "--window", "1000"}).code,
            kExitData);
}

TEST_F(Cli, DivergenceExitCode) {
  auto args = train_args(root_ / "diverge");
  args.back() = "20";
  args.insert(args.end(), {"--lr", "1e30"});
  const auto r = run(args);
  EXPECT_EQ(r.code, kExitDiverged) << r.err;
}

TEST_F(Cli, EvaluateWritesReportAndScores) {
  const auto out = root_ / "eval";
  const auto r = run({"evaluate", "--checkpoint", (root_ / "run" / "model.ckpt").string(), "--data",
                      (root_ / "data" / "test.csv").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("f1="), std::string::npos);
  const auto report = nlohmann::json::parse(read_bytes(out / "report.json"));
  const double f1 = report["f1"];
  EXPECT_GE(f1, 0.0);
  EXPECT_LE(f1, 1.0);
  EXPECT_EQ(report["first_timestamp"], 3);
  EXPECT_EQ(report["per_timestamp"].size(), 237u);
  const auto csv = lines(read_bytes(out / "scores.csv"));
  EXPECT_EQ(csv.size(), 238u);
  EXPECT_EQ(csv.front(), "t,score,label");
}

TEST_F(Cli, EvaluateVariants) {
  const auto ckpt = (root_ / "run" / "model.ckpt").string();
  const auto test = (root_ / "data" / "test.csv").string();
  const auto train = (root_ / "data" / "train.csv").string();
  EXPECT_EQ(run({"evaluate", "--checkpoint", ckpt, "--data", test, "--out", (root_ / "e1").string(), "--can-plus",
                 "--k-s", "3"})
                .code,
            0);
  const auto report = nlohmann::json::parse(read_bytes(root_ / "e1" / "report.json"));
  EXPECT_EQ(report["can_plus"], true);
  EXPECT_EQ(report["k_s"], 3);
  EXPECT_EQ(run({"evaluate", "--checkpoint", ckpt, "--data", test, "--out", (root_ / "e2").string(), "--calibration",
                 "train", "--train-data", train})
                .code,
            0);
  EXPECT_EQ(run({"evaluate", "--checkpoint", ckpt, "--data", test, "--out", (root_ / "e3").string(), "--calibration",
                 "train"})
                .code,
            kExitUsage);
  EXPECT_EQ(run({"evaluate", "--checkpoint", (root_ / "missing.ckpt").string(), "--data", test, "--out",
                 (root_ / "e4").string()})
                .code,
            kExitData);
  const auto bogus = root_ / "bogus.ckpt";
  std::ofstream(bogus) << "not a checkpoint";
  EXPECT_EQ(run({"evaluate", "--checkpoint", bogus.string(), "--data", test, "--out", (root_ / "e5").string()}).code,
            kExitData);
}

TEST_F(Cli, ExportEmbeddings) {
  const auto r = run({"export-embeddings", "--checkpoint", (root_ / "run" / "model.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].rfind("sensor_id,e_0,", 0), 0u);
  for (const auto& row : rows) EXPECT_EQ(columns(row), 11u);
  EXPECT_EQ(rows[1].rfind("s0,", 0), 0u);
  const auto file = root_ / "emb.csv";
  ASSERT_EQ(run({"export-embeddings", "--checkpoint", (root_ / "run" / "model.ckpt").string(), "--out", file.string()}).code,
            0);
  EXPECT_EQ(read_bytes(file), r.out);
}

TEST_F(Cli, SameSeedGivesIdenticalBytes) {
  const auto a = root_ / "det_a", b = root_ / "det_b";
  ASSERT_EQ(run(train_args(a)).code, 0);
  ASSERT_EQ(run(train_args(b)).code, 0);
  EXPECT_EQ(read_bytes(a / "model.ckpt"), read_bytes(b / "model.ckpt"));
  EXPECT_EQ(read_bytes(a / "train.log"), read_bytes(b / "train.log"));
  const auto test = (root_ / "data" / "test.csv").string();
  ASSERT_EQ(run({"evaluate", "--checkpoint", (a / "model.ckpt").string(), "--data", test, "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"evaluate", "--checkpoint", (b / "model.ckpt").string(), "--data", test, "--out", b.string()}).code, 0);
  EXPECT_EQ(read_bytes(a / "report.json"), read_bytes(b / "report.json"));
  EXPECT_EQ(read_bytes(a / "scores.csv"), read_bytes(b / "scores.csv"));
}
