#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "seqorder/cli.hpp"
#include "test_util.hpp"

namespace seqorder {
namespace {

using testing::slurp;
using testing::TempDir;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "seqorder");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, HelpListsEverySubcommand) {
  const Outcome r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* name :
       {"ingest", "build-vocab", "sample", "pretrain", "eval-order", "probe-swap", "make-synthetic", "grad-check"})
    EXPECT_NE(r.out.find(name), std::string::npos) << name;
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const Outcome r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("pretrain"), std::string::npos);
}

TEST(Cli, PretrainWithoutStoreNamesTheFlag) {
  TempDir tmp;
  const Outcome r = run({"pretrain", "--vocab", "v.txt", "--steps", "1", "--seed", "0", "--out", (tmp / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--store"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, SeedIsMandatoryForSeededStages) {
  TempDir tmp;
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{"make-synthetic", "--out", (tmp / "s").string()},
        std::vector<std::string>{"sample", "--store", "s", "--vocab", "v", "--count", "3", "--output", "x"},
        std::vector<std::string>{"probe-swap", "--checkpoint", "c", "--dataset", "d", "--vocab", "v", "--out", "r"}}) {
    const Outcome r = run(args);
    EXPECT_EQ(r.code, 1) << args[0];
    EXPECT_NE(r.err.find("--seed"), std::string::npos) << r.err;
  }
}

TEST(Cli, RuntimeFailureExitsTwoWithOneLine) {
  TempDir tmp;
  const Outcome r = run({"ingest", "--input", (tmp / "missing.txt").string(), "--output", (tmp / "s").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: ingest: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("missing.txt"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, BadSchemeIsUsageError) {
  TempDir tmp;
  const Outcome r = run({"sample", "--store", "s", "--vocab", "v", "--count", "1", "--seed", "0", "--scheme", "pn4",
                         "--output", (tmp / "x").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("pn4"), std::string::npos);
}

TEST(Cli, GradCheckReportsError) {
  const Outcome r = run({"grad-check", "--layers", "1", "--hidden", "8"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("max_relative_error="), std::string::npos);
}

TEST(Cli, ConfigFileThenFlagsOverride) {
  TempDir tmp;
  testing::write_text(tmp / "run.cfg", "# synthetic knobs\ndocs=7\nsentences = 5\npair-train=0\npair_dev=0\nseed=4\n");
  const Outcome r = run({"make-synthetic", "--config", (tmp / "run.cfg").string(), "--docs", "9", "--heldout-docs", "0",
                         "--out", (tmp / "syn").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string resolved = slurp(tmp / "syn" / "config.resolved");
  EXPECT_NE(resolved.find("docs=9\n"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("sentences=5\n"), std::string::npos);
  EXPECT_NE(resolved.find("seed=4\n"), std::string::npos);
  EXPECT_NE(resolved.find("entities=400\n"), std::string::npos);
  EXPECT_NE(resolved.find("threads="), std::string::npos);
  EXPECT_EQ(parse_corpus_text(slurp(tmp / "syn" / "corpus.txt")).size(), 9u);
}

TEST(Cli, PhasesMustAgreeWithSteps) {
  TempDir tmp;
  const Outcome r = run({"pretrain", "--store", "s", "--vocab", "v", "--steps", "10", "--phases", "16:4,32:4", "--seed",
                         "0", "--out", (tmp / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--phases"), std::string::npos) << r.err;
}

// make-synthetic -> ingest -> build-vocab -> sample -> pretrain -> eval-order -> probe-swap
class Pipeline : public ::testing::Test {
 protected:
  TempDir tmp;

  std::string p(const std::string& name) const { return (tmp / name).string(); }

  void expect_ok(const std::vector<std::string>& args) {
    const Outcome r = run(args);
    ASSERT_EQ(r.code, 0) << args[0] << ": " << r.err;
  }

  void run_all(const std::string& out_dir) {
    expect_ok({"make-synthetic", "--docs", "20", "--sentences", "6", "--heldout-docs", "4", "--pair-docs", "8",
               "--pair-train", "64", "--pair-dev", "64", "--seed", "1", "--out", p("syn")});
    expect_ok({"ingest", "--input", p("syn") + "/corpus.txt", "--output", p("store")});
    expect_ok({"build-vocab", "--store", p("store"), "--size", "300", "--output", p("vocab.txt")});
    expect_ok({"ingest", "--input", p("syn") + "/heldout.txt", "--output", p("heldout")});
    expect_ok({"sample", "--store", p("heldout"), "--vocab", p("vocab.txt"), "--count", "30", "--max-len", "32",
               "--seed", "2", "--output", p("heldout.ex")});
    testing::write_text(tmp / "model.cfg", "layers=1\nheads=2\nhidden=16\nffn=32\n");
    expect_ok({"pretrain", "--store", p("store"), "--vocab", p("vocab.txt"), "--config", p("model.cfg"), "--phases",
               "16:4,32:4", "--metrics-every", "2", "--lr", "1e-3", "--seed", "3", "--out", p(out_dir)});
    expect_ok({"eval-order", "--checkpoint", p(out_dir) + "/model.ckpt", "--examples", p("heldout.ex"), "--out",
               p(out_dir) + "/order.json"});
    expect_ok({"probe-swap", "--checkpoint", p(out_dir) + "/model.ckpt", "--dataset", p("syn") + "/pairs.tsv", "--vocab",
               p("vocab.txt"), "--runs", "1", "--epochs", "1", "--seed", "4", "--out", p(out_dir) + "/report.json"});
  }
};

TEST_F(Pipeline, EndToEndProducesReports) {
  run_all("run");
  const ProbeReport swap = report_from_json(slurp(tmp / "run" / "report.json"));
  EXPECT_EQ(swap.scheme, "pn3");
  EXPECT_EQ(swap.n, 64u);
  EXPECT_TRUE(swap.delta);
  const ProbeReport order = report_from_json(slurp(tmp / "run" / "order.json"));
  EXPECT_EQ(order.n, 30u);
  EXPECT_TRUE(std::filesystem::exists(tmp / "run" / "phase-1.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(tmp / "run" / "report.json.config.resolved"));

  const std::string resolved = slurp(tmp / "run" / "config.resolved");
  EXPECT_NE(resolved.find("hidden=16\n"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("phases=16:4,32:4\n"), std::string::npos);
  EXPECT_NE(resolved.find("seed=3\n"), std::string::npos);
  const ModelParams params = load_model(tmp / "run" / "model.ckpt");
  EXPECT_EQ(params.config().hidden, 16u);
  EXPECT_EQ(params.config().max_position, 128u);

  std::istringstream metrics(slurp(tmp / "run" / "metrics.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(metrics, line);
  EXPECT_EQ(line, kMetricsHeader);
  while (std::getline(metrics, line)) ++rows;
  EXPECT_EQ(rows, 4u);
}

TEST_F(Pipeline, RerunIsByteIdentical) {
  run_all("a");
  run_all("b");
  for (const char* file : {"metrics.csv", "model.ckpt", "phase-1.ckpt", "report.json", "order.json"})
    EXPECT_EQ(slurp(tmp / "a" / file), slurp(tmp / "b" / file)) << file;
}

TEST_F(Pipeline, ResumeFromPhaseCheckpointMatches) {
  run_all("full");
  expect_ok({"pretrain", "--store", p("store"), "--vocab", p("vocab.txt"), "--config", p("model.cfg"), "--phases",
             "16:4,32:4", "--metrics-every", "2", "--lr", "1e-3", "--seed", "3", "--resume", p("full") + "/phase-1.ckpt",
             "--out", p("resumed")});
  EXPECT_EQ(slurp(tmp / "resumed" / "model.ckpt"), slurp(tmp / "full" / "model.ckpt"));
  const std::string full = slurp(tmp / "full" / "metrics.csv");
  const std::string resumed = slurp(tmp / "resumed" / "metrics.csv");
  // Rows after the resume point are the tail of the uninterrupted file.
  ASSERT_GT(resumed.size(), std::string(kMetricsHeader).size() + 1);
  const std::string tail = resumed.substr(std::string(kMetricsHeader).size() + 1);
  EXPECT_EQ(full.substr(full.size() - tail.size()), tail);
  EXPECT_EQ(tail.rfind("6,", 0), 0u) << tail;
}

TEST(CliBinary, ExitCodesFromTheExecutable) {
  const std::string bin = SEQORDER_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --help > /dev/null").c_str()), 0);
  const int status = std::system((bin + " pretrain > /dev/null 2>&1").c_str());
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 1);
}

}  // namespace
}  // namespace seqorder
