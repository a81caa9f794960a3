#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "test_util.hpp"

using namespace ctflow;
using ctflow::testing::TempDir;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(CTFLOW_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture(const std::string& args) {
  const std::string cmd = std::string(CTFLOW_CLI) + " " + args + " 2>&1";
  std::string out;
  if (FILE* p = ::popen(cmd.c_str(), "r")) {
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    ::pclose(p);
  }
  return out;
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

const char* kPipeline = R"(
pipeline: {name: cli}
seed: 1
model: {id: LogisticRegression, config: {num_features: 8, num_classes: 2}}
trigger: {id: DataAmountTrigger, num_samples: NUM}
training: {batch_size: 32, epochs_per_trigger: 1, learning_rate: 0.05}
evaluation:
  intervals: {kind: tumbling, length: 100}
  metrics: [accuracy]
)";

std::string pipeline(std::size_t n) {
  std::string s = kPipeline;
  s.replace(s.find("NUM"), 3, std::to_string(n));
  return s;
}

}  // namespace

TEST(Cli, ConfigValidationExitsOneWithErrorList) {
  TempDir dir("cli_cfg");
  write(dir / "bad.yaml", "training: {selection_strategy: {presampling_ratio: 1.5}}\n");
  EXPECT_EQ(cli("config " + (dir / "bad.yaml").string()), 1);
  const auto out = capture("config " + (dir / "bad.yaml").string());
  EXPECT_NE(out.find("training.selection_strategy.presampling_ratio"), std::string::npos) << out;
  write(dir / "good.yaml", "seed: 2\n");
  EXPECT_EQ(cli("config " + (dir / "good.yaml").string()), 0);
}

TEST(Cli, RunReportCheckAndNoTriggers) {
  TempDir dir("cli_run");
  ASSERT_EQ(cli("generate gaussian --count 1000 --out " + (dir / "data").string()), 0);
  const auto manifest = (dir / "data" / "stream.json").string();
  write(dir / "p.yaml", pipeline(200));
  ASSERT_EQ(cli("run --config " + (dir / "p.yaml").string() + " --dataset " + manifest + " --out " + (dir / "r").string()), 0);
  EXPECT_EQ(cli("report check " + (dir / "r").string()), 0);
  const auto rows = detail::parse_csv(detail::read_text(dir / "r" / "matrix_accuracy.csv"));
  EXPECT_EQ(rows.size(), 5u);  // 800 training samples / 200 -> 4 models

  // n = dataset size + 1 never triggers
  write(dir / "none.yaml", pipeline(1001));
  EXPECT_EQ(cli("run --config " + (dir / "none.yaml").string() + " --dataset " + manifest + " --out " + (dir / "n").string()), 3);
  EXPECT_EQ(detail::read_json(dir / "n" / "run.json")["status"], "no_triggers");
  EXPECT_FALSE(std::filesystem::exists(dir / "n" / "matrix_accuracy.csv"));

  // a missing dataset is a runtime error
  EXPECT_EQ(cli("run --config " + (dir / "p.yaml").string() + " --dataset /nonexistent.json --out " + (dir / "x").string()), 2);
  EXPECT_EQ(cli("report check " + (dir / "x").string()), 1);
}

TEST(Cli, RegisterAndUsageErrors) {
  TempDir dir("cli_reg");
  std::mt19937_64 rng(1);
  const auto x = ctflow::testing::f32_matrix(4, 2, rng);
  const std::vector<std::int64_t> y{0, 1, 0, 1};
  ctflow::testing::write_rows(dir / "a.mdsf", x, y);
  const auto manifest = (dir / "ds.json").string();
  EXPECT_EQ(cli("register " + (dir / "a.mdsf").string() + " --manifest " + manifest), 0);
  SampleStore store;
  store.load_manifest(manifest);
  EXPECT_EQ(store.size(), 4u);
  // registering the same file again is rejected
  EXPECT_NE(cli("register " + (dir / "a.mdsf").string() + " --manifest " + manifest), 0);
  EXPECT_EQ(cli("no-such-verb"), 1);
}
