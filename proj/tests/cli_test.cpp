#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DU2_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("du2_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen"), 2);
  EXPECT_EQ(run("train --data /nonexistent --out " + scratch("t").string()), 2);
  EXPECT_EQ(run("gen --out " + scratch("g").string() + " --family spirals"), 2);
  EXPECT_EQ(run("train --data x --out y --fusion-mode late"), 2);

  const fs::path cfg = scratch("cfg.json");
  std::ofstream(cfg) << R"({"model": {"unknown_key": 1}})";
  EXPECT_EQ(run("gen --out " + scratch("g2").string() + " --config " + cfg.string()), 2);
}

TEST(Cli, GenerateTrainEvaluate) {
  const auto data = scratch("data");
  const auto run_dir = scratch("run");
  ASSERT_EQ(run("gen --out " + data.string() + " --train 2 --test 1"), 0);
  EXPECT_TRUE(fs::exists(data / "train" / "000000"));
  ASSERT_EQ(run("train --data " + data.string() + " --out " + run_dir.string() + " --steps 2"), 0);
  EXPECT_TRUE(fs::exists(run_dir / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(run_dir / "loss.csv"));
  ASSERT_EQ(run("eval --run " + run_dir.string() + " --data " + data.string()), 0);
  EXPECT_TRUE(fs::exists(run_dir / "metrics.csv"));
  // A checkpoint from another architecture is a usage error, not a crash.
  EXPECT_EQ(run("eval --run " + run_dir.string() + " --data " + data.string() + " --fusion-mode dc_only"), 2);
}

TEST(Cli, GradcheckReportsCorruptedOperator) {
  EXPECT_EQ(run("gradcheck --filter fit_affine"), 0);
  EXPECT_EQ(run("gradcheck --filter fit_affine --corrupt fit_affine"), 1);
}
