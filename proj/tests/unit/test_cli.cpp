#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string& dir() {
  static const std::string d = [] {
    const std::string p = ::testing::TempDir() + "dguide_cli_" + std::to_string(::getpid());
    fs::create_directories(p);
    std::ofstream(p + "/tiny.json") << R"({"diffusion_steps": 10, "beta_end": 0.2, "base_samples": 40,
      "paired_samples": 30, "fake_samples": 20, "eval_samples": 25,
      "base_training": {"max_steps": 2, "batch_size": 16},
      "disc_training": {"max_steps": 2, "batch_size": 16}})";
    return p;
  }();
  return d;
}

int run(const std::string& args) {
  const std::string cmd = std::string(DGUIDE_CLI) + " " + args + " > " + dir() + "/last.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cfg() { return " --config " + dir() + "/tiny.json"; }

std::string read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UsageAndConfigErrorsExitTwo) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("train-base"), 2);
  EXPECT_EQ(run("make-dataset --kind nope --run-dir " + dir() + "/bad"), 2);
  std::ofstream(dir() + "/typo.json") << R"({"sed": 3})";
  EXPECT_EQ(run("make-dataset --kind base --config " + dir() + "/typo.json --run-dir " + dir() + "/bad"), 2);
  EXPECT_EQ(run("reproduce-table1 --setting mixed" + cfg() + " --run-dir " + dir() + "/bad"), 2);
}

TEST(Cli, MissingInputsExitThree) {
  EXPECT_EQ(run("train-base --data " + dir() + "/absent.csv --run-dir " + dir() + "/m"), 3);
  EXPECT_EQ(run("eval --samples " + dir() + "/absent.csv --target ind --run-dir " + dir() + "/m"), 3);
  EXPECT_EQ(run("make-dataset --kind base --config " + dir() + "/absent.json --run-dir " + dir() + "/m"), 3);
}

TEST(Cli, StagedPipelineAndChecksumGuard) {
  const std::string d = dir();
  ASSERT_EQ(run("make-dataset --kind base" + cfg() + " --run-dir " + d + "/data"), 0) << read(d + "/last.log");
  ASSERT_EQ(run("make-dataset --kind ind --role paired" + cfg() + " --run-dir " + d + "/data"), 0);
  ASSERT_TRUE(fs::exists(d + "/data/base.csv"));
  ASSERT_TRUE(fs::exists(d + "/data/paired_ind.csv"));
  ASSERT_EQ(run("train-base --data " + d + "/data/base.csv" + cfg() + " --run-dir " + d + "/base"), 0)
      << read(d + "/last.log");
  const std::string base = d + "/base/base.ckpt";
  ASSERT_EQ(run("gen-fake-pool --base-x " + base + cfg() + " --run-dir " + d + "/pool"), 0);
  ASSERT_EQ(run("train-guidance --base-x " + base + " --paired " + d + "/data/paired_ind.csv --fake-pool " + d +
                "/pool/fake_pool.csv --loss all --setting ind" + cfg() + " --run-dir " + d + "/disc"),
            0)
      << read(d + "/last.log");
  ASSERT_EQ(run("sample --mode guided --base-x " + base + " --disc " + d + "/disc/disc.ckpt --setting ind" + cfg() +
                " --run-dir " + d + "/guided"),
            0)
      << read(d + "/last.log");
  ASSERT_EQ(run("eval --samples " + d + "/guided/samples.csv --target ind" + cfg() + " --run-dir " + d + "/eval"), 0);
  const auto report = nlohmann::json::parse(read(d + "/eval/report.json"));
  EXPECT_EQ(report.at("n"), 25);
  const auto manifest = nlohmann::json::parse(read(d + "/eval/manifest.json"));
  EXPECT_EQ(manifest.at("command"), "eval");
  EXPECT_FALSE(manifest.at("inputs").empty());

  // Guided sampling against a different base checkpoint is refused.
  ASSERT_EQ(run("train-base --data " + d + "/data/base.csv" + cfg() + " --seed 9 --run-dir " + d + "/base2"), 0);
  EXPECT_EQ(run("sample --mode guided --base-x " + d + "/base2/base.ckpt --disc " + d + "/disc/disc.ckpt" + cfg() +
                " --run-dir " + d + "/refused"),
            6);
  EXPECT_EQ(run("sample --mode guided --base-x " + base + cfg() + " --run-dir " + d + "/refused"), 2);
}

TEST(Cli, ReproduceTable1IsByteIdentical) {
  const std::string d = dir();
  ASSERT_EQ(run("reproduce-table1 --setting ind" + cfg() + " --run-dir " + d + "/t1"), 0) << read(d + "/last.log");
  ASSERT_EQ(run("reproduce-table1 --setting ind" + cfg() + " --run-dir " + d + "/t2"), 0);
  for (const auto& e : fs::recursive_directory_iterator(d + "/t1")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), d + "/t1");
    EXPECT_EQ(read(e.path().string()), read((fs::path(d) / "t2" / rel).string())) << rel;
  }
  EXPECT_NE(read(d + "/t1/table1.txt").find("L_all"), std::string::npos);
}
