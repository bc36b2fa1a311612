#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

// Runs the CLI with stdout discarded and stderr captured.
Outcome run(const std::string& args) {
  const std::string cmd = std::string(MPD_CLI_PATH) + " " + args + " 2>&1 >/dev/null";
  Outcome o;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return o;
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), p)) o.err += buf.data();
  const int status = pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mpd_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST(Cli, ZeroCountIsAUsageError) {
  const auto o = run("gen-demos --count 0 --out " + scratch("zero").string());
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(lines(o.err), 1);
  EXPECT_NE(o.err.find("--count"), std::string::npos);
}

TEST(Cli, UnknownFlagsAndMissingSubcommand) {
  EXPECT_EQ(run("train --bogus 3").code, 2);
  const auto none = run("");
  EXPECT_EQ(none.code, 2);
  EXPECT_EQ(lines(none.err), 1);
  EXPECT_EQ(run("train --out " + scratch("nodata").string()).code, 2);
}

TEST(Cli, MissingFilesAndBadConfigsFailWithOneLine) {
  const auto missing = run("eval --data /nonexistent/demos --out " + scratch("missing").string());
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(lines(missing.err), 1);
  EXPECT_EQ(missing.err.rfind("mpd: error: ", 0), 0u);

  const fs::path cfg = scratch("cfg.json");
  std::ofstream(cfg) << R"({"train": {"epochz": 3}})";
  const auto bad = run("gen-demos --config " + cfg.string() + " --out " + scratch("badcfg").string());
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(lines(bad.err), 1);
  EXPECT_NE(bad.err.find("epochz"), std::string::npos);

  const auto ck = run("rollout --checkpoint /nonexistent.ckpt --out " + scratch("nock").string());
  EXPECT_EQ(ck.code, 1);
  EXPECT_EQ(lines(ck.err), 1);
}

TEST(Cli, SmokePipelineIsByteIdenticalAcrossRuns) {
  const fs::path root = scratch("pipeline");
  for (const char* run_name : {"a", "b"}) {
    const fs::path r = root / run_name;
    const std::string common = " --preset smoke ";
    ASSERT_EQ(run("gen-demos --task obstacle --seed 3" + common + "--out " + (r / "demos").string()).code, 0);
    ASSERT_EQ(run("train --data " + (r / "demos").string() + " --variant mpd --seeds 0 --epochs 100" + common +
                  "--out " + (r / "mpd").string())
                  .code,
              0);
    ASSERT_EQ(run("train --data " + (r / "demos").string() + " --variant baseline --seeds 0 --epochs 100" + common +
                  "--out " + (r / "base").string())
                  .code,
              0);
    ASSERT_EQ(run("eval --data " + (r / "demos").string() + " --checkpoint " + (r / "mpd/seed_0/best.ckpt").string() +
                  " --checkpoint " + (r / "base/seed_0/best.ckpt").string() + common + "--out " + (r / "eval").string())
                  .code,
              0);
    ASSERT_EQ(run("rollout --checkpoint " + (r / "mpd/seed_0/best.ckpt").string() + " --count 2" + common + "--out " +
                  (r / "roll").string())
                  .code,
              0);
  }
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (e.path().extension() != ".csv") continue;
    const fs::path twin = root / "b" / fs::relative(e.path(), root / "a");
    ASSERT_TRUE(fs::exists(twin)) << twin;
    EXPECT_EQ(slurp(e.path()), slurp(twin)) << e.path();
    ++compared;
  }
  EXPECT_GE(compared, 10);
  EXPECT_TRUE(fs::exists(root / "a/demos/manifest.json"));
  EXPECT_TRUE(fs::exists(root / "a/eval/comparison.csv"));
  EXPECT_TRUE(fs::exists(root / "a/roll/trace_001.csv"));
}
