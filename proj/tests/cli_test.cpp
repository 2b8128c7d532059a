#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int status = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(STRF_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("strf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.ini") << "[model]\n"
                                        "width_divisor = 16\n"
                                        "blocks = 1, 1, 1, 1\n"
                                        "frame_height = 32\n"
                                        "frame_width = 16\n"
                                        "[train]\n"
                                        "P = 4\nK = 2\nT = 2\nstride = 1\nmax_steps = 2\n"
                                        "[data]\n"
                                        "root = " << (dir_ / "data").string() << "\n"
                                        "identities = 4\nframes = 8\ntracklets_per_identity = 4\n"
                                        "train_tracklets = 2\nheight = 32\nwidth = 16\n"
                                        "[eval]\nranks = 1, 2\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UnknownConfigKeyExitsWithConfigStatus) {
  std::ofstream(path("bad.ini")) << "[train]\nlr = 0.1\nlearning_rate = 2\n";
  const Result r = run("train -c " + path("bad.ini") + " -o " + path("run"));
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("bad.ini:3"), std::string::npos) << r.output;
}

TEST_F(Cli, BadOverrideExitsWithConfigStatus) {
  EXPECT_EQ(run("params --set model.variant=r2plus1d").status, 2);
}

TEST_F(Cli, MissingManifestExitsWithDataStatus) {
  const Result r = run("eval -c " + path("tiny.ini") + " --set data.manifest=" + path("none.tsv") +
                       " --checkpoint " + path("ckpt"));
  EXPECT_EQ(r.status, 3) << r.output;
}

TEST_F(Cli, DivergentTrainingExitsWithNumericStatus) {
  const Result r = run("train -c " + path("tiny.ini") + " -o " + path("run") +
                       " --set train.lr=1e30 --set train.max_steps=10");
  EXPECT_EQ(r.status, 4) << r.output;
}

TEST_F(Cli, TrainEvalExportRoundTrip) {
  Result r = run("synth -c " + path("tiny.ini"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "data" / "manifest.tsv"));

  r = run("train -c " + path("tiny.ini") + " -o " + path("run"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "train_log.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint" / "manifest.txt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "test_retrieval" / "report.txt"));

  r = run("eval -c " + path("tiny.ini") + " --checkpoint " + path("run/checkpoint") + " -o " + path("eval"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("mAP"), std::string::npos);

  r = run("export-attn -c " + path("tiny.ini") + " --checkpoint " + path("run/checkpoint") +
          " --tracklet train/0000/0_00 --stages 2,3 -o " + path("maps"));
  ASSERT_EQ(r.status, 0) << r.output;
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "maps")) maps += e.path().extension() == ".pgm";
  EXPECT_EQ(maps, 2u * 8u);

  r = run("export-attn -c " + path("tiny.ini") + " --checkpoint " + path("run/checkpoint") +
          " --tracklet nobody -o " + path("maps"));
  EXPECT_EQ(r.status, 3) << r.output;
}

TEST_F(Cli, ParamsReportsStrfDelta) {
  const Result r = run("params --set model.classes=625");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("STRF delta       114688"), std::string::npos) << r.output;
}

TEST_F(Cli, MissingSubcommandFails) {
  EXPECT_NE(run("").status, 0);
}
