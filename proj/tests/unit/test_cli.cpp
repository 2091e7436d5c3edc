#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "test_util.hpp"

using nlohmann::json;
using scriptid::testing::TempDir;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CliRun cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + SCRIPTID_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json last_json(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

// One small corpus and model shared by the tests below.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const CliRun s = cli(*dir_, "synth-data --out '" + (*dir_ / "data").string() +
                                 "' --classes 2 --per-class 4 --min-width 60 --max-width 120 --seed 3");
    ASSERT_EQ(s.code, 0) << s.err;
    const CliRun t = cli(*dir_, "train --manifest '" + manifest() + "' --arch tiny --iters 3 --batch 4 --max-patches 10 --out '" +
                                 model() + "'");
    ASSERT_EQ(t.code, 0) << t.err;
    train_out_ = new std::string(t.out);
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete train_out_;
  }
  static std::string manifest() { return (*dir_ / "data" / "manifest.tsv").string(); }
  static std::string model() { return (*dir_ / "model.sidn").string(); }
  static std::string image() { return (*dir_ / "data" / "script0" / "script0_0.png").string(); }

  static TempDir* dir_;
  static std::string* train_out_;
};

TempDir* CliFixture::dir_ = nullptr;
std::string* CliFixture::train_out_ = nullptr;

}  // namespace

TEST(Cli, UnknownFlagIsUsageError) {
  TempDir dir("cli_usage");
  EXPECT_EQ(cli(dir, "train --bogus 1").code, 1);
  EXPECT_EQ(cli(dir, "").code, 1);
  EXPECT_EQ(cli(dir, "frobnicate").code, 1);
}

TEST(Cli, HelpExitsCleanly) {
  TempDir dir("cli_help");
  const CliRun r = cli(dir, "--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train"), std::string::npos);
}

TEST(Cli, MissingManifestIsDataError) {
  TempDir dir("cli_data");
  const CliRun r = cli(dir, "train --manifest '" + (dir / "none.tsv").string() + "' --arch tiny --out '" + (dir / "m").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("none.tsv"), std::string::npos) << r.err;
}

TEST(Cli, MissingRequiredOptionIsUsageError) {
  TempDir dir("cli_req");
  EXPECT_EQ(cli(dir, "train --arch tiny").code, 1);
}

TEST(Cli, GradcheckPasses) {
  TempDir dir("cli_grad");
  const CliRun r = cli(dir, "gradcheck --arch tiny --samples 60");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("PASS"), std::string::npos);
}

TEST_F(CliFixture, TrainReportsAndWritesArtifacts) {
  const json j = last_json(*train_out_);
  EXPECT_EQ(j.at("command"), "train");
  EXPECT_EQ(j.at("iterations"), 3);
  EXPECT_TRUE(std::filesystem::exists(model()));
  const std::string metrics = slurp(model() + ".metrics.jsonl");
  int lines = 0;
  std::istringstream in(metrics);
  for (std::string l; std::getline(in, l);) {
    json::parse(l);
    ++lines;
  }
  EXPECT_GE(lines, 4);  // three steps and the final train evaluation
}

TEST_F(CliFixture, ConfigFileFillsButFlagsWin) {
  std::ofstream(*dir_ / "run.cfg") << "# test\niters = 2\nbatch = 4\nmax_patches = 10\narch = tiny\n";
  const std::string base = "--config '" + (*dir_ / "run.cfg").string() + "' train --manifest '" + manifest() + "'";
  const CliRun from_file = cli(*dir_, base + " --out '" + (*dir_ / "c1.sidn").string() + "'");
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(last_json(from_file.out).at("iterations"), 2);
  const CliRun flag = cli(*dir_, base + " --iters 1 --out '" + (*dir_ / "c2.sidn").string() + "'");
  ASSERT_EQ(flag.code, 0) << flag.err;
  EXPECT_EQ(last_json(flag.out).at("iterations"), 1);

  std::ofstream(*dir_ / "bad.cfg") << "not_an_option = 3\n";
  EXPECT_EQ(cli(*dir_, "--config '" + (*dir_ / "bad.cfg").string() + "' train --manifest '" + manifest() + "'").code, 1);
}

TEST_F(CliFixture, EvalReportsConfusion) {
  const CliRun r = cli(*dir_, "eval --model '" + model() + "' --manifest '" + manifest() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = last_json(r.out);
  EXPECT_EQ(j.at("samples"), 8);
  EXPECT_EQ(j.at("confusion").size(), 2u);
  const double acc = j.at("accuracy");
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST_F(CliFixture, PredictEmitsDistribution) {
  const CliRun r = cli(*dir_, "predict --model '" + model() + "' --image '" + image() + "' --per-patch");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = last_json(r.out);
  double sum = 0;
  for (double z : j.at("z")) sum += z;
  EXPECT_NEAR(sum, 1.0, 1e-5);
  EXPECT_TRUE(j.contains("class"));
  EXPECT_TRUE(j.contains("per_patch"));
  EXPECT_EQ(cli(*dir_, "predict --model '" + model() + "' --image '" + (*dir_ / "missing.png").string() + "'").code, 2);
}

TEST_F(CliFixture, AttentionMapWritten) {
  const std::string out = (*dir_ / "map.pgm").string();
  const CliRun r = cli(*dir_, "attn-map --model '" + model() + "' --image '" + image() + "' --out '" + out + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(out));
  EXPECT_EQ(last_json(r.out).at("height"), 40);
}

TEST_F(CliFixture, CorruptCheckpointIsDataError) {
  std::ofstream(*dir_ / "junk.sidn") << "garbage";
  const CliRun r = cli(*dir_, "eval --model '" + (*dir_ / "junk.sidn").string() + "' --manifest '" + manifest() + "'");
  EXPECT_EQ(r.code, 2);
}
