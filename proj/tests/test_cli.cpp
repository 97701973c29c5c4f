#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "inrsynth/cli.hpp"
#include "test_support.hpp"

using namespace inrsynth;
using testing_support::TempDir;

namespace {

struct Outcome {
  int code;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "inrsynth");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  testing::internal::CaptureStderr();
  testing::internal::CaptureStdout();
  const int code = cli::run(int(argv.size()), argv.data());
  testing::internal::GetCapturedStdout();
  return {code, testing::internal::GetCapturedStderr()};
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  auto c = Config::defaults();
  EXPECT_EQ(c.integer("inr_width"), 256);
  EXPECT_EQ(c.dims("dims"), (Dims{64, 64, 10}));
  EXPECT_TRUE(c.flag("sampler_noise"));
  std::istringstream in("# comment\ninr_width = 32\nseg_levels = 0,4,8\n\nsampler_noise = off\n");
  c = Config::parse(in, "test.cfg");
  EXPECT_EQ(c.integer("inr_width"), 32);
  EXPECT_EQ(c.ints("seg_levels"), (std::vector<int>{0, 4, 8}));
  EXPECT_FALSE(c.flag("sampler_noise"));
  EXPECT_EQ(c.integer("inr_hidden"), 4);
}

TEST(Config, UnknownKeyNamesLine) {
  std::istringstream in("inr_width = 32\ninr_widht = 16\n");
  try {
    Config::parse(in, "bad.cfg");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("inr_widht"), std::string::npos);
  }
  EXPECT_THROW(Config::parse_dims("4x4"), InvalidArgument);
  EXPECT_EQ(Config::parse_dims("8x6x4"), (Dims{8, 6, 4}));
}

TEST(Cli, HelpExitsZero) {
  testing::internal::CaptureStdout();
  std::vector<const char*> argv{"inrsynth", "eval", "--help"};
  EXPECT_EQ(cli::run(3, argv.data()), 0);
  const auto out = testing::internal::GetCapturedStdout();
  EXPECT_NE(out.find("--pred-dir"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  auto r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error stage=usage", 0), 0u) << r.err;
  EXPECT_EQ(run_cli({"phantom-gen", "--out-dir", "x"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
}

TEST(Cli, StageFailureExitsOneWithSingleLine) {
  TempDir tmp;
  std::filesystem::create_directories(tmp / "empty");
  auto r = run_cli({"inr-fit", "--in-dir", (tmp / "empty").string(), "--out-dir", (tmp / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error stage=inr-fit message=", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;

  std::ofstream(tmp / "bad.cfg") << "no_such_key = 1\n";
  r = run_cli({"phantom-gen", "--n", "1", "--out-dir", (tmp / "p").string(), "--config", (tmp / "bad.cfg").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error stage=config", 0), 0u) << r.err;
}

TEST(Cli, PhantomGenDeterministicAndEvalColumns) {
  TempDir tmp;
  const std::vector<std::string> common{"--n", "2", "--seed", "5", "--set", "dims=16x16x4"};
  auto args = common;
  args.insert(args.begin(), {"phantom-gen", "--out-dir", (tmp / "a").string()});
  ASSERT_EQ(run_cli(args).code, 0);
  args = common;
  args.insert(args.begin(), {"phantom-gen", "--out-dir", (tmp / "b").string(), "--jobs", "2"});
  ASSERT_EQ(run_cli(args).code, 0);
  for (const auto& f : {"manifest.txt", "train_0000_img.vol", "train_0001_myo.vol", "train_0001_fib.vol"})
    EXPECT_EQ(read_text(tmp / "a" / f), read_text(tmp / "b" / f)) << f;

  ASSERT_EQ(run_cli({"eval", "--pred-dir", (tmp / "a").string(), "--gt-dir", (tmp / "b").string(), "--report",
                     (tmp / "r.csv").string()})
                .code,
            0);
  std::istringstream csv(read_text(tmp / "r.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "case,structure,band,metric,value");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4) << line;
    if (line.find(",dice,") != std::string::npos) EXPECT_NE(line.find(",1"), std::string::npos) << line;
  }
  // per case: 2 structures x 4 bands Dice, plus PSNR and middle-slice SSIM
  EXPECT_EQ(rows, 2 * (8 + 2));
}
