#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "leancnn/weights_io.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string output;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("leancnn_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  CliRun run(const std::string& args, const std::string& env = "") const {
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" LEANCNN_CLI "' " + args + " 2>&1";
    CliRun r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
  }

  std::string read(const std::string& rel) const {
    std::ifstream in(dir_ / rel, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& rel, const std::string& text) const { std::ofstream(dir_ / rel) << text; }

  fs::path dir_;
};

constexpr const char* kArch = R"(input 224 224 3
conv2d name=c1 filters=32 kernel=3 activation=relu
maxpool2d window=2
conv2d filters=64 kernel=3 activation=relu
maxpool2d window=2
conv2d filters=128 kernel=3 activation=relu
maxpool2d window=2
flatten
dense units=256 activation=relu
dropout rate=0.5
dense units=7 activation=softmax
)";

const std::string kTrain = "train --builtin custom-cnn --data synthetic:3,6,16 --batch-size 6 ";

}  // namespace

TEST_F(Cli, AnalyzeBuiltinAndFileAgree) {
  const auto builtin = run("analyze --builtin custom-cnn");
  ASSERT_EQ(builtin.status, 0) << builtin.output;
  EXPECT_NE(builtin.output.find("25,785,415"), std::string::npos);
  EXPECT_NE(builtin.output.find("531,465,984"), std::string::npos);
  write("custom.arch", kArch);
  const auto file = run("analyze custom.arch --format csv");
  ASSERT_EQ(file.status, 0) << file.output;
  EXPECT_NE(file.output.find("TOTAL,total,,25785415,531465984"), std::string::npos);
}

TEST_F(Cli, AnalyzeResnetBackbone) {
  const auto r = run("analyze --builtin resnet50 --backbone-only --format json");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("23587712"), std::string::npos);
}

TEST_F(Cli, ArchErrorsNameFileAndLine) {
  write("bad.arch", "input 8 8 3\nconv2d filters=4\nconv2d filters=4 kernel=0\n");
  const auto r = run("analyze bad.arch");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("bad.arch"), std::string::npos);
  EXPECT_NE(r.output.find("line 3"), std::string::npos);
  EXPECT_NE(r.output.find("kernel"), std::string::npos);
  EXPECT_EQ(run("analyze missing.arch").status, 2);
  EXPECT_EQ(run("analyze --builtin custom-cnn --format yaml").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("--help").status, 0);
}

TEST_F(Cli, CompareReports) {
  ASSERT_EQ(run("analyze --builtin custom-cnn --format csv -o a.csv").status, 0);
  ASSERT_EQ(run("analyze --builtin resnet50 --format json -o b.json").status, 0);
  const auto r = run("compare a.csv b.json --acc-a 87.05 --acc-b 89.08");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("+2.03 points absolute, +2.33% relative"), std::string::npos);
  EXPECT_NE(r.output.find("25,785,415"), std::string::npos);
  ASSERT_EQ(run("analyze --builtin resnet50 --flops-convention mul-add-as-two --format csv -o c.csv").status, 0);
  EXPECT_EQ(run("compare a.csv c.csv").status, 2);
  EXPECT_EQ(run("compare a.csv nothing.csv").status, 2);
}

TEST_F(Cli, TrainIsDeterministic) {
  ASSERT_EQ(run(kTrain + "--epochs 3 --seed 4 --augment rot90,hflip --out a").status, 0);
  ASSERT_EQ(run(kTrain + "--epochs 3 --seed 4 --augment rot90,hflip --out b").status, 0);
  EXPECT_EQ(read("a/weights.lcw"), read("b/weights.lcw"));
  EXPECT_EQ(read("a/history.csv"), read("b/history.csv"));
  ASSERT_EQ(run(kTrain + "--epochs 3 --seed 5 --augment rot90,hflip --out c").status, 0);
  EXPECT_NE(read("a/weights.lcw"), read("c/weights.lcw"));
  EXPECT_NE(read("a/config.echo").find("seed = 4"), std::string::npos);
}

TEST_F(Cli, FreezeKeepsLayerBytes) {
  ASSERT_EQ(run(kTrain + "--epochs 0 --out init").status, 0);
  const auto r = run(kTrain + "--epochs 2 --freeze c1 --out frozen");
  ASSERT_EQ(r.status, 0) << r.output;
  const auto before = leancnn::read_weight_records(dir_ / "init/weights.lcw");
  const auto after = leancnn::read_weight_records(dir_ / "frozen/weights.lcw");
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].name.rfind("normalization.", 0) == 0) continue;
    if (before[i].name.rfind("c1.", 0) == 0) EXPECT_EQ(before[i].bytes, after[i].bytes) << before[i].name;
    else EXPECT_NE(before[i].bytes, after[i].bytes) << before[i].name;
  }
  EXPECT_EQ(run(kTrain + "--epochs 1 --freeze nosuchlayer --out x").status, 2);
}

TEST_F(Cli, EnvironmentVariablesFillOptions) {
  ASSERT_EQ(run(kTrain + "--out env", "LEANCNN_EPOCHS=2").status, 0);
  EXPECT_EQ(leancnn::read_history(dir_ / "env/history.csv").size(), 2u);
  ASSERT_EQ(run(kTrain + "--epochs 1 --out flag", "LEANCNN_EPOCHS=2").status, 0);
  EXPECT_EQ(leancnn::read_history(dir_ / "flag/history.csv").size(), 1u);
}

TEST_F(Cli, EvaluateAndCurves) {
  ASSERT_EQ(run(kTrain + "--epochs 2 --out run").status, 0);
  const auto ev = run("evaluate --builtin custom-cnn --input-size 16 --data synthetic:3,6,16 --data-seed 9 "
                      "--weights run/weights.lcw --out ev");
  ASSERT_EQ(ev.status, 0) << ev.output;
  EXPECT_NE(ev.output.find("accuracy:"), std::string::npos);
  for (const char* f : {"ev/confusion.csv", "ev/metrics.csv", "ev/roc_class0.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  EXPECT_EQ(run("evaluate --builtin custom-cnn --input-size 32 --data synthetic:3,6,32 --weights run/weights.lcw")
                .status,
            2);
  const auto cv = run("curves run/history.csv --svg plots");
  ASSERT_EQ(cv.status, 0) << cv.output;
  EXPECT_TRUE(fs::exists(dir_ / "plots/accuracy.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "plots/loss.svg"));
  EXPECT_EQ(run("curves nothing.csv").status, 2);
}

TEST_F(Cli, SynthDirectoryFeedsTraining) {
  ASSERT_EQ(run("synth --classes 2 --per-class 5 --size 12 --out ds").status, 0);
  EXPECT_TRUE(fs::exists(dir_ / "ds/metadata.csv"));
  const auto r = run("train --builtin custom-cnn --input-size 12 --data ds --classes class0,class1 --epochs 1 "
                     "--out run");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(read("run/config.echo").find("loss = \"bce\""), std::string::npos);
  EXPECT_EQ(run("train --builtin custom-cnn --data ds --classes a,b --epochs 1 --out x").status, 2);
}

TEST_F(Cli, DivergenceExitsWithNumericStatus) {
  const auto r = run(kTrain + "--epochs 3 --lr 1e30 --out boom");
  EXPECT_EQ(r.status, 3) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "boom/history.csv"));
  EXPECT_EQ(run(kTrain + "--batch-size 0 --out x").status, 2);
}
