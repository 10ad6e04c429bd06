#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "mglab/nn/checkpoint.hpp"
#include "mglab/training.hpp"

namespace fs = std::filesystem;
using namespace mglab;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mglab_cli_test";

constexpr const char* kSmall = R"(network: {grid: 32, rotations: 8, trunk_channels: 8, velocity_channels: 4}
frame: {cell_size: 0.01}
training: {static_steps: 30, mobile_steps: 20, frozen_check_every: 5, seed: 4}
eval: {trials: 10}
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Result {
  int code;
  std::string err;
};

Result run(const std::string& args) {
  const fs::path err = kRoot / "stderr.txt";
  const std::string cmd = std::string(MGLAB_CLI) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

fs::path small_config() {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / "small.yaml";
  std::ofstream(p) << kSmall;
  return p;
}

std::string dir(const std::string& name) {
  const fs::path d = kRoot / name;
  fs::remove_all(d);
  return d.string();
}

std::size_t count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Cli, MissingConfigIsUsageError) {
  small_config();
  const auto r = run("train-static --config /nope/missing.yaml --out " + dir("missing"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nope/missing.yaml"), std::string::npos) << r.err;
}

TEST(Cli, BadConfigReportsLineAndField) {
  fs::create_directories(kRoot);
  std::ofstream(kRoot / "bad.yaml") << "network:\n  grid: 32\ntraining:\n  sgd: {lr: x}\n";
  const auto r = run("train-static --config " + (kRoot / "bad.yaml").string() + " --out " + dir("bad"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.yaml:4: training.sgd.lr"), std::string::npos) << r.err;
}

TEST(Cli, UnknownFlagOrVariantIsUsageError) {
  const auto cfg = small_config().string();
  EXPECT_EQ(run("train-static --config " + cfg + " --out " + dir("x") + " --bogus").code, 1);
  EXPECT_EQ(run("evaluate --config " + cfg + " --out " + dir("x") + " --models . --variants PP,XX").code, 1);
  EXPECT_EQ(run("evaluate --config " + cfg + " --out " + dir("x") + " --models . --velocities 0.1,fast").code, 1);
  EXPECT_EQ(run("").code, 1);
}

TEST(Cli, ZeroStepsWritesInitialization) {
  const auto cfg = small_config().string();
  const auto out = dir("zero");
  ASSERT_EQ(run("train-static --config " + cfg + " --steps 0 --out " + out).code, 0);
  TrainConfig tc;
  tc.network = {32, 8, 8, 4};
  GeneratorState g(tc.network);
  set_trainable(g, Stage::Static, MethodVariant::PP);
  EXPECT_EQ(slurp(fs::path(out) / "static.ckpt"), [&] {
    const auto b = nn::serialize(g.to_checkpoint("static", MethodVariant::PP));
    return std::string(b.begin(), b.end());
  }());
  EXPECT_EQ(count_lines(fs::path(out) / "static_metrics.csv"), 1u);
}

TEST(Cli, RepeatRunsAreIdenticalAcrossThreadCounts) {
  const auto cfg = small_config().string();
  const auto a = dir("repeat_a"), b = dir("repeat_b");
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + a + " --threads 1").code, 0);
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + b + " --threads 3").code, 0);
  EXPECT_EQ(slurp(fs::path(a) / "static.ckpt"), slurp(fs::path(b) / "static.ckpt"));
  EXPECT_EQ(slurp(fs::path(a) / "static_metrics.csv"), slurp(fs::path(b) / "static_metrics.csv"));
  const auto m = nlohmann::json::parse(slurp(fs::path(b) / "manifest-train-static.json"));
  EXPECT_EQ(m["threads"], 3);
  EXPECT_EQ(m["status"], "complete");
  EXPECT_EQ(m["seeds"]["training"], 4);
  EXPECT_EQ(count_lines(fs::path(a) / "static_metrics.csv"), 31u);
}

TEST(Cli, EnvironmentOverridesConfigAndFlagsWin) {
  const auto cfg = small_config().string();
  const auto a = dir("env_a"), b = dir("env_b");
  ::setenv("MGLAB_STEPS", "6", 1);
  const int ca = run("train-static --config " + cfg + " --out " + a).code;
  const int cb = run("train-static --config " + cfg + " --out " + b + " --steps 3").code;
  ::unsetenv("MGLAB_STEPS");
  ASSERT_EQ(ca, 0);
  ASSERT_EQ(cb, 0);
  EXPECT_EQ(count_lines(fs::path(a) / "static_metrics.csv"), 7u);
  EXPECT_EQ(count_lines(fs::path(b) / "static_metrics.csv"), 4u);
}

TEST(Cli, ResumedStaticRunMatchesStraightRun) {
  const auto cfg = small_config().string();
  const auto straight = dir("straight"), split = dir("split");
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + straight).code, 0);
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + split + " --stop-after 13").code, 0);
  EXPECT_FALSE(fs::exists(fs::path(split) / "static.ckpt"));
  const auto m = nlohmann::json::parse(slurp(fs::path(split) / "manifest-train-static.json"));
  EXPECT_EQ(m["status"], "paused");
  ASSERT_EQ(run("train-static --out " + split + " --resume " + split + "/static_state.ckpt").code, 0);
  EXPECT_EQ(slurp(fs::path(straight) / "static.ckpt"), slurp(fs::path(split) / "static.ckpt"));
  EXPECT_EQ(slurp(fs::path(straight) / "static_metrics.csv"), slurp(fs::path(split) / "static_metrics.csv"));
}

TEST(Cli, ResumeRejectsChangedConfig) {
  const auto cfg = small_config().string();
  const auto out = dir("changed");
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + out + " --stop-after 5").code, 0);
  const auto r = run("train-static --config " + cfg + " --seed 99 --out " + out + " --resume " + out +
                     "/static_state.ckpt");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("differs"), std::string::npos) << r.err;
}

TEST(Cli, MobileStageResumesAndLogsFrozenChecks) {
  const auto cfg = small_config().string();
  const auto base = dir("mobile");
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + base).code, 0);
  const std::string st = base + "/static.ckpt";
  const auto a = dir("mobile_a"), b = dir("mobile_b");
  ASSERT_EQ(run("train-mobile --config " + cfg + " --static " + st + " --variants PP --out " + a).code, 0);
  ASSERT_EQ(run("train-mobile --config " + cfg + " --static " + st + " --variants PP --stop-after 7 --out " + b).code, 0);
  ASSERT_EQ(run("train-mobile --static " + st + " --variants PP --out " + b + " --resume " + b + "/mobile_PP_state.ckpt")
                .code,
            0);
  EXPECT_EQ(slurp(fs::path(a) / "mobile_PP.ckpt"), slurp(fs::path(b) / "mobile_PP.ckpt"));
  EXPECT_EQ(slurp(fs::path(a) / "mobile_PP_metrics.csv"), slurp(fs::path(b) / "mobile_PP_metrics.csv"));
  const std::string log = slurp(fs::path(a) / "mobile_PP.log");
  for (int s : {5, 10, 15, 20})
    EXPECT_NE(log.find("verified at step " + std::to_string(s) + "\n"), std::string::npos) << s;
}

TEST(Cli, CorruptCheckpointRejectedBeforeTraining) {
  const auto cfg = small_config().string();
  const auto base = dir("corrupt_src");
  ASSERT_EQ(run("train-static --config " + cfg + " --steps 0 --out " + base).code, 0);
  std::string bytes = slurp(fs::path(base) / "static.ckpt");
  bytes[0] = 'X';
  std::ofstream(kRoot / "corrupt.ckpt", std::ios::binary) << bytes;
  const auto out = dir("corrupt");
  const auto r = run("train-mobile --config " + cfg + " --static " + (kRoot / "corrupt.ckpt").string() + " --out " + out);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("magic"), std::string::npos) << r.err;
  // The manifest exists (written first); no training output does.
  const auto m = nlohmann::json::parse(slurp(fs::path(out) / "manifest-train-mobile.json"));
  EXPECT_EQ(m["status"], "started");
  EXPECT_FALSE(fs::exists(fs::path(out) / "mobile_PP_metrics.csv"));
}

TEST(Cli, EvaluateSmokeRunAndTables) {
  const auto cfg = small_config().string();
  const auto models = dir("models");
  ASSERT_EQ(run("train-static --config " + cfg + " --out " + models).code, 0);
  ASSERT_EQ(run("train-mobile --config " + cfg + " --static " + models + "/static.ckpt --variants PP --out " + models)
                .code,
            0);
  const auto out = dir("eval");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run("evaluate --config " + cfg + " --models " + models +
                     " --variants PP,BL --trials 10 --velocities 0.10,0.15,0.20,rv --out " + out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 60.0);

  std::istringstream methods(slurp(fs::path(out) / "table_methods.md"));
  std::vector<std::string> rows;
  for (std::string l; std::getline(methods, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "| method | 0.10 | 0.15 | 0.20 | rv | mean |");
  EXPECT_EQ(rows[2].rfind("| PP |", 0), 0u);
  EXPECT_EQ(rows[3].rfind("| BL |", 0), 0u);

  std::istringstream table(slurp(fs::path(out) / "table_success.md"));
  std::vector<std::string> labels;
  for (std::string l; std::getline(table, l);) labels.push_back(l.substr(0, l.find(" |", 2)));
  EXPECT_EQ(labels, (std::vector<std::string>{"| v (m/s)", "|---|---|---|", "| 0.10", "| 0.15", "| 0.20", "| rv",
                                              "| mean"}));
  EXPECT_TRUE(fs::exists(fs::path(out) / "curves.ppm"));

  // A stage-1 file offered as PP is refused.
  const auto wrong = run("evaluate --config " + cfg + " --checkpoint PP=" + models + "/static.ckpt --variants PP --out " +
                         dir("eval_wrong"));
  EXPECT_EQ(wrong.code, 2);
}

TEST(Cli, RenderIsRepeatableAndCoversRotations) {
  const auto cfg = small_config().string();
  const auto base = dir("render_src");
  ASSERT_EQ(run("train-static --config " + cfg + " --steps 0 --out " + base).code, 0);
  const auto a = dir("render_a"), b = dir("render_b");
  for (const auto& out : {a, b})
    ASSERT_EQ(run("render --config " + cfg + " --checkpoint " + base + "/static.ckpt --scene-seed 5 --out " + out).code, 0);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() != ".ppm" && e.path().extension() != ".pgm") continue;
    ++images;
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(b) / e.path().filename())) << e.path();
  }
  EXPECT_EQ(images, 2u + 3u * 8u);
  for (int k = 0; k < 8; ++k) EXPECT_TRUE(fs::exists(fs::path(a) / ("dynamic_k" + std::to_string(k) + ".ppm")));

  // Scene file input reproduces the sampled scene.
  const auto c = dir("render_c");
  ASSERT_EQ(run("render --config " + cfg + " --checkpoint " + base + "/static.ckpt --scene " + a + "/scene.json --out " + c)
                .code,
            0);
  EXPECT_EQ(slurp(fs::path(a) / "static_k3.ppm"), slurp(fs::path(c) / "static_k3.ppm"));
}
