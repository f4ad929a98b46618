#include <array>
#include <cstdio>
#include <fstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vadkit/synth.hpp"

using namespace vadkit;

namespace {

struct CliRun {
  int code;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(VADKIT_CLI) + " " + args + " 2>&1";
  CliRun r{0, ""};
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

const fs::path& dataset() {
  static const fs::path root = [] {
    const auto dir = vadkit::test::scratch_dir("cli_data");
    std::ofstream(dir / "spec.json") << R"({"n_normal_videos": 2, "n_test_normal_videos": 1,
      "n_visual_anomaly_videos": 1, "n_contextual_anomaly_videos": 1, "video_length": 32, "seed": 2})";
    const CliRun r = run("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "data").string());
    EXPECT_EQ(r.code, 0) << r.out;
    return dir / "data";
  }();
  return root;
}

}  // namespace

TEST(Cli, SynthEchoesSpecAndIsReplayable) {
  const auto d = dataset();
  ASSERT_TRUE(fs::exists(d / "synth.json"));
  const auto again = vadkit::test::scratch_dir("cli_replay");
  ASSERT_EQ(run("synth --spec " + (d / "synth.json").string() + " --out " + again.string()).code, 0);
  EXPECT_EQ(slurp(d / "annotations.json"), slurp(again / "annotations.json"));
  EXPECT_EQ(slurp(d / "test/visual_0000/frame_000005.png"), slurp(again / "test/visual_0000/frame_000005.png"));
}

TEST(Cli, EvalOracleAndAntiOracle) {
  const auto d = dataset();
  const auto out = vadkit::test::scratch_dir("cli_eval_oracle");
  const CliRun r = run("eval --scorer oracle --root " + d.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("AUC 1.000"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_TRUE(fs::exists(out / "scores" / "visual_0000.csv"));
  const CliRun anti = run("eval --scorer anti-oracle --auc-mode per-video --root " + d.string());
  EXPECT_NE(anti.out.find("AUC 0.000"), std::string::npos) << anti.out;
}

TEST(Cli, TrainSameSeedIdenticalMetrics) {
  const auto d = dataset();
  const auto a = vadkit::test::scratch_dir("cli_train_a"), b = vadkit::test::scratch_dir("cli_train_b");
  const std::string common = " --root " + d.string() + " --method ocsvdd --gcn --steps 3 --seed 7 --out ";
  ASSERT_EQ(run("train" + common + a.string()).code, 0);
  ASSERT_EQ(run("train" + common + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "metrics.log"), slurp(b / "metrics.log"));
  EXPECT_FALSE(slurp(a / "metrics.log").empty());
  EXPECT_TRUE(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));

  // replay from the echoed config alone
  const auto c = vadkit::test::scratch_dir("cli_train_c");
  ASSERT_EQ(run("train --config " + (a / "config.json").string() + " --root " + d.string() + " --out " + c.string()).code, 0);
  EXPECT_EQ(slurp(a / "metrics.log"), slurp(c / "metrics.log"));

  // resume extends the run without restating the config
  const auto r = run("train --resume --steps 5 --root " + d.string() + " --out " + a.string());
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_EQ(run("train" + std::string(" --root ") + d.string() +
                " --method ocsvdd --gcn --steps 5 --seed 7 --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "metrics.log"), slurp(b / "metrics.log"));
}

TEST(Cli, ScoreAndEvalDeterministic) {
  const auto d = dataset();
  const auto t = vadkit::test::scratch_dir("cli_score_train");
  ASSERT_EQ(run("train --root " + d.string() + " --method recon --steps 2 --seed 1 --out " + t.string()).code, 0);
  const auto ck = (t / "checkpoint.bin").string();
  const auto o = vadkit::test::scratch_dir("cli_score_out");
  for (const char* name : {"a.csv", "b.csv"})
    ASSERT_EQ(run("score --checkpoint " + ck + " --video " + (d / "test/contextual_0000").string() + " --out " +
                  (o / name).string()).code, 0);
  EXPECT_EQ(slurp(o / "a.csv"), slurp(o / "b.csv"));
  const CliRun e1 = run("eval --checkpoint " + ck + " --root " + d.string() + " --out " + (o / "e1").string());
  const CliRun e2 = run("eval --checkpoint " + ck + " --root " + d.string() + " --out " + (o / "e2").string());
  ASSERT_EQ(e1.code, 0) << e1.out;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(slurp(o / "e1/report.json"), slurp(o / "e2/report.json"));

  const CliRun p = run("plot --scores " + (o / "e1/scores/contextual_0000.csv").string() + " --annotations " +
                    (d / "annotations.json").string() + " --out " + (o / "curve.png").string());
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_GT(fs::file_size(o / "curve.png"), 1000u);
}

TEST(Cli, ScoreShortVideoNamesLengthConstraint) {
  const auto d = dataset();
  const auto dir = vadkit::test::scratch_dir("cli_short");
  std::ofstream(dir / "cfg.json") << R"({"method": "recon", "steps": 0, "backbone": {"input_shape": [32, 64, 64],
    "stages": [{"channels": 8, "stride": [2, 2, 2]}, {"channels": 8, "stride": [2, 2, 2]}]}})";
  const CliRun t = run("train --config " + (dir / "cfg.json").string() + " --root " + d.string() + " --out " +
                    (dir / "run").string());
  ASSERT_EQ(t.code, 0) << t.out;
  fs::create_directories(dir / "tiny");
  for (int i = 0; i < 10; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.png", i);
    fs::copy_file(d / "test/visual_0000" / name, dir / "tiny" / name);
  }
  const CliRun r = run("score --checkpoint " + (dir / "run/checkpoint.bin").string() + " --video " +
                    (dir / "tiny").string() + " --out " + (dir / "s.csv").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("10 frames"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("T=32"), std::string::npos) << r.out;
}

TEST(Cli, ErrorsExitNonzeroWithDistinctMessages) {
  const auto d = dataset();
  const CliRun unknown = run("eval --bogus-flag --root " + d.string());
  EXPECT_NE(unknown.code, 0);
  EXPECT_NE(unknown.out.find("bogus-flag"), std::string::npos) << unknown.out;

  const auto dir = vadkit::test::scratch_dir("cli_errors");
  std::ofstream(dir / "broken.json") << "{ not json";
  const CliRun broken = run("train --config " + (dir / "broken.json").string() + " --root " + d.string() + " --out " +
                         (dir / "o").string());
  EXPECT_EQ(broken.code, 1);
  EXPECT_NE(broken.out.find("malformed config"), std::string::npos) << broken.out;

  std::ofstream(dir / "typo.json") << R"({"learning_rte": 0.1})";
  const CliRun typo = run("train --config " + (dir / "typo.json").string() + " --root " + d.string() + " --out " +
                       (dir / "o").string());
  EXPECT_EQ(typo.code, 1);
  EXPECT_NE(typo.out.find("learning_rte"), std::string::npos) << typo.out;

  const CliRun both = run("eval --scorer oracle --checkpoint " + (dir / "typo.json").string() + " --root " + d.string());
  EXPECT_NE(both.code, 0);
  EXPECT_NE(both.out.find("exactly one"), std::string::npos) << both.out;

  EXPECT_NE(run("").code, 0);
  EXPECT_NE(run("frobnicate").code, 0);
}
