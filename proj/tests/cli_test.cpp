#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xnesyl/cli.hpp"

namespace xnesyl {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xnesyl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("xnesyl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    kg_ = testing::data_path("monumai_kg.json");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Result generate(const std::string& name, const std::string& seed = "1") {
    return run_cli({"gen", "--kg", kg_, "--out", path(name), "--count", "100", "--seed", seed, "--noise", "0.1"});
  }

  Result quick_train(const std::string& data, const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"train",        "--kg", kg_, "--data", data,       "--out-dir", out,
                                     "--epochs-det", "2",    "--epochs-clf", "20", "--bg-size", "10"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  }

  fs::path dir_;
  std::string kg_;
};

TEST_F(Cli, GenIsDeterministic) {
  ASSERT_EQ(generate("a.jsonl").code, 0);
  ASSERT_EQ(generate("b.jsonl").code, 0);
  ASSERT_EQ(generate("c.jsonl", "2").code, 0);
  EXPECT_EQ(testing::slurp(path("a.jsonl")), testing::slurp(path("b.jsonl")));
  EXPECT_NE(testing::slurp(path("a.jsonl")), testing::slurp(path("c.jsonl")));
}

TEST_F(Cli, SeedFallsBackToEnvironment) {
  ASSERT_EQ(generate("a.jsonl", "5").code, 0);
  ::setenv("XNESYL_SEED", "5", 1);
  const auto r = run_cli({"gen", "--kg", kg_, "--out", path("b.jsonl"), "--count", "100", "--noise", "0.1"});
  ::unsetenv("XNESYL_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(testing::slurp(path("a.jsonl")), testing::slurp(path("b.jsonl")));
  ::setenv("XNESYL_SEED", "five", 1);
  const auto bad = run_cli({"gen", "--kg", kg_, "--out", path("c.jsonl")});
  ::unsetenv("XNESYL_SEED");
  EXPECT_EQ(bad.code, 2);
}

TEST_F(Cli, TrainEvalRoundTrip) {
  ASSERT_EQ(generate("d.jsonl").code, 0);
  const auto t = quick_train(path("d.jsonl"), path("run"));
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"detector.json", "classifier.json", "metrics.json", "shap_ged.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  const auto report = nlohmann::json::parse(t.out);
  EXPECT_EQ(report["per_epoch"].size(), 2u);

  const auto e = run_cli({"eval", "--kg", kg_, "--data", path("d.jsonl"), "--checkpoints", path("run")});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out, testing::slurp(path("run/eval.json")));
  const auto ev = nlohmann::json::parse(e.out);
  EXPECT_EQ(ev["metrics"], report["metrics"]);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "shap_summary.csv"));
  const auto ged = nlohmann::json::parse(testing::slurp(path("run/shap_ged.json")));
  EXPECT_EQ(ged.size(), 21u);  // 20 test instances plus the mean

  const auto r = run_cli({"report", "--runs", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("run,mode,scheme,agg,seed,part_macro_accuracy,accuracy,mean_shap_ged\nrun,standard,none,frcnn,0,", 0), 0u)
      << r.out;
}

TEST_F(Cli, ExplainInstanceFromCheckpoints) {
  ASSERT_EQ(generate("d.jsonl").code, 0);
  ASSERT_EQ(quick_train(path("d.jsonl"), path("run")).code, 0);
  const auto x = run_cli({"explain", "--kg", kg_, "--checkpoints", path("run"), "--data", path("d.jsonl"),
                          "--instance-id", "s1-3", "--out-dir", path("x")});
  ASSERT_EQ(x.code, 0) << x.err;
  const auto j = nlohmann::json::parse(x.out);
  EXPECT_EQ(j["id"], "s1-3");
  EXPECT_TRUE(fs::exists(dir_ / "x" / "s1-3.dot"));
  EXPECT_TRUE(fs::exists(dir_ / "x" / "s1-3.sag.json"));
  EXPECT_TRUE(fs::exists(dir_ / "x" / "s1-3.shap.csv"));
  const auto missing = run_cli({"explain", "--kg", kg_, "--checkpoints", path("run"), "--data", path("d.jsonl"),
                                "--instance-id", "nope", "--out-dir", path("x")});
  EXPECT_EQ(missing.code, 3);
}

TEST_F(Cli, ExplainFixture) {
  const auto x = run_cli(
      {"explain", "--kg", kg_, "--fixture", testing::data_path("sag_example.json"), "--out-dir", path("fx")});
  ASSERT_EQ(x.code, 0) << x.err;
  const auto j = nlohmann::json::parse(x.out);
  EXPECT_EQ(j["shap_ged"], 3);
  EXPECT_EQ(j["shap_ged_one_sided"], 1);
  EXPECT_EQ(j["edges"].size(), 6u);
  const auto dot = testing::slurp(path("fx/sag-example.dot"));
  EXPECT_NE(dot.find("\"broken pediment\" -> \"Baroque\";"), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  ASSERT_EQ(generate("d.jsonl").code, 0);
  // Usage errors.
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(quick_train(path("d.jsonl"), path("r1"), {"--scheme", "linear-bbox"}).code, 2);
  EXPECT_EQ(quick_train(path("d.jsonl"), path("r2"), {"--mode", "shap-backprop"}).code, 2);
  EXPECT_EQ(quick_train(path("d.jsonl"), path("r3"), {"--agg", "yolo"}).code, 2);
  EXPECT_EQ(quick_train(path("d.jsonl"), path("r4"), {"--mode", "shap-backprop", "--scheme", "linear-bbox", "--h", "0"})
                .code,
            2);
  EXPECT_EQ(run_cli({"gen", "--kg", kg_, "--out", path("e.jsonl"), "--regions", "5"}).code, 2);
  EXPECT_EQ(run_cli({"explain", "--kg", kg_}).code, 2);
  // Validation errors.
  EXPECT_EQ(run_cli({"gen", "--kg", path("missing.json"), "--out", path("e.jsonl")}).code, 3);
  EXPECT_EQ(quick_train(path("missing.jsonl"), path("r5")).code, 3);
  EXPECT_EQ(run_cli({"eval", "--kg", kg_, "--data", path("d.jsonl"), "--checkpoints", path("nowhere")}).code, 3);
  EXPECT_EQ(run_cli({"report", "--runs", path("nowhere")}).code, 3);
  // Help.
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(Cli, UnknownPartLabelInData) {
  std::ofstream(path("bad.jsonl"))
      << R"({"id": "a", "object_class": "Gothic", "regions": [{"part_class": "gargoyle", "features": [0, 1]}]})" << "\n";
  const auto r = quick_train(path("bad.jsonl"), path("run"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("gargoyle"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace xnesyl
