#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "cflow/serialization.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;

const std::string kCli = CFLOW_CLI_PATH;
const std::string kData = CFLOW_TEST_DATA_DIR;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = kCli + " " + args + " >" + (dir_ / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  nlohmann::json json(const std::string& name) const {
    return nlohmann::json::parse(cflow::read_text_file(dir_ / name));
  }

  fs::path dir_;
};

TEST_F(Cli, SimulateWritesASkeleton) {
  ASSERT_EQ(run("simulate --flow coalescing-bm --horizon 0.6 --seed 1 --out " + path("sk")), 0);
  for (const char* f : {"skeleton.json", "paths.csv", "merges.csv"}) EXPECT_TRUE(fs::exists(path("sk/") + f)) << f;
  const auto h = json("sk/skeleton.json");
  EXPECT_EQ(h["format"], "coalesce-flow-skeleton/1");
  EXPECT_GT(h["entries"].get<int>(), 100);
  EXPECT_NO_THROW(cflow::load_skeleton(path("sk")));
}

TEST_F(Cli, UsageErrorsExitTwoWithoutOutput) {
  EXPECT_EQ(run("simulate --flow walsh --graph " + path("missing.json") + " --out " + path("a")), 2);
  EXPECT_FALSE(fs::exists(path("a")));
  EXPECT_EQ(run("simulate --flow nonsense --out " + path("b")), 2);
  EXPECT_FALSE(fs::exists(path("b")));
  EXPECT_EQ(run("simulate --flow skew --beta 3 --out " + path("c")), 2);
  EXPECT_FALSE(fs::exists(path("c")));
  EXPECT_EQ(run("verify --skeleton " + path("nothing") + " --out " + path("d")), 2);
  EXPECT_EQ(run("bogus"), 2);
}

TEST_F(Cli, StarGraphFromFile) {
  ASSERT_EQ(run("simulate --flow walsh --graph " + kData + "/star3.json --horizon 0.6 --seed 2 --out " + path("w")), 0);
  const auto h = json("w/skeleton.json");
  EXPECT_EQ(h["graph"]["edges"].size(), 3u);
}

TEST_F(Cli, VerifyExitCodesFollowTheShell) {
  ASSERT_EQ(run("simulate --flow coalescing-bm --seed 3 --out " + path("cbm")), 0);
  EXPECT_EQ(run("verify --skeleton " + path("cbm") + " --samples 2000 --stop-samples 200 --out " + path("v1")), 0);
  EXPECT_EQ(json("v1/report.json")["pass"], true);
  EXPECT_EQ(json("v1/report.json")["strong_flow"]["max_residual"], 0.0);

  ASSERT_EQ(run("simulate --flow tanaka --seed 3 --out " + path("tan")), 0);
  EXPECT_EQ(run("verify --skeleton " + path("tan") + " --shell none --samples 2000 --stop-samples 200 --out " +
                path("v2")),
            1);
  EXPECT_EQ(json("v2/report.json")["pass"], false);
  EXPECT_EQ(run("verify --skeleton " + path("tan") + " --shell zero-level --samples 2000 --stop-samples 200 --out " +
                path("v3")),
            0);
  EXPECT_EQ(json("v3/report.json")["strong_flow"]["max_residual"], 0.0);
  // An extra level at 0.25 keeps restarting paths, so the repair hits its cap.
  EXPECT_EQ(run("verify --skeleton " + path("tan") + " --shell custom:" + kData +
                "/shell_levels.json --samples 500 --stop-samples 100 --out " + path("v4")),
            1);
  const auto v4 = json("v4/report.json");
  EXPECT_EQ(v4["bifurcations"]["pass"], true);
  EXPECT_EQ(v4["strong_flow"]["max_residual"], 0.0);
  EXPECT_GT(v4["repair"]["capped"].get<int>(), 0);
}

TEST_F(Cli, ExtendAndExport) {
  ASSERT_EQ(run("simulate --flow tanaka --horizon 0.6 --seed 4 --out " + path("sk")), 0);
  ASSERT_EQ(run("extend --skeleton " + path("sk") + " --shell zero-level --times 0,0.1 --points -0.2,0,0.3 --out " +
                path("ext")),
            0);
  const auto traj = cflow::read_text_file(path("ext/trajectories.csv"));
  EXPECT_EQ(traj.substr(0, traj.find('\n')), "query_id,s,t,point");
  EXPECT_TRUE(fs::exists(path("ext/repair_traces.json")));
  ASSERT_EQ(run("estimate --task meeting --flow coalescing-bm --x 0 --y 1 --c 1 -N 2000 --out " + path("est")), 3);
  ASSERT_EQ(run("export-plotdata --skeleton " + path("sk") + " --reports " + path("est/estimates.json") + " --out " +
                path("plot")),
            0);
  for (const char* f : {"trajectories.csv", "distinct_counts.csv", "estimates_plot.csv"}) {
    EXPECT_TRUE(fs::exists(path("plot/") + f)) << f;
  }
}

TEST_F(Cli, EstimateVerdictsMapToExitCodes) {
  EXPECT_EQ(run("estimate --task meeting --flow coalescing-bm --x 0 --y 1 --c 1 -N 100000 --target 0.4795 --tol 0.02 "
                "--out " + path("e1")),
            0);
  const auto j = json("e1/estimates.json");
  EXPECT_NEAR(j["reports"][0]["estimate"].get<double>(), 0.4795, 0.02);
  // Ten trials cannot pin the probability down to +-0.02.
  EXPECT_EQ(run("estimate --task meeting --flow coalescing-bm --x 0 --y 1 --c 1 -N 10 --target 0.4795 --tol 0.02 "
                "--out " + path("e2")),
            3);
  EXPECT_EQ(run("estimate --task meeting --flow coalescing-bm --x 0 --y 1 --c 1 -N 20000 --at-least 0.9 --out " +
                path("e3")),
            1);
  EXPECT_EQ(run("estimate --task bogus --out " + path("e4")), 2);
}

TEST_F(Cli, ConfigFileSuppliesOptions) {
  const nlohmann::json cfg{{"flow", "skew"}, {"beta", 0.5}, {"horizon", 0.6}, {"seed", 9}};
  cflow::write_text_file(dir_ / "cfg.json", cfg.dump());
  ASSERT_EQ(run("simulate --config " + path("cfg.json") + " --out " + path("sk")), 0);
  const auto h = json("sk/skeleton.json");
  EXPECT_EQ(h["metadata"]["flow"]["beta"], 0.5);
  EXPECT_EQ(h["metadata"]["seed"], 9);
}

}  // namespace
