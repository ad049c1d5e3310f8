#include "oracles.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("sp4d_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  // Runs the CLI with stdout/stderr captured into out_/err_; returns the exit code.
  int run(const std::string& args) {
    const std::string cmd = std::string(SP4D_CLI) + " " + args + " >" + (root_ / "stdout").string() + " 2>" +
                            (root_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    out_ = oracle::slurp((root_ / "stdout").string());
    err_ = oracle::slurp((root_ / "stderr").string());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string path(const std::string& name) { return (root_ / name).string(); }

  static nlohmann::json error_line(const std::string& err) { return nlohmann::json::parse(err.substr(0, err.find('\n'))); }

  static inline fs::path root_;
  std::string out_, err_;
};

const std::string kScenarioA = std::string(SP4D_SCENARIO_DIR) + "/a_two_cars_pedestrian.json";

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("decompose --out " + path("x")), 1);
  EXPECT_EQ(error_line(err_)["error"]["code"], 1);
  EXPECT_EQ(run("--version"), 0);
}

TEST_F(Cli, DecomposeScenarioA) {
  ASSERT_EQ(run("synth --spec " + kScenarioA + " --out " + path("a")), 0) << err_;
  ASSERT_EQ(run("decompose --in " + path("a") + " --flow " + path("a/gt/flow") + " --out " + path("a_out")), 0) << err_;
  const auto manifest = nlohmann::json::parse(oracle::slurp(path("a_out/manifest.json")));
  EXPECT_EQ(manifest["summary"]["dynamic_instances"], 3);
  EXPECT_EQ(manifest["flow_source"], "input");
  EXPECT_EQ(manifest["frame_count"], 30);
  EXPECT_TRUE(fs::exists(path("a_out/labels_0029.csv")));
  EXPECT_FALSE(fs::exists(path("a_out/flow")));

  ASSERT_EQ(run("eval --pred " + path("a_out") + " --gt " + path("a/gt") + " --out " + path("report.json")), 0) << err_;
  const auto report = nlohmann::json::parse(oracle::slurp(path("report.json")));
  EXPECT_GE(report["accuracy"].get<double>(), 0.99);
  EXPECT_EQ(report["id_consistency"].get<double>(), 1.0);

  // init from the decomposition's own labels reproduces them.
  ASSERT_EQ(run("init --in " + path("a") + " --labels " + path("a_out") + " --flow " + path("a/gt/flow") + " --out " +
                path("a_init")),
            0)
      << err_;
  for (int t : {0, 13, 29}) {
    char name[32];
    std::snprintf(name, sizeof name, "/labels_%04d.csv", t);
    EXPECT_EQ(oracle::slurp(path("a_init") + name), oracle::slurp(path("a_out") + name)) << t;
  }
}

TEST_F(Cli, MissingFlowWithEstimationDisabled) {
  ASSERT_EQ(run("synth --spec " + std::string(SP4D_SCENARIO_DIR) + "/b_vanish.json --out " + path("b")), 0) << err_;
  EXPECT_EQ(run("decompose --in " + path("b") + " --out " + path("b_out") + " --set flow.estimate=false"), 1);
  auto e = error_line(err_);
  EXPECT_EQ(e["error"]["code"], 1);
  EXPECT_NE(e["error"]["message"].get<std::string>().find("--flow"), std::string::npos) << err_;

  EXPECT_EQ(run("decompose --in " + path("b") + " --flow " + path("no_such_flow") + " --out " + path("b_out") +
                " --set flow.estimate=false"),
            1);
  e = error_line(err_);
  EXPECT_NE(e["error"]["message"].get<std::string>().find("no_such_flow"), std::string::npos) << err_;
  EXPECT_FALSE(fs::exists(path("b_out/manifest.json")));
}

TEST_F(Cli, ConfigErrors) {
  ASSERT_EQ(run("synth --spec " + std::string(SP4D_SCENARIO_DIR) + "/b_vanish.json --out " + path("b2")), 0) << err_;
  EXPECT_EQ(run("decompose --in " + path("b2") + " --out " + path("b2_out") + " --set no.such=1"), 1);
  EXPECT_NE(err_.find("no.such"), std::string::npos);
  {
    std::ofstream cfg(path("bad.cfg"));
    cfg << "dbscan.eps_m = 0.5\ndbscan.min_pts = lots\n";
  }
  EXPECT_EQ(run("decompose --in " + path("b2") + " --out " + path("b2_out") + " --config " + path("bad.cfg")), 1);
  EXPECT_NE(err_.find("bad.cfg:2"), std::string::npos) << err_;
}

TEST_F(Cli, BadFrameIsFormatError) {
  fs::create_directories(path("bad"));
  {
    std::ofstream f(path("bad/frame_0000.csv"));
    f << "x,y,z\n1,2,3\n4,5\n";
  }
  EXPECT_EQ(run("decompose --in " + path("bad") + " --out " + path("bad_out")), 2);
  const auto e = error_line(err_);
  EXPECT_EQ(e["error"]["kind"], "format");
  EXPECT_NE(e["error"]["message"].get<std::string>().find("frame_0000.csv:3"), std::string::npos) << err_;
}

TEST_F(Cli, RegCheckRandom) {
  EXPECT_EQ(run("reg-check --random 3 --cases 20"), 0) << err_;
  EXPECT_NE(out_.find("overall"), std::string::npos);
  int lines = 0;
  for (std::size_t p = out_.find("case "); p != std::string::npos; p = out_.find("case ", p + 1)) ++lines;
  EXPECT_EQ(lines, 20);
}

TEST_F(Cli, RegCheckFiles) {
  {
    std::ofstream f(path("fm.csv"));
    f << "row,col,u,v\n";
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) f << r << "," << c << "," << 0.3 * r * r - c << "," << 0.7 * c + 0.1 * r * c << "\n";
    std::ofstream g(path("img.csv"));
    g << "row,col,c0\n";
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) g << r << "," << c << "," << 0.5 + 0.001 * (r + c) << "\n";
    std::ofstream v(path("vel.csv"));
    v << "x,y,z,vx,vy,vz\n";
    for (int i = 0; i < 12; ++i) v << i << "," << i % 3 << ",0," << 0.1 * i << ",0," << -0.05 * i * i << "\n";
  }
  EXPECT_EQ(run("reg-check --flowmap " + path("fm.csv") + " --image " + path("img.csv") + " --field " + path("vel.csv") +
                " --set reg.k3d=4"),
            0)
      << err_;
  EXPECT_NE(out_.find("loss3d"), std::string::npos);
  EXPECT_EQ(run("reg-check"), 1);
  EXPECT_EQ(run("reg-check --flowmap " + path("fm.csv") + " --image " + path("missing.csv")), 2);
}

TEST_F(Cli, FlowCopyValidates) {
  ASSERT_EQ(run("synth --spec " + std::string(SP4D_SCENARIO_DIR) + "/c_emerge.json --out " + path("c") + " --format ply"), 0)
      << err_;
  EXPECT_TRUE(fs::exists(path("c/frame_0000.ply")));
  ASSERT_EQ(run("flow --in " + path("c") + " --flow " + path("c/gt/flow") + " --out " + path("c_flow")), 0) << err_;
  EXPECT_EQ(oracle::slurp(path("c_flow/flow_0004.csv")), oracle::slurp(path("c/gt/flow/flow_0004.csv")));
  fs::remove(path("c/gt/flow/flow_0002.csv"));
  EXPECT_EQ(run("flow --in " + path("c") + " --flow " + path("c/gt/flow") + " --out " + path("c_flow2")), 2);
  EXPECT_NE(err_.find("t=2"), std::string::npos) << err_;
}
