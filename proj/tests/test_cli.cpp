#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(OBSGRID_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("obsgrid_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << body;
  return p;
}

const std::string kConfigs = OBSGRID_CONFIGS;

}  // namespace

TEST(Cli, ModelPrintsSpectrum) {
  const auto d = scratch("model");
  const auto r = run("model --config " + kConfigs + "/torus.json --out " + d.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("J1 = {1,2}"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("p0 = 3"), std::string::npos) << r.out;
  const auto j = nlohmann::json::parse(slurp(d / "report.json"));
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["results"]["modes"].size(), 9u);
}

TEST(Cli, UnknownSubcommandAndMissingConfig) {
  EXPECT_EQ(run("frobnicate --config x.json").code, 1);
  EXPECT_EQ(run("solve").code, 1);
  EXPECT_EQ(run("solve --config /nonexistent.json").code, 1);
}

TEST(Cli, MalformedConfigReportsLine) {
  const auto d = scratch("bad");
  const auto p = write_config(d, "{\n  \"schema_version\": 1,\n  \"model\": {\"name\": \"dirichlet_1d\"},\n  \"bogus\": 3\n}\n");
  const auto r = run("solve --config " + p.string() + " --out " + d.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("line 4"), std::string::npos) << r.out;
}

TEST(Cli, SolveWritesOutputsAndIsReproducible) {
  const auto a = scratch("solve_a"), b = scratch("solve_b");
  const auto r1 = run("solve --config " + kConfigs + "/solve.json --out " + a.string() + " --seed 3");
  const auto r2 = run("solve --config " + kConfigs + "/solve.json --out " + b.string() + " --seed 3");
  EXPECT_EQ(r1.code, 0) << r1.out;
  EXPECT_EQ(r2.code, 0) << r2.out;
  for (const char* f : {"report.json", "density.csv", "history.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a / "timings.json"));
  const auto j = nlohmann::json::parse(slurp(a / "report.json"));
  EXPECT_EQ(j["config"]["seed"], 3);
  EXPECT_EQ(j["status"], "pass");
}

TEST(Cli, SweepCsvSchemaAndFailureExit) {
  const auto d = scratch("sweep");
  const auto r = run("sweep --config " + kConfigs + "/dirichlet1d.json --out " + d.string());
  // the large-T lower bound does not hold numerically, so the sweep reports failure
  EXPECT_EQ(r.code, 2) << r.out;
  const std::string csv = slurp(d / "sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "T,value,fw_gap,lower_bound,upper_bound,l1_dist,ratio,bangbang_frac");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  const auto j = nlohmann::json::parse(slurp(d / "report.json"));
  EXPECT_EQ(j["status"], "fail");
  bool saw_sandwich = false;
  for (const auto& c : j["acceptance"])
    if (c["name"] == "sandwich") saw_sandwich = true;
  EXPECT_TRUE(saw_sandwich);
  EXPECT_TRUE(fs::exists(d / "density_T2.csv"));
}

TEST(Cli, SweepNeedsEnoughT) {
  const auto d = scratch("sweep_short");
  const auto p = write_config(
      d, R"({"schema_version": 1, "model": {"name": "dirichlet_1d"}, "grid": {"cells_per_axis": [128]}, "T": [1, 2]})");
  const auto r = run("sweep --config " + p.string() + " --out " + d.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("at least 4"), std::string::npos) << r.out;
}

TEST(Cli, TorusAndCesaroPass) {
  const auto d = scratch("torus");
  EXPECT_EQ(run("torus-deg --config " + kConfigs + "/torus.json --out " + d.string()).code, 0);
  const auto c = scratch("cesaro");
  EXPECT_EQ(run("cesaro --config " + kConfigs + "/cesaro.json --out " + c.string()).code, 0);
  EXPECT_TRUE(fs::exists(c / "cesaro_N64.csv"));
}

TEST(Cli, ThreadCountDoesNotChangeReport) {
  const auto a = scratch("thr1"), b = scratch("thr4");
  const std::string cfg = kConfigs + "/dirichlet1d.json";
  run("sweep --config " + cfg + " --out " + a.string());
  const std::string cmd = "env OBSGRID_THREADS=1 " + std::string(OBSGRID_CLI) + " sweep --config " + cfg + " --out " +
                          b.string() + " > /dev/null 2>&1";
  ASSERT_NE(std::system(cmd.c_str()), -1);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_EQ(slurp(a / "sweep.csv"), slurp(b / "sweep.csv"));
}
