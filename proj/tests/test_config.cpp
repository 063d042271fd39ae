#include <gtest/gtest.h>

#include "obsgrid/config.hpp"
#include "obsgrid/experiments.hpp"

using namespace obsgrid;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesFullConfig) {
  const auto c = parse_config(R"({
    "schema_version": 1,
    "model": {"name": "coupled_rect_2d", "n_max": 9,
              "mu": [[0.5, 1], [0.5, -1], 3],
              "u": [[1, 0, 0], [0, [0, 1], 0], [0, 0, 1]]},
    "grid": {"cells_per_axis": [32, 16], "gauss_order": 2},
    "L": 0.25,
    "T": {"start": 0.5, "stop": 2.5, "count": 5},
    "N": 6,
    "N_list": [2, 4],
    "optimizer": {"max_iter": 10, "tol": 1e-5, "away_steps": false},
    "certificate": {"nu": "auto", "eta_factor": 1.25},
    "samples": 50,
    "acceptance": {"ratio_final_min": 0.5, "sliding_h": [0.02]},
    "output_dir": "x",
    "seed": 9
  })");
  EXPECT_EQ(c.model, ModelName::coupled_rect_2d);
  EXPECT_EQ(c.params.n_max, 9u);
  EXPECT_EQ(c.params.mu[1], cplx(0.5, -1));
  EXPECT_EQ(c.params.u[1][1], cplx(0, 1));
  EXPECT_EQ(c.cells, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.gauss_order, 2);
  EXPECT_EQ(c.T, (std::vector<double>{0.5, 1.0, 1.5, 2.0, 2.5}));
  EXPECT_EQ(c.N_list, (std::vector<std::size_t>{2, 4}));
  EXPECT_FALSE(c.away_steps);
  EXPECT_FALSE(c.nu.has_value());
  EXPECT_DOUBLE_EQ(c.eta_factor, 1.25);
  EXPECT_DOUBLE_EQ(c.acceptance.ratio_final_min, 0.5);
  EXPECT_DOUBLE_EQ(c.acceptance.rate_slope_max, -1.2);  // default kept
  EXPECT_EQ(c.seed, 9u);
}

TEST(Config, Defaults) {
  const auto c = parse_config(R"({"schema_version": 1, "model": {"name": "dirichlet_1d"}})");
  EXPECT_DOUBLE_EQ(c.L, 0.5);
  EXPECT_EQ(c.N, 8u);
  ASSERT_TRUE(c.nu.has_value());
  EXPECT_DOUBLE_EQ(*c.nu, 0.99);
  EXPECT_DOUBLE_EQ(c.theta, 600.0);
}

TEST(Config, UnknownKeysCarryLineNumbers) {
  const std::string top = "{\n  \"schema_version\": 1,\n  \"model\": {\"name\": \"dirichlet_1d\"},\n  \"Lx\": 0.5\n}";
  const auto e = error_of(top);
  EXPECT_NE(e.find("line 4"), std::string::npos) << e;
  EXPECT_NE(e.find("Lx"), std::string::npos) << e;
  EXPECT_NE(e.find("unknown key"), std::string::npos) << e;
  const std::string nested =
      "{\n  \"schema_version\": 1,\n  \"model\": {\"name\": \"dirichlet_1d\"},\n  \"optimizer\": {\n    \"tolerance\": 1\n  }\n}";
  const auto n = error_of(nested);
  EXPECT_NE(n.find("line 5"), std::string::npos) << n;
  EXPECT_NE(n.find("optimizer.tolerance"), std::string::npos) << n;
}

TEST(Config, MalformedJsonHasLine) {
  const auto e = error_of("{\n  \"schema_version\": 1,\n  \"L\": 0.5,,\n}");
  EXPECT_NE(e.find("line 3"), std::string::npos) << e;
}

TEST(Config, TypeAndRangeErrors) {
  const std::string head = R"({"schema_version": 1, "model": {"name": "dirichlet_1d"}, )";
  EXPECT_NE(error_of(head + R"("L": "half"})").find("expected a number"), std::string::npos);
  EXPECT_NE(error_of(head + R"("L": 1.5})").find("(0, 1)"), std::string::npos);
  EXPECT_NE(error_of(head + R"("N": -2})").find("nonnegative integer"), std::string::npos);
  EXPECT_NE(error_of(head + R"("T": [1, -1]})").find("positive"), std::string::npos);
  EXPECT_NE(error_of(head + R"("certificate": {"nu": 1.2}})").find("auto"), std::string::npos);
  EXPECT_NE(error_of(head + R"("grid": {"gauss_order": 9}})").find("1..5"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 2, "model": {"name": "dirichlet_1d"}})").find("version"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"name": "dirichlet_1d"}})").find("schema_version"), std::string::npos);
  EXPECT_NE(error_of(R"({"schema_version": 1, "model": {"name": "heat"}})").find("model.name"), std::string::npos);
}

TEST(Config, EchoIsStableAndOmitsOutputDir) {
  auto c = parse_config(R"({"schema_version": 1, "model": {"name": "torus_1d"}, "output_dir": "a"})");
  const auto j1 = to_json(c).dump();
  c.output_dir = "b";
  EXPECT_EQ(to_json(c).dump(), j1);
  EXPECT_EQ(j1.find("output_dir"), std::string::npos);
  // echo round-trips
  EXPECT_EQ(to_json(parse_config(to_json(c).dump())).dump(), j1);
}

TEST(FitRate, Exponential) {
  std::vector<std::pair<double, double>> pts;
  for (double t : {0.5, 1.0, 1.5, 2.0, 2.5}) pts.emplace_back(t, 3.0 * std::exp(-1.5 * t));
  const auto f = fit_rate(pts, 0.0);
  EXPECT_FALSE(f.saturated);
  EXPECT_NEAR(f.slope, -1.5, 1e-9);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-9);
}

TEST(FitRate, ConstantAndFloor) {
  std::vector<std::pair<double, double>> flat;
  for (double t : {1.0, 2.0, 3.0, 4.0}) flat.emplace_back(t, 0.2);
  EXPECT_NEAR(fit_rate(flat, 0.0).slope, 0.0, 1e-12);
  std::vector<std::pair<double, double>> mixed;
  for (double t : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) mixed.emplace_back(t, std::max(std::exp(-2.0 * t), 0.01));
  const auto f = fit_rate(mixed, 0.02);  // e^{-2t} > 0.02 for t < 1.956
  EXPECT_EQ(f.used, 3u);
  EXPECT_NEAR(f.slope, -2.0, 1e-9);
  EXPECT_DOUBLE_EQ(f.t_hi, 1.5);
  const auto s = fit_rate(mixed, 1.0);
  EXPECT_TRUE(s.saturated);
}

TEST(Workers, EnvironmentCap) {
  setenv("OBSGRID_THREADS", "1", 1);
  EXPECT_EQ(worker_count(10), 1u);
  setenv("OBSGRID_THREADS", "junk", 1);
  EXPECT_GE(worker_count(10), 1u);
  unsetenv("OBSGRID_THREADS");
  EXPECT_LE(worker_count(2), 2u);
  std::vector<int> out(50, 0);
  parallel_for(out.size(), [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
  EXPECT_THROW(parallel_for(4, [](std::size_t i) {
                 if (i == 2) throw ConfigError("boom");
               }),
               ConfigError);
}
