#include "kkl/harness.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KKL_OBSERVER_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "kkl_harness_tests";
  fs::create_directories(dir);
  return dir;
}

kkl::RunConfig quick(int steps) {
  kkl::RunConfig cfg;
  cfg.steps = steps;
  cfg.constant_samples = 2000;
  return cfg;
}

TEST(RunExperiment, NoiseFreeConverges) {
  kkl::RunConfig cfg = quick(300);
  cfg.noise = false;
  const auto r = kkl::run_experiment(cfg);
  EXPECT_EQ(r.summary.violations, 0);
  EXPECT_LE(r.summary.final_width_x, 1e-3);
  EXPECT_NEAR(r.summary.decay_rate, 0.4, 1e-6);
  EXPECT_EQ(r.rows.size(), 301u);
}

TEST(RunExperiment, OneStepCsv) {
  const auto r = kkl::run_experiment(quick(1));
  std::stringstream ss;
  kkl::write_csv(ss, r.rows);
  std::string line;
  int lines = 0;
  std::getline(ss, line);
  EXPECT_EQ(line,
            "k,x1,x2,x_lo1,x_lo2,x_hi1,x_hi2,z1,z2,z3,z4,z_lo1,z_lo2,z_lo3,z_lo4,"
            "z_hi1,z_hi2,z_hi3,z_hi4,y1,w1,resid_hi,resid_lo,width_x,width_z");
  while (std::getline(ss, line)) ++lines;
  EXPECT_EQ(lines, 2);
}

TEST(RunExperiment, DisturbanceEnclosed) {
  kkl::RunConfig cfg = quick(200);
  cfg.disturbance = true;
  const auto r = kkl::run_experiment(cfg);
  EXPECT_EQ(r.summary.violations, 0);
  for (const auto& row : r.rows) ASSERT_TRUE(std::isfinite(row.width_x));
}

TEST(RunExperiment, ConfigValidation) {
  kkl::RunConfig cfg;
  cfg.gamma = 1.5;
  EXPECT_THROW(kkl::run_experiment(cfg), kkl::ConfigError);
  cfg = kkl::RunConfig{};
  cfg.preset = "pendulum";
  EXPECT_THROW(cfg.validate(), kkl::ConfigError);
  cfg = kkl::RunConfig{};
  cfg.window_lo = 10;
  cfg.window_hi = 5;
  EXPECT_THROW(cfg.validate(), kkl::ConfigError);
}

TEST(CompareGammas, SortedAndSingle) {
  kkl::RunConfig cfg = quick(60);
  cfg.window_lo = 20;
  cfg.window_hi = 60;
  const auto one = kkl::compare_gammas(cfg, {1.0});
  const auto direct = kkl::run_experiment(cfg);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].mean_width_x, direct.summary.mean_width_x);
  EXPECT_EQ(one[0].final_width_x, direct.summary.final_width_x);
  const auto a = kkl::compare_gammas(cfg, {0.7, 1.0});
  const auto b = kkl::compare_gammas(cfg, {1.0, 0.7, 1.0});
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(a[0].gamma, 0.7);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(a[i].mean_width_x, b[i].mean_width_x);
  EXPECT_THROW(kkl::compare_gammas(cfg, {}), kkl::ConfigError);
}

TEST(ConfigJson, AppliesAndRejects) {
  kkl::RunConfig cfg;
  kkl::apply_config_json(cfg, nlohmann::json::parse(
                                  R"({"gamma": 0.7, "steps": 12, "noise": "off", "variant": "swapped",
                                      "x0": [0.8, 0.1], "mode": "series"})"));
  EXPECT_EQ(cfg.gamma, 0.7);
  EXPECT_EQ(cfg.steps, 12);
  EXPECT_FALSE(cfg.noise);
  EXPECT_EQ(cfg.variant, kkl::RecoveryVariant::Swapped);
  EXPECT_EQ(cfg.mode, kkl::TransformMode::Series);
  EXPECT_DOUBLE_EQ(cfg.x0(0), 0.8);
  EXPECT_THROW(kkl::apply_config_json(cfg, nlohmann::json::parse(R"({"gama": 1})")), kkl::ConfigError);
  EXPECT_THROW(kkl::apply_config_json(cfg, nlohmann::json::parse(R"({"steps": "many"})")), kkl::ConfigError);
  EXPECT_THROW(kkl::apply_config_json(cfg, nlohmann::json::parse("[1, 2]")), kkl::ConfigError);
}

TEST(Svg, HasOnePanelPerComponent) {
  const auto r = kkl::run_experiment(quick(5));
  std::stringstream ss;
  kkl::write_svg(ss, r.rows, kkl::Box::symmetric(2, 3.0));
  const std::string s = ss.str();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  std::size_t count = 0;
  for (std::size_t pos = 0; (pos = s.find("<polyline", pos)) != std::string::npos; ++pos) ++count;
  EXPECT_EQ(count, 6u);
}

TEST(Cli, RunWritesDeterministicCsv) {
  const fs::path dir = scratch_dir();
  const std::string a = (dir / "a.csv").string();
  const std::string b = (dir / "b.csv").string();
  const std::string svg = (dir / "a.svg").string();
  ASSERT_EQ(run_cli("run --preset oscillator-siE --gamma 1.0 --steps 40 --noise on --out " + a + " --svg " + svg), 0);
  ASSERT_EQ(run_cli("run --preset oscillator-siE --gamma 1.0 --steps 40 --noise on --out " + b), 0);
  const std::string ca = read_file(a);
  EXPECT_FALSE(ca.empty());
  EXPECT_EQ(ca, read_file(b));
  EXPECT_TRUE(fs::exists(svg));
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  const fs::path dir = scratch_dir();
  const fs::path cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"steps": 3, "gamma": 0.7, "noise": "off"})";
  const std::string out = (dir / "c.csv").string();
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --steps 5 --out " + out), 0);
  std::ifstream in(out);
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("run --gamma 2.0 --steps 2"), 3);
  EXPECT_EQ(run_cli("run --preset nonesuch --steps 2"), 3);
  EXPECT_EQ(run_cli("run --noise maybe --steps 2"), 3);
  EXPECT_EQ(run_cli("run --bogus-flag"), 3);
  EXPECT_EQ(run_cli("run --config /nonexistent/cfg.json"), 3);
  EXPECT_EQ(run_cli(""), 3);
}

TEST(Cli, CoeffsAndConstants) {
  const fs::path dir = scratch_dir();
  const std::string table = (dir / "coeffs.txt").string();
  ASSERT_EQ(run_cli("coeffs --gamma 0.7 --out " + table), 0);
  const std::string out = (dir / "from_table.csv").string();
  const std::string ref = (dir / "solved.csv").string();
  ASSERT_EQ(run_cli("run --gamma 0.7 --steps 10 --coeffs " + table + " --out " + out), 0);
  ASSERT_EQ(run_cli("run --gamma 0.7 --steps 10 --out " + ref), 0);
  EXPECT_EQ(read_file(out), read_file(ref));
  EXPECT_EQ(run_cli("constants --gamma 1.0"), 0);
}

TEST(Cli, Compare) {
  const fs::path dir = scratch_dir();
  const std::string out = (dir / "cmp.csv").string();
  ASSERT_EQ(run_cli("compare --gammas 1.0,0.7 --steps 30 --window-lo 10 --window-hi 30 --out " + out), 0);
  std::ifstream in(out);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "gamma,mean_width_x,final_width_x,decay_rate,violations");
  EXPECT_EQ(first.rfind("0.69999999999999996,", 0), 0u);
}

}  // namespace
