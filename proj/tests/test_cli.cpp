#include <json.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded and returns its exit status and stdout.
CliRun cli(const std::string& args) {
  const std::string cmd = std::string(BPFOLIO_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() /
                       ("bpfolio_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("solve --random --n 10 --p 20 --model quartic").code, 1);
  EXPECT_EQ(cli("theory annealed --alpha 2 --model es --s 1").code, 1);
}

TEST(Cli, SolveRandomMeanVariance) {
  const CliRun r = cli("solve --model mv --random --n 100 --p 200 --seed 7 --no-portfolio");
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_EQ(j["model"], "mv");
  EXPECT_EQ(j["n_assets"], 100);
  EXPECT_EQ(j["n_periods"], 200);
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_FALSE(j.contains("portfolio"));
  EXPECT_NEAR(j["q_hat"].get<double>(), 2.0, 0.6);
}

TEST(Cli, SolveBelowCriticalRatioExitsTwo) {
  const CliRun r = cli("solve --model mv --random --n 100 --p 50 --seed 7");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(json::parse(r.out)["diverged"].get<bool>());
}

TEST(Cli, SolveInputErrors) {
  const fs::path dir = scratch_dir();
  ASSERT_EQ(cli("generate --n 3 --p 6 --seed 1 --out " + (dir / "r.csv").string()).code, 0);
  EXPECT_EQ(cli("solve --input " + (dir / "r.csv").string()).code, 1);               // no --n
  EXPECT_EQ(cli("solve --input " + (dir / "r.csv").string() + " --n 4").code, 1);    // wrong row count
  EXPECT_EQ(cli("solve --input " + (dir / "missing.csv").string() + " --n 3").code, 1);
  std::ofstream(dir / "bad.csv") << "1,2\n3,x\n";
  EXPECT_EQ(cli("solve --input " + (dir / "bad.csv").string() + " --n 2").code, 1);
  fs::remove_all(dir);
}

TEST(Cli, GeneratedFileSolvesLikeTheRandomInstance) {
  const fs::path dir = scratch_dir();
  const fs::path csv = dir / "r.csv";
  ASSERT_EQ(cli("generate --n 20 --p 50 --seed 3 --out " + csv.string()).code, 0);
  const json from_file = json::parse(cli("solve --model mv --n 20 --input " + csv.string()).out);
  const json direct = json::parse(cli("solve --model mv --random --n 20 --p 50 --seed 3").out);
  EXPECT_NEAR(from_file["q_hat"].get<double>(), direct["q_hat"].get<double>(), 1e-12);
  const auto a = from_file["portfolio"]["positions"], b = direct["portfolio"]["positions"];
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].get<double>(), b[i].get<double>(), 1e-12);
  fs::remove_all(dir);
}

TEST(Cli, SweepWritesCsvFile) {
  const fs::path dir = scratch_dir();
  const fs::path out = dir / "sweep.csv";
  ASSERT_EQ(cli("sweep --model mv --alphas 2,3 --n 10 --trials 3 --seed 1 --out " + out.string()).code, 0);
  EXPECT_FALSE(fs::exists(out.string() + ".tmp"));
  const std::string text = slurp(out);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "alpha,q_mean,q_se,eps_mean,eps_se,q_replica,eps_replica,n_diverged,se_warning");
  EXPECT_EQ(text, slurp(fs::path(BPFOLIO_TEST_DATA) / "sweep_golden.csv"));
  EXPECT_EQ(cli("sweep --alphas 0.5 --n 10 --trials 2").code, 1);
  fs::remove_all(dir);
}

TEST(Cli, TheoryReplicaMeanVariance) {
  const CliRun r = cli("theory replica --model mv --alpha 3 --beta 10");
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["q"].get<double>(), 1.5, 1e-12);
  EXPECT_NEAR(j["chi"].get<double>(), 0.05, 1e-12);
  EXPECT_FALSE(j["divergent"].get<bool>());
  const json d = json::parse(cli("theory replica --model mv --alpha 1 --beta 10").out);
  EXPECT_TRUE(d["divergent"].get<bool>());
  EXPECT_TRUE(d["q"].is_null());
}

TEST(Cli, TheoryMarchenkoPastur) {
  const json j = json::parse(cli("theory mp --alpha 2").out);
  EXPECT_NEAR(j["lambda_plus"].get<double>(), std::pow(1 + std::sqrt(2.0), 2), 1e-12);
  EXPECT_NEAR(j["lambda_minus"].get<double>(), std::pow(std::sqrt(2.0) - 1, 2), 1e-12);
  EXPECT_NEAR(j["inv_lambda_mean"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(j["q"].get<double>(), 2.0, 1e-12);
  EXPECT_NEAR(j["eps"].get<double>(), 0.5, 1e-12);
}

TEST(Cli, TheoryAnnealed) {
  const json j = json::parse(cli("theory annealed --model ad --alpha 2 --s 1").out);
  EXPECT_NEAR(j["value"].get<double>(), 2.0 * std::sqrt(2.0 / M_PI), 1e-12);
  EXPECT_EQ(cli("theory annealed --model es --alpha 2 --s 1 --gamma 0.1").code, 0);
}

TEST(Cli, KyCounterexample) {
  const CliRun r = cli("ky --counterexample");
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_FALSE(j["equal"].get<bool>());
  EXPECT_NEAR(j["w_mv"][1].get<double>(), 2.0, 1e-12);
  EXPECT_NEAR(j["w_ad"][0].get<double>(), -1.0, 1e-12);
  EXPECT_NEAR(j["cosine"].get<double>(), 6.0 / std::sqrt(40.0), 1e-12);
}
