// End-to-end checks of the command-line tool. Each test runs the real binary
// in a fresh temporary directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <fmt/format.h>
#include <gtest/gtest.h>
#include <json.hpp>

#include "twoarm/csv.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / fmt::format("twoarm_cli_{}", info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  int run(const std::string& args) const {
    const std::string cmd = fmt::format("\"{}\" {} > \"{}\" 2>&1", TWOARM_CLI_PATH, args, (root_ / "log.txt").string());
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string log() const { return slurp(root_ / "log.txt"); }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  std::string write_config(const std::string& name, const std::string& body) const {
    std::ofstream(root_ / name) << body;
    return (root_ / name).string();
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }

  fs::path root_;
};

TEST_F(Cli, SimulateIsDeterministicAndDrawsTheRequestedReferenceSize) {
  ASSERT_EQ(run(fmt::format("simulate --overlap high --seed 3 --out {}", path("a").string())), 0) << log();
  ASSERT_EQ(run(fmt::format("simulate --overlap high --seed 3 --out {}", path("b").string())), 0) << log();
  for (const char* f : {"population.csv", "pooled_sample.csv", "scenario.json"})
    EXPECT_EQ(slurp(path("a") / f), slurp(path("b") / f)) << f;

  // Inclusion probabilities of a fixed-size PPS design sum to the sample size.
  const twoarm::csv::Table pop = twoarm::csv::read((path("a") / "population.csv").string());
  const auto col = pop.column("pi_r");
  double total = 0;
  for (const auto& row : pop.rows) total += std::stod(row[col]);
  EXPECT_NEAR(total, 400.0, 1e-6);
  const auto meta = nlohmann::json::parse(slurp(path("a") / "scenario.json"));
  EXPECT_GT(meta["n_c"].get<int>(), 0);
}

TEST_F(Cli, ValidationFailuresExitWithTwo) {
  EXPECT_EQ(run(fmt::format("simulate --n-r 5000 --out {}", path("x").string())), 2) << log();
  EXPECT_NE(log().find("n_r"), std::string::npos) << log();
  EXPECT_EQ(run("no-such-command"), 2);
  // A malformed input file is a validation error; an unreadable one is an I/O failure.
  const std::string bad_csv = write_config("bad.csv", "z,pi_r,x1\n1,,0.5\n0,abc,0.1\n");
  EXPECT_EQ(run(fmt::format("fit --input {} --out {}", bad_csv, path("y").string())), 2) << log();
  EXPECT_NE(log().find("line 3"), std::string::npos) << log();
  EXPECT_EQ(run(fmt::format("fit --input {} --out {}", path("missing.csv").string(), path("y").string())), 3) << log();
  EXPECT_EQ(run(fmt::format("study --config {} --out {}", write_config("bad.json", R"({"replicatez": 2})"),
                            path("z").string())),
            2)
      << log();
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, FitOnTinyFixtureWritesTaggedColumns) {
  const std::string input = fmt::format("{}/tiny_pooled.csv", TWOARM_FIXTURE_DIR);
  const std::string cfg = write_config("fit.json", R"({"chains": 2, "warmup": 100, "draws": 100})");

  // Default method.
  ASSERT_EQ(run(fmt::format("fit --input {} --spline-columns x1 --config {} --out {}", input, cfg,
                            path("default").string())),
            0)
      << log();
  const twoarm::csv::Table t = twoarm::csv::read((path("default") / "posterior_summary.csv").string());
  ASSERT_EQ(t.rows.size(), 6u);
  for (const char* c : {"two-arm.pi_c_mean", "two-arm.pi_c_q5", "two-arm.pi_c_q95", "two-arm.pi_r_mean"}) {
    const long col = t.column(c);
    ASSERT_GE(col, 0) << c;
    for (const auto& row : t.rows) {
      const double p = std::stod(row[col]);
      EXPECT_GT(p, 0.0) << c;
      EXPECT_LT(p, 1.0) << c;
    }
  }
  EXPECT_TRUE(fs::exists(path("default") / "diagnostics.json"));

  // The pseudo-likelihood methods tag their columns with their own names.
  // Six points are separable by the spline, so the CLW pseudo-likelihood
  // drives the convenience logits far out and only the tags are checked.
  for (const char* method : {"clw", "wvl"}) {
    const fs::path out = path(method);
    ASSERT_EQ(run(fmt::format("fit --input {} --method {} --spline-columns x1 --config {} --out {}", input, method,
                              cfg, out.string())),
              0)
        << log();
    const twoarm::csv::Table m = twoarm::csv::read((out / "posterior_summary.csv").string());
    EXPECT_GE(m.column(fmt::format("{}.pi_c_mean", method)), 0);
    EXPECT_LT(m.column("two-arm.pi_c_mean"), 0);
  }
}

TEST_F(Cli, StudyWritesTwoRowsPerBinAndReproducesOnRerun) {
  const std::string cfg =
      write_config("study.json", R"({"N": 1000, "n_r": 100, "chains": 2, "warmup": 150, "draws": 150, "bins": 5})");
  const fs::path out = path("study");
  const std::string args =
      fmt::format("study --replicates 2 --methods two-arm --config {} --out {}", cfg, out.string());
  ASSERT_EQ(run(args), 0) << log();
  // One row per overlap scenario in every bin.
  const twoarm::csv::Table t = twoarm::csv::read((out / "pointwise_metrics.csv").string());
  const long method = t.column("method"), lo = t.column("bin_lo");
  std::map<std::string, int> per_bin;
  for (const auto& row : t.rows)
    if (row[method] == "two-arm") ++per_bin[row[lo]];
  EXPECT_EQ(per_bin.size(), 5u);
  for (const auto& [bin, count] : per_bin) EXPECT_EQ(count, 2) << "bin starting at " << bin;
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["fits"].size(), 4u);

  auto outputs = [&] {
    std::string all;
    for (const char* f : {"pointwise_metrics.csv", "mu_metrics.csv", "summary_metrics.csv", "manifest.json"})
      all += slurp(out / f);
    return all;
  };
  const std::string before = outputs();
  fs::remove_all(out);
  ASSERT_EQ(run(args), 0) << log();
  EXPECT_EQ(outputs(), before);
}

// Full default sampler settings on one high-overlap replicate. The 90%
// credible intervals for the convenience propensities should cover roughly
// their nominal share of the true values.
TEST_F(Cli, HighOverlapFitCoversTruePropensities) {
  ASSERT_EQ(run(fmt::format("simulate --overlap high --out {}", path("sim").string())), 0) << log();
  ASSERT_EQ(run(fmt::format("fit --input {} --method two-arm --out {}", (path("sim") / "pooled_sample.csv").string(),
                            path("fit").string())),
            0)
      << log();
  const auto diag = nlohmann::json::parse(slurp(path("fit") / "diagnostics.json"));
  const double coverage = diag["pi_c_coverage"].get<double>();
  EXPECT_GE(coverage, 0.80);
  EXPECT_LE(coverage, 0.97);
  EXPECT_LT(diag["max_rhat_pi_c"].get<double>(), 1.05);
}

}  // namespace
