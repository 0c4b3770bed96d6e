// End-to-end tests for the `cme` binary.  The path to the binary arrives as
// argv[1] (wired through CTest); every test shells out and inspects the
// files and exit codes the process leaves behind.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

static std::string g_cli;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("cme_cli_test_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
  int exit_code = -1;
  std::string err;
};

RunResult run_cli(const TempDir& dir, const std::string& args) {
  static int run_id = 0;
  const std::string err_path = dir.file("stderr_" + std::to_string(run_id++) + ".txt");
  const std::string cmd = g_cli + " " + args + " >/dev/null 2>" + err_path;
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_path);
  std::stringstream buf;
  buf << in.rdbuf();
  result.err = buf.str();
  return result;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const std::string& path) { return json::parse(read_file(path)); }

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Simulates key_a1 into dir/name and returns the CSV path.
std::string simulate_key_a1(const TempDir& dir, const std::string& name, int n, int seed) {
  const auto res = run_cli(dir, "simulate --dgp key_a1 --n " + std::to_string(n) + " --seed " +
                                    std::to_string(seed) + " --out " + dir.file(name));
  EXPECT_EQ(res.exit_code, 0) << res.err;
  return dir.file(name) + "/data.csv";
}

}  // namespace

// ---------------------------------------------------------------- simulate

TEST(Simulate, DeterministicAndSeedSensitive) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "simulate --dgp key_a1 --n 150 --seed 7 --out " + dir.file("a")).exit_code,
            0);
  ASSERT_EQ(run_cli(dir, "simulate --dgp key_a1 --n 150 --seed 7 --out " + dir.file("b")).exit_code,
            0);
  ASSERT_EQ(run_cli(dir, "simulate --dgp key_a1 --n 150 --seed 8 --out " + dir.file("c")).exit_code,
            0);
  const std::string a = read_file(dir.file("a") + "/data.csv");
  EXPECT_EQ(a, read_file(dir.file("b") + "/data.csv"));
  EXPECT_NE(a, read_file(dir.file("c") + "/data.csv"));
}

TEST(Simulate, SchemaAndOracleSidecar) {
  TempDir dir;
  ASSERT_EQ(
      run_cli(dir, "simulate --dgp fig4_continuous --n 100 --seed 3 --out " + dir.file("f4"))
          .exit_code,
      0);
  const std::string csv = read_file(dir.file("f4") + "/data.csv");
  EXPECT_EQ(count_lines(csv), 101);  // header + 100 rows
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "Y,D,X");

  const json meta = read_json(dir.file("f4") + "/data_meta.json");
  EXPECT_EQ(meta.at("dgp"), "fig4_continuous");
  EXPECT_EQ(meta.at("n"), 100);
  EXPECT_EQ(meta.at("seed"), 3);
  EXPECT_EQ(meta.at("columns"), (std::vector<std::string>{"Y", "D", "X"}));
  EXPECT_FALSE(meta.at("treatment_binary").get<bool>());
  EXPECT_EQ(meta.at("oracle").at("cme"), "x - x^2");
  EXPECT_EQ(meta.at("oracle").at("cape"), "2*d - x^2");

  ASSERT_EQ(run_cli(dir, "simulate --dgp fig3_binary --n 50 --seed 3 --out " + dir.file("f3"))
                .exit_code,
            0);
  const json meta3 = read_json(dir.file("f3") + "/data_meta.json");
  EXPECT_EQ(meta3.at("columns"), (std::vector<std::string>{"Y", "D", "X", "Z1", "Z2"}));
  EXPECT_TRUE(meta3.at("treatment_binary").get<bool>());
  EXPECT_EQ(meta3.at("oracle").at("cme"), "1 - x^2");
}

TEST(Simulate, UnknownDgpIsValidationExit) {
  TempDir dir;
  const auto res = run_cli(dir, "simulate --dgp nope --n 10 --out " + dir.file("x"));
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.err.find("unknown DGP"), std::string::npos);
}

// ---------------------------------------------------------------- estimate

TEST(Estimate, WritesCurveOverlapConfigAndLog) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 200, 7);
  const auto res = run_cli(dir, "estimate --data " + csv +
                                    " --estimator kernel --bandwidth 0.5 --n-boot 60"
                                    " --grid-size 15 --seed 3 --out " +
                                    dir.file("est"));
  ASSERT_EQ(res.exit_code, 0) << res.err;
  for (const char* name : {"curve.json", "curve.csv", "overlap.json", "resolved_config.ini",
                           "run.log"})
    EXPECT_TRUE(fs::exists(dir.file("est") + "/" + name)) << name;

  const json curve = read_json(dir.file("est") + "/curve.json");
  EXPECT_EQ(curve.at("grid").size(), 15u);
  EXPECT_EQ(curve.at("estimate").size(), 15u);
  EXPECT_EQ(curve.at("std_error").size(), 15u);
  EXPECT_EQ(curve.at("ci_pointwise").at("lower").size(), 15u);
  EXPECT_EQ(curve.at("ci_uniform").at("upper").size(), 15u);
  EXPECT_EQ(curve.at("trimmed").size(), 15u);
  EXPECT_EQ(curve.at("metadata").at("estimator"), "kernel_epanechnikov");
  EXPECT_EQ(curve.at("metadata").at("n"), 200);
  EXPECT_EQ(curve.at("metadata").at("n_boot"), 60);
  EXPECT_DOUBLE_EQ(curve.at("metadata").at("bandwidth").get<double>(), 0.5);

  const std::string curve_csv = read_file(dir.file("est") + "/curve.csv");
  EXPECT_EQ(curve_csv.substr(0, curve_csv.find('\n')),
            "grid,estimate,std_error,ci_pointwise_lower,ci_pointwise_upper,"
            "ci_uniform_lower,ci_uniform_upper,trimmed");
  EXPECT_EQ(count_lines(curve_csv), 16);

  const json overlap = read_json(dir.file("est") + "/overlap.json");
  EXPECT_EQ(overlap.at("bin_edges").size(), 31u);
  EXPECT_FALSE(overlap.at("binary").get<bool>());
  EXPECT_TRUE(overlap.contains("counts_all"));
  EXPECT_EQ(overlap.at("grid").size(), 15u);

  std::istringstream log(read_file(dir.file("est") + "/run.log"));
  std::string key;
  double seconds = -1;
  log >> key >> seconds;
  EXPECT_EQ(key, "runtime_seconds");
  EXPECT_GE(seconds, 0.0);
  int threads = 0;
  log >> key >> threads;
  EXPECT_EQ(key, "threads");
  EXPECT_GE(threads, 1);
}

TEST(Estimate, UnknownEstimatorListsValidNames) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 60, 1);
  const auto res =
      run_cli(dir, "estimate --data " + csv + " --estimator bogus --out " + dir.file("e"));
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.err.find("linear"), std::string::npos);
  EXPECT_NE(res.err.find("pds_lasso"), std::string::npos);
}

TEST(Estimate, MissingColumnIsValidationExit) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 60, 1);
  const auto res =
      run_cli(dir, "estimate --data " + csv + " --moderator NOPE --out " + dir.file("e"));
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.err.find("missing column"), std::string::npos);
}

TEST(Estimate, ThinBinPropagatesEstimationExit) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 29, 2);  // terciles leave a 9-row bin
  const auto res = run_cli(dir, "estimate --data " + csv +
                                    " --estimator binning --n-boot 0 --out " + dir.file("e"));
  EXPECT_EQ(res.exit_code, 3);
  EXPECT_NE(res.err.find("bin"), std::string::npos);
}

TEST(Estimate, ResolvedConfigReRunsByteIdentical) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 200, 7);
  ASSERT_EQ(run_cli(dir, "estimate --data " + csv +
                             " --estimator kernel --bandwidth 0.5 --n-boot 60 --grid-size 15"
                             " --seed 3 --out " +
                             dir.file("first"))
                .exit_code,
            0);
  const auto rerun = run_cli(dir, "--config " + dir.file("first") + "/resolved_config.ini" +
                                      " estimate --out " + dir.file("second"));
  ASSERT_EQ(rerun.exit_code, 0) << rerun.err;
  EXPECT_EQ(read_file(dir.file("first") + "/curve.json"),
            read_file(dir.file("second") + "/curve.json"));
  EXPECT_EQ(read_file(dir.file("first") + "/curve.csv"),
            read_file(dir.file("second") + "/curve.csv"));
  EXPECT_EQ(read_file(dir.file("first") + "/overlap.json"),
            read_file(dir.file("second") + "/overlap.json"));
}

TEST(Estimate, ThreadCountDoesNotChangeOutputs) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 200, 7);
  const std::string flags = "estimate --data " + csv +
                            " --estimator kernel --bandwidth 0.5 --n-boot 60 --grid-size 15"
                            " --seed 3";
  ASSERT_EQ(run_cli(dir, flags + " --threads 1 --out " + dir.file("t1")).exit_code, 0);
  ASSERT_EQ(run_cli(dir, flags + " --threads 4 --out " + dir.file("t4")).exit_code, 0);
  EXPECT_EQ(read_file(dir.file("t1") + "/curve.json"), read_file(dir.file("t4") + "/curve.json"));
  EXPECT_EQ(read_file(dir.file("t1") + "/overlap.json"),
            read_file(dir.file("t4") + "/overlap.json"));
}

TEST(Estimate, BinaryTreatmentFlagGatesAipw) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, "simulate --dgp fig3_binary --n 400 --seed 9 --out " + dir.file("sim"))
                .exit_code,
            0);
  const std::string base = "estimate --data " + dir.file("sim") + "/data.csv" +
                           " --covariates Z1,Z2 --estimator aipw --k-folds 2 --bandwidth 0.6"
                           " --n-boot 0 --grid-size 7";
  const auto without = run_cli(dir, base + " --out " + dir.file("no_flag"));
  EXPECT_EQ(without.exit_code, 2);
  EXPECT_NE(without.err.find("binary treatment"), std::string::npos);

  const auto with = run_cli(dir, base + " --binary-treatment --out " + dir.file("flag"));
  ASSERT_EQ(with.exit_code, 0) << with.err;
  EXPECT_EQ(read_json(dir.file("flag") + "/curve.json").at("metadata").at("estimator"),
            "aipw_lasso_basis");
}

// ---------------------------------------------------------------- benchmark

TEST(Benchmark, WritesReportFiles) {
  TempDir dir;
  const auto res = run_cli(dir,
                           "benchmark --dgp key_a1 --estimator kernel --bandwidth 0.6 --reps 5"
                           " --n 300 --grid-size 7 --n-boot 0 --seed 5 --out " +
                               dir.file("bench"));
  ASSERT_EQ(res.exit_code, 0) << res.err;

  const json report = read_json(dir.file("bench") + "/report.json");
  EXPECT_EQ(report.at("dgp"), "key_a1");
  EXPECT_EQ(report.at("estimator"), "kernel");
  EXPECT_EQ(report.at("n"), 300);
  EXPECT_EQ(report.at("replications"), 5);
  EXPECT_EQ(report.at("grid").size(), 7u);
  EXPECT_EQ(report.at("bias").size(), 7u);
  EXPECT_TRUE(report.at("coverage_uniform").is_null());  // n_boot = 0
  EXPECT_FALSE(report.contains("runtime_seconds"));      // lives in run.log instead

  const std::string csv = read_file(dir.file("bench") + "/report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "dgp,estimator,n,replications,grid,bias,rmse,coverage_pointwise,"
            "coverage_uniform,rejection_rate");
  EXPECT_EQ(count_lines(csv), 8);
  EXPECT_TRUE(fs::exists(dir.file("bench") + "/run.log"));
}

TEST(Benchmark, CustomDgpRequiresOracle) {
  TempDir dir;
  const auto res = run_cli(
      dir, "benchmark --dgp custom --estimator linear --reps 2 --n 100 --out " + dir.file("b"));
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.err.find("oracle required"), std::string::npos);
}

TEST(Benchmark, ResolvedConfigReRunsByteIdentical) {
  TempDir dir;
  const std::string flags =
      "benchmark --dgp key_a1 --estimator kernel --bandwidth 0.6 --reps 5 --n 300"
      " --grid-size 7 --n-boot 0 --seed 5";
  ASSERT_EQ(run_cli(dir, flags + " --out " + dir.file("first")).exit_code, 0);
  const auto rerun = run_cli(dir, "--config " + dir.file("first") + "/resolved_config.ini" +
                                      " benchmark --out " + dir.file("second"));
  ASSERT_EQ(rerun.exit_code, 0) << rerun.err;
  EXPECT_EQ(read_file(dir.file("first") + "/report.json"),
            read_file(dir.file("second") + "/report.json"));
  EXPECT_EQ(read_file(dir.file("first") + "/report.csv"),
            read_file(dir.file("second") + "/report.csv"));
}

// ---------------------------------------------------------------- diagnose

TEST(Diagnose, WritesOverlapFiles) {
  TempDir dir;
  const std::string csv = simulate_key_a1(dir, "sim", 200, 7);
  const auto res =
      run_cli(dir, "diagnose --data " + csv + " --grid-size 5 --out " + dir.file("diag"));
  ASSERT_EQ(res.exit_code, 0) << res.err;

  const json overlap = read_json(dir.file("diag") + "/overlap.json");
  EXPECT_EQ(overlap.at("bin_edges").size(), 31u);
  int total = 0;
  for (const auto& c : overlap.at("counts_all")) total += c.get<int>();
  EXPECT_EQ(total, 200);
  EXPECT_EQ(overlap.at("grid").size(), 5u);
  EXPECT_EQ(overlap.at("effective_n").size(), 5u);

  const std::string overlap_csv = read_file(dir.file("diag") + "/overlap.csv");
  EXPECT_EQ(count_lines(overlap_csv), 36);  // header + 30 bins + 5 grid rows
  EXPECT_EQ(overlap_csv.substr(0, overlap_csv.find('\n')),
            "kind,lower,upper,count_treated,count_control,count_all,grid,effective_n,flagged");
}

// ---------------------------------------------------------------- parsing

TEST(ParseErrors, BadInvocationsExitTwo) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, "").exit_code, 2);               // subcommand required
  EXPECT_EQ(run_cli(dir, "frobnicate").exit_code, 2);     // unknown subcommand
  EXPECT_EQ(run_cli(dir, "estimate").exit_code, 2);       // --data is required
  EXPECT_EQ(run_cli(dir, "simulate --dgp key_a1 --n 10 --bogus-flag --out " + dir.file("x"))
                .exit_code,
            2);
}

int main(int argc, char** argv) {
  if (argc > 1) g_cli = argv[1];
  ::testing::InitGoogleTest(&argc, argv);
  if (g_cli.empty()) {
    std::fprintf(stderr, "usage: test_cli <path-to-cme-binary>\n");
    return 1;
  }
  return RUN_ALL_TESTS();
}
