// Command-line front door for the CME toolkit: estimate / simulate /
// benchmark / diagnose. All outputs are plot-ready JSON/CSV; runtime notes go
// to run.log so the data payloads stay byte-identical across thread counts.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cme/cme.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int threads = 0;  // 0 → keep default (CME_THREADS env or hardware)

  void attach(CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--seed", seed, "Master RNG seed")->capture_default_str();
    cmd->add_option("--threads", threads,
                    "Worker thread cap (0 = CME_THREADS env or hardware)")
        ->capture_default_str();
  }

  void apply() const {
    if (threads > 0) cme::set_max_threads(threads);
    fs::create_directories(out_dir);
  }

  std::string path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }
};

struct DataOptions {
  std::string data_path;
  std::string outcome = "Y", treatment = "D", moderator = "X";
  std::vector<std::string> covariates;
  bool binary_treatment = false;
  std::string missing = "reject";

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data_path, "Input CSV (header row required)")->required();
    cmd->add_option("--outcome", outcome, "Outcome column")->capture_default_str();
    cmd->add_option("--treatment", treatment, "Treatment column")->capture_default_str();
    cmd->add_option("--moderator", moderator, "Moderator column")->capture_default_str();
    cmd->add_option("--covariates", covariates, "Covariate columns")->delimiter(',');
    cmd->add_flag("--binary-treatment", binary_treatment, "Treatment is declared 0/1");
    cmd->add_option("--missing", missing, "Missing-value policy")
        ->check(CLI::IsMember({"reject", "drop"}))
        ->capture_default_str();
  }

  cme::Dataset load() const {
    cme::ColumnRoles roles;
    roles.outcome = outcome;
    roles.treatment = treatment;
    roles.moderator = moderator;
    roles.covariates = covariates;
    roles.treatment_binary = binary_treatment;
    return cme::ingest_csv(data_path, roles,
                           missing == "drop" ? cme::MissingPolicy::drop_rows
                                             : cme::MissingPolicy::reject);
  }
};

struct EstimatorOptions {
  std::string estimator = "kernel";
  std::string learner = "lasso_basis";
  std::string kernel = "epanechnikov";
  double bandwidth = 0.0;
  int cv_folds = 5;
  int k_folds = 5;
  int n_bins = 3;
  bool interact_covariates = false;
  int n_boot = 200;
  double level = 0.95;
  int grid_size = 50;

  void attach(CLI::App* cmd) {
    cmd->add_option("--estimator", estimator,
                    "linear | binning | kernel | aipw | pds_lasso | dml")
        ->capture_default_str();
    cmd->add_option("--learner", learner, "Nuisance learner: lasso_basis | boosted_trees")
        ->capture_default_str();
    cmd->add_option("--kernel", kernel, "epanechnikov | uniform | gaussian")
        ->capture_default_str();
    cmd->add_option("--bandwidth", bandwidth, "Kernel bandwidth (0 = cross-validated)")
        ->capture_default_str();
    cmd->add_option("--cv-folds", cv_folds, "Bandwidth CV folds")->capture_default_str();
    cmd->add_option("--k-folds", k_folds, "Cross-fitting folds (aipw/dml)")
        ->capture_default_str();
    cmd->add_option("--n-bins", n_bins, "Bins for the binning estimator")
        ->capture_default_str();
    cmd->add_flag("--interact-covariates", interact_covariates,
                  "Bin-specific covariate coefficients in the binning model");
    cmd->add_option("--n-boot", n_boot, "Bootstrap replicates for uniform bands (0 = off)")
        ->capture_default_str();
    cmd->add_option("--level", level, "Confidence level")->capture_default_str();
    cmd->add_option("--grid-size", grid_size, "Moderator grid size")->capture_default_str();
  }

  cme::EstimationRequest to_request() const {
    cme::EstimationRequest request;
    request.estimator = cme::estimator_from_string(estimator);
    request.learner = cme::learner_from_string(learner);
    request.kernel_spec.kernel = cme::kernel_from_string(kernel);
    request.kernel_spec.bandwidth = bandwidth;
    request.kernel_spec.cv_folds = cv_folds;
    request.k_folds = k_folds;
    request.n_bins = n_bins;
    request.interact_covariates = interact_covariates;
    request.n_boot = n_boot;
    request.level = level;
    request.grid_size = grid_size;
    return request;
  }
};

struct DgpOptions {
  std::string dgp = "key_a1";
  int n = 5000;
  std::vector<std::string> params;  // key=value pairs for the custom DGP

  void attach(CLI::App* cmd) {
    cmd->add_option("--dgp", dgp, "key_a1 | fig3_binary | fig4_continuous | linear_null | custom")
        ->capture_default_str();
    cmd->add_option("--n", n, "Sample size")->capture_default_str();
    cmd->add_option("--param", params, "Custom-DGP parameter key=value (repeatable)");
  }

  cme::DgpSpec to_spec() const {
    std::map<std::string, double> parameters;
    for (const auto& kv : params) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw cme::validation_error("--param expects key=value, got '" + kv + "'");
      parameters[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    }
    return cme::make_dgp(cme::dgp_from_string(dgp), std::move(parameters));
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw cme::validation_error("cannot open '" + path + "'");
  out << text;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

void write_run_log(const CommonOptions& common, double seconds) {
  std::ofstream out(common.path("run.log"));
  out << "runtime_seconds " << seconds << "\n"
      << "threads " << cme::max_threads() << "\n";
}

// Resolved settings for the subcommand that ran.  Unset repeatable options
// serialize as key="" and would re-parse as a single empty token, so they
// are dropped; every remaining line re-runs to the same outputs.
std::string resolved_config(const CLI::App& app, const std::string& subcommand) {
  std::istringstream full(app.config_to_str(true, false));
  std::string line, kept;
  const std::string prefix = subcommand + ".";
  while (std::getline(full, line)) {
    if (line.rfind(prefix, 0) != 0) continue;
    const auto eq = line.find('=');
    const std::string value = eq == std::string::npos ? "" : line.substr(eq + 1);
    if (value == "\"\"" || value == "''") continue;
    kept += line + "\n";
  }
  return kept;
}

nlohmann::json oracle_formulas(cme::DgpName name) {
  using cme::DgpName;
  switch (name) {
    case DgpName::key_a1: return {{"cme", "x - 0.5"}, {"cape", "2*d - 0.5"}};
    case DgpName::fig3_binary: return {{"cme", "1 - x^2"}};
    case DgpName::fig4_continuous: return {{"cme", "x - x^2"}, {"cape", "2*d - x^2"}};
    case DgpName::linear_null: return {{"cme", "1"}};
    case DgpName::custom: return nullptr;
  }
  return nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional marginal effect estimation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file (command-line flags win on conflict)");

  auto* cmd_estimate = app.add_subcommand("estimate", "Estimate a CME curve from a CSV dataset");
  CommonOptions est_common;
  DataOptions est_data;
  EstimatorOptions est_opts;
  est_common.attach(cmd_estimate);
  est_data.attach(cmd_estimate);
  est_opts.attach(cmd_estimate);

  auto* cmd_simulate = app.add_subcommand("simulate", "Sample a named DGP to CSV");
  CommonOptions sim_common;
  DgpOptions sim_dgp;
  sim_common.attach(cmd_simulate);
  sim_dgp.attach(cmd_simulate);

  auto* cmd_benchmark =
      app.add_subcommand("benchmark", "Monte Carlo bias/RMSE/coverage study on a DGP");
  CommonOptions bench_common;
  DgpOptions bench_dgp;
  EstimatorOptions bench_opts;
  int bench_reps = 200;
  bench_common.attach(cmd_benchmark);
  bench_dgp.attach(cmd_benchmark);
  bench_opts.attach(cmd_benchmark);
  cmd_benchmark->add_option("--reps", bench_reps, "Monte Carlo replications")
      ->capture_default_str();

  auto* cmd_diagnose = app.add_subcommand("diagnose", "Overlap diagnostics for a CSV dataset");
  CommonOptions diag_common;
  DataOptions diag_data;
  std::string diag_kernel = "epanechnikov";
  double diag_bandwidth = 0.0;
  int diag_grid_size = 50;
  diag_common.attach(cmd_diagnose);
  diag_data.attach(cmd_diagnose);
  cmd_diagnose->add_option("--kernel", diag_kernel, "epanechnikov | uniform | gaussian")
      ->capture_default_str();
  cmd_diagnose->add_option("--bandwidth", diag_bandwidth,
                           "Bandwidth for effective-n (0 = sd(X)·n^{-1/5})")
      ->capture_default_str();
  cmd_diagnose->add_option("--grid-size", diag_grid_size, "Moderator grid size")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  try {
    if (cmd_estimate->parsed()) {
      est_common.apply();
      const cme::EstimationRequest request = est_opts.to_request();
      const cme::Dataset data = est_data.load();
      const cme::Vector grid = cme::make_grid(data, request.grid_size);
      const cme::CmeCurve curve = cme::run_estimation(data, grid, request, est_common.seed);
      cme::curve_to_json_file(curve, est_common.path("curve.json"));
      cme::curve_to_csv(curve, est_common.path("curve.csv"));
      const auto diag = cme::overlap_diagnostic(
          data, curve.grid,
          cme::KernelSpec{request.kernel_spec.kernel,
                          std::isfinite(curve.metadata.bandwidth) ? curve.metadata.bandwidth
                                                                  : 0.0,
                          request.kernel_spec.cv_folds, cme::Vector()});
      write_json(est_common.path("overlap.json"), cme::overlap_to_json(diag));
      write_text(est_common.path("resolved_config.ini"), resolved_config(app, "estimate"));
      write_run_log(est_common, elapsed());
    } else if (cmd_simulate->parsed()) {
      sim_common.apply();
      const cme::DgpSpec spec = sim_dgp.to_spec();
      const cme::Dataset data = cme::sample(spec, sim_dgp.n, sim_common.seed);
      cme::write_csv(data, sim_common.path("data.csv"));
      nlohmann::json sidecar;
      sidecar["dgp"] = cme::to_string(spec.name);
      sidecar["n"] = sim_dgp.n;
      sidecar["seed"] = sim_common.seed;
      sidecar["columns"] = data.column_names;
      sidecar["treatment_binary"] = data.treatment_binary;
      sidecar["parameters"] = spec.parameters;
      sidecar["oracle"] = oracle_formulas(spec.name);
      write_json(sim_common.path("data_meta.json"), sidecar);
      write_text(sim_common.path("resolved_config.ini"), resolved_config(app, "simulate"));
      write_run_log(sim_common, elapsed());
    } else if (cmd_benchmark->parsed()) {
      bench_common.apply();
      const cme::DgpSpec spec = bench_dgp.to_spec();
      const cme::EstimationRequest request = bench_opts.to_request();
      const cme::McReport report =
          cme::run_mc(spec, request, bench_dgp.n, bench_reps, bench_common.seed);
      write_json(bench_common.path("report.json"), cme::report_to_json(report));
      cme::report_to_csv(report, bench_common.path("report.csv"));
      write_text(bench_common.path("resolved_config.ini"), resolved_config(app, "benchmark"));
      write_run_log(bench_common, report.runtime_seconds);
    } else if (cmd_diagnose->parsed()) {
      diag_common.apply();
      const cme::Dataset data = diag_data.load();
      const cme::Vector grid = cme::make_grid(data, diag_grid_size);
      cme::KernelSpec spec;
      spec.kernel = cme::kernel_from_string(diag_kernel);
      spec.bandwidth = diag_bandwidth;
      const auto diag = cme::overlap_diagnostic(data, grid, spec);
      write_json(diag_common.path("overlap.json"), cme::overlap_to_json(diag));
      cme::overlap_to_csv(diag, diag_common.path("overlap.csv"));
      write_text(diag_common.path("resolved_config.ini"), resolved_config(app, "diagnose"));
      write_run_log(diag_common, elapsed());
    }
  } catch (const cme::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cme::estimation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
