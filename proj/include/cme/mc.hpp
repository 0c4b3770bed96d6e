#pragma once

#include <chrono>
#include <map>

#include "cme/dgp.hpp"
#include "cme/estimate.hpp"

namespace cme {

/// Monte Carlo summary for one (DGP, estimator, n) triple. runtime_seconds
/// is intentionally excluded from JSON so report payloads stay byte-identical
/// across thread counts; it belongs in the run log.
struct McReport {
  std::string dgp;
  std::string estimator;
  int n = 0;
  int replications = 0;
  Vector grid;
  Vector bias;
  Vector rmse;
  Vector coverage_pointwise;
  double coverage_uniform = std::numeric_limits<double>::quiet_NaN();  // NaN when n_boot = 0
  double rejection_rate = std::numeric_limits<double>::quiet_NaN();    // binning only
  int failures = 0;
  std::map<std::string, int> failure_messages;
  double runtime_seconds = 0.0;
};

/// Per-arm (binary D) or overall moderator histograms plus per-grid-point
/// effective sample sizes; the paper's Figure 3 overlap display as data.
struct OverlapDiagnostic {
  bool binary = false;
  Vector bin_edges;  // 31 edges → 30 equal-width bins over [min(X), max(X)]
  std::vector<long> counts_treated;  // binary only
  std::vector<long> counts_control;  // binary only
  std::vector<long> counts_all;      // continuous only
  Vector grid;
  Vector effective_n;  // binary: min over arms of the kernel ESS
  std::vector<bool> flagged;
  double bandwidth = 0.0;
};

inline OverlapDiagnostic overlap_diagnostic(const Dataset& data, const Vector& grid,
                                            const KernelSpec& spec) {
  validate(data);
  OverlapDiagnostic diag;
  diag.binary = data.treatment_binary;
  const int n = data.n();

  const double x_min = data.moderator.minCoeff();
  const double x_max = data.moderator.maxCoeff();
  const int n_bins = 30;
  diag.bin_edges = linspace(x_min, x_max, n_bins + 1);
  const double width = (x_max - x_min) / n_bins;
  auto bin_of = [&](double x) {
    if (!(width > 0.0)) return 0;
    return std::min(n_bins - 1, std::max(0, static_cast<int>((x - x_min) / width)));
  };
  if (diag.binary) {
    diag.counts_treated.assign(n_bins, 0);
    diag.counts_control.assign(n_bins, 0);
    for (int i = 0; i < n; ++i)
      ++(data.treatment[i] == 1.0 ? diag.counts_treated : diag.counts_control)[bin_of(
          data.moderator[i])];
  } else {
    diag.counts_all.assign(n_bins, 0);
    for (int i = 0; i < n; ++i) ++diag.counts_all[bin_of(data.moderator[i])];
  }

  // deterministic bandwidth: the spec's value when given, else a rule-of-thumb
  diag.bandwidth = spec.bandwidth_is_auto()
                       ? sample_sd(data.moderator) * std::pow(static_cast<double>(n), -0.2)
                       : spec.bandwidth;

  diag.grid = grid;
  const int m = static_cast<int>(grid.size());
  diag.effective_n.resize(m);
  diag.flagged.assign(m, false);
  const double threshold = trim_threshold(data.p());
  for (int g = 0; g < m; ++g) {
    double ess_treated = 0.0, ess_control = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = kernel_weight(spec.kernel, (data.moderator[i] - grid[g]) / diag.bandwidth);
      if (w <= 0.0) continue;
      if (diag.binary && data.treatment[i] != 1.0)
        ess_control += w;
      else
        ess_treated += w;
    }
    diag.effective_n[g] = diag.binary ? std::min(ess_treated, ess_control)
                                      : ess_treated;
    diag.flagged[g] = diag.effective_n[g] < threshold;
  }
  return diag;
}

namespace detail {

/// Oracle evaluated at a replication's own evaluation points (binning
/// evaluates at per-replication bin medians; everything else on the fixed
/// reference grid).
inline Vector oracle_on(const DgpSpec& dgp, const Vector& points) {
  Vector truth(points.size());
  for (Eigen::Index k = 0; k < points.size(); ++k) truth[k] = cme_oracle(dgp, points[k]);
  return truth;
}

}  // namespace detail

/// Repeated-draw study. Replication r derives its data and estimation seeds
/// from rng_stream(seed, r); slot-indexed storage plus fixed-order
/// aggregation make the report identical under any thread count.
inline McReport run_mc(const DgpSpec& dgp, const EstimationRequest& request, int n, int R,
                       std::uint64_t seed) {
  if (R < 1) throw validation_error("run_mc: R must be >= 1");
  if (dgp.name == DgpName::custom)
    throw validation_error("run_mc: oracle required (custom DGP has none)");
  const auto start = std::chrono::steady_clock::now();

  // fixed reference grid from a dedicated draw of the same DGP
  auto ref_rng = rng_stream(seed, streams::grid_reference);
  const std::uint64_t ref_seed = ref_rng();
  const Dataset ref_data = sample(dgp, n, ref_seed);
  const Vector grid = request.estimator == EstimatorKind::binning
                          ? make_bin_spec(ref_data, request.n_bins).eval_points
                          : make_grid(ref_data, request.grid_size);
  const int m = static_cast<int>(grid.size());

  struct RepResult {
    Vector estimate, lo_pw, hi_pw, lo_uf, hi_uf, truth;
    std::vector<bool> trimmed;
    bool ok = false;
    bool rejected = false;
    std::string error;
  };
  std::vector<RepResult> reps(R);

  const bool is_binning = request.estimator == EstimatorKind::binning;
  parallel_for(R, [&](int r) {
    auto& rep = reps[r];
    auto rep_rng = rng_stream(seed, static_cast<std::uint64_t>(r));
    const std::uint64_t data_seed = rep_rng();
    const std::uint64_t est_seed = rep_rng();
    try {
      const Dataset data = sample(dgp, n, data_seed);
      const CmeCurve curve = run_estimation(data, grid, request, est_seed);
      if (curve.size() != m) throw estimation_error("replicate grid length changed");
      rep.estimate = curve.estimate;
      rep.lo_pw = curve.ci_pointwise.first;
      rep.hi_pw = curve.ci_pointwise.second;
      if (curve.has_uniform()) {
        rep.lo_uf = curve.ci_uniform.first;
        rep.hi_uf = curve.ci_uniform.second;
      }
      rep.trimmed = curve.trimmed;
      rep.truth = detail::oracle_on(dgp, curve.grid);  // binning: per-rep medians
      if (is_binning)
        rep.rejected = wald_constancy_test(data, make_bin_spec(data, request.n_bins,
                                                               request.interact_covariates))
                           .second < 1.0 - request.level;
      rep.ok = true;
    } catch (const std::exception& e) {
      rep.error = e.what();
    }
  });

  McReport report;
  report.dgp = to_string(dgp.name);
  report.estimator = to_string(request.estimator);
  report.n = n;
  report.replications = R;
  report.grid = grid;

  int n_ok = 0;
  for (const auto& rep : reps) {
    if (rep.ok)
      ++n_ok;
    else
      ++report.failure_messages[rep.error];
  }
  report.failures = R - n_ok;
  if (report.failures > 0.2 * R) {
    std::string breakdown;
    for (const auto& [msg, count] : report.failure_messages)
      breakdown += "\n  " + std::to_string(count) + "x " + msg;
    throw estimation_error("run_mc: estimator failure rate " +
                           std::to_string(static_cast<double>(report.failures) / R) +
                           " exceeds 0.20; breakdown:" + breakdown);
  }
  if (n_ok == 0) throw estimation_error("run_mc: no successful replications");

  report.bias = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  report.rmse = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  report.coverage_pointwise = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  for (int k = 0; k < m; ++k) {
    double sum_err = 0.0, sum_sq = 0.0;
    int used = 0, covered = 0;
    for (const auto& rep : reps) {
      if (!rep.ok || rep.trimmed[k]) continue;
      const double err = rep.estimate[k] - rep.truth[k];
      sum_err += err;
      sum_sq += err * err;
      covered += rep.lo_pw[k] <= rep.truth[k] && rep.truth[k] <= rep.hi_pw[k] ? 1 : 0;
      ++used;
    }
    if (used > 0) {
      report.bias[k] = sum_err / used;
      report.rmse[k] = std::sqrt(sum_sq / used);
      report.coverage_pointwise[k] = static_cast<double>(covered) / used;
    }
  }

  if (request.n_boot > 0 && !is_binning) {
    int covered_all = 0;
    for (const auto& rep : reps) {
      if (!rep.ok) continue;
      bool all = true;
      for (int k = 0; k < m && all; ++k) {
        if (rep.trimmed[k]) continue;
        all = rep.lo_uf[k] <= rep.truth[k] && rep.truth[k] <= rep.hi_uf[k];
      }
      covered_all += all ? 1 : 0;
    }
    report.coverage_uniform = static_cast<double>(covered_all) / n_ok;
  }

  if (is_binning) {
    int rejections = 0;
    for (const auto& rep : reps) rejections += rep.ok && rep.rejected ? 1 : 0;
    report.rejection_rate = static_cast<double>(rejections) / n_ok;
  }

  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline nlohmann::json report_to_json(const McReport& report) {
  nlohmann::json j;
  j["dgp"] = report.dgp;
  j["estimator"] = report.estimator;
  j["n"] = report.n;
  j["replications"] = report.replications;
  j["grid"] = detail::vector_to_json(report.grid);
  j["bias"] = detail::vector_to_json(report.bias);
  j["rmse"] = detail::vector_to_json(report.rmse);
  j["coverage_pointwise"] = detail::vector_to_json(report.coverage_pointwise);
  j["coverage_uniform"] = std::isfinite(report.coverage_uniform)
                              ? nlohmann::json(report.coverage_uniform)
                              : nlohmann::json(nullptr);
  j["rejection_rate"] = std::isfinite(report.rejection_rate)
                            ? nlohmann::json(report.rejection_rate)
                            : nlohmann::json(nullptr);
  j["failures"] = report.failures;
  j["failure_messages"] = report.failure_messages;
  return j;
}

inline McReport report_from_json(const nlohmann::json& j) {
  McReport report;
  report.dgp = j.at("dgp").get<std::string>();
  report.estimator = j.at("estimator").get<std::string>();
  report.n = j.at("n").get<int>();
  report.replications = j.at("replications").get<int>();
  report.grid = detail::vector_from_json(j.at("grid"));
  report.bias = detail::vector_from_json(j.at("bias"));
  report.rmse = detail::vector_from_json(j.at("rmse"));
  report.coverage_pointwise = detail::vector_from_json(j.at("coverage_pointwise"));
  if (!j.at("coverage_uniform").is_null())
    report.coverage_uniform = j.at("coverage_uniform").get<double>();
  if (!j.at("rejection_rate").is_null())
    report.rejection_rate = j.at("rejection_rate").get<double>();
  report.failures = j.at("failures").get<int>();
  report.failure_messages = j.at("failure_messages").get<std::map<std::string, int>>();
  return report;
}

/// Flat plot-ready table: one row per grid point.
inline void report_to_csv(const McReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("report_to_csv: cannot open '" + path + "'");
  out << "dgp,estimator,n,replications,grid,bias,rmse,coverage_pointwise,"
         "coverage_uniform,rejection_rate\n";
  auto cell = [&](double v) { out << ',' << (std::isfinite(v) ? detail::format_double(v) : ""); };
  for (Eigen::Index k = 0; k < report.grid.size(); ++k) {
    out << report.dgp << ',' << report.estimator << ',' << report.n << ','
        << report.replications << ',' << detail::format_double(report.grid[k]);
    cell(report.bias[k]);
    cell(report.rmse[k]);
    cell(report.coverage_pointwise[k]);
    cell(report.coverage_uniform);
    cell(report.rejection_rate);
    out << '\n';
  }
}

inline nlohmann::json overlap_to_json(const OverlapDiagnostic& diag) {
  nlohmann::json j;
  j["binary"] = diag.binary;
  j["bin_edges"] = detail::vector_to_json(diag.bin_edges);
  if (diag.binary) {
    j["counts_treated"] = diag.counts_treated;
    j["counts_control"] = diag.counts_control;
  } else {
    j["counts_all"] = diag.counts_all;
  }
  j["grid"] = detail::vector_to_json(diag.grid);
  j["effective_n"] = detail::vector_to_json(diag.effective_n);
  j["flagged"] = diag.flagged;
  j["bandwidth"] = diag.bandwidth;
  return j;
}

/// Histogram + grid flags, long format: one row per histogram bin, then one
/// row per grid point.
inline void overlap_to_csv(const OverlapDiagnostic& diag, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("overlap_to_csv: cannot open '" + path + "'");
  out << "kind,lower,upper,count_treated,count_control,count_all,grid,effective_n,flagged\n";
  const int n_bins = static_cast<int>(diag.bin_edges.size()) - 1;
  for (int b = 0; b < n_bins; ++b) {
    out << "bin," << detail::format_double(diag.bin_edges[b]) << ','
        << detail::format_double(diag.bin_edges[b + 1]) << ',';
    if (diag.binary)
      out << diag.counts_treated[b] << ',' << diag.counts_control[b] << ",,";
    else
      out << ",," << diag.counts_all[b] << ',';
    out << ",,\n";
  }
  for (Eigen::Index g = 0; g < diag.grid.size(); ++g)
    out << "grid,,,,,," << detail::format_double(diag.grid[g]) << ','
        << detail::format_double(diag.effective_n[g]) << ',' << (diag.flagged[g] ? 1 : 0)
        << '\n';
}

}  // namespace cme
