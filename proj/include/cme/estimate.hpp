#pragma once

#include "cme/debiased.hpp"
#include "cme/kernel.hpp"
#include "cme/linear_binning.hpp"

namespace cme {

enum class EstimatorKind { linear, binning, kernel, aipw, pds_lasso, dml };

inline const std::vector<std::pair<EstimatorKind, std::string>>& estimator_names() {
  static const std::vector<std::pair<EstimatorKind, std::string>> names = {
      {EstimatorKind::linear, "linear"},       {EstimatorKind::binning, "binning"},
      {EstimatorKind::kernel, "kernel"},       {EstimatorKind::aipw, "aipw"},
      {EstimatorKind::pds_lasso, "pds_lasso"}, {EstimatorKind::dml, "dml"}};
  return names;
}

inline std::string to_string(EstimatorKind kind) {
  for (const auto& [k, name] : estimator_names())
    if (k == kind) return name;
  return "?";
}

inline EstimatorKind estimator_from_string(const std::string& s) {
  std::string valid;
  for (const auto& [k, name] : estimator_names()) {
    if (name == s) return k;
    valid += (valid.empty() ? "" : ", ") + name;
  }
  throw validation_error("unknown estimator '" + s + "' (valid: " + valid + ")");
}

/// Everything needed to run one estimator apart from the data and the seed.
struct EstimationRequest {
  EstimatorKind estimator = EstimatorKind::kernel;
  KernelSpec kernel_spec;        // kernel / aipw / dml second stage
  int n_bins = 3;                // binning
  bool interact_covariates = false;
  NuisanceLearner learner = NuisanceLearner::lasso_basis;  // aipw / dml
  int k_folds = 5;
  int n_boot = 200;
  double level = 0.95;
  int grid_size = 50;
};

/// Dispatches to the requested estimator. The binning estimator ignores the
/// grid (it evaluates at within-bin medians) and carries no bootstrap band.
inline CmeCurve run_estimation(const Dataset& data, const Vector& grid,
                               const EstimationRequest& request, std::uint64_t seed) {
  switch (request.estimator) {
    case EstimatorKind::linear:
      return estimate_linear(data, grid, request.n_boot, request.level, seed);
    case EstimatorKind::binning:
      return estimate_binning(data, make_bin_spec(data, request.n_bins,
                                                  request.interact_covariates),
                              request.level);
    case EstimatorKind::kernel:
      return estimate_kernel(data, grid, request.kernel_spec, request.n_boot, request.level,
                             seed);
    case EstimatorKind::aipw: {
      const auto nuis = fit_nuisances(data, request.learner, request.k_folds, seed);
      return estimate_aipw(data, nuis, grid, request.kernel_spec, request.n_boot,
                           request.level, seed);
    }
    case EstimatorKind::pds_lasso:
      return estimate_pds_lasso(data, grid, request.n_boot, request.level, seed);
    case EstimatorKind::dml: {
      const auto nuis = fit_nuisances(data, request.learner, request.k_folds, seed);
      return estimate_dml_plm(data, nuis, grid, request.kernel_spec, request.n_boot,
                              request.level, seed);
    }
  }
  throw validation_error("run_estimation: unhandled estimator");
}

}  // namespace cme
