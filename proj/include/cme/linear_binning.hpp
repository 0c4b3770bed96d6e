#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include "cme/bands.hpp"
#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/wls.hpp"

namespace cme {

namespace detail {

/// Design (1, D, X, DX, Z...) of the classical interaction model.
inline Matrix interaction_design(const Dataset& data) {
  const int n = data.n();
  Matrix design(n, 4 + data.p());
  design.col(0).setOnes();
  design.col(1) = data.treatment;
  design.col(2) = data.moderator;
  design.col(3) = data.treatment.cwiseProduct(data.moderator);
  if (data.p() > 0) design.rightCols(data.p()) = data.covariates;
  return design;
}

}  // namespace detail

/// Classical linear interaction estimator: θ̂(x) = β̂_d + β̂_dx·x with delta-
/// method robust SEs. Uniform bands (n_boot > 0) use the shared sup-t
/// bootstrap with the model refit on resampled rows.
inline CmeCurve estimate_linear(const Dataset& data, const Vector& grid, int n_boot = 0,
                                double level = 0.95, std::uint64_t seed = 0) {
  validate(data);
  if (grid.size() == 0) throw validation_error("estimate_linear: empty grid");
  const Matrix design = detail::interaction_design(data);
  const WlsFit fit = wls(design, data.outcome, Vector::Ones(data.n()));

  const int m = static_cast<int>(grid.size());
  CmeCurve curve;
  curve.grid = grid;
  curve.estimate.resize(m);
  curve.std_error.resize(m);
  curve.trimmed.assign(m, false);
  for (int g = 0; g < m; ++g) {
    const double x0 = grid[g];
    curve.estimate[g] = fit.coefficients[1] + fit.coefficients[3] * x0;
    const double var = fit.covariance(1, 1) + x0 * x0 * fit.covariance(3, 3) +
                       2.0 * x0 * fit.covariance(1, 3);
    curve.std_error[g] = var > 0.0 ? std::sqrt(var) : 0.0;
  }

  const auto bands = detail::compute_bands(
      curve.estimate, curve.std_error, curve.trimmed, level, n_boot, seed,
      [&](RngStream& rng, int, Vector* rep_est, Vector* rep_se) {
        rep_est->setConstant(m, std::numeric_limits<double>::quiet_NaN());
        rep_se->setConstant(m, std::numeric_limits<double>::quiet_NaN());
        const auto idx = detail::bootstrap_indices(rng, data.n());
        Matrix boot_design(data.n(), design.cols());
        Vector boot_y(data.n());
        for (int i = 0; i < data.n(); ++i) {
          boot_design.row(i) = design.row(idx[i]);
          boot_y[i] = data.outcome[idx[i]];
        }
        WlsFit boot_fit;
        try {
          boot_fit = ols(boot_design, boot_y);
        } catch (const estimation_error&) {
          return;  // degenerate resample: leave the replicate marked failed
        }
        for (int g = 0; g < m; ++g) {
          const double x0 = grid[g];
          (*rep_est)[g] = boot_fit.coefficients[1] + boot_fit.coefficients[3] * x0;
          const double var = boot_fit.covariance(1, 1) + x0 * x0 * boot_fit.covariance(3, 3) +
                             2.0 * x0 * boot_fit.covariance(1, 3);
          (*rep_se)[g] = var > 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN();
        }
      });
  curve.ci_pointwise = {bands.pointwise_lower, bands.pointwise_upper};
  if (n_boot > 0) curve.ci_uniform = {bands.uniform_lower, bands.uniform_upper};

  curve.metadata = {"linear", std::numeric_limits<double>::quiet_NaN(), seed, data.n(), n_boot};
  validate(curve);
  return curve;
}

/// Moderator bins with evaluation at within-bin medians.
struct BinSpec {
  int n_bins = 3;
  Vector cut_points;   // n_bins − 1 interior quantiles of X, strictly increasing
  Vector eval_points;  // within-bin medians
  bool interact_covariates = false;  // bin-specific Z coefficients instead of common ones
};

inline int bin_index(const BinSpec& spec, double x) {
  int g = 0;
  while (g < spec.cut_points.size() && x >= spec.cut_points[g]) ++g;
  return g;
}

/// Equal-mass bins at quantiles g/n_bins; default terciles.
inline BinSpec make_bin_spec(const Dataset& data, int n_bins = 3,
                             bool interact_covariates = false) {
  if (n_bins < 1) throw validation_error("make_bin_spec: n_bins must be >= 1");
  BinSpec spec;
  spec.n_bins = n_bins;
  spec.interact_covariates = interact_covariates;
  spec.cut_points.resize(n_bins - 1);
  for (int g = 1; g < n_bins; ++g)
    spec.cut_points[g - 1] = quantile(data.moderator, static_cast<double>(g) / n_bins);
  for (int g = 1; g + 1 < n_bins; ++g)
    if (!(spec.cut_points[g] > spec.cut_points[g - 1]))
      throw validation_error("make_bin_spec: duplicate quantile cut points (too many bins?)");

  spec.eval_points.resize(n_bins);
  for (int g = 0; g < n_bins; ++g) {
    std::vector<double> members;
    for (int i = 0; i < data.n(); ++i)
      if (bin_index(spec, data.moderator[i]) == g) members.push_back(data.moderator[i]);
    if (members.empty())
      throw validation_error("make_bin_spec: empty bin " + std::to_string(g));
    std::sort(members.begin(), members.end());
    spec.eval_points[g] = quantile_sorted(members, 0.5);
  }
  return spec;
}

namespace detail {

/// One joint regression: per-bin {1, D, X−x_g, D(X−x_g)} blocks plus Z
/// (common or bin-interacted). Column 4g+1 carries bin g's CME.
inline Matrix binning_design(const Dataset& data, const BinSpec& spec) {
  const int n = data.n();
  const int G = spec.n_bins;
  const int p = data.p();
  const int z_cols = spec.interact_covariates ? G * p : p;
  Matrix design = Matrix::Zero(n, 4 * G + z_cols);
  for (int i = 0; i < n; ++i) {
    const int g = bin_index(spec, data.moderator[i]);
    const double dx = data.moderator[i] - spec.eval_points[g];
    design(i, 4 * g + 0) = 1.0;
    design(i, 4 * g + 1) = data.treatment[i];
    design(i, 4 * g + 2) = dx;
    design(i, 4 * g + 3) = data.treatment[i] * dx;
    for (int j = 0; j < p; ++j)
      design(i, 4 * G + (spec.interact_covariates ? g * p + j : j)) = data.covariates(i, j);
  }
  return design;
}

/// Cut points at or below min(X) or above max(X) create bins that are empty
/// by construction; prune them (collapsing to fewer bins) rather than
/// erroring. Data-driven emptiness inside the range still fails check_bins.
inline BinSpec normalize_bins(const Dataset& data, const BinSpec& spec) {
  if (spec.cut_points.size() == 0) return spec;
  const double lo = data.moderator.minCoeff();
  const double hi = data.moderator.maxCoeff();
  std::vector<double> kept;
  for (Eigen::Index g = 0; g < spec.cut_points.size(); ++g) {
    const double c = spec.cut_points[g];
    if (c > lo && c <= hi) kept.push_back(c);
  }
  if (static_cast<Eigen::Index>(kept.size()) == spec.cut_points.size()) return spec;

  BinSpec out;
  out.n_bins = static_cast<int>(kept.size()) + 1;
  out.interact_covariates = spec.interact_covariates;
  out.cut_points = Eigen::Map<const Vector>(kept.data(), static_cast<Eigen::Index>(kept.size()));
  out.eval_points.resize(out.n_bins);
  for (int g = 0; g < out.n_bins; ++g) {
    std::vector<double> members;
    for (int i = 0; i < data.n(); ++i)
      if (bin_index(out, data.moderator[i]) == g) members.push_back(data.moderator[i]);
    if (members.empty()) throw validation_error("binning: empty bin " + std::to_string(g));
    std::sort(members.begin(), members.end());
    out.eval_points[g] = quantile_sorted(members, 0.5);
  }
  return out;
}

inline void check_bins(const Dataset& data, const BinSpec& spec) {
  const int G = spec.n_bins;
  for (int g = 1; g < G - 1; ++g)
    if (!(spec.cut_points[g] > spec.cut_points[g - 1]))
      throw validation_error("binning: cut points must be strictly increasing");
  const int min_count = std::max(10, data.p() + 4);
  std::vector<int> count(G, 0);
  std::vector<double> d_min(G, std::numeric_limits<double>::infinity());
  std::vector<double> d_max(G, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < data.n(); ++i) {
    const int g = bin_index(spec, data.moderator[i]);
    ++count[g];
    d_min[g] = std::min(d_min[g], data.treatment[i]);
    d_max[g] = std::max(d_max[g], data.treatment[i]);
  }
  for (int g = 0; g < G; ++g) {
    if (count[g] < min_count)
      throw estimation_error("binning: bin " + std::to_string(g) + " has only " +
                             std::to_string(count[g]) + " observations (need " +
                             std::to_string(min_count) + ")");
    if (!(d_max[g] > d_min[g]))
      throw estimation_error("binning: no treatment variation in bin " + std::to_string(g));
  }
}

struct BinningFit {
  WlsFit fit;
  std::vector<int> theta_cols;  // column of each bin's D coefficient
};

inline BinningFit binning_wls(const Dataset& data, const BinSpec& spec) {
  check_bins(data, spec);
  BinningFit out;
  out.fit = wls(binning_design(data, spec), data.outcome, Vector::Ones(data.n()));
  for (int g = 0; g < spec.n_bins; ++g) out.theta_cols.push_back(4 * g + 1);
  return out;
}

}  // namespace detail

/// Binning estimator: per-bin CMEs at within-bin medians from one joint
/// regression (robust covariance shared with the Wald constancy test).
inline CmeCurve estimate_binning(const Dataset& data, const BinSpec& raw_spec,
                                 double level = 0.95) {
  validate(data);
  const BinSpec spec = detail::normalize_bins(data, raw_spec);
  const auto joint = detail::binning_wls(data, spec);
  const int G = spec.n_bins;

  CmeCurve curve;
  curve.grid = spec.eval_points;
  curve.estimate.resize(G);
  curve.std_error.resize(G);
  curve.trimmed.assign(G, false);
  for (int g = 0; g < G; ++g) {
    const int c = joint.theta_cols[g];
    curve.estimate[g] = joint.fit.coefficients[c];
    curve.std_error[g] = std::sqrt(std::max(0.0, joint.fit.covariance(c, c)));
  }
  const double z = normal_quantile(0.5 + level / 2.0);
  curve.ci_pointwise = {curve.estimate - z * curve.std_error,
                        curve.estimate + z * curve.std_error};
  curve.metadata = {"binning", std::numeric_limits<double>::quiet_NaN(), 0, data.n(), 0};
  validate(curve);
  return curve;
}

/// Wald test of H0: all per-bin CMEs equal, chi-square with n_bins − 1 df.
inline std::pair<double, double> wald_constancy_test(const Dataset& data,
                                                     const BinSpec& raw_spec) {
  validate(data);
  const BinSpec spec = detail::normalize_bins(data, raw_spec);
  if (spec.n_bins < 2)
    throw validation_error("wald_constancy_test: test undefined for one bin");
  const auto joint = detail::binning_wls(data, spec);
  const int G = spec.n_bins;

  // contrasts θ_g − θ_0, g = 1..G−1
  Matrix contrast = Matrix::Zero(G - 1, joint.fit.coefficients.size());
  for (int g = 1; g < G; ++g) {
    contrast(g - 1, joint.theta_cols[0]) = -1.0;
    contrast(g - 1, joint.theta_cols[g]) = 1.0;
  }
  const Vector delta = contrast * joint.fit.coefficients;
  const Matrix var = contrast * joint.fit.covariance * contrast.transpose();
  const double statistic = delta.dot(var.ldlt().solve(delta));
  const boost::math::chi_squared_distribution<> chi2(G - 1);
  const double p_value = boost::math::cdf(boost::math::complement(chi2, std::max(0.0, statistic)));
  return {statistic, p_value};
}

}  // namespace cme
