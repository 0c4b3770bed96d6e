#pragma once

#include "cme/basis.hpp"
#include "cme/boosted_trees.hpp"
#include "cme/kernel.hpp"
#include "cme/lasso.hpp"
#include "cme/linear_binning.hpp"
#include "cme/logistic.hpp"

namespace cme {

enum class NuisanceLearner { lasso_basis, boosted_trees };

inline std::string to_string(NuisanceLearner l) {
  return l == NuisanceLearner::lasso_basis ? "lasso_basis" : "boosted_trees";
}

inline NuisanceLearner learner_from_string(const std::string& s) {
  if (s == "lasso_basis") return NuisanceLearner::lasso_basis;
  if (s == "boosted_trees") return NuisanceLearner::boosted_trees;
  throw validation_error("unknown nuisance learner '" + s + "'");
}

/// Cross-fitted nuisance predictions: every entry for observation i comes
/// from a model that never saw fold_id[i]. Binary-treatment components
/// (propensity, outcome_treated, outcome_control) are empty for continuous D.
struct NuisanceFits {
  Vector propensity;          // ê(V) clipped into [0.01, 0.99]
  Vector outcome_treated;     // m̂₁(V)
  Vector outcome_control;     // m̂₀(V)
  Vector outcome_marginal;    // Ê[Y | V]
  Vector treatment_marginal;  // Ê[D | V]
  std::vector<int> fold_id;
  int clip_count = 0;
  int k_folds = 0;
  std::string learner;
};

inline std::pair<Vector, int> clip_propensity(Vector e, double lo = 0.01, double hi = 0.99) {
  int clipped = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (e[i] < lo) {
      e[i] = lo;
      ++clipped;
    } else if (e[i] > hi) {
      e[i] = hi;
      ++clipped;
    }
  }
  return {std::move(e), clipped};
}

namespace detail {

/// V = (X, Z) feature matrix with stable names.
inline std::pair<Matrix, std::vector<std::string>> nuisance_features(const Dataset& data) {
  Matrix v(data.n(), 1 + data.p());
  v.col(0) = data.moderator;
  if (data.p() > 0) v.rightCols(data.p()) = data.covariates;
  std::vector<std::string> names;
  if (data.column_names.size() == static_cast<std::size_t>(3 + data.p())) {
    names.push_back(data.column_names[2]);
    for (int j = 0; j < data.p(); ++j) names.push_back(data.column_names[3 + j]);
  } else {
    names.push_back("X");
    for (int j = 0; j < data.p(); ++j) names.push_back("Z" + std::to_string(j + 1));
  }
  return {std::move(v), std::move(names)};
}

inline std::vector<int> make_folds(int n, int k_folds, std::uint64_t seed) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = rng_stream(seed, streams::nuisance_folds);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  std::vector<int> fold_of(n);
  for (int i = 0; i < n; ++i) fold_of[order[i]] = i % k_folds;
  return fold_of;
}

inline Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

inline Vector take(const Vector& v, const std::vector<int>& rows) {
  Vector out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

inline Vector lasso_predict(const LassoFit& fit, const Matrix& features) {
  return ((features * fit.coefficients).array() + fit.intercept).matrix();
}

}  // namespace detail

/// Cross-fits all nuisance functions. lasso_basis fits LASSO (outcomes) and
/// logistic ridge (binary propensity) on the polynomial BasisExpansion of
/// V = (X, Z); boosted_trees fits depth-3 GBTs on raw V with a 20%
/// early-stopping validation split inside each training fold.
inline NuisanceFits fit_nuisances(const Dataset& data, NuisanceLearner learner, int k_folds,
                                  std::uint64_t seed) {
  validate(data);
  if (k_folds < 2) throw validation_error("fit_nuisances: k_folds must be >= 2");
  const int n = data.n();
  if (n < 2 * k_folds) throw validation_error("fit_nuisances: too few rows for k_folds");

  const auto [v, v_names] = detail::nuisance_features(data);
  const bool binary = data.treatment_binary;

  NuisanceFits nuis;
  nuis.learner = to_string(learner);
  nuis.k_folds = k_folds;
  nuis.fold_id = detail::make_folds(n, k_folds, seed);
  nuis.outcome_marginal.resize(n);
  nuis.treatment_marginal.resize(n);
  if (binary) {
    nuis.propensity.resize(n);
    nuis.outcome_treated.resize(n);
    nuis.outcome_control.resize(n);
  }

  const Matrix basis = learner == NuisanceLearner::lasso_basis
                           ? basis_expand(v, v_names).columns
                           : Matrix();

  std::vector<std::exception_ptr> errors(k_folds);
  parallel_for(k_folds, [&](int fold) {
    try {
      std::vector<int> train, held;
      for (int i = 0; i < n; ++i)
        (nuis.fold_id[i] == fold ? held : train).push_back(i);

      std::vector<int> treated, control;
      if (binary) {
        for (const int i : train)
          (data.treatment[i] == 1.0 ? treated : control).push_back(i);
        if (treated.empty() || control.empty())
          throw estimation_error("fit_nuisances: one-class treatment in training fold " +
                                 std::to_string(fold));
      }

      const Vector y_train = detail::take(data.outcome, train);
      const Vector d_train = detail::take(data.treatment, train);

      if (learner == NuisanceLearner::lasso_basis) {
        const Matrix b_train = detail::take_rows(basis, train);
        const Matrix b_held = detail::take_rows(basis, held);

        auto fit_and_predict = [&](const Matrix& features, const Vector& response) {
          const double lam = cv_lambda(features, response, 5, seed);
          return detail::lasso_predict(lasso_cd(features, response, lam), b_held);
        };

        const Vector y_hat = fit_and_predict(b_train, y_train);
        for (std::size_t i = 0; i < held.size(); ++i)
          nuis.outcome_marginal[held[i]] = y_hat[i];

        if (binary) {
          // logistic ridge propensity on (1, basis)
          Matrix design(train.size(), basis.cols() + 1);
          design.col(0).setOnes();
          design.rightCols(basis.cols()) = b_train;
          const Vector beta = logistic_irls(design, d_train, 1e-3);
          for (std::size_t i = 0; i < held.size(); ++i) {
            const double eta = beta[0] + b_held.row(i).dot(beta.tail(basis.cols()));
            nuis.treatment_marginal[held[i]] = logistic(eta);
          }
          const Vector m1 = fit_and_predict(detail::take_rows(basis, treated),
                                            detail::take(data.outcome, treated));
          const Vector m0 = fit_and_predict(detail::take_rows(basis, control),
                                            detail::take(data.outcome, control));
          for (std::size_t i = 0; i < held.size(); ++i) {
            nuis.outcome_treated[held[i]] = m1[i];
            nuis.outcome_control[held[i]] = m0[i];
          }
        } else {
          const Vector d_hat = fit_and_predict(b_train, d_train);
          for (std::size_t i = 0; i < held.size(); ++i)
            nuis.treatment_marginal[held[i]] = d_hat[i];
        }
      } else {
        const Matrix v_train = detail::take_rows(v, train);
        const Matrix v_held = detail::take_rows(v, held);
        const BoostedTreesParams params;

        auto fit_and_predict = [&](const Matrix& features, const Vector& response, int target) {
          const auto model = BoostedTrees::fit(
              features, response, params,
              rng_stream(seed, streams::nuisance_fit + 8ull * fold + target));
          return model.predict(v_held);
        };

        const Vector y_hat = fit_and_predict(v_train, y_train, 0);
        const Vector d_hat = fit_and_predict(v_train, d_train, 1);
        for (std::size_t i = 0; i < held.size(); ++i) {
          nuis.outcome_marginal[held[i]] = y_hat[i];
          nuis.treatment_marginal[held[i]] = d_hat[i];
        }
        if (binary) {
          const Vector m1 = fit_and_predict(detail::take_rows(v, treated),
                                            detail::take(data.outcome, treated), 2);
          const Vector m0 = fit_and_predict(detail::take_rows(v, control),
                                            detail::take(data.outcome, control), 3);
          for (std::size_t i = 0; i < held.size(); ++i) {
            nuis.outcome_treated[held[i]] = m1[i];
            nuis.outcome_control[held[i]] = m0[i];
          }
        }
      }
    } catch (...) {
      errors[fold] = std::current_exception();
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (binary) {
    auto [clipped, count] = clip_propensity(nuis.treatment_marginal);
    nuis.propensity = std::move(clipped);
    nuis.clip_count = count;
  }
  return nuis;
}

/// Doubly robust AIPW pseudo-outcome Γ_i; mean(Γ) is the plug-in ATE.
inline Vector aipw_pseudo_outcome(const Dataset& data, const NuisanceFits& nuis) {
  const int n = data.n();
  if (!data.treatment_binary)
    throw validation_error("aipw_pseudo_outcome: binary treatment required");
  if (nuis.propensity.size() != n || nuis.outcome_treated.size() != n ||
      nuis.outcome_control.size() != n)
    throw validation_error("aipw_pseudo_outcome: nuisance fits do not match dataset");
  Vector gamma(n);
  for (int i = 0; i < n; ++i) {
    const double e = nuis.propensity[i];
    const double m1 = nuis.outcome_treated[i];
    const double m0 = nuis.outcome_control[i];
    const double d = data.treatment[i];
    gamma[i] = m1 - m0 + d * (data.outcome[i] - m1) / e -
               (1.0 - d) * (data.outcome[i] - m0) / (1.0 - e);
  }
  return gamma;
}

namespace detail {

/// Second-stage local regression sample, sorted by the moderator.
/// Without d: local level of y with linear trend (design {1, X−x0}).
/// With d:    residual-on-residual PLM (design {1, d, d·(X−x0)}).
struct SecondStage {
  Vector x, y, d;  // d empty for the level-regression variant

  bool has_d() const { return d.size() > 0; }
  int k() const { return has_d() ? 3 : 2; }
  int theta_col() const { return has_d() ? 1 : 0; }

  static SecondStage sorted(Vector x, Vector y, Vector d = Vector()) {
    const int n = static_cast<int>(x.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
    SecondStage s;
    s.x.resize(n);
    s.y.resize(n);
    if (d.size() > 0) s.d.resize(n);
    for (int i = 0; i < n; ++i) {
      s.x[i] = x[order[i]];
      s.y[i] = y[order[i]];
      if (d.size() > 0) s.d[i] = d[order[i]];
    }
    return s;
  }

  LocalStatus fit(double x0, double h, KernelType kernel, bool need_se, Vector* coef,
                  double* se, double* ess) const {
    if (has_d()) {
      return local_generic_wls(
          x, y, 3, x0, h, kernel, need_se, /*se_col=*/1,
          [&](int i, double dx, Vector& row) {
            row[0] = 1.0;
            row[1] = d[i];
            row[2] = d[i] * dx;
          },
          coef, se, ess);
    }
    return local_generic_wls(
        x, y, 2, x0, h, kernel, need_se, /*se_col=*/0,
        [&](int i, double dx, Vector& row) {
          row[0] = 1.0;
          row[1] = dx;
        },
        coef, se, ess);
  }

  /// In-sample prediction of y_i from a fit evaluated at x0 = x_i (dx = 0).
  double predict_at_own_x(const Vector& coef, int i) const {
    return has_d() ? coef[0] + coef[1] * d[i] : coef[0];
  }
};

/// K-fold MSPE bandwidth selection for a second-stage regression.
inline double select_bandwidth_stage(const SecondStage& sample, const KernelSpec& spec,
                                     std::uint64_t seed) {
  const int n = static_cast<int>(sample.x.size());
  if (spec.cv_folds < 2) throw validation_error("select_bandwidth: cv_folds must be >= 2");
  if (n < spec.cv_folds) throw validation_error("select_bandwidth: fewer rows than folds");

  Vector grid = spec.bandwidth_grid;
  if (grid.size() == 0) {
    const double s = sample_sd(sample.x);
    if (!(s > 0.0)) throw validation_error("select_bandwidth: constant moderator");
    grid = logspace(0.05 * s, 2.0 * s, 20);
  }

  std::vector<int> fold_of(n);
  {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = rng_stream(seed, streams::cv_folds);
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
    for (int i = 0; i < n; ++i) fold_of[order[i]] = i % spec.cv_folds;
  }

  std::vector<SecondStage> train_stages(spec.cv_folds);
  for (int f = 0; f < spec.cv_folds; ++f) {
    std::vector<int> keep;
    for (int i = 0; i < n; ++i)
      if (fold_of[i] != f) keep.push_back(i);
    train_stages[f] = SecondStage::sorted(
        take(sample.x, keep), take(sample.y, keep),
        sample.has_d() ? take(sample.d, keep) : Vector());
  }

  const int n_h = static_cast<int>(grid.size());
  Vector mspe = Vector::Constant(n_h, std::numeric_limits<double>::infinity());
  parallel_for(n_h, [&](int g) {
    double sse = 0.0;
    for (int i = 0; i < n; ++i) {
      Vector coef;
      double se = 0.0, ess = 0.0;
      if (train_stages[fold_of[i]].fit(sample.x[i], grid[g], spec.kernel,
                                       /*need_se=*/false, &coef, &se, &ess) != LocalStatus::ok)
        return;  // infeasible candidate
      const double e = sample.y[i] - sample.predict_at_own_x(coef, i);
      sse += e * e;
    }
    mspe[g] = sse / static_cast<double>(n);
  });

  int best = -1;
  for (int g = 0; g < n_h; ++g)
    if (std::isfinite(mspe[g]) && (best < 0 || mspe[g] < mspe[best])) best = g;
  if (best < 0)
    throw estimation_error("select_bandwidth: every candidate bandwidth yields degenerate fits");
  return grid[best];
}

/// Weighted variance of vals within the kernel window at x0 (xs sorted).
inline double window_weighted_var(const Vector& xs, const Vector& vals, double x0, double h,
                                  KernelType kernel) {
  const int n = static_cast<int>(xs.size());
  int lo = 0, hi = n;
  if (kernel != KernelType::gaussian) {
    lo = static_cast<int>(std::lower_bound(xs.data(), xs.data() + n, x0 - h) - xs.data());
    hi = static_cast<int>(std::upper_bound(xs.data(), xs.data() + n, x0 + h) - xs.data());
  }
  double sw = 0.0, swv = 0.0, swv2 = 0.0;
  for (int i = lo; i < hi; ++i) {
    const double w = kernel_weight(kernel, (xs[i] - x0) / h);
    if (w <= 0.0) continue;
    sw += w;
    swv += w * vals[i];
    swv2 += w * vals[i] * vals[i];
  }
  if (!(sw > 0.0)) return 0.0;
  const double mean = swv / sw;
  return std::max(0.0, swv2 / sw - mean * mean);
}

/// Shared driver: grid fits + trimming + sup-t bands over a SecondStage.
inline CmeCurve estimate_second_stage(const SecondStage& stage, const Vector& grid,
                                      double h, KernelType kernel, double trim_below,
                                      bool check_d_var, int n_boot, double level,
                                      std::uint64_t seed) {
  const int m = static_cast<int>(grid.size());
  CmeCurve curve;
  curve.grid = grid;
  curve.estimate = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  curve.std_error = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> trimmed(m, 0);
  parallel_for(m, [&](int g) {
    if (check_d_var &&
        window_weighted_var(stage.x, stage.d, grid[g], h, kernel) < 1e-8) {
      trimmed[g] = 1;
      return;
    }
    Vector coef;
    double se = 0.0, ess = 0.0;
    const auto status = stage.fit(grid[g], h, kernel, /*need_se=*/true, &coef, &se, &ess);
    if (status != LocalStatus::ok || ess < trim_below) {
      trimmed[g] = 1;
      return;
    }
    curve.estimate[g] = coef[stage.theta_col()];
    curve.std_error[g] = se;
  });
  curve.trimmed.assign(trimmed.begin(), trimmed.end());
  if (std::all_of(curve.trimmed.begin(), curve.trimmed.end(), [](bool t) { return t; }))
    throw estimation_error("estimate: every grid point trimmed");

  const int n = static_cast<int>(stage.x.size());
  const auto bands = compute_bands(
      curve.estimate, curve.std_error, curve.trimmed, level, n_boot, seed,
      [&](RngStream& rng, int, Vector* rep_est, Vector* rep_se) {
        rep_est->setConstant(m, std::numeric_limits<double>::quiet_NaN());
        rep_se->setConstant(m, std::numeric_limits<double>::quiet_NaN());
        const auto idx = bootstrap_indices(rng, n);
        Vector bx(n), by(n), bd(stage.has_d() ? n : 0);
        for (int i = 0; i < n; ++i) {
          bx[i] = stage.x[idx[i]];
          by[i] = stage.y[idx[i]];
          if (stage.has_d()) bd[i] = stage.d[idx[i]];
        }
        const SecondStage replica = SecondStage::sorted(std::move(bx), std::move(by),
                                                        std::move(bd));
        for (int g = 0; g < m; ++g) {
          if (curve.trimmed[g]) continue;
          Vector coef;
          double se = 0.0, ess = 0.0;
          if (replica.fit(grid[g], h, kernel, /*need_se=*/true, &coef, &se, &ess) ==
              LocalStatus::ok) {
            (*rep_est)[g] = coef[replica.theta_col()];
            (*rep_se)[g] = se;
          }
        }
      });
  curve.ci_pointwise = {bands.pointwise_lower, bands.pointwise_upper};
  if (n_boot > 0) curve.ci_uniform = {bands.uniform_lower, bands.uniform_upper};
  return curve;
}

inline void check_nuisance_sizes(const Dataset& data, const NuisanceFits& nuis,
                                 const char* who) {
  if (nuis.outcome_marginal.size() != data.n() || nuis.treatment_marginal.size() != data.n() ||
      nuis.fold_id.size() != static_cast<std::size_t>(data.n()))
    throw validation_error(std::string(who) + ": nuisance fits do not match dataset");
}

}  // namespace detail

/// AIPW estimator: doubly robust pseudo-outcome Γ regressed on X by a local
/// level-plus-trend kernel regression; bands re-form Γ from frozen nuisance
/// fits per bootstrap resample.
inline CmeCurve estimate_aipw(const Dataset& data, const NuisanceFits& nuis, const Vector& grid,
                              const KernelSpec& spec, int n_boot, double level,
                              std::uint64_t seed) {
  validate(data);
  if (grid.size() == 0) throw validation_error("estimate_aipw: empty grid");
  detail::check_nuisance_sizes(data, nuis, "estimate_aipw");
  const double clip_rate = static_cast<double>(nuis.clip_count) / data.n();
  if (clip_rate > 0.5)
    throw estimation_error("estimate_aipw: overlap failure (propensity clipping rate " +
                           std::to_string(clip_rate) + " > 0.5)");

  const Vector gamma = aipw_pseudo_outcome(data, nuis);
  const auto stage = detail::SecondStage::sorted(data.moderator, gamma);
  const double h =
      spec.bandwidth_is_auto() ? detail::select_bandwidth_stage(stage, spec, seed) : spec.bandwidth;

  CmeCurve curve = detail::estimate_second_stage(stage, grid, h, spec.kernel,
                                                 trim_threshold(data.p()),
                                                 /*check_d_var=*/false, n_boot, level, seed);
  curve.metadata = {"aipw_" + nuis.learner, h, seed, data.n(), n_boot};
  if (clip_rate > 0.1)
    curve.metadata.note = "warning: propensity clipping rate " + std::to_string(clip_rate) +
                          " exceeds 0.10";
  validate(curve);
  return curve;
}

/// DML partially-linear-model estimator: cross-fitted residuals Ỹ, D̃ and a
/// local residual-on-residual regression; θ̂(x0) is the D̃ coefficient.
inline CmeCurve estimate_dml_plm(const Dataset& data, const NuisanceFits& nuis,
                                 const Vector& grid, const KernelSpec& spec, int n_boot,
                                 double level, std::uint64_t seed) {
  validate(data);
  if (grid.size() == 0) throw validation_error("estimate_dml_plm: empty grid");
  detail::check_nuisance_sizes(data, nuis, "estimate_dml_plm");

  const Vector y_tilde = data.outcome - nuis.outcome_marginal;
  const Vector d_tilde = data.treatment - nuis.treatment_marginal;
  const auto stage = detail::SecondStage::sorted(data.moderator, y_tilde, d_tilde);
  const double h =
      spec.bandwidth_is_auto() ? detail::select_bandwidth_stage(stage, spec, seed) : spec.bandwidth;

  CmeCurve curve = detail::estimate_second_stage(stage, grid, h, spec.kernel,
                                                 trim_threshold(data.p()),
                                                 /*check_d_var=*/true, n_boot, level, seed);
  curve.metadata = {"dml_plm_" + nuis.learner, h, seed, data.n(), n_boot};
  validate(curve);
  return curve;
}

/// PDS-LASSO on the fully interacted model: LASSO selection of controls in
/// the outcome and treatment equations, OLS refit on the always-kept
/// treatment terms plus the union of selections, delta-method SEs for
/// θ̂(x) = ∂Ŷ/∂D averaged over the empirical D distribution. The selectable
/// pool covers nonlinearity in the moderator too (X², X³ and their D
/// interactions), so θ̂(x) can bend. Quadratic-D terms are included only for
/// continuous treatment (D² ≡ D when binary).
inline CmeCurve estimate_pds_lasso(const Dataset& data, const Vector& grid, int n_boot,
                                   double level, std::uint64_t seed) {
  validate(data);
  if (grid.size() == 0) throw validation_error("estimate_pds_lasso: empty grid");

  if (data.p() == 0) {
    // no covariates to select over: the kernel estimator is the model
    CmeCurve curve = estimate_kernel(data, grid, KernelSpec{}, n_boot, level, seed);
    curve.metadata.estimator = "pds_lasso";
    curve.metadata.note = "no covariates: fell back to the kernel estimator";
    return curve;
  }

  const int n = data.n();
  const Vector& d = data.treatment;
  const Vector& x = data.moderator;
  const bool quad_d = !data.treatment_binary;

  std::vector<std::string> z_names;
  for (int j = 0; j < data.p(); ++j)
    z_names.push_back(data.column_names.size() == static_cast<std::size_t>(3 + data.p())
                          ? data.column_names[3 + j]
                          : "Z" + std::to_string(j + 1));
  const BasisExpansion bz = basis_expand(data.covariates, z_names);
  const int nb = static_cast<int>(bz.columns.cols());

  // always-kept treatment terms
  Matrix kept(n, quad_d ? 5 : 3);
  kept.col(0) = d;
  kept.col(1) = x;
  kept.col(2) = d.cwiseProduct(x);
  if (quad_d) {
    kept.col(3) = d.cwiseAbs2();
    kept.col(4) = d.cwiseAbs2().cwiseProduct(x);
  }
  const int n_kept = static_cast<int>(kept.cols());

  // selectable controls: basis(Z), X·basis(Z), D·basis(Z), then moderator
  // powers X², X³ and their treatment interactions DX², DX³ (X, DX are kept)
  const Vector x2 = x.cwiseAbs2();
  const Vector x3 = x2.cwiseProduct(x);
  Matrix pool(n, 3 * nb + 4);
  for (int j = 0; j < nb; ++j) {
    pool.col(j) = bz.columns.col(j);
    pool.col(nb + j) = bz.columns.col(j).cwiseProduct(x);
    pool.col(2 * nb + j) = bz.columns.col(j).cwiseProduct(d);
  }
  pool.col(3 * nb) = x2;
  pool.col(3 * nb + 1) = x3;
  pool.col(3 * nb + 2) = x2.cwiseProduct(d);
  pool.col(3 * nb + 3) = x3.cwiseProduct(d);

  // (a) outcome equation: LASSO of Y on everything, keep active ∩ pool
  Matrix outcome_design(n, n_kept + pool.cols());
  outcome_design.leftCols(n_kept) = kept;
  outcome_design.rightCols(pool.cols()) = pool;
  const double lam_y = cv_lambda(outcome_design, data.outcome, 5, seed);
  const LassoFit fit_y = lasso_cd(outcome_design, data.outcome, lam_y);

  // (b) treatment equation: LASSO of D on the D-free controls
  Matrix treat_design(n, 2 * nb + 2);
  treat_design.leftCols(2 * nb) = pool.leftCols(2 * nb);
  treat_design.col(2 * nb) = x2;
  treat_design.col(2 * nb + 1) = x3;
  const double lam_d = cv_lambda(treat_design, d, 5, seed);
  const LassoFit fit_d = lasso_cd(treat_design, d, lam_d);

  std::vector<char> selected(pool.cols(), 0);
  for (const int j : fit_y.active_set)
    if (j >= n_kept) selected[j - n_kept] = 1;
  for (const int j : fit_d.active_set) selected[j < 2 * nb ? j : 3 * nb + (j - 2 * nb)] = 1;
  std::vector<int> union_cols;
  for (int j = 0; j < static_cast<int>(pool.cols()); ++j)
    if (selected[j]) union_cols.push_back(j);

  // OLS refit: intercept + kept + union of selected controls
  const int k_refit = 1 + n_kept + static_cast<int>(union_cols.size());
  Matrix refit_design(n, k_refit);
  refit_design.col(0).setOnes();
  refit_design.middleCols(1, n_kept) = kept;
  for (std::size_t c = 0; c < union_cols.size(); ++c)
    refit_design.col(1 + n_kept + c) = pool.col(union_cols[c]);
  const WlsFit refit = wls(refit_design, data.outcome, Vector::Ones(n));

  // θ̂(x) = r(x)ᵀβ̂: D → 1, DX → x, D² → 2·mean(D), D²X → 2·mean(D)·x,
  // selected D·basis_j → mean(basis_j), DX² → x², DX³ → x³
  const double d_mean = d.mean();
  auto r_of_x = [&](double x0) {
    Vector r = Vector::Zero(k_refit);
    r[1] = 1.0;   // D
    r[3] = x0;    // DX
    if (quad_d) {
      r[4] = 2.0 * d_mean;       // D²
      r[5] = 2.0 * d_mean * x0;  // D²X
    }
    for (std::size_t c = 0; c < union_cols.size(); ++c) {
      const int j = union_cols[c];
      if (j >= 2 * nb && j < 3 * nb)
        r[1 + n_kept + c] = bz.columns.col(j - 2 * nb).mean();
      else if (j == 3 * nb + 2)
        r[1 + n_kept + c] = x0 * x0;
      else if (j == 3 * nb + 3)
        r[1 + n_kept + c] = x0 * x0 * x0;
    }
    return r;
  };

  const int m = static_cast<int>(grid.size());
  CmeCurve curve;
  curve.grid = grid;
  curve.estimate.resize(m);
  curve.std_error.resize(m);
  curve.trimmed.assign(m, false);
  for (int g = 0; g < m; ++g) {
    const Vector r = r_of_x(grid[g]);
    curve.estimate[g] = r.dot(refit.coefficients);
    curve.std_error[g] = std::sqrt(std::max(0.0, r.dot(refit.covariance * r)));
  }

  // bootstrap with frozen selection and frozen averaging weights r(x)
  const auto bands = detail::compute_bands(
      curve.estimate, curve.std_error, curve.trimmed, level, n_boot, seed,
      [&](RngStream& rng, int, Vector* rep_est, Vector* rep_se) {
        rep_est->setConstant(m, std::numeric_limits<double>::quiet_NaN());
        rep_se->setConstant(m, std::numeric_limits<double>::quiet_NaN());
        const auto idx = detail::bootstrap_indices(rng, n);
        Matrix boot_design(n, k_refit);
        Vector boot_y(n);
        for (int i = 0; i < n; ++i) {
          boot_design.row(i) = refit_design.row(idx[i]);
          boot_y[i] = data.outcome[idx[i]];
        }
        WlsFit boot_fit;
        try {
          boot_fit = ols(boot_design, boot_y);
        } catch (const estimation_error&) {
          return;  // degenerate resample: leave the replicate marked failed
        }
        for (int g = 0; g < m; ++g) {
          const Vector r = r_of_x(grid[g]);
          (*rep_est)[g] = r.dot(boot_fit.coefficients);
          const double var = r.dot(boot_fit.covariance * r);
          (*rep_se)[g] = var > 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN();
        }
      });
  curve.ci_pointwise = {bands.pointwise_lower, bands.pointwise_upper};
  if (n_boot > 0) curve.ci_uniform = {bands.uniform_lower, bands.uniform_upper};

  curve.metadata = {"pds_lasso", std::numeric_limits<double>::quiet_NaN(), seed, n, n_boot};
  validate(curve);
  return curve;
}

}  // namespace cme
