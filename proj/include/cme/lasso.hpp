#pragma once

#include <numeric>
#include <vector>

#include "cme/common.hpp"
#include "cme/rng.hpp"

namespace cme {

struct LassoFit {
  Vector coefficients;  // original scale
  double intercept = 0.0;
  double lambda = 0.0;
  std::vector<int> active_set;
};

namespace detail {

/// Centered/standardized view of a regression problem plus the Gram matrix,
/// shared across a lambda path (covariance-update coordinate descent).
struct LassoWork {
  Matrix x_std;     // standardized columns (zero-variance columns left at 0)
  Vector y_center;  // response minus its mean
  Vector col_mean, col_scale;
  double y_mean = 0.0;
  Matrix gram;      // x_stdᵀ x_std / n
  Vector xty;       // x_stdᵀ y_center / n

  explicit LassoWork(const Matrix& design, const Vector& response) {
    const Eigen::Index n = design.rows();
    const Eigen::Index k = design.cols();
    if (response.size() != n) throw validation_error("lasso: design/response length mismatch");
    if (n < 2) throw validation_error("lasso: need at least 2 rows");
    col_mean = design.colwise().mean();
    x_std = design.rowwise() - col_mean.transpose();
    col_scale = (x_std.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();
    for (Eigen::Index j = 0; j < k; ++j) {
      if (col_scale[j] > 1e-12)
        x_std.col(j) /= col_scale[j];
      else
        x_std.col(j).setZero();  // constant column: never enters the model
    }
    y_mean = response.mean();
    y_center = response.array() - y_mean;
    gram = x_std.transpose() * x_std / static_cast<double>(n);
    xty = x_std.transpose() * y_center / static_cast<double>(n);
  }

  /// Coordinate descent at one lambda, warm-started from `beta`
  /// (standardized scale). Stops when the KKT conditions hold within tol.
  void solve(double lambda, Vector& beta) const {
    const Eigen::Index k = gram.rows();
    const double tol = 1e-6 * std::max(1.0, xty.cwiseAbs().maxCoeff());
    Vector gram_beta = gram.selfadjointView<Eigen::Lower>() * beta;
    for (int sweep = 0; sweep < 10000; ++sweep) {
      double max_delta = 0.0;
      for (Eigen::Index j = 0; j < k; ++j) {
        const double gjj = gram(j, j);
        if (gjj <= 0.0) continue;
        const double old = beta[j];
        const double rho = xty[j] - gram_beta[j] + gjj * old;
        const double soft = std::abs(rho) <= lambda ? 0.0
                            : rho > 0.0             ? (rho - lambda) / gjj
                                                    : (rho + lambda) / gjj;
        if (soft != old) {
          beta[j] = soft;
          gram_beta += gram.col(j) * (soft - old);
          max_delta = std::max(max_delta, std::abs(soft - old));
        }
      }
      if (max_delta < 1e-10) {
        // verify KKT: gradient of ½‖y−Xβ‖²/n is gram·β − xty
        bool ok = true;
        for (Eigen::Index j = 0; j < k && ok; ++j) {
          const double grad = gram_beta[j] - xty[j];
          if (beta[j] != 0.0)
            ok = std::abs(grad + lambda * (beta[j] > 0 ? 1.0 : -1.0)) <= tol;
          else
            ok = std::abs(grad) <= lambda + tol;
        }
        if (ok) return;
      }
    }
    throw estimation_error("lasso: coordinate descent failed to converge");
  }

  LassoFit to_original_scale(const Vector& beta_std, double lambda) const {
    LassoFit fit;
    const Eigen::Index k = beta_std.size();
    fit.coefficients = Vector::Zero(k);
    double offset = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (beta_std[j] == 0.0) continue;
      fit.coefficients[j] = beta_std[j] / col_scale[j];
      offset += fit.coefficients[j] * col_mean[j];
      fit.active_set.push_back(static_cast<int>(j));
    }
    fit.intercept = y_mean - offset;
    fit.lambda = lambda;
    return fit;
  }
};

}  // namespace detail

/// Smallest lambda at which every slope is zero (standardized design,
/// objective ½‖y − β0 − Xβ‖²/n + λ‖β‖₁).
inline double lambda_max(const Matrix& design, const Vector& response) {
  return detail::LassoWork(design, response).xty.cwiseAbs().maxCoeff();
}

/// LASSO at a single lambda; coefficients on the original scale, intercept
/// unpenalized (handled by centering).
inline LassoFit lasso_cd(const Matrix& design, const Vector& response, double lambda) {
  if (lambda < 0.0) throw validation_error("lasso_cd: negative lambda");
  detail::LassoWork work(design, response);
  Vector beta = Vector::Zero(design.cols());
  work.solve(lambda, beta);
  return work.to_original_scale(beta, lambda);
}

/// 50-point log-spaced path from lambda_max down to lambda_max/1000,
/// descending so warm starts carry forward.
inline Vector lasso_lambda_path(double lam_max, int points = 50) {
  if (!(lam_max > 0.0)) return Vector::Constant(1, 0.0);
  Vector path = logspace(lam_max, lam_max * 1e-3, points);
  return path;
}

/// K-fold cross-validated lambda: minimizes mean out-of-fold squared error
/// over the path; ties resolve to the larger (more parsimonious) lambda.
inline double cv_lambda(const Matrix& design, const Vector& response, int n_folds,
                        std::uint64_t seed) {
  const Eigen::Index n = design.rows();
  if (n_folds < 2) throw validation_error("cv_lambda: n_folds must be >= 2");
  if (n < n_folds) throw validation_error("cv_lambda: fewer rows than folds");

  const Vector path = lasso_lambda_path(lambda_max(design, response));
  const int n_lambda = static_cast<int>(path.size());

  // deterministic shuffled fold assignment
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = rng_stream(seed, streams::cv_folds);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);

  Vector cv_error = Vector::Zero(n_lambda);
  for (int fold = 0; fold < n_folds; ++fold) {
    std::vector<int> train, test;
    for (Eigen::Index i = 0; i < n; ++i)
      (static_cast<int>(i) % n_folds == fold ? test : train).push_back(order[i]);

    Matrix x_train(train.size(), design.cols()), x_test(test.size(), design.cols());
    Vector y_train(train.size()), y_test(test.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      x_train.row(i) = design.row(train[i]);
      y_train[i] = response[train[i]];
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      x_test.row(i) = design.row(test[i]);
      y_test[i] = response[test[i]];
    }

    detail::LassoWork work(x_train, y_train);
    Vector beta = Vector::Zero(design.cols());
    for (int l = 0; l < n_lambda; ++l) {
      work.solve(path[l], beta);
      const LassoFit fit = work.to_original_scale(beta, path[l]);
      const Vector pred = (x_test * fit.coefficients).array() + fit.intercept;
      cv_error[l] += (y_test - pred).squaredNorm() / static_cast<double>(n);
    }
  }

  int best = 0;  // path descends from lambda_max, so the first minimum is the largest lambda
  for (int l = 1; l < n_lambda; ++l)
    if (cv_error[l] < cv_error[best]) best = l;
  return path[best];
}

}  // namespace cme
