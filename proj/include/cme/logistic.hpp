#pragma once

#include "cme/common.hpp"

namespace cme {

inline double logistic(double t) {
  // numerically stable in both tails
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

/// Ridge-penalized logistic regression via IRLS. The intercept (column of
/// ones expected in `design`) is penalized too; callers pass l2_ridge = 0 for
/// plain maximum likelihood. Converged when max |Δβ| < 1e−8, capped at 100
/// iterations. Divergence (‖β‖ blowing up under zero ridge) is reported as
/// perfect separation.
inline Vector logistic_irls(const Matrix& design, const Vector& labels, double l2_ridge = 0.0) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (labels.size() != n) throw validation_error("logistic_irls: design/labels length mismatch");
  if (l2_ridge < 0.0) throw validation_error("logistic_irls: negative ridge penalty");
  int ones = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] == 1.0)
      ++ones;
    else if (labels[i] != 0.0)
      throw validation_error("logistic_irls: labels must be 0 or 1");
  }
  if (ones == 0 || ones == n)
    throw validation_error("logistic_irls: labels contain a single class");

  Vector beta = Vector::Zero(k);
  for (int iter = 0; iter < 100; ++iter) {
    const Vector eta = design * beta;
    Vector mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = logistic(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
    }
    // Newton step on the penalized log-likelihood
    Matrix hessian = design.transpose() * w.asDiagonal() * design;
    hessian.diagonal().array() += l2_ridge;
    const Vector gradient = design.transpose() * (labels - mu) - l2_ridge * beta;
    const Vector step = hessian.selfadjointView<Eigen::Lower>().llt().solve(gradient);
    beta += step;
    if (!beta.allFinite() || (l2_ridge == 0.0 && beta.cwiseAbs().maxCoeff() > 1e4))
      throw estimation_error(
          "logistic_irls: coefficients diverging (perfect separation?); add an l2 ridge");
    if (step.cwiseAbs().maxCoeff() < 1e-8) return beta;
  }
  return beta;
}

}  // namespace cme
