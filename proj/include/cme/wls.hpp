#pragma once

#include <string>
#include <vector>

#include "cme/common.hpp"

namespace cme {

struct WlsFit {
  Vector coefficients;
  Matrix covariance;   // HC1 heteroskedasticity-robust sandwich
  Vector residuals;
  double effective_n = 0.0;  // sum of weights
};

/// Weighted least squares with HC1-robust covariance.
/// Minimizes Σ w_i (y_i − x_iᵀβ)²; rank deficiency of the weighted design is
/// reported with the offending column indices.
inline WlsFit wls(const Matrix& design, const Vector& response, const Vector& weights) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (response.size() != n || weights.size() != n)
    throw validation_error("wls: design, response and weights have mismatched lengths");
  if (weights.minCoeff() < 0.0) throw validation_error("wls: negative weight");
  const double effective_n = weights.sum();
  if (!(effective_n > 0.0)) throw validation_error("wls: all weights are zero");

  const Vector sqrt_w = weights.cwiseSqrt();
  Matrix wx = sqrt_w.asDiagonal() * design;

  Eigen::ColPivHouseholderQR<Matrix> qr(wx);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    // the redundant columns are the ones pivoted past the numerical rank
    const auto perm = qr.colsPermutation().indices();
    std::string cols;
    for (Eigen::Index j = qr.rank(); j < k; ++j) {
      if (!cols.empty()) cols += ", ";
      cols += std::to_string(perm[j]);
    }
    throw estimation_error("wls: rank-deficient weighted design (collinear columns: " + cols + ")");
  }

  WlsFit fit;
  fit.coefficients = qr.solve(sqrt_w.cwiseProduct(response));
  fit.residuals = response - design * fit.coefficients;
  fit.effective_n = effective_n;

  // HC1 sandwich: (XᵀWX)⁻¹ Σ w_i² e_i² x_i x_iᵀ (XᵀWX)⁻¹ · n_eff/(n_eff − k)
  Matrix xtwx_inv = (wx.transpose() * wx)
                        .selfadjointView<Eigen::Lower>()
                        .llt()
                        .solve(Matrix::Identity(k, k));
  const Vector we = weights.cwiseProduct(fit.residuals);
  Matrix meat = design.transpose() * we.cwiseAbs2().asDiagonal() * design;
  const double dof = effective_n - static_cast<double>(k);
  const double hc1 = dof > 0.0 ? effective_n / dof : 1.0;
  fit.covariance = hc1 * xtwx_inv * meat * xtwx_inv;
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
  return fit;
}

inline WlsFit ols(const Matrix& design, const Vector& response) {
  return wls(design, response, Vector::Ones(design.rows()));
}

}  // namespace cme
