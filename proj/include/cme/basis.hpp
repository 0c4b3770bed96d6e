#pragma once

#include <string>
#include <vector>

#include "cme/common.hpp"

namespace cme {

/// Polynomial basis: degree ≤ 3 per variable plus all pairwise products.
/// Column order (and hence labels) depends only on the input schema.
struct BasisExpansion {
  Matrix columns;
  std::vector<std::string> labels;
};

inline BasisExpansion basis_expand(const Matrix& vars, const std::vector<std::string>& names) {
  const Eigen::Index n = vars.rows();
  const Eigen::Index q = vars.cols();
  if (static_cast<Eigen::Index>(names.size()) != q)
    throw validation_error("basis_expand: one name per column required");
  BasisExpansion out;
  const Eigen::Index n_cols = 3 * q + q * (q - 1) / 2;
  out.columns.resize(n, n_cols);
  out.labels.reserve(n_cols);
  Eigen::Index c = 0;
  for (Eigen::Index j = 0; j < q; ++j) {
    out.columns.col(c) = vars.col(j);
    out.labels.push_back(names[j]);
    ++c;
    out.columns.col(c) = vars.col(j).cwiseAbs2();
    out.labels.push_back(names[j] + "^2");
    ++c;
    out.columns.col(c) = vars.col(j).array().cube();
    out.labels.push_back(names[j] + "^3");
    ++c;
  }
  for (Eigen::Index a = 0; a < q; ++a)
    for (Eigen::Index b = a + 1; b < q; ++b) {
      out.columns.col(c) = vars.col(a).cwiseProduct(vars.col(b));
      out.labels.push_back(names[a] + "*" + names[b]);
      ++c;
    }
  return out;
}

}  // namespace cme
