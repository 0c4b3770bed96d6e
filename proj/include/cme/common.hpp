#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cme {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Bad input from the caller: malformed files, unknown names, violated
/// preconditions. The CLI maps this to exit code 2.
class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during estimation: rank deficiency, degenerate bins,
/// overlap violations. The CLI maps this to exit code 3.
class estimation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Vector linspace(double lo, double hi, int count) {
  if (count < 1) throw validation_error("linspace: count must be >= 1");
  Vector out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / (count - 1);
  for (int i = 0; i < count; ++i) out[i] = lo + step * i;
  out[count - 1] = hi;
  return out;
}

inline Vector logspace(double lo, double hi, int count) {
  if (lo <= 0 || hi <= 0) throw validation_error("logspace: endpoints must be positive");
  if (count < 1) throw validation_error("logspace: count must be >= 1");
  Vector out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double llo = std::log(lo), lhi = std::log(hi);
  const double step = (lhi - llo) / (count - 1);
  for (int i = 0; i < count; ++i) out[i] = std::exp(llo + step * i);
  out[0] = lo;
  out[count - 1] = hi;
  return out;
}

/// Quantile with linear interpolation between order statistics (the R type-7
/// convention). `sorted` must be ascending and non-empty.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw validation_error("quantile: empty sample");
  p = std::clamp(p, 0.0, 1.0);
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(const Vector& values, double p) {
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, p);
}

inline double median(const Vector& values) { return quantile(values, 0.5); }

inline double sample_sd(const Vector& values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  const double mean = values.mean();
  return std::sqrt((values.array() - mean).square().sum() / static_cast<double>(n - 1));
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

namespace detail {

/// %.17g: shortest representation that round-trips an IEEE double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail
}  // namespace cme
