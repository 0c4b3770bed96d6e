#pragma once

#include <boost/math/distributions/normal.hpp>

#include "cme/common.hpp"
#include "cme/parallel.hpp"
#include "cme/rng.hpp"

namespace cme {

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<>(), p);
}

namespace detail {

inline std::vector<int> bootstrap_indices(RngStream& rng, int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = static_cast<int>(rng.uniform_int(n));
  return idx;
}

struct Bands {
  Vector pointwise_lower, pointwise_upper;
  Vector uniform_lower, uniform_upper;  // empty when n_boot = 0
  double z = 0.0, c_star = 0.0;
  int n_success = 0;
};

/// Pointwise normal bands plus studentized sup-t uniform bands from a pairs
/// bootstrap. `refit(rng, b, &est, &se)` fills the replicate curve and its
/// standard errors on the same grid (NaN where a point failed); a replicate
/// succeeds when the estimate is finite and the se positive at every
/// non-trimmed point. Each replicate deviation is studentized by that
/// replicate's own se (bootstrap-t), which keeps the sup statistic close to
/// pivotal when local windows are small or skewed; the critical value is the
/// ceil((S+1)·level) order statistic of the S successes. Replicate b draws
/// from rng_stream(seed, b), so the band is identical under any thread
/// count. c* is clamped from below at z so the uniform band always contains
/// the pointwise band.
template <typename Refit>
Bands compute_bands(const Vector& estimate, const Vector& se, const std::vector<bool>& trimmed,
                    double level, int n_boot, std::uint64_t seed, Refit&& refit) {
  if (!(level > 0.0 && level < 1.0))
    throw validation_error("bands: level must lie strictly between 0 and 1");
  if (n_boot != 0 && n_boot < 50)
    throw validation_error("bands: n_boot must be 0 or at least 50");

  const int m = static_cast<int>(estimate.size());
  Bands bands;
  bands.z = normal_quantile(0.5 + level / 2.0);
  bands.pointwise_lower = estimate - bands.z * se;
  bands.pointwise_upper = estimate + bands.z * se;
  if (n_boot == 0) return bands;

  Vector sup_t = Vector::Constant(n_boot, std::numeric_limits<double>::quiet_NaN());
  parallel_for(n_boot, [&](int b) {
    auto rng = rng_stream(seed, static_cast<std::uint64_t>(b));
    Vector rep_est, rep_se;
    refit(rng, b, &rep_est, &rep_se);
    double s = 0.0;
    bool ok = rep_est.size() == m && rep_se.size() == m;
    for (int k = 0; ok && k < m; ++k) {
      if (trimmed[k]) continue;
      if (!std::isfinite(rep_est[k]) || !(rep_se[k] > 0.0) || !(se[k] > 0.0)) {
        ok = false;
        break;
      }
      s = std::max(s, std::abs(rep_est[k] - estimate[k]) / rep_se[k]);
    }
    if (ok) sup_t[b] = s;
  });

  std::vector<double> successes;
  successes.reserve(n_boot);
  for (int b = 0; b < n_boot; ++b)
    if (std::isfinite(sup_t[b])) successes.push_back(sup_t[b]);
  bands.n_success = static_cast<int>(successes.size());
  if (bands.n_success < 50)
    throw estimation_error("bands: fewer than 50 successful bootstrap fits (" +
                           std::to_string(bands.n_success) + "/" + std::to_string(n_boot) + ")");

  std::sort(successes.begin(), successes.end());
  const auto rank = std::min(successes.size() - 1,
                             static_cast<std::size_t>(
                                 std::ceil(level * (static_cast<double>(successes.size()) + 1.0))) -
                                 1);
  bands.c_star = std::max(successes[rank], bands.z);
  bands.uniform_lower = estimate - bands.c_star * se;
  bands.uniform_upper = estimate + bands.c_star * se;
  return bands;
}

}  // namespace detail
}  // namespace cme
