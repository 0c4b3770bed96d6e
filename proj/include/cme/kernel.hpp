#pragma once

#include <algorithm>
#include <numeric>

#include "cme/bands.hpp"
#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/wls.hpp"

namespace cme {

enum class KernelType { epanechnikov, uniform, gaussian };

inline std::string to_string(KernelType k) {
  switch (k) {
    case KernelType::epanechnikov: return "epanechnikov";
    case KernelType::uniform: return "uniform";
    case KernelType::gaussian: return "gaussian";
  }
  return "?";
}

inline KernelType kernel_from_string(const std::string& s) {
  if (s == "epanechnikov") return KernelType::epanechnikov;
  if (s == "uniform") return KernelType::uniform;
  if (s == "gaussian") return KernelType::gaussian;
  throw validation_error("unknown kernel '" + s + "'");
}

/// Kernels normalized to K(0) = 1 so Σ w_i acts as an effective sample size.
inline double kernel_weight(KernelType k, double u) {
  switch (k) {
    case KernelType::epanechnikov: return std::abs(u) < 1.0 ? 1.0 - u * u : 0.0;
    case KernelType::uniform: return std::abs(u) <= 1.0 ? 1.0 : 0.0;
    case KernelType::gaussian: return std::exp(-0.5 * u * u);
  }
  return 0.0;
}

struct KernelSpec {
  KernelType kernel = KernelType::epanechnikov;
  double bandwidth = 0.0;  // <= 0 means select by cross-validation
  int cv_folds = 5;
  Vector bandwidth_grid;  // empty → 20 log-spaced points on [0.05, 2] × sd(X)

  bool bandwidth_is_auto() const { return !(bandwidth > 0.0); }
};

struct LocalFit {
  double theta = 0.0;
  double se = 0.0;
  double effective_n = 0.0;
};

/// Effective sample size below which a grid point is trimmed.
inline double trim_threshold(int p) { return 4.0 * (4.0 + p); }

namespace detail {

/// Rows sorted by moderator so compact kernels touch a contiguous window.
struct SortedView {
  Vector x, y, d;
  Matrix z;

  SortedView() = default;
  explicit SortedView(const Dataset& data) { assign(data); }

  void assign(const Dataset& data) {
    const int n = data.n();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return data.moderator[a] < data.moderator[b]; });
    x.resize(n);
    y.resize(n);
    d.resize(n);
    z.resize(n, data.p());
    for (int i = 0; i < n; ++i) {
      const int s = order[i];
      x[i] = data.moderator[s];
      y[i] = data.outcome[s];
      d[i] = data.treatment[s];
      if (data.p() > 0) z.row(i) = data.covariates.row(s);
    }
  }

  int n() const { return static_cast<int>(x.size()); }
  int p() const { return static_cast<int>(z.cols()); }

  /// [lo, hi) window of rows with K((x − x0)/h) possibly nonzero.
  std::pair<int, int> window(KernelType kernel, double x0, double h) const {
    if (kernel == KernelType::gaussian) return {0, n()};
    const double* begin = x.data();
    const double* end = begin + n();
    const int lo = static_cast<int>(std::lower_bound(begin, end, x0 - h) - begin);
    const int hi = static_cast<int>(std::upper_bound(begin, end, x0 + h) - begin);
    return {lo, hi};
  }
};

enum class LocalStatus { ok, insufficient, singular };

/// Generic kernel-weighted local WLS at x0 over rows sorted by the running
/// variable xs. `fill(i, dx, row)` writes the k design entries for row i
/// (dx = xs[i] − x0). SE (HC1) is computed for column `se_col` only.
/// Shared by the kernel, AIPW and DML estimators.
template <typename FillRow>
LocalStatus local_generic_wls(const Vector& xs, const Vector& ys, int k, double x0, double h,
                              KernelType kernel, bool need_se, int se_col, FillRow&& fill,
                              Vector* coef, double* se, double* ess) {
  const int n = static_cast<int>(xs.size());
  int lo = 0, hi = n;
  if (kernel != KernelType::gaussian) {
    lo = static_cast<int>(std::lower_bound(xs.data(), xs.data() + n, x0 - h) - xs.data());
    hi = static_cast<int>(std::upper_bound(xs.data(), xs.data() + n, x0 + h) - xs.data());
  }
  *ess = 0.0;
  if (hi - lo < k) return LocalStatus::insufficient;

  Matrix xtwx = Matrix::Zero(k, k);
  Vector xtwy = Vector::Zero(k);
  Vector row(k);
  double ess_local = 0.0;
  for (int i = lo; i < hi; ++i) {
    const double w = kernel_weight(kernel, (xs[i] - x0) / h);
    if (w <= 0.0) continue;
    fill(i, xs[i] - x0, row);
    xtwx.selfadjointView<Eigen::Lower>().rankUpdate(row, w);
    xtwy += w * ys[i] * row;
    ess_local += w;
  }
  *ess = ess_local;
  if (!(ess_local > static_cast<double>(k))) return LocalStatus::insufficient;

  xtwx = xtwx.selfadjointView<Eigen::Lower>();
  Eigen::LDLT<Matrix> ldlt(xtwx);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() < 1e-10 * std::max(1.0, ldlt.vectorD().maxCoeff()))
    return LocalStatus::singular;
  *coef = ldlt.solve(xtwy);

  if (need_se) {
    // HC1 sandwich on the weighted problem; only the se_col variance is used
    Matrix meat = Matrix::Zero(k, k);
    for (int i = lo; i < hi; ++i) {
      const double w = kernel_weight(kernel, (xs[i] - x0) / h);
      if (w <= 0.0) continue;
      fill(i, xs[i] - x0, row);
      const double e = ys[i] - row.dot(*coef);
      meat.selfadjointView<Eigen::Lower>().rankUpdate(row, w * w * e * e);
    }
    meat = meat.selfadjointView<Eigen::Lower>();
    const double dof = ess_local - static_cast<double>(k);
    const double hc1 = dof > 0.0 ? ess_local / dof : 1.0;
    const Matrix bread = ldlt.solve(Matrix::Identity(k, k));
    const Matrix cov = hc1 * bread * meat * bread;
    const double var = cov(se_col, se_col);
    *se = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return LocalStatus::ok;
}

/// Local-linear CME design {1, D, X−x0, D(X−x0), Z} over a SortedView.
inline LocalStatus local_wls(const SortedView& view, double x0, double h, KernelType kernel,
                             bool need_se, Vector* coef, double* se, double* ess) {
  const int p = view.p();
  return local_generic_wls(
      view.x, view.y, 4 + p, x0, h, kernel, need_se, /*se_col=*/1,
      [&](int i, double dx, Vector& row) {
        row[0] = 1.0;
        row[1] = view.d[i];
        row[2] = dx;
        row[3] = view.d[i] * dx;
        for (int j = 0; j < p; ++j) row[4 + j] = view.z(i, j);
      },
      coef, se, ess);
}

inline Vector default_bandwidth_grid(const Dataset& data) {
  const double s = sample_sd(data.moderator);
  if (!(s > 0.0)) throw validation_error("bandwidth grid: constant moderator");
  return logspace(0.05 * s, 2.0 * s, 20);
}

}  // namespace detail

/// Local-linear CME fit at a single point; hard errors on thin or singular
/// local data (estimate_kernel flags the same conditions as trimming).
inline LocalFit local_linear_fit(const Dataset& data, double x0, const KernelSpec& spec) {
  validate(data);
  if (spec.bandwidth_is_auto())
    throw validation_error("local_linear_fit: bandwidth must be a positive number");
  detail::SortedView view(data);
  Vector coef;
  LocalFit fit;
  const auto status = detail::local_wls(view, x0, spec.bandwidth, spec.kernel,
                                        /*need_se=*/true, &coef, &fit.se, &fit.effective_n);
  if (status == detail::LocalStatus::insufficient)
    throw estimation_error("local_linear_fit: insufficient effective sample size at x0=" +
                           std::to_string(x0));
  if (status == detail::LocalStatus::singular)
    throw estimation_error("local_linear_fit: singular local design at x0=" +
                           std::to_string(x0));
  fit.theta = coef[1];
  return fit;
}

/// K-fold cross-validated bandwidth: minimizes out-of-fold MSPE of the local
/// model (each held-out Y_i predicted from the fit at x0 = X_i on training
/// rows). Candidates that cannot fit everywhere are infeasible.
inline double select_bandwidth(const Dataset& data, const KernelSpec& spec, std::uint64_t seed) {
  validate(data);
  if (spec.cv_folds < 2) throw validation_error("select_bandwidth: cv_folds must be >= 2");
  const int n = data.n();
  if (n < spec.cv_folds) throw validation_error("select_bandwidth: fewer rows than folds");
  const Vector grid =
      spec.bandwidth_grid.size() > 0 ? spec.bandwidth_grid : detail::default_bandwidth_grid(data);
  for (Eigen::Index g = 1; g < grid.size(); ++g)
    if (!(grid[g] > grid[g - 1]) || !(grid[0] > 0.0))
      throw validation_error("select_bandwidth: bandwidth grid must be positive increasing");

  std::vector<int> fold_of(n);
  {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = rng_stream(seed, streams::cv_folds);
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
    for (int i = 0; i < n; ++i) fold_of[order[i]] = i % spec.cv_folds;
  }

  // per-fold training views built once, shared across candidate bandwidths
  std::vector<detail::SortedView> train_views(spec.cv_folds);
  for (int f = 0; f < spec.cv_folds; ++f) {
    std::vector<int> keep;
    keep.reserve(n);
    for (int i = 0; i < n; ++i)
      if (fold_of[i] != f) keep.push_back(i);
    Matrix z(keep.size(), data.p());
    Vector y(keep.size()), d(keep.size()), x(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      y[i] = data.outcome[keep[i]];
      d[i] = data.treatment[keep[i]];
      x[i] = data.moderator[keep[i]];
      if (data.p() > 0) z.row(i) = data.covariates.row(keep[i]);
    }
    train_views[f].assign(make_dataset(std::move(y), std::move(d), std::move(x), std::move(z),
                                       {}, false));
  }

  const int n_h = static_cast<int>(grid.size());
  Vector mspe = Vector::Constant(n_h, std::numeric_limits<double>::infinity());
  parallel_for(n_h, [&](int g) {
    const double h = grid[g];
    double sse = 0.0;
    bool feasible = true;
    for (int i = 0; i < n && feasible; ++i) {
      const auto& view = train_views[fold_of[i]];
      Vector coef;
      double se = 0.0, ess = 0.0;
      const auto status = detail::local_wls(view, data.moderator[i], h, spec.kernel,
                                            /*need_se=*/false, &coef, &se, &ess);
      if (status != detail::LocalStatus::ok) {
        feasible = false;
        break;
      }
      double pred = coef[0] + coef[1] * data.treatment[i];
      for (int j = 0; j < data.p(); ++j) pred += coef[4 + j] * data.covariates(i, j);
      const double e = data.outcome[i] - pred;
      sse += e * e;
    }
    if (feasible) mspe[g] = sse / static_cast<double>(n);
  });

  int best = -1;
  for (int g = 0; g < n_h; ++g)
    if (std::isfinite(mspe[g]) && (best < 0 || mspe[g] < mspe[best])) best = g;
  if (best < 0)
    throw estimation_error("select_bandwidth: every candidate bandwidth yields degenerate fits");
  return grid[best];
}

namespace detail {

/// Replicate curve and standard errors for the studentized sup-t bootstrap:
/// same bandwidth, resampled rows. NaN marks failed points.
inline void kernel_replicate(const Dataset& data, const Vector& grid, double h,
                             KernelType kernel, RngStream& rng, Vector* rep_est,
                             Vector* rep_se) {
  const int n = data.n();
  const auto idx = bootstrap_indices(rng, n);
  Matrix z(n, data.p());
  Vector y(n), d(n), x(n);
  for (int i = 0; i < n; ++i) {
    y[i] = data.outcome[idx[i]];
    d[i] = data.treatment[idx[i]];
    x[i] = data.moderator[idx[i]];
    if (data.p() > 0) z.row(i) = data.covariates.row(idx[i]);
  }
  SortedView view;
  view.x = std::move(x);
  view.y = std::move(y);
  view.d = std::move(d);
  view.z = std::move(z);
  // sort rows by moderator (assign() expects a Dataset; do it in place here)
  {
    const int nn = view.n();
    std::vector<int> order(nn);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return view.x[a] < view.x[b]; });
    Vector xs(nn), ys(nn), ds(nn);
    Matrix zs(nn, view.p());
    for (int i = 0; i < nn; ++i) {
      xs[i] = view.x[order[i]];
      ys[i] = view.y[order[i]];
      ds[i] = view.d[order[i]];
      if (view.p() > 0) zs.row(i) = view.z.row(order[i]);
    }
    view.x = std::move(xs);
    view.y = std::move(ys);
    view.d = std::move(ds);
    view.z = std::move(zs);
  }

  rep_est->setConstant(grid.size(), std::numeric_limits<double>::quiet_NaN());
  rep_se->setConstant(grid.size(), std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    Vector coef;
    double se = 0.0, ess = 0.0;
    if (local_wls(view, grid[g], h, kernel, /*need_se=*/true, &coef, &se, &ess) ==
        LocalStatus::ok) {
      (*rep_est)[g] = coef[1];
      (*rep_se)[g] = se;
    }
  }
}

}  // namespace detail

/// Local-linear kernel estimator of θ(x) over a grid with pointwise normal
/// CIs and sup-t bootstrap uniform bands (fixed bandwidth across replicates).
inline CmeCurve estimate_kernel(const Dataset& data, const Vector& grid, const KernelSpec& spec,
                                int n_boot, double level, std::uint64_t seed) {
  validate(data);
  if (grid.size() == 0) throw validation_error("estimate_kernel: empty grid");
  const double h =
      spec.bandwidth_is_auto() ? select_bandwidth(data, spec, seed) : spec.bandwidth;

  const int m = static_cast<int>(grid.size());
  detail::SortedView view(data);
  const double threshold = trim_threshold(data.p());

  CmeCurve curve;
  curve.grid = grid;
  curve.estimate = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  curve.std_error = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> trimmed(m, 0);  // char, not vector<bool>: slots written in parallel
  parallel_for(m, [&](int g) {
    Vector coef;
    double se = 0.0, ess = 0.0;
    const auto status = detail::local_wls(view, grid[g], h, spec.kernel,
                                          /*need_se=*/true, &coef, &se, &ess);
    if (status != detail::LocalStatus::ok || ess < threshold) {
      trimmed[g] = 1;
      return;
    }
    curve.estimate[g] = coef[1];
    curve.std_error[g] = se;
  });
  curve.trimmed.assign(trimmed.begin(), trimmed.end());

  if (std::all_of(curve.trimmed.begin(), curve.trimmed.end(), [](bool t) { return t; }))
    throw estimation_error("estimate_kernel: every grid point trimmed");

  const auto bands = detail::compute_bands(
      curve.estimate, curve.std_error, curve.trimmed, level, n_boot, seed,
      [&](RngStream& rng, int, Vector* rep_est, Vector* rep_se) {
        detail::kernel_replicate(data, grid, h, spec.kernel, rng, rep_est, rep_se);
      });
  curve.ci_pointwise = {bands.pointwise_lower, bands.pointwise_upper};
  if (n_boot > 0) curve.ci_uniform = {bands.uniform_lower, bands.uniform_upper};

  curve.metadata = {"kernel_" + to_string(spec.kernel), h, seed, data.n(), n_boot};
  validate(curve);
  return curve;
}

}  // namespace cme
