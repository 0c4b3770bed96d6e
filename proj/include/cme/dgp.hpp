#pragma once

#include <cmath>
#include <map>
#include <string>

#include "cme/dataset.hpp"
#include "cme/logistic.hpp"
#include "cme/parallel.hpp"
#include "cme/rng.hpp"

namespace cme {

enum class DgpName { key_a1, fig3_binary, fig4_continuous, linear_null, custom };

inline std::string to_string(DgpName name) {
  switch (name) {
    case DgpName::key_a1: return "key_a1";
    case DgpName::fig3_binary: return "fig3_binary";
    case DgpName::fig4_continuous: return "fig4_continuous";
    case DgpName::linear_null: return "linear_null";
    case DgpName::custom: return "custom";
  }
  return "?";
}

inline DgpName dgp_from_string(const std::string& s) {
  if (s == "key_a1") return DgpName::key_a1;
  if (s == "fig3_binary") return DgpName::fig3_binary;
  if (s == "fig4_continuous") return DgpName::fig4_continuous;
  if (s == "linear_null") return DgpName::linear_null;
  if (s == "custom") return DgpName::custom;
  throw validation_error("unknown DGP '" + s + "'");
}

/// A named data-generating process. `custom` is a linear-interaction
/// Gaussian family driven entirely by the parameter map (shift/scale/
/// correlation only — no user code), and carries no oracle.
struct DgpSpec {
  DgpName name = DgpName::key_a1;
  std::map<std::string, double> parameters;
};

inline DgpSpec make_dgp(DgpName name, std::map<std::string, double> parameters = {}) {
  if (name == DgpName::custom) {
    static const std::map<std::string, double> defaults = {
        {"corr_dx", 0.0}, {"b0", 0.0},       {"bd", 1.0},      {"bx", 0.0},
        {"bdx", 0.0},     {"noise_sd", 1.0}, {"d_shift", 0.0}, {"d_scale", 1.0},
        {"x_shift", 0.0}, {"x_scale", 1.0}};
    for (const auto& [key, value] : parameters)
      if (!defaults.count(key))
        throw validation_error("make_dgp: unknown custom parameter '" + key + "'");
    for (const auto& [key, value] : defaults)
      if (!parameters.count(key)) parameters[key] = value;
    const double rho = parameters.at("corr_dx");
    if (!(rho > -1.0 && rho < 1.0))
      throw validation_error("make_dgp: corr_dx must lie in (-1, 1)");
  } else if (!parameters.empty()) {
    throw validation_error("make_dgp: named DGPs take no parameters");
  }
  return DgpSpec{name, std::move(parameters)};
}

namespace detail {

constexpr int kSampleChunk = 8192;

/// Chunked sampling: chunk c draws from rng_stream(seed, c), so results are
/// identical for any thread count and any n-prefix layout stays stable.
template <typename FillRow>
void sample_chunked(int n, std::uint64_t seed, FillRow&& fill_row) {
  const int n_chunks = (n + kSampleChunk - 1) / kSampleChunk;
  parallel_for(n_chunks, [&](int c) {
    auto rng = rng_stream(seed, static_cast<std::uint64_t>(c));
    const int end = std::min(n, (c + 1) * kSampleChunk);
    for (int i = c * kSampleChunk; i < end; ++i) fill_row(rng, i);
  });
}

}  // namespace detail

inline Dataset sample(const DgpSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw validation_error("sample: n must be >= 1");
  Vector y(n), d(n), x(n);
  switch (spec.name) {
    case DgpName::key_a1: {
      // (D, X) bivariate standard normal, corr 0.5; Y = D² − 0.5 D + ε
      const double load = std::sqrt(0.75);
      detail::sample_chunked(n, seed, [&](RngStream& rng, int i) {
        const double u1 = rng.normal();
        const double u2 = rng.normal();
        const double eps = rng.normal();
        d[i] = u1;
        x[i] = 0.5 * u1 + load * u2;
        y[i] = d[i] * d[i] - 0.5 * d[i] + eps;
      });
      return make_dataset(std::move(y), std::move(d), std::move(x));
    }
    case DgpName::fig3_binary: {
      Matrix z(n, 2);
      detail::sample_chunked(n, seed, [&](RngStream& rng, int i) {
        x[i] = rng.uniform(-2.0, 2.0);
        const double z1 = rng.normal();
        const double z2 = rng.normal();
        d[i] = rng.bernoulli(logistic(0.5 * x[i] + 0.5 * z1)) ? 1.0 : 0.0;
        const double eps = rng.normal();
        y[i] = 1.0 + x[i] * x[i] + d[i] - x[i] * x[i] * d[i] +
               std::exp(z1 + 0.5 * x[i]) * z2 + z1 * z1 - 2.0 * (z2 > 0.0 ? z2 : 0.0) +
               3.0 * std::sin(z1 + z2) + eps;
        z(i, 0) = z1;
        z(i, 1) = z2;
      });
      return make_dataset(std::move(y), std::move(d), std::move(x), std::move(z),
                          {"Y", "D", "X", "Z1", "Z2"}, /*treatment_binary=*/true);
    }
    case DgpName::fig4_continuous: {
      detail::sample_chunked(n, seed, [&](RngStream& rng, int i) {
        x[i] = rng.uniform(-2.0, 2.0);
        d[i] = 0.5 * x[i] + rng.normal();
        y[i] = 1.0 + 1.5 * x[i] + d[i] * d[i] - d[i] * x[i] * x[i] + rng.normal();
      });
      return make_dataset(std::move(y), std::move(d), std::move(x));
    }
    case DgpName::linear_null: {
      // constant CME ≡ 1 for size calibration; D ⫫ X
      detail::sample_chunked(n, seed, [&](RngStream& rng, int i) {
        x[i] = rng.uniform(-2.0, 2.0);
        d[i] = rng.normal();
        y[i] = 1.0 + d[i] + x[i] + rng.normal();
      });
      return make_dataset(std::move(y), std::move(d), std::move(x));
    }
    case DgpName::custom: {
      const auto& p = spec.parameters;
      const double rho = p.at("corr_dx"), load = std::sqrt(1.0 - rho * rho);
      detail::sample_chunked(n, seed, [&](RngStream& rng, int i) {
        const double u1 = rng.normal();
        const double u2 = rng.normal();
        d[i] = p.at("d_shift") + p.at("d_scale") * u1;
        x[i] = p.at("x_shift") + p.at("x_scale") * (rho * u1 + load * u2);
        y[i] = p.at("b0") + p.at("bd") * d[i] + p.at("bx") * x[i] +
               p.at("bdx") * d[i] * x[i] + p.at("noise_sd") * rng.normal();
      });
      return make_dataset(std::move(y), std::move(d), std::move(x));
    }
  }
  throw validation_error("sample: unhandled DGP");
}

/// True conditional marginal effect θ(x) = E[∂Y/∂D | X = x].
inline double cme_oracle(const DgpSpec& spec, double x) {
  switch (spec.name) {
    case DgpName::key_a1: return x - 0.5;           // E[2D − 0.5 | X=x], E[D|X=x] = 0.5x
    case DgpName::fig3_binary: return 1.0 - x * x;  // ∂Y/∂D = 1 − X²
    case DgpName::fig4_continuous: return x - x * x;
    case DgpName::linear_null: return 1.0;
    case DgpName::custom: break;
  }
  throw validation_error("cme_oracle: no analytic oracle for custom DGP");
}

/// Conditional average partial effect ρ(d, x) = E[∂Y/∂D | D = d, X = x];
/// distinct from θ(x) whenever the effect varies with D itself.
inline double cape_oracle(const DgpSpec& spec, double d, double x) {
  switch (spec.name) {
    case DgpName::key_a1: return 2.0 * d - 0.5;
    case DgpName::fig4_continuous: return 2.0 * d - x * x;
    default: break;
  }
  throw validation_error("cape_oracle: defined only for key_a1 and fig4_continuous");
}

/// Population OLS coefficients of Y ~ 1 + D + X + DX under key_a1:
/// (0.6, −0.5, 0, 0.8). With verify_draws > 0 the closed form is re-derived
/// by Monte Carlo (M = E[zzᵀ], b = E[zY], solve M⁻¹b) and cross-checked to
/// ±0.01 before being returned.
inline Vector linear_plim_oracle(const DgpSpec& spec, long verify_draws = 0,
                                 std::uint64_t seed = 0x5eedcafe) {
  if (spec.name != DgpName::key_a1)
    throw validation_error("linear_plim_oracle: defined only for key_a1");
  Vector closed(4);
  closed << 0.6, -0.5, 0.0, 0.8;
  if (verify_draws > 0) {
    const long chunk = detail::kSampleChunk;
    const long n_chunks = (verify_draws + chunk - 1) / chunk;
    std::vector<Eigen::Matrix4d> m_parts(n_chunks);
    std::vector<Eigen::Vector4d> b_parts(n_chunks);
    const double load = std::sqrt(0.75);
    parallel_for(static_cast<int>(n_chunks), [&](int c) {
      auto rng = rng_stream(seed, static_cast<std::uint64_t>(c));
      Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
      Eigen::Vector4d b = Eigen::Vector4d::Zero();
      const long end = std::min(verify_draws, static_cast<long>(c + 1) * chunk);
      for (long i = static_cast<long>(c) * chunk; i < end; ++i) {
        const double dd = rng.normal();
        const double xx = 0.5 * dd + load * rng.normal();
        const double yy = dd * dd - 0.5 * dd + rng.normal();
        const Eigen::Vector4d z(1.0, dd, xx, dd * xx);
        m.selfadjointView<Eigen::Lower>().rankUpdate(z);
        b += z * yy;
      }
      m_parts[c] = m;
      b_parts[c] = b;
    });
    Eigen::Matrix4d m_total = Eigen::Matrix4d::Zero();
    Eigen::Vector4d b_total = Eigen::Vector4d::Zero();
    for (long c = 0; c < n_chunks; ++c) {
      m_total += m_parts[c];
      b_total += b_parts[c];
    }
    m_total = m_total.selfadjointView<Eigen::Lower>();
    const Eigen::Vector4d mc = m_total.ldlt().solve(b_total);
    for (int j = 0; j < 4; ++j)
      if (std::abs(mc[j] - closed[j]) > 0.01)
        throw estimation_error("linear_plim_oracle: Monte Carlo check failed at coefficient " +
                               std::to_string(j) + " (" + std::to_string(mc[j]) + ")");
  }
  return closed;
}

}  // namespace cme
