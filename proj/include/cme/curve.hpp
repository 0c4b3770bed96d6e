#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cme/common.hpp"

namespace cme {

struct CurveMetadata {
  std::string estimator;
  double bandwidth = std::numeric_limits<double>::quiet_NaN();  // NaN when not kernel-based
  std::uint64_t seed = 0;
  int n = 0;
  int n_boot = 0;
  std::string note;  // diagnostics (e.g. clipping warnings); empty when clean
};

/// Estimated conditional marginal effect curve θ̂(x0) over a moderator grid,
/// with pointwise and (optionally) uniform sup-t confidence bands.
struct CmeCurve {
  Vector grid;
  Vector estimate;
  Vector std_error;
  std::pair<Vector, Vector> ci_pointwise;  // lower, upper
  std::pair<Vector, Vector> ci_uniform;    // empty when n_boot = 0
  std::vector<bool> trimmed;               // true → insufficient local data, point dropped
  CurveMetadata metadata;

  bool has_uniform() const { return ci_uniform.first.size() > 0; }
  int size() const { return static_cast<int>(grid.size()); }
};

inline void validate(const CmeCurve& curve) {
  const auto m = curve.grid.size();
  auto check_len = [&](Eigen::Index len, const char* what) {
    if (len != m)
      throw estimation_error(std::string("curve: ") + what + " length does not match grid");
  };
  check_len(curve.estimate.size(), "estimate");
  check_len(curve.std_error.size(), "std_error");
  check_len(curve.ci_pointwise.first.size(), "ci_pointwise lower");
  check_len(curve.ci_pointwise.second.size(), "ci_pointwise upper");
  check_len(static_cast<Eigen::Index>(curve.trimmed.size()), "trimmed");
  if (curve.has_uniform()) {
    check_len(curve.ci_uniform.first.size(), "ci_uniform lower");
    check_len(curve.ci_uniform.second.size(), "ci_uniform upper");
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    if (curve.trimmed[k]) continue;
    const bool pointwise_ok = curve.ci_pointwise.first[k] <= curve.estimate[k] &&
                              curve.estimate[k] <= curve.ci_pointwise.second[k];
    if (!pointwise_ok)
      throw estimation_error("curve: pointwise band does not bracket estimate at grid point " +
                             std::to_string(k));
    if (curve.has_uniform()) {
      const bool nested = curve.ci_uniform.first[k] <= curve.ci_pointwise.first[k] &&
                          curve.ci_pointwise.second[k] <= curve.ci_uniform.second[k];
      if (!nested)
        throw estimation_error("curve: uniform band does not contain pointwise band at grid point " +
                               std::to_string(k));
    }
  }
}

namespace detail {

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i]))
      arr.push_back(v[i]);
    else
      arr.push_back(nullptr);  // JSON has no NaN; trimmed points carry null
  }
  return arr;
}

inline Vector vector_from_json(const nlohmann::json& arr) {
  Vector v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[static_cast<Eigen::Index>(i)] =
        arr[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : arr[i].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json curve_to_json(const CmeCurve& curve) {
  nlohmann::json j;
  j["grid"] = detail::vector_to_json(curve.grid);
  j["estimate"] = detail::vector_to_json(curve.estimate);
  j["std_error"] = detail::vector_to_json(curve.std_error);
  j["ci_pointwise"] = {{"lower", detail::vector_to_json(curve.ci_pointwise.first)},
                       {"upper", detail::vector_to_json(curve.ci_pointwise.second)}};
  if (curve.has_uniform())
    j["ci_uniform"] = {{"lower", detail::vector_to_json(curve.ci_uniform.first)},
                       {"upper", detail::vector_to_json(curve.ci_uniform.second)}};
  j["trimmed"] = curve.trimmed;
  j["metadata"] = {{"estimator", curve.metadata.estimator},
                   {"bandwidth", std::isfinite(curve.metadata.bandwidth)
                                     ? nlohmann::json(curve.metadata.bandwidth)
                                     : nlohmann::json(nullptr)},
                   {"seed", curve.metadata.seed},
                   {"n", curve.metadata.n},
                   {"n_boot", curve.metadata.n_boot}};
  if (!curve.metadata.note.empty()) j["metadata"]["note"] = curve.metadata.note;
  return j;
}

inline CmeCurve curve_from_json(const nlohmann::json& j) {
  CmeCurve curve;
  curve.grid = detail::vector_from_json(j.at("grid"));
  curve.estimate = detail::vector_from_json(j.at("estimate"));
  curve.std_error = detail::vector_from_json(j.at("std_error"));
  curve.ci_pointwise = {detail::vector_from_json(j.at("ci_pointwise").at("lower")),
                        detail::vector_from_json(j.at("ci_pointwise").at("upper"))};
  if (j.contains("ci_uniform"))
    curve.ci_uniform = {detail::vector_from_json(j.at("ci_uniform").at("lower")),
                        detail::vector_from_json(j.at("ci_uniform").at("upper"))};
  curve.trimmed = j.at("trimmed").get<std::vector<bool>>();
  const auto& meta = j.at("metadata");
  curve.metadata.estimator = meta.at("estimator").get<std::string>();
  curve.metadata.bandwidth = meta.at("bandwidth").is_null()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : meta.at("bandwidth").get<double>();
  curve.metadata.seed = meta.at("seed").get<std::uint64_t>();
  curve.metadata.n = meta.at("n").get<int>();
  curve.metadata.n_boot = meta.at("n_boot").get<int>();
  if (meta.contains("note")) curve.metadata.note = meta.at("note").get<std::string>();
  return curve;
}

inline void curve_to_json_file(const CmeCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("curve_to_json_file: cannot open '" + path + "'");
  out << curve_to_json(curve).dump(2) << '\n';
}

/// One row per grid point. Uniform-band columns appear only when present.
inline void curve_to_csv(const CmeCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("curve_to_csv: cannot open '" + path + "'");
  out << "grid,estimate,std_error,ci_pointwise_lower,ci_pointwise_upper";
  if (curve.has_uniform()) out << ",ci_uniform_lower,ci_uniform_upper";
  out << ",trimmed\n";
  auto cell = [&](double v) { out << ',' << (std::isfinite(v) ? detail::format_double(v) : ""); };
  for (int k = 0; k < curve.size(); ++k) {
    out << detail::format_double(curve.grid[k]);
    cell(curve.estimate[k]);
    cell(curve.std_error[k]);
    cell(curve.ci_pointwise.first[k]);
    cell(curve.ci_pointwise.second[k]);
    if (curve.has_uniform()) {
      cell(curve.ci_uniform.first[k]);
      cell(curve.ci_uniform.second[k]);
    }
    out << ',' << (curve.trimmed[k] ? 1 : 0) << '\n';
  }
}

}  // namespace cme
