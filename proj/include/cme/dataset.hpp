#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cme/common.hpp"

namespace cme {

/// Immutable estimation sample: outcome Y, treatment D, moderator X and
/// optional covariates Z. All estimators share this layout.
struct Dataset {
  Vector outcome;
  Vector treatment;
  Vector moderator;
  Matrix covariates;                      // n x p, p >= 0
  std::vector<std::string> column_names;  // outcome, treatment, moderator, covariates...
  bool treatment_binary = false;
  int rows_dropped = 0;  // rows removed at ingestion under drop_rows

  int n() const { return static_cast<int>(outcome.size()); }
  int p() const { return static_cast<int>(covariates.cols()); }
};

struct ColumnRoles {
  std::string outcome;
  std::string treatment;
  std::string moderator;
  std::vector<std::string> covariates;
  bool treatment_binary = false;
};

enum class MissingPolicy { reject, drop_rows };

inline void validate(const Dataset& data) {
  const auto n = data.outcome.size();
  if (n < 1) throw validation_error("dataset: empty dataset");
  if (data.treatment.size() != n || data.moderator.size() != n ||
      (data.covariates.cols() > 0 && data.covariates.rows() != n)) {
    throw validation_error("dataset: columns have mismatched lengths");
  }
  if (!data.outcome.allFinite() || !data.treatment.allFinite() || !data.moderator.allFinite() ||
      (data.covariates.size() > 0 && !data.covariates.allFinite())) {
    throw validation_error("dataset: non-finite values present");
  }
  if (data.treatment_binary) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = data.treatment[i];
      if (d != 0.0 && d != 1.0)
        throw validation_error("dataset: treatment declared binary but row " +
                               std::to_string(i) + " has value " + std::to_string(d));
    }
  }
  const std::size_t expected = 3 + static_cast<std::size_t>(data.covariates.cols());
  if (!data.column_names.empty() && data.column_names.size() != expected)
    throw validation_error("dataset: column_names does not match column count");
}

inline Dataset make_dataset(Vector outcome, Vector treatment, Vector moderator,
                            Matrix covariates = Matrix(),
                            std::vector<std::string> column_names = {},
                            bool treatment_binary = false) {
  Dataset data;
  data.outcome = std::move(outcome);
  data.treatment = std::move(treatment);
  data.moderator = std::move(moderator);
  data.covariates = covariates.size() > 0 ? std::move(covariates)
                                          : Matrix(data.outcome.size(), 0);
  if (column_names.empty()) {
    column_names = {"Y", "D", "X"};
    for (int j = 0; j < data.covariates.cols(); ++j)
      column_names.push_back("Z" + std::to_string(j + 1));
  }
  data.column_names = std::move(column_names);
  data.treatment_binary = treatment_binary;
  validate(data);
  return data;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(field);
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

/// Strict double parse; returns quiet NaN for empty or non-numeric fields.
inline double parse_cell(const std::string& raw, bool* numeric) {
  const std::string cell = trim(raw);
  if (cell.empty()) {
    *numeric = false;
    return std::numeric_limits<double>::quiet_NaN();
  }
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  *numeric = end == cell.c_str() + cell.size();
  return *numeric ? value : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Reads a header CSV and maps columns to roles. Under `reject` any
/// non-numeric or non-finite cell is an error; under `drop_rows` the whole
/// row is removed and counted in Dataset::rows_dropped.
inline Dataset ingest_csv(const std::string& path, const ColumnRoles& roles,
                          MissingPolicy policy = MissingPolicy::reject) {
  std::ifstream in(path);
  if (!in) throw validation_error("ingest_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw validation_error("ingest_csv: missing header row");
  const auto header = detail::split_csv_line(line);

  auto column_index = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (detail::trim(header[j]) == name) return static_cast<int>(j);
    throw validation_error("ingest_csv: missing column '" + name + "'");
  };

  std::vector<int> indices{column_index(roles.outcome), column_index(roles.treatment),
                           column_index(roles.moderator)};
  for (const auto& z : roles.covariates) indices.push_back(column_index(z));
  const int k = static_cast<int>(indices.size());

  std::vector<std::vector<double>> cols(k);
  int dropped = 0;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    std::vector<double> values(k);
    bool row_ok = true;
    for (int j = 0; j < k; ++j) {
      if (indices[j] >= static_cast<int>(fields.size())) {
        row_ok = false;
        if (policy == MissingPolicy::reject)
          throw validation_error("ingest_csv: row " + std::to_string(row) + " is short");
        break;
      }
      bool numeric = false;
      values[j] = detail::parse_cell(fields[indices[j]], &numeric);
      if (!numeric || !std::isfinite(values[j])) {
        if (policy == MissingPolicy::reject)
          throw validation_error("ingest_csv: non-numeric or non-finite value in row " +
                                 std::to_string(row) + ", column '" +
                                 detail::trim(header[indices[j]]) + "'");
        row_ok = false;
        break;
      }
    }
    if (!row_ok) {
      ++dropped;
      continue;
    }
    for (int j = 0; j < k; ++j) cols[j].push_back(values[j]);
  }

  const auto n = static_cast<Eigen::Index>(cols[0].size());
  if (n == 0) throw validation_error("ingest_csv: empty dataset after dropping rows");

  Matrix covariates(n, k - 3);
  for (int j = 3; j < k; ++j)
    covariates.col(j - 3) = Eigen::Map<const Vector>(cols[j].data(), n);

  std::vector<std::string> names{roles.outcome, roles.treatment, roles.moderator};
  names.insert(names.end(), roles.covariates.begin(), roles.covariates.end());

  Dataset data = make_dataset(Eigen::Map<const Vector>(cols[0].data(), n),
                              Eigen::Map<const Vector>(cols[1].data(), n),
                              Eigen::Map<const Vector>(cols[2].data(), n),
                              std::move(covariates), std::move(names),
                              roles.treatment_binary);
  data.rows_dropped = dropped;
  return data;
}

/// Writes the dataset back out with full round-trip precision (%.17g).
inline void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("write_csv: cannot open '" + path + "'");
  for (std::size_t j = 0; j < data.column_names.size(); ++j) {
    if (j) out << ',';
    out << data.column_names[j];
  }
  out << '\n';
  for (int i = 0; i < data.n(); ++i) {
    out << detail::format_double(data.outcome[i]) << ','
        << detail::format_double(data.treatment[i]) << ','
        << detail::format_double(data.moderator[i]);
    for (int j = 0; j < data.p(); ++j) out << ',' << detail::format_double(data.covariates(i, j));
    out << '\n';
  }
}

/// Equally spaced evaluation points from the 1st to the 99th percentile of
/// the moderator; the clipped range keeps the grid out of empty tails.
inline Vector make_grid(const Dataset& data, int grid_size) {
  if (grid_size < 2) throw validation_error("make_grid: grid_size must be >= 2");
  const double lo = quantile(data.moderator, 0.01);
  const double hi = quantile(data.moderator, 0.99);
  if (!(hi > lo)) throw validation_error("make_grid: constant moderator (zero range)");
  return linspace(lo, hi, grid_size);
}

}  // namespace cme
