// Unit-level study data: ingestion from delimited text, missing-value
// handling, and target profiles computed from row subsets.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "onestep/basis.hpp"
#include "onestep/csv.hpp"

namespace onestep {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Column-role mapping for load_dataset. An empty covariate list means
// "every column that has no other role, in file order".
struct ColumnSchema {
  std::string treatment;
  std::string outcome;
  std::optional<std::string> selection;
  std::optional<std::string> id;
  std::vector<std::string> covariates;
};

struct StudyDataset {
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // NaN marks a missing entry
  Eigen::VectorXd treatment;   // 0/1 on selected rows, NaN elsewhere
  Eigen::VectorXd outcome;     // observed outcome on selected rows, NaN elsewhere
  std::optional<Eigen::VectorXd> selection;  // 0/1 study-membership indicator
  std::vector<std::string> ids;              // per-row labels for weight files

  std::ptrdiff_t n() const { return covariates.rows(); }
  std::ptrdiff_t d() const { return covariates.cols(); }

  bool is_selected(std::ptrdiff_t i) const { return !selection || (*selection)(i) == 1.0; }

  std::vector<std::ptrdiff_t> selected_rows() const {
    std::vector<std::ptrdiff_t> rows;
    for (std::ptrdiff_t i = 0; i < n(); ++i)
      if (is_selected(i)) rows.push_back(i);
    return rows;
  }

  std::vector<std::ptrdiff_t> group_rows(int z) const {
    std::vector<std::ptrdiff_t> rows;
    for (std::ptrdiff_t i = 0; i < n(); ++i)
      if (is_selected(i) && treatment(i) == static_cast<double>(z)) rows.push_back(i);
    return rows;
  }

  bool has_missing() const {
    return covariates.size() > 0 && covariates.hasNaN();
  }

  void validate() const {
    if (treatment.size() != n() || outcome.size() != n())
      throw SchemaError("treatment/outcome length differs from row count");
    if (selection && selection->size() != n())
      throw SchemaError("selection length differs from row count");
    std::ptrdiff_t treated = 0, control = 0;
    for (std::ptrdiff_t i = 0; i < n(); ++i) {
      if (!is_selected(i)) continue;
      const double z = treatment(i);
      if (z != 0.0 && z != 1.0)
        throw SchemaError("treatment undefined or not in {0,1} on selected row " +
                          std::to_string(i + 1));
      if (!std::isfinite(outcome(i)))
        throw SchemaError("outcome missing on selected row " + std::to_string(i + 1));
      (z == 1.0 ? treated : control) += 1;
    }
    if (treated == 0 || control == 0)
      throw SchemaError("both treatment groups must be non-empty among selected rows");
  }
};

struct MissingnessPolicy {
  // Columns listed here get the missing-category rule (indicator column,
  // zero fill); everything else is continuous (mean impute, indicator).
  std::set<std::string> categorical;
  std::string indicator_suffix = "_missing";
};

inline StudyDataset load_dataset(const std::string& path, const ColumnSchema& schema) {
  const csv::Table table = csv::read_table(path);
  const auto rows = static_cast<std::ptrdiff_t>(table.rows.size());

  auto require_column = [&](const std::string& name, const char* role) {
    const std::ptrdiff_t j = table.column(name);
    if (j < 0)
      throw SchemaError(std::string("missing ") + role + " column '" + name + "' in '" + path +
                        "'");
    return j;
  };
  const std::ptrdiff_t z_col = require_column(schema.treatment, "treatment");
  const std::ptrdiff_t y_col = require_column(schema.outcome, "outcome");
  std::ptrdiff_t d_col = -1;
  if (schema.selection) d_col = require_column(*schema.selection, "selection");
  std::ptrdiff_t id_col = -1;
  if (schema.id) id_col = require_column(*schema.id, "id");

  StudyDataset ds;
  if (schema.covariates.empty()) {
    for (std::size_t j = 0; j < table.header.size(); ++j) {
      const auto sj = static_cast<std::ptrdiff_t>(j);
      if (sj == z_col || sj == y_col || sj == d_col || sj == id_col) continue;
      ds.covariate_names.push_back(table.header[j]);
    }
  } else {
    for (const std::string& name : schema.covariates) {
      require_column(name, "covariate");
      ds.covariate_names.push_back(name);
    }
  }

  const auto d = static_cast<std::ptrdiff_t>(ds.covariate_names.size());
  ds.covariates.resize(rows, d);
  ds.treatment.resize(rows);
  ds.outcome.resize(rows);
  if (d_col >= 0) ds.selection = Eigen::VectorXd(rows);
  ds.ids.reserve(static_cast<std::size_t>(rows));

  std::vector<std::ptrdiff_t> cov_cols;
  for (const std::string& name : ds.covariate_names) cov_cols.push_back(table.column(name));

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto& cells = table.rows[static_cast<std::size_t>(i)];
    auto cell = [&](std::ptrdiff_t j) -> const std::string& {
      return cells[static_cast<std::size_t>(j)];
    };

    double selected = 1.0;
    if (d_col >= 0) {
      const auto v = csv::parse_double(cell(d_col));
      if (!v || (*v != 0.0 && *v != 1.0))
        throw SchemaError("selection column '" + *schema.selection + "' row " +
                          std::to_string(i + 2) + " is not 0/1");
      (*ds.selection)(i) = *v;
      selected = *v;
    }

    const auto z = csv::parse_double(cell(z_col));
    if (selected == 1.0) {
      if (!z || (*z != 0.0 && *z != 1.0))
        throw SchemaError("treatment column '" + schema.treatment + "' row " +
                          std::to_string(i + 2) + " is not 0/1");
      ds.treatment(i) = *z;
    } else {
      if (z && *z != 0.0 && *z != 1.0)
        throw SchemaError("treatment column '" + schema.treatment + "' row " +
                          std::to_string(i + 2) + " is not 0/1");
      ds.treatment(i) = z ? *z : nan;
    }

    const auto y = csv::parse_double(cell(y_col));
    if (selected == 1.0 && !y)
      throw SchemaError("outcome column '" + schema.outcome + "' row " + std::to_string(i + 2) +
                        " is not numeric");
    ds.outcome(i) = y ? *y : nan;

    for (std::ptrdiff_t k = 0; k < d; ++k) {
      const auto v = csv::parse_double(cell(cov_cols[static_cast<std::size_t>(k)]));
      ds.covariates(i, k) = v ? *v : nan;  // non-numeric covariate cell = missing
    }
    ds.ids.push_back(id_col >= 0 ? cell(id_col) : std::to_string(i + 1));
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const StudyDataset& ds, const std::string& path) {
  csv::Table table;
  table.header.push_back("id");
  if (ds.selection) table.header.push_back("D");
  table.header.push_back("Z");
  table.header.push_back("Y");
  for (const auto& name : ds.covariate_names) table.header.push_back(name);
  auto fmt = [](double v) { return std::isnan(v) ? std::string() : csv::format_double(v); };
  for (std::ptrdiff_t i = 0; i < ds.n(); ++i) {
    std::vector<std::string> row;
    row.push_back(ds.ids[static_cast<std::size_t>(i)]);
    if (ds.selection) row.push_back(fmt((*ds.selection)(i)));
    row.push_back(fmt(ds.treatment(i)));
    row.push_back(fmt(ds.outcome(i)));
    for (std::ptrdiff_t k = 0; k < ds.d(); ++k) row.push_back(fmt(ds.covariates(i, k)));
    table.rows.push_back(std::move(row));
  }
  csv::write_table(path, table);
}

// Mean-impute continuous covariates and zero-fill categorical ones, appending
// one 0/1 indicator column per imputed covariate. Indicators are appended
// after all original columns, in original column order. Applying the policy
// to an already-complete dataset is the identity.
inline StudyDataset impute_missing(const StudyDataset& ds, const MissingnessPolicy& policy = {}) {
  std::vector<std::ptrdiff_t> incomplete;
  for (std::ptrdiff_t k = 0; k < ds.d(); ++k)
    if (ds.covariates.col(k).hasNaN()) incomplete.push_back(k);
  if (incomplete.empty()) return ds;

  StudyDataset out = ds;
  const std::ptrdiff_t extra = static_cast<std::ptrdiff_t>(incomplete.size());
  out.covariates.conservativeResize(ds.n(), ds.d() + extra);

  std::ptrdiff_t next = ds.d();
  for (std::ptrdiff_t k : incomplete) {
    const std::string& name = ds.covariate_names[static_cast<std::size_t>(k)];
    const bool categorical = policy.categorical.count(name) > 0;

    double mean = 0.0;
    std::ptrdiff_t observed = 0;
    for (std::ptrdiff_t i = 0; i < ds.n(); ++i) {
      const double v = ds.covariates(i, k);
      if (!std::isnan(v)) {
        mean += v;
        ++observed;
      }
    }
    if (!categorical && observed == 0)
      throw std::invalid_argument("covariate '" + name + "' is entirely missing; no mean exists");
    mean = observed > 0 ? mean / static_cast<double>(observed) : 0.0;
    const double fill = categorical ? 0.0 : mean;

    for (std::ptrdiff_t i = 0; i < ds.n(); ++i) {
      const bool missing = std::isnan(ds.covariates(i, k));
      if (missing) out.covariates(i, k) = fill;
      out.covariates(i, next) = missing ? 1.0 : 0.0;
    }
    out.covariate_names.push_back(name + policy.indicator_suffix);
    ++next;
  }
  return out;
}

// Means and population-convention standard deviations (divisor n) of the
// expanded basis over a row subset. A profile summarizes a whole population,
// hence the n divisor; the choice matters for standardized tolerances.
inline TargetProfile profile_from_sample(const StudyDataset& ds,
                                         const std::vector<std::ptrdiff_t>& rows,
                                         const BasisSpec& basis) {
  if (rows.empty()) throw std::invalid_argument("profile_from_sample: empty subset");
  Eigen::MatrixXd X(static_cast<std::ptrdiff_t>(rows.size()), ds.d());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= ds.n())
      throw std::out_of_range("profile_from_sample: row index out of range");
    X.row(static_cast<std::ptrdiff_t>(r)) = ds.covariates.row(rows[r]);
  }
  if (X.hasNaN())
    throw std::invalid_argument("profile_from_sample: subset has missing covariates; impute first");
  const Eigen::MatrixXd B = expand(X, basis);
  TargetProfile profile;
  profile.names = basis.labels(ds.covariate_names);
  profile.means = B.colwise().mean();
  const auto nrows = static_cast<double>(B.rows());
  Eigen::VectorXd spreads(B.cols());
  for (std::ptrdiff_t k = 0; k < B.cols(); ++k) {
    const double centered = (B.col(k).array() - profile.means(k)).square().sum();
    spreads(k) = std::sqrt(centered / nrows);
  }
  profile.spreads = spreads;
  return profile;
}

inline TargetProfile profile_from_sample(const StudyDataset& ds, const BasisSpec& basis) {
  std::vector<std::ptrdiff_t> rows(static_cast<std::size_t>(ds.n()));
  for (std::ptrdiff_t i = 0; i < ds.n(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return profile_from_sample(ds, rows, basis);
}

// Profile files are delimited text with columns term,mean[,spread].
inline TargetProfile load_profile(const std::string& path) {
  const csv::Table table = csv::read_table(path);
  const std::ptrdiff_t term_col = table.column("term");
  const std::ptrdiff_t mean_col = table.column("mean");
  const std::ptrdiff_t spread_col = table.column("spread");
  if (term_col < 0 || mean_col < 0)
    throw SchemaError("profile '" + path + "' needs 'term' and 'mean' columns");
  TargetProfile profile;
  const auto k = static_cast<std::ptrdiff_t>(table.rows.size());
  profile.means.resize(k);
  if (spread_col >= 0) profile.spreads = Eigen::VectorXd(k);
  for (std::ptrdiff_t i = 0; i < k; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    profile.names.push_back(row[static_cast<std::size_t>(term_col)]);
    const auto mean = csv::parse_double(row[static_cast<std::size_t>(mean_col)]);
    if (!mean) throw SchemaError("profile '" + path + "' row " + std::to_string(i + 2) +
                                 ": mean is not numeric");
    profile.means(i) = *mean;
    if (spread_col >= 0) {
      const auto spread = csv::parse_double(row[static_cast<std::size_t>(spread_col)]);
      if (!spread || *spread < 0.0)
        throw SchemaError("profile '" + path + "' row " + std::to_string(i + 2) +
                          ": spread is not a nonnegative number");
      (*profile.spreads)(i) = *spread;
    }
  }
  profile.validate();
  return profile;
}

inline void save_profile(const TargetProfile& profile, const std::string& path) {
  profile.validate();
  csv::Table table;
  table.header = {"term", "mean"};
  if (profile.spreads) table.header.push_back("spread");
  for (std::ptrdiff_t i = 0; i < profile.means.size(); ++i) {
    std::vector<std::string> row{profile.names[static_cast<std::size_t>(i)],
                                 csv::format_double(profile.means(i))};
    if (profile.spreads) row.push_back(csv::format_double((*profile.spreads)(i)));
    table.rows.push_back(std::move(row));
  }
  csv::write_table(path, table);
}

}  // namespace onestep
