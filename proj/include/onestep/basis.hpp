// Basis expansion: the functions of the covariates whose weighted means are
// balanced against the target profile, plus the rule turning a tolerance
// multiplier into per-term tolerances.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace onestep {

struct TargetProfile {
  std::vector<std::string> names;
  Eigen::VectorXd means;
  std::optional<Eigen::VectorXd> spreads;  // target standard deviations

  void validate() const {
    if (static_cast<std::ptrdiff_t>(names.size()) != means.size())
      throw std::invalid_argument("profile: names/means length mismatch");
    if (spreads) {
      if (spreads->size() != means.size())
        throw std::invalid_argument("profile: spreads length mismatch");
      if ((spreads->array() < 0.0).any())
        throw std::invalid_argument("profile: negative spread");
    }
  }
};

struct BasisTerm {
  enum class Kind { raw, power, interaction };
  Kind kind = Kind::raw;
  int col = 0;    // first covariate column
  int other = 0;  // second column (interaction) or exponent (power)

  static BasisTerm raw(int j) { return {Kind::raw, j, 0}; }
  static BasisTerm power(int j, int p) { return {Kind::power, j, p}; }
  static BasisTerm interaction(int j, int k) { return {Kind::interaction, j, k}; }

  friend bool operator==(const BasisTerm&, const BasisTerm&) = default;
};

// Ordered list of basis terms. The intercept is never a term: the sum-to-one
// constraint plays that role in the balance problem.
struct BasisSpec {
  std::vector<BasisTerm> terms;

  static BasisSpec main_terms(int d) {
    BasisSpec spec;
    spec.terms.reserve(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) spec.terms.push_back(BasisTerm::raw(j));
    return spec;
  }

  void validate(int d) const {
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const BasisTerm& term = terms[t];
      if (term.col < 0 || term.col >= d)
        throw std::out_of_range("basis term references column " + std::to_string(term.col) +
                                " outside 0.." + std::to_string(d - 1));
      switch (term.kind) {
        case BasisTerm::Kind::raw:
          break;
        case BasisTerm::Kind::power:
          if (term.other < 2) throw std::invalid_argument("power term needs exponent >= 2");
          break;
        case BasisTerm::Kind::interaction:
          if (term.other < 0 || term.other >= d)
            throw std::out_of_range("interaction references column " + std::to_string(term.other) +
                                    " outside 0.." + std::to_string(d - 1));
          if (term.other == term.col)
            throw std::invalid_argument("interaction requires two distinct columns");
          break;
      }
      for (std::size_t s = 0; s < t; ++s)
        if (terms[s] == term) throw std::invalid_argument("duplicate basis term");
    }
  }

  // Human-readable labels, e.g. "age", "age^2", "age*bmi".
  std::vector<std::string> labels(const std::vector<std::string>& columns) const {
    auto name = [&](int j) {
      return j < static_cast<int>(columns.size()) ? columns[static_cast<std::size_t>(j)]
                                                  : "x" + std::to_string(j + 1);
    };
    std::vector<std::string> out;
    out.reserve(terms.size());
    for (const BasisTerm& term : terms) {
      switch (term.kind) {
        case BasisTerm::Kind::raw:
          out.push_back(name(term.col));
          break;
        case BasisTerm::Kind::power:
          out.push_back(name(term.col) + "^" + std::to_string(term.other));
          break;
        case BasisTerm::Kind::interaction:
          out.push_back(name(term.col) + "*" + name(term.other));
          break;
      }
    }
    return out;
  }
};

struct ToleranceVector {
  Eigen::VectorXd deltas;  // one per basis term; 0 encodes exact balance
  std::vector<std::string> warnings;

  void validate(std::ptrdiff_t terms) const {
    if (deltas.size() != terms) throw std::invalid_argument("tolerance length != basis terms");
    if ((deltas.array() < 0.0).any()) throw std::invalid_argument("negative tolerance");
  }
};

// Apply the basis row-wise: column t of the result holds term t evaluated on
// each row of X.
inline Eigen::MatrixXd expand(const Eigen::MatrixXd& X, const BasisSpec& spec) {
  spec.validate(static_cast<int>(X.cols()));
  Eigen::MatrixXd out(X.rows(), static_cast<std::ptrdiff_t>(spec.terms.size()));
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    const BasisTerm& term = spec.terms[t];
    const auto col = static_cast<std::ptrdiff_t>(t);
    switch (term.kind) {
      case BasisTerm::Kind::raw:
        out.col(col) = X.col(term.col);
        break;
      case BasisTerm::Kind::power:
        out.col(col) = X.col(term.col).array().pow(term.other);
        break;
      case BasisTerm::Kind::interaction:
        out.col(col) = X.col(term.col).array() * X.col(term.other).array();
        break;
    }
  }
  return out;
}

// delta_k = multiplier * spread_k. A zero spread falls back to the bare
// multiplier as an absolute tolerance (a constant basis column would
// otherwise make every problem with sampling noise infeasible); the fallback
// is recorded as a warning.
inline ToleranceVector standardized_tolerances(double multiplier, const TargetProfile& profile) {
  if (multiplier < 0.0) throw std::invalid_argument("tolerance multiplier must be >= 0");
  if (!profile.spreads) throw std::invalid_argument("profile has no spreads");
  profile.validate();
  ToleranceVector tol;
  tol.deltas.resize(profile.means.size());
  for (std::ptrdiff_t k = 0; k < profile.means.size(); ++k) {
    const double s = (*profile.spreads)(k);
    if (s == 0.0) {
      tol.deltas(k) = multiplier;
      tol.warnings.push_back("zero spread for '" + profile.names[static_cast<std::size_t>(k)] +
                             "': using absolute tolerance " + std::to_string(multiplier));
    } else {
      tol.deltas(k) = multiplier * s;
    }
  }
  return tol;
}

}  // namespace onestep
