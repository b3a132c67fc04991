// Hajek point estimates of the target average treatment effect, weight
// diagnostics (effective sample size, maximum weight, TASMD), and the
// stratified bootstrap for confidence intervals.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "onestep/data.hpp"
#include "onestep/rng.hpp"
#include "onestep/solver.hpp"
#include "onestep/thread_pool.hpp"

namespace onestep {

struct ConfidenceInterval {
  double lower = 0;
  double upper = 0;
  double level = 0;
  int replicates = 0;
  int skipped = 0;
};

struct EstimateReport {
  double tau_hat = 0;
  double treated_mean = 0;
  double control_mean = 0;
  double ess_treated = 0;
  double ess_control = 0;
  double max_weight_treated = 0;
  double max_weight_control = 0;
  Eigen::VectorXd tasmd_treated;
  Eigen::VectorXd tasmd_control;
  std::optional<ConfidenceInterval> ci;
  std::vector<std::string> notes;
};

// Hajek ratio-form weighted mean, accumulated around the first outcome value
// so a constant outcome vector has an exactly constant weighted mean.
inline double weighted_mean(const Eigen::VectorXd& w, const Eigen::VectorXd& y) {
  const double pivot = y(0);
  return pivot + w.dot((y.array() - pivot).matrix()) / w.sum();
}

// Weighted difference of group means. Weight vectors are expected to be
// normalized; if a sum drifts beyond 1e-6 the ratio form renormalizes and a
// note records it.
inline EstimateReport hajek(Eigen::VectorXd w1, const Eigen::VectorXd& y1, Eigen::VectorXd w0,
                            const Eigen::VectorXd& y0) {
  if (w1.size() != y1.size() || w0.size() != y0.size())
    throw std::invalid_argument("hajek: weight/outcome length mismatch");
  if (w1.size() == 0 || w0.size() == 0) throw std::invalid_argument("hajek: empty group");
  EstimateReport report;
  auto normalize = [&report](Eigen::VectorXd& w, const char* which) {
    const double total = w.sum();
    if (!(total > 0.0)) throw std::invalid_argument("hajek: weights must sum to a positive value");
    if (std::abs(total - 1.0) > 1e-6)
      report.notes.push_back(std::string("renormalized ") + which + " weights (sum was " +
                             std::to_string(total) + ")");
    w /= total;
  };
  normalize(w1, "treated");
  normalize(w0, "control");
  report.treated_mean = weighted_mean(w1, y1);
  report.control_mean = weighted_mean(w0, y0);
  report.tau_hat = report.treated_mean - report.control_mean;
  return report;
}

// Effective sample size (sum w)^2 / sum w^2; equals 1/sum w^2 for normalized
// weights, n for uniform ones.
inline double ess(const Eigen::VectorXd& w) {
  if (w.size() == 0) throw std::invalid_argument("ess: empty weight vector");
  // entries a rounding error below zero are solver noise, not a sign error
  if ((w.array() < -1e-9).any()) throw std::invalid_argument("ess: negative weight");
  const double total = w.sum();
  const double sumsq = w.squaredNorm();
  if (!(sumsq > 0.0)) throw std::invalid_argument("ess: all weights are zero");
  return total * total / sumsq;
}

inline double max_normalized_weight(const Eigen::VectorXd& w) {
  if (w.size() == 0) throw std::invalid_argument("max_normalized_weight: empty weight vector");
  const double total = w.sum();
  if (!(total > 0.0)) throw std::invalid_argument("max_normalized_weight: weights sum to zero");
  return w.maxCoeff() / total;
}

struct TasmdResult {
  Eigen::VectorXd values;
  std::vector<bool> absolute;  // true where a zero spread forced |diff| un-standardized

  double max() const { return values.size() ? values.maxCoeff() : 0.0; }
};

// Target absolute standardized mean difference per basis term:
// |weighted mean - target mean| / target spread.
inline TasmdResult tasmd(const Eigen::VectorXd& weighted_means, const TargetProfile& profile) {
  if (!profile.spreads) throw std::invalid_argument("tasmd: profile has no spreads");
  if (weighted_means.size() != profile.means.size())
    throw std::invalid_argument("tasmd: length mismatch");
  TasmdResult res;
  res.values.resize(weighted_means.size());
  res.absolute.assign(static_cast<std::size_t>(weighted_means.size()), false);
  for (std::ptrdiff_t k = 0; k < weighted_means.size(); ++k) {
    const double diff = std::abs(weighted_means(k) - profile.means(k));
    const double s = (*profile.spreads)(k);
    if (s == 0.0) {
      res.values(k) = diff;
      res.absolute[static_cast<std::size_t>(k)] = true;
    } else {
      res.values(k) = diff / s;
    }
  }
  return res;
}

// One-step weighting pipeline, fixed for a bootstrap run: expand this basis,
// balance toward this profile at these tolerances.
struct OneStepConfig {
  BasisSpec basis;
  TargetProfile profile;
  Eigen::VectorXd deltas;
  bool nonnegative = true;
  SolverSettings solver;

  BalanceProblem problem_for(const Eigen::MatrixXd& group_covariates) const {
    BalanceProblem p;
    p.B = expand(group_covariates, basis);
    p.target = profile.means;
    p.deltas.deltas = deltas;
    p.nonnegative = nonnegative;
    return p;
  }
};

struct BootstrapFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BootstrapSettings {
  int replicates = 200;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  double max_skip_fraction = 0.10;
};

// Empirical quantile with linear interpolation between order statistics
// (sorted input), pinned here for bit-reproducible intervals.
inline double interpolated_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - std::floor(h)) * (sorted[lo + 1] - sorted[lo]);
}

namespace detail {

struct GroupData {
  Eigen::MatrixXd covariates;
  std::vector<Eigen::VectorXd> outcomes;  // one vector per outcome column
};

inline GroupData gather_group(const StudyDataset& ds, const std::vector<std::ptrdiff_t>& rows,
                              const std::vector<const Eigen::VectorXd*>& outcome_columns) {
  GroupData g;
  g.covariates.resize(static_cast<std::ptrdiff_t>(rows.size()), ds.d());
  g.outcomes.resize(outcome_columns.size());
  for (auto& o : g.outcomes) o.resize(static_cast<std::ptrdiff_t>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    g.covariates.row(static_cast<std::ptrdiff_t>(r)) = ds.covariates.row(rows[r]);
    for (std::size_t j = 0; j < outcome_columns.size(); ++j)
      g.outcomes[j](static_cast<std::ptrdiff_t>(r)) = (*outcome_columns[j])(rows[r]);
  }
  return g;
}

}  // namespace detail

// Percentile bootstrap of the one-step Hajek estimator, one interval per
// outcome column. Resampling is with replacement within each treatment group,
// preserving group sizes; the target profile stays fixed. Replicates draw
// deterministic sub-seeds from the master seed, so the intervals do not
// depend on thread count or execution order.
inline std::vector<ConfidenceInterval> bootstrap_ci_multi(
    const StudyDataset& ds, const OneStepConfig& config,
    const std::vector<const Eigen::VectorXd*>& outcome_columns, const BootstrapSettings& bs) {
  if (bs.replicates < 2) throw std::invalid_argument("bootstrap: need at least 2 replicates");
  if (!(bs.level > 0.0 && bs.level < 1.0))
    throw std::invalid_argument("bootstrap: level must be in (0,1)");

  const auto treated_rows = ds.group_rows(1);
  const auto control_rows = ds.group_rows(0);
  const detail::GroupData treated = detail::gather_group(ds, treated_rows, outcome_columns);
  const detail::GroupData control = detail::gather_group(ds, control_rows, outcome_columns);
  const auto m1 = static_cast<std::ptrdiff_t>(treated_rows.size());
  const auto m0 = static_cast<std::ptrdiff_t>(control_rows.size());
  const std::size_t n_outcomes = outcome_columns.size();

  struct Draw {
    bool ok = false;
    std::vector<double> taus;
  };
  std::vector<Draw> draws(static_cast<std::size_t>(bs.replicates));

  parallel_for(bs.replicates, bs.threads, [&](int b) {
    Rng rng(child_seed(bs.seed, static_cast<std::uint64_t>(b)));
    std::vector<std::ptrdiff_t> pick1(static_cast<std::size_t>(m1));
    std::vector<std::ptrdiff_t> pick0(static_cast<std::size_t>(m0));
    for (auto& idx : pick1) idx = static_cast<std::ptrdiff_t>(rng.below(static_cast<std::uint64_t>(m1)));
    for (auto& idx : pick0) idx = static_cast<std::ptrdiff_t>(rng.below(static_cast<std::uint64_t>(m0)));

    auto solve_group = [&](const detail::GroupData& g, const std::vector<std::ptrdiff_t>& pick,
                           Eigen::VectorXd& weights) {
      Eigen::MatrixXd X(static_cast<std::ptrdiff_t>(pick.size()), g.covariates.cols());
      for (std::size_t r = 0; r < pick.size(); ++r)
        X.row(static_cast<std::ptrdiff_t>(r)) = g.covariates.row(pick[r]);
      const WeightSolution sol = solve_weights(config.problem_for(X), config.solver);
      if (sol.status != SolveStatus::optimal) return false;
      weights = sol.weights;
      return true;
    };

    Eigen::VectorXd w1, w0;
    if (!solve_group(treated, pick1, w1) || !solve_group(control, pick0, w0)) return;

    Draw& draw = draws[static_cast<std::size_t>(b)];
    draw.ok = true;
    draw.taus.resize(n_outcomes);
    Eigen::VectorXd y1(static_cast<std::ptrdiff_t>(pick1.size()));
    Eigen::VectorXd y0(static_cast<std::ptrdiff_t>(pick0.size()));
    for (std::size_t j = 0; j < n_outcomes; ++j) {
      for (std::size_t r = 0; r < pick1.size(); ++r)
        y1(static_cast<std::ptrdiff_t>(r)) = treated.outcomes[j](pick1[r]);
      for (std::size_t r = 0; r < pick0.size(); ++r)
        y0(static_cast<std::ptrdiff_t>(r)) = control.outcomes[j](pick0[r]);
      draw.taus[j] = weighted_mean(w1, y1) - weighted_mean(w0, y0);
    }
  });

  int skipped = 0;
  for (const Draw& d : draws)
    if (!d.ok) ++skipped;
  if (static_cast<double>(skipped) > bs.max_skip_fraction * bs.replicates)
    throw BootstrapFailure("bootstrap: " + std::to_string(skipped) + " of " +
                           std::to_string(bs.replicates) +
                           " resamples were infeasible (limit is " +
                           std::to_string(static_cast<int>(bs.max_skip_fraction * 100)) + "%)");

  std::vector<ConfidenceInterval> intervals(n_outcomes);
  for (std::size_t j = 0; j < n_outcomes; ++j) {
    std::vector<double> taus;
    taus.reserve(draws.size());
    for (const Draw& d : draws)
      if (d.ok) taus.push_back(d.taus[j]);
    std::sort(taus.begin(), taus.end());
    ConfidenceInterval& ci = intervals[j];
    const double alpha = 1.0 - bs.level;
    ci.lower = interpolated_quantile(taus, alpha / 2.0);
    ci.upper = interpolated_quantile(taus, 1.0 - alpha / 2.0);
    ci.level = bs.level;
    ci.replicates = static_cast<int>(taus.size());
    ci.skipped = skipped;
  }
  return intervals;
}

inline ConfidenceInterval bootstrap_ci(const StudyDataset& ds, const OneStepConfig& config,
                                       const BootstrapSettings& bs) {
  return bootstrap_ci_multi(ds, config, {&ds.outcome}, bs).front();
}

}  // namespace onestep
