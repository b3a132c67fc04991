// Simulation study: nested-cohort data-generating processes, the six
// weighting methods (three one-step, three two-step), and the Monte Carlo
// harness producing RMSE / bias / ESS / max-weight summaries.
//
// Design of the cohort, fixed by the study being reproduced:
//   latent   U1..U4 ~ N(0,1) iid
//   observed X1 = exp(U1/2)
//            X2 = U2 / (1 + exp(U1)) + 10
//            X3 = (U1*U3/25 + 0.6)^3
//            X4 = (U2 + U4 + 20)^2
//   selection pr(D=1|U) = expit(-U1 + 0.5 U2 - 0.25 U3 - 0.1 U4)
//   treatment pr(Z=1|U) = 0.5 (randomized) or expit(U1 + 2U2 - 2U3 - U4)
//   outcomes  Y(0) = 210 + 27.4 U1 + 13.7 U2 + 13.7 U3 + 13.7 U4 + e0
//             Y(1) adds treatment heterogeneity per outcome model 1..3
//   e0, e1 ~ N(0, 5^2); the target average treatment effect is 0 throughout.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "onestep/data.hpp"
#include "onestep/estimate.hpp"
#include "onestep/propensity.hpp"
#include "onestep/rng.hpp"
#include "onestep/solver.hpp"
#include "onestep/thread_pool.hpp"
#include "onestep/tune.hpp"

namespace onestep {

enum class Setting { randomized, observational };

inline const char* to_string(Setting s) {
  return s == Setting::randomized ? "randomized" : "observational";
}

// Method identifiers: one1..one3 balance covariate sets toward the cohort
// profile in one step; two1..two3 invert fitted selection (and treatment)
// probabilities. Variant 1 uses X1 only, variant 2 all observed X, variant 3
// all latent U (the correctly specified set).
struct MethodId {
  bool one_step = true;
  int variant = 3;

  std::string name() const {
    return (one_step ? "one" : "two") + std::to_string(variant);
  }
  friend bool operator==(const MethodId&, const MethodId&) = default;
};

inline MethodId parse_method(const std::string& name) {
  if (name.size() == 4 && (name.substr(0, 3) == "one" || name.substr(0, 3) == "two")) {
    const int variant = name[3] - '0';
    if (variant >= 1 && variant <= 3) return {name.substr(0, 3) == "one", variant};
  }
  throw std::invalid_argument("unknown method '" + name + "' (expected one1..one3, two1..two3)");
}

inline std::vector<MethodId> all_methods() {
  return {{false, 1}, {true, 1}, {false, 2}, {true, 2}, {false, 3}, {true, 3}};
}

struct SimConfig {
  Setting setting = Setting::randomized;
  int cohort_size = 1000;
  int replications = 200;
  std::uint64_t master_seed = 1;
  std::vector<MethodId> methods = all_methods();
  TuningGrid grid;
  SolverSettings solver;
  int threads = 1;

  void validate() const {
    if (cohort_size < 10) throw std::invalid_argument("cohort_size must be at least 10");
    if (replications < 1) throw std::invalid_argument("replications must be at least 1");
    if (methods.empty()) throw std::invalid_argument("no methods requested");
    grid.validate();
  }
};

struct Cohort {
  Eigen::MatrixXd U;       // n x 4 latent covariates
  Eigen::MatrixXd X;       // n x 4 observed transforms
  Eigen::VectorXd D;       // selection into the study
  Eigen::VectorXd Z;       // treatment assignment (drawn for every unit)
  Eigen::VectorXd y0;      // potential outcome under control
  Eigen::MatrixXd y1;      // n x 3 potential outcomes under treatment, per model

  std::ptrdiff_t n() const { return U.rows(); }

  double observed_outcome(std::ptrdiff_t i, int model) const {
    return Z(i) == 1.0 ? y1(i, model - 1) : y0(i);
  }
};

// Observed covariates as a function of the latent ones; exposed separately so
// the transforms can be checked at pinned inputs.
inline Eigen::Vector4d observed_covariates(const Eigen::Vector4d& u) {
  Eigen::Vector4d x;
  x(0) = std::exp(u(0) / 2.0);
  x(1) = u(1) / (1.0 + std::exp(u(0))) + 10.0;
  x(2) = std::pow(u(0) * u(2) / 25.0 + 0.6, 3);
  x(3) = std::pow(u(1) + u(3) + 20.0, 2);
  return x;
}

inline double selection_probability(const Eigen::Vector4d& u) {
  return expit(-u(0) + 0.5 * u(1) - 0.25 * u(2) - 0.1 * u(3));
}

inline double treatment_probability(Setting setting, const Eigen::Vector4d& u) {
  if (setting == Setting::randomized) return 0.5;
  return expit(u(0) + 2.0 * u(1) - 2.0 * u(2) - u(3));
}

inline double control_mean_function(const Eigen::Vector4d& u) {
  return 210.0 + 27.4 * u(0) + 13.7 * u(1) + 13.7 * u(2) + 13.7 * u(3);
}

inline double treated_mean_function(int model, const Eigen::Vector4d& u) {
  switch (model) {
    case 1: return 210.0 + 27.4 * u(0) + 13.7 * u(1) + 13.7 * u(2) + 13.7 * u(3);
    case 2: return 210.0 + 41.1 * u(0) + 13.7 * u(1) + 13.7 * u(2) + 13.7 * u(3);
    case 3: return 210.0 + 41.1 * u(0) + 27.4 * u(1) + 27.4 * u(2) + 13.7 * u(3);
    default: throw std::invalid_argument("unknown outcome model " + std::to_string(model));
  }
}

// The heterogeneity terms all have mean zero under the standard normal
// latents, so the target average treatment effect is zero for every model.
inline double true_tate(int model) {
  if (model < 1 || model > 3)
    throw std::invalid_argument("unknown outcome model " + std::to_string(model));
  return 0.0;
}

inline Cohort generate_cohort(const SimConfig& config, std::uint64_t replication_seed) {
  const std::ptrdiff_t n = config.cohort_size;
  Cohort cohort;
  cohort.U.resize(n, 4);
  cohort.X.resize(n, 4);
  cohort.D.resize(n);
  cohort.Z.resize(n);
  cohort.y0.resize(n);
  cohort.y1.resize(n, 3);

  Rng rng(replication_seed);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Eigen::Vector4d u;
    for (int j = 0; j < 4; ++j) u(j) = rng.normal();
    cohort.U.row(i) = u;
    cohort.X.row(i) = observed_covariates(u);
    cohort.D(i) = rng.bernoulli(selection_probability(u)) ? 1.0 : 0.0;
    cohort.Z(i) = rng.bernoulli(treatment_probability(config.setting, u)) ? 1.0 : 0.0;
    const double e0 = 5.0 * rng.normal();
    const double e1 = 5.0 * rng.normal();
    cohort.y0(i) = control_mean_function(u) + e0;
    for (int model = 1; model <= 3; ++model)
      cohort.y1(i, model - 1) = treated_mean_function(model, u) + e1;
  }
  return cohort;
}

// Covariate set used by a method variant: X1 only, all of X, or all of U.
inline Eigen::MatrixXd method_covariates(const Cohort& cohort, int variant) {
  switch (variant) {
    case 1: return cohort.X.col(0);
    case 2: return cohort.X;
    case 3: return cohort.U;
    default: throw std::invalid_argument("unknown method variant");
  }
}

// One-step target: means (and population spreads) of the method's covariates
// over the whole cohort.
inline TargetProfile method_profile(const Cohort& cohort, int variant) {
  const Eigen::MatrixXd cov = method_covariates(cohort, variant);
  TargetProfile profile;
  for (std::ptrdiff_t j = 0; j < cov.cols(); ++j)
    profile.names.push_back("b" + std::to_string(j + 1));
  profile.means = cov.colwise().mean();
  Eigen::VectorXd spreads(cov.cols());
  for (std::ptrdiff_t j = 0; j < cov.cols(); ++j)
    spreads(j) = std::sqrt((cov.col(j).array() - profile.means(j)).square().mean());
  profile.spreads = spreads;
  return profile;
}

// Full-cohort dataset view with the selection column; feeds the two-step
// baseline and file round trips. Outcomes follow the requested model.
inline StudyDataset cohort_dataset(const Cohort& cohort, int variant, int model) {
  StudyDataset ds;
  ds.covariates = method_covariates(cohort, variant);
  const bool latent = variant == 3;
  for (std::ptrdiff_t j = 0; j < ds.covariates.cols(); ++j)
    ds.covariate_names.push_back((latent ? "u" : "x") + std::to_string(j + 1));
  const std::ptrdiff_t n = cohort.n();
  ds.treatment.resize(n);
  ds.outcome.resize(n);
  ds.selection = cohort.D;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const bool selected = cohort.D(i) == 1.0;
    ds.treatment(i) = selected ? cohort.Z(i) : nan;
    ds.outcome(i) = selected ? cohort.observed_outcome(i, model) : nan;
    ds.ids.push_back(std::to_string(i + 1));
  }
  ds.validate();
  return ds;
}

// Selected-rows-only dataset (no selection column), as consumed by the
// bootstrap: the study sample with the cohort profile supplied externally.
inline StudyDataset study_dataset(const Cohort& cohort, int variant, int model) {
  StudyDataset ds;
  const Eigen::MatrixXd cov = method_covariates(cohort, variant);
  const bool latent = variant == 3;
  for (std::ptrdiff_t j = 0; j < cov.cols(); ++j)
    ds.covariate_names.push_back((latent ? "u" : "x") + std::to_string(j + 1));
  std::vector<std::ptrdiff_t> rows;
  for (std::ptrdiff_t i = 0; i < cohort.n(); ++i)
    if (cohort.D(i) == 1.0) rows.push_back(i);
  const auto m = static_cast<std::ptrdiff_t>(rows.size());
  ds.covariates.resize(m, cov.cols());
  ds.treatment.resize(m);
  ds.outcome.resize(m);
  for (std::ptrdiff_t r = 0; r < m; ++r) {
    ds.covariates.row(r) = cov.row(rows[static_cast<std::size_t>(r)]);
    ds.treatment(r) = cohort.Z(rows[static_cast<std::size_t>(r)]);
    ds.outcome(r) = cohort.observed_outcome(rows[static_cast<std::size_t>(r)], model);
    ds.ids.push_back(std::to_string(rows[static_cast<std::size_t>(r)] + 1));
  }
  ds.validate();
  return ds;
}

// One method's result on one replication.
struct MethodRecord {
  MethodId method;
  bool ok = false;
  std::string error;
  std::array<double, 3> tau_hat{};  // per outcome model
  double ess_treated = 0, ess_control = 0;
  double max_weight_treated = 0, max_weight_control = 0;
  double chosen_multiplier = std::numeric_limits<double>::quiet_NaN();  // one-step only
  // Worst constraint violations among every optimal solve this record
  // triggered (including rejected tuning candidates), for the audit.
  double sum_violation = 0;
  double balance_violation = 0;
  int optimal_solves = 0;
};

struct ReplicationResult {
  int replication = 0;
  std::uint64_t seed = 0;
  std::vector<MethodRecord> records;
};

inline ReplicationResult run_replication(const SimConfig& config, int replication) {
  config.validate();
  ReplicationResult result;
  result.replication = replication;
  result.seed = child_seed(config.master_seed, static_cast<std::uint64_t>(replication));
  const Cohort cohort = generate_cohort(config, result.seed);

  std::vector<std::ptrdiff_t> treated_rows, control_rows;
  for (std::ptrdiff_t i = 0; i < cohort.n(); ++i) {
    if (cohort.D(i) != 1.0) continue;
    (cohort.Z(i) == 1.0 ? treated_rows : control_rows).push_back(i);
  }

  for (const MethodId& method : config.methods) {
    MethodRecord record;
    record.method = method;
    try {
      if (treated_rows.empty() || control_rows.empty())
        throw std::runtime_error("a treatment group is empty in this replication");
      const Eigen::MatrixXd cov = method_covariates(cohort, method.variant);

      Eigen::VectorXd w1, w0;
      if (method.one_step) {
        // Main terms of the method's covariates, balanced toward the cohort.
        Eigen::MatrixXd B1(static_cast<std::ptrdiff_t>(treated_rows.size()), cov.cols());
        Eigen::MatrixXd B0(static_cast<std::ptrdiff_t>(control_rows.size()), cov.cols());
        for (std::size_t r = 0; r < treated_rows.size(); ++r)
          B1.row(static_cast<std::ptrdiff_t>(r)) = cov.row(treated_rows[r]);
        for (std::size_t r = 0; r < control_rows.size(); ++r)
          B0.row(static_cast<std::ptrdiff_t>(r)) = cov.row(control_rows[r]);

        const TargetProfile profile = method_profile(cohort, method.variant);
        const TuningResult tuned =
            tune_tolerance({B1, B0}, profile, config.grid, true, config.solver);
        record.chosen_multiplier = tuned.chosen_multiplier;
        record.sum_violation = tuned.max_sum_violation;
        record.balance_violation = tuned.max_balance_violation;
        record.optimal_solves = tuned.optimal_solves;
        w1 = tuned.chosen_solutions[0].weights;
        w0 = tuned.chosen_solutions[1].weights;
      } else {
        const StudyDataset ds = cohort_dataset(cohort, method.variant, 1);
        std::vector<int> cols(static_cast<std::size_t>(cov.cols()));
        for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = static_cast<int>(j);
        const TreatmentSpec treatment_spec =
            config.setting == Setting::randomized ? TreatmentSpec(0.5) : TreatmentSpec(cols);
        const TwoStepWeights tw =
            two_step_weights(ds, cols, treatment_spec, WeightMode::generalize);
        w1 = tw.treated_weights;
        w0 = tw.control_weights;
      }

      record.ess_treated = ess(w1);
      record.ess_control = ess(w0);
      record.max_weight_treated = max_normalized_weight(w1);
      record.max_weight_control = max_normalized_weight(w0);
      for (int model = 1; model <= 3; ++model) {
        Eigen::VectorXd yobs1(static_cast<std::ptrdiff_t>(treated_rows.size()));
        Eigen::VectorXd yobs0(static_cast<std::ptrdiff_t>(control_rows.size()));
        for (std::size_t r = 0; r < treated_rows.size(); ++r)
          yobs1(static_cast<std::ptrdiff_t>(r)) = cohort.observed_outcome(treated_rows[r], model);
        for (std::size_t r = 0; r < control_rows.size(); ++r)
          yobs0(static_cast<std::ptrdiff_t>(r)) = cohort.observed_outcome(control_rows[r], model);
        record.tau_hat[static_cast<std::size_t>(model - 1)] =
            weighted_mean(w1, yobs1) - weighted_mean(w0, yobs0);
      }
      record.ok = true;
    } catch (const std::exception& ex) {
      record.ok = false;
      record.error = ex.what();
    }
    result.records.push_back(std::move(record));
  }
  return result;
}

struct FiveNumberSummary {
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0, mean = 0;

  static FiveNumberSummary of(std::vector<double> values) {
    FiveNumberSummary s;
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    double total = 0;
    for (double v : values) total += v;
    s.mean = total / static_cast<double>(values.size());
    s.min = values.front();
    s.max = values.back();
    s.q25 = interpolated_quantile(values, 0.25);
    s.median = interpolated_quantile(values, 0.5);
    s.q75 = interpolated_quantile(values, 0.75);
    return s;
  }
};

struct MethodSummary {
  MethodId method;
  std::array<double, 3> rmse{};  // per outcome model; NaN if the cell failed
  std::array<double, 3> bias{};
  int successes = 0;
  int failures = 0;
  FiveNumberSummary ess_treated, ess_control;
  FiveNumberSummary max_weight_treated, max_weight_control;
  double mean_multiplier = std::numeric_limits<double>::quiet_NaN();
};

struct SolverAudit {
  long solves = 0;
  double max_sum_violation = 0;
  double max_balance_violation = 0;
};

struct SimulationReport {
  Setting setting = Setting::randomized;
  int cohort_size = 0;
  int replications = 0;
  std::uint64_t master_seed = 0;
  std::vector<MethodSummary> methods;
  std::vector<ReplicationResult> replication_results;  // per-replication dump
  SolverAudit audit;
};

inline SimulationReport run_study(const SimConfig& config) {
  config.validate();
  SimulationReport report;
  report.setting = config.setting;
  report.cohort_size = config.cohort_size;
  report.replications = config.replications;
  report.master_seed = config.master_seed;
  report.replication_results.resize(static_cast<std::size_t>(config.replications));

  parallel_for(config.replications, config.threads, [&](int rep) {
    report.replication_results[static_cast<std::size_t>(rep)] = run_replication(config, rep);
  });

  for (const MethodId& method : config.methods) {
    MethodSummary summary;
    summary.method = method;
    std::array<std::vector<double>, 3> taus;
    std::vector<double> ess1, ess0, mw1, mw0, multipliers;
    for (const ReplicationResult& rep : report.replication_results) {
      const MethodRecord* record = nullptr;
      for (const MethodRecord& r : rep.records)
        if (r.method == method) record = &r;
      if (!record) continue;
      if (!record->ok) {
        ++summary.failures;
        continue;
      }
      ++summary.successes;
      for (int model = 0; model < 3; ++model)
        taus[static_cast<std::size_t>(model)].push_back(
            record->tau_hat[static_cast<std::size_t>(model)]);
      ess1.push_back(record->ess_treated);
      ess0.push_back(record->ess_control);
      mw1.push_back(record->max_weight_treated);
      mw0.push_back(record->max_weight_control);
      if (method.one_step) {
        multipliers.push_back(record->chosen_multiplier);
        report.audit.solves += record->optimal_solves;
        report.audit.max_sum_violation =
            std::max(report.audit.max_sum_violation, record->sum_violation);
        report.audit.max_balance_violation =
            std::max(report.audit.max_balance_violation, record->balance_violation);
      }
    }
    for (int model = 0; model < 3; ++model) {
      const auto& values = taus[static_cast<std::size_t>(model)];
      if (values.empty()) {
        summary.rmse[static_cast<std::size_t>(model)] =
            std::numeric_limits<double>::quiet_NaN();
        summary.bias[static_cast<std::size_t>(model)] =
            std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double sum = 0, sumsq = 0;
      for (double t : values) {
        sum += t;
        sumsq += t * t;
      }
      const auto count = static_cast<double>(values.size());
      summary.bias[static_cast<std::size_t>(model)] = sum / count;
      summary.rmse[static_cast<std::size_t>(model)] = std::sqrt(sumsq / count);
    }
    summary.ess_treated = FiveNumberSummary::of(ess1);
    summary.ess_control = FiveNumberSummary::of(ess0);
    summary.max_weight_treated = FiveNumberSummary::of(mw1);
    summary.max_weight_control = FiveNumberSummary::of(mw0);
    if (!multipliers.empty()) {
      double sum = 0;
      for (double m : multipliers) sum += m;
      summary.mean_multiplier = sum / static_cast<double>(multipliers.size());
    }
    report.methods.push_back(std::move(summary));
  }
  return report;
}

// Monte Carlo estimate of the semiparametric efficiency bound
//   V = E[ s1^2/(pi e) + s0^2/(pi (1-e)) + (m1 - m0 - tau)^2 ]
// under the true design functions, conditioning on the latent covariates
// (the correctly specified configuration).
inline double oracle_efficiency_bound(Setting setting, int model, long mc_draws,
                                      std::uint64_t seed = 20260808u) {
  if (mc_draws < 10000) throw std::invalid_argument("oracle bound needs at least 1e4 draws");
  true_tate(model);  // validates the model id
  Rng rng(seed);
  const double sigma2 = 25.0;
  double total = 0.0;
  for (long draw = 0; draw < mc_draws; ++draw) {
    Eigen::Vector4d u;
    for (int j = 0; j < 4; ++j) u(j) = rng.normal();
    const double pi = selection_probability(u);
    const double e = treatment_probability(setting, u);
    const double effect = treated_mean_function(model, u) - control_mean_function(u);
    total += sigma2 / (pi * e) + sigma2 / (pi * (1.0 - e)) + effect * effect;
  }
  return total / static_cast<double>(mc_draws);
}

}  // namespace onestep
