// Synthetic trial fixture and end-to-end workflow: impute, build profiles,
// solve non-negative weights per target under a fixed 0.05 x SD or tuned
// tolerance rule, report TASMD / ESS diagnostics, and estimate several
// outcomes with bootstrap intervals from one set of weights per target.
//
// The fixture emulates the structure of a ~600-person trial with fourteen
// covariates and realistic missingness, plus three target populations whose
// profiles sit at increasing distance from the trial: a subset of the trial
// itself, the full recruitment cohort the trial is nested in, and an external
// population. All values are generated from a pinned seed.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "onestep/basis.hpp"
#include "onestep/data.hpp"
#include "onestep/estimate.hpp"
#include "onestep/propensity.hpp"
#include "onestep/rng.hpp"
#include "onestep/solver.hpp"
#include "onestep/tune.hpp"

namespace onestep {

inline constexpr std::uint64_t kCaseStudySeed = 7421u;

struct CaseStudyFixture {
  StudyDataset trial;                      // imputed trial data
  StudyDataset trial_raw;                  // as ingested, with missing cells
  std::vector<int> wave;                   // enrollment wave per trial row (1 or 2)
  std::vector<std::string> outcome_names;  // three outcomes
  Eigen::MatrixXd outcomes;                // trial rows x outcomes
  BasisSpec basis;                         // main terms over imputed columns
  TargetProfile self_profile;              // wave-1 subset of the trial
  TargetProfile cohort_profile;            // full recruitment cohort
  TargetProfile external_profile;          // external population
};

namespace casestudy_detail {

constexpr int kContinuous = 4;
inline const std::array<const char*, 14>& covariate_names() {
  static const std::array<const char*, 14> names = {
      "age",     "er_visits", "nights_hosp", "hosp_visits", "good_health",
      "health_prob", "mistrust_high", "has_pcp", "uninsured", "married",
      "unemployed", "hs_less", "low_income", "benefits"};
  return names;
}

struct Person {
  Eigen::VectorXd covariates{14};
};

// One simulated person. `shift` moves the generating distribution away from
// the base population; the external target uses a nonzero shift.
inline Person draw_person(Rng& rng, double shift) {
  Person p;
  const double frailty = rng.normal() + 0.6 * shift;
  auto count = [&](double base, double sd, double load) {
    return std::max(0.0, std::round(base + sd * rng.normal() + load * frailty));
  };
  p.covariates(0) = std::min(80.0, std::max(18.0, std::round(44.0 - 2.5 * shift + 10.0 * rng.normal())));
  p.covariates(1) = count(1.4 + 0.5 * shift, 1.3, 0.5);   // er_visits
  p.covariates(2) = count(0.9, 1.6, 0.4);                 // nights_hosp
  p.covariates(3) = count(3.8 - 1.2 * shift, 2.6, 0.8);   // hosp_visits
  p.covariates(4) = rng.bernoulli(expit(0.40 - 0.5 * frailty + 0.8 * shift));   // good_health
  p.covariates(5) = rng.bernoulli(expit(0.30 + 0.6 * frailty));                 // health_prob
  p.covariates(6) = rng.bernoulli(std::min(0.9, 0.16 + 0.10 * shift));          // mistrust_high
  p.covariates(7) = rng.bernoulli(expit(0.10 + 0.2 * frailty - 1.2 * shift));   // has_pcp
  p.covariates(8) = rng.bernoulli(std::min(0.9, 0.23 + 0.25 * shift));          // uninsured
  p.covariates(9) = rng.bernoulli(std::min(0.9, 0.15 + 0.18 * shift));          // married
  p.covariates(10) = rng.bernoulli(0.40);                                       // unemployed
  p.covariates(11) = rng.bernoulli(0.52);                                       // hs_less
  p.covariates(12) = rng.bernoulli(expit(-0.35 + 0.3 * frailty - 0.6 * shift)); // low_income
  p.covariates(13) = rng.bernoulli(std::min(0.9, 0.27 - 0.10 * shift));         // benefits
  return p;
}

inline void blank_missing(Rng& rng, Eigen::VectorXd& covariates) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (rng.bernoulli(0.03)) covariates(0) = nan;   // age
  if (rng.bernoulli(0.20)) covariates(1) = nan;   // er_visits
  if (rng.bernoulli(0.20)) covariates(2) = nan;   // nights_hosp
  if (rng.bernoulli(0.28)) covariates(3) = nan;   // hosp_visits
}

inline StudyDataset population_dataset(std::uint64_t seed, int size, double shift) {
  Rng rng(seed);
  StudyDataset ds;
  for (const char* name : covariate_names()) ds.covariate_names.push_back(name);
  ds.covariates.resize(size, 14);
  ds.treatment = Eigen::VectorXd::Zero(size);
  ds.treatment(Eigen::seqN(0, size / 2)).setOnes();  // placeholder roles, unused
  ds.outcome = Eigen::VectorXd::Zero(size);
  for (int i = 0; i < size; ++i) {
    Person p = draw_person(rng, shift);
    blank_missing(rng, p.covariates);
    ds.covariates.row(i) = p.covariates;
    ds.ids.push_back(std::to_string(i + 1));
  }
  return ds;
}

}  // namespace casestudy_detail

// Generate the whole fixture from a seed. The same seed always produces the
// same files byte for byte.
inline CaseStudyFixture make_case_study_fixture(std::uint64_t seed = kCaseStudySeed) {
  using namespace casestudy_detail;
  const int cohort_size = 1400;

  // Recruitment cohort, with the trial nested inside via a selection score.
  StudyDataset cohort = population_dataset(child_seed(seed, 1), cohort_size, 0.0);
  Rng rng(child_seed(seed, 2));

  CaseStudyFixture fixture;
  std::vector<int> trial_rows;
  std::vector<int> z_draws, wave_draws;
  for (int i = 0; i < cohort_size; ++i) {
    const Eigen::VectorXd& row = cohort.covariates.row(i);
    auto value = [&](int j, double fallback) {
      return std::isnan(row(j)) ? fallback : row(j);
    };
    const double score = -0.75 + 0.95 * row(12) + 0.70 * row(5) - 0.55 * row(4) +
                         0.55 * row(8) - 0.028 * (value(0, 44.0) - 44.0);
    const bool selected = rng.bernoulli(expit(score));
    const bool z = rng.bernoulli(0.5);
    const bool wave1 = rng.bernoulli(0.5);
    if (selected) {
      trial_rows.push_back(i);
      z_draws.push_back(z ? 1 : 0);
      wave_draws.push_back(wave1 ? 1 : 2);
    }
  }

  const auto m = static_cast<std::ptrdiff_t>(trial_rows.size());
  StudyDataset trial;
  trial.covariate_names = cohort.covariate_names;
  trial.covariates.resize(m, cohort.covariates.cols());
  trial.treatment.resize(m);
  trial.outcome.resize(m);
  fixture.outcome_names = {"flu_shot", "services_frac", "invasive_frac"};
  fixture.outcomes.resize(m, 3);
  fixture.wave.resize(static_cast<std::size_t>(m));

  Rng outcome_rng(child_seed(seed, 3));
  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  for (std::ptrdiff_t r = 0; r < m; ++r) {
    const int i = trial_rows[static_cast<std::size_t>(r)];
    trial.covariates.row(r) = cohort.covariates.row(i);
    const double z = z_draws[static_cast<std::size_t>(r)];
    trial.treatment(r) = z;
    fixture.wave[static_cast<std::size_t>(r)] = wave_draws[static_cast<std::size_t>(r)];
    const Eigen::VectorXd& row = cohort.covariates.row(i);
    const double good_health = std::isnan(row(4)) ? 0.0 : row(4);
    const double mistrust = std::isnan(row(6)) ? 0.0 : row(6);
    const double has_pcp = std::isnan(row(7)) ? 0.0 : row(7);
    fixture.outcomes(r, 0) = outcome_rng.bernoulli(expit(-0.5 + 0.45 * z + 0.4 * good_health -
                                                         0.5 * mistrust + 0.2 * has_pcp))
                                 ? 1.0
                                 : 0.0;
    fixture.outcomes(r, 1) =
        clamp01(0.42 + 0.12 * z + 0.08 * has_pcp - 0.05 * mistrust + 0.18 * outcome_rng.normal());
    fixture.outcomes(r, 2) =
        clamp01(0.30 + 0.06 * z - 0.07 * mistrust + 0.16 * outcome_rng.normal());
    trial.outcome(r) = fixture.outcomes(r, 0);
    trial.ids.push_back(std::to_string(r + 1));
  }
  trial.validate();
  fixture.trial_raw = trial;
  fixture.trial = impute_missing(trial);
  fixture.basis = BasisSpec::main_terms(static_cast<int>(fixture.trial.d()));

  // Subset-defined profile: wave-1 trial units (close to the trial means).
  std::vector<std::ptrdiff_t> wave1_rows;
  for (std::ptrdiff_t r = 0; r < m; ++r)
    if (fixture.wave[static_cast<std::size_t>(r)] == 1) wave1_rows.push_back(r);
  fixture.self_profile = profile_from_sample(fixture.trial, wave1_rows, fixture.basis);

  // Full-cohort profile (the trial is nested in this population).
  const StudyDataset cohort_imputed = impute_missing(cohort);
  if (cohort_imputed.covariate_names != fixture.trial.covariate_names)
    throw std::logic_error("fixture generation: cohort and trial columns diverged");
  fixture.cohort_profile = profile_from_sample(cohort_imputed, fixture.basis);

  // External population, generated at a distribution shift from the cohort.
  StudyDataset external =
      population_dataset(child_seed(seed, 4), 1200, 1.0);
  const StudyDataset external_imputed = impute_missing(external);
  if (external_imputed.covariate_names != fixture.trial.covariate_names)
    throw std::logic_error("fixture generation: external and trial columns diverged");
  fixture.external_profile = profile_from_sample(external_imputed, fixture.basis);
  return fixture;
}

inline void save_case_study_fixture(const CaseStudyFixture& fixture, const std::string& dir) {
  std::filesystem::create_directories(dir);
  csv::Table table;
  table.header = {"id", "Z", "wave", "flu_shot", "services_frac", "invasive_frac"};
  for (const auto& name : fixture.trial_raw.covariate_names) table.header.push_back(name);
  for (std::ptrdiff_t r = 0; r < fixture.trial_raw.n(); ++r) {
    std::vector<std::string> row;
    row.push_back(fixture.trial_raw.ids[static_cast<std::size_t>(r)]);
    row.push_back(csv::format_double(fixture.trial_raw.treatment(r)));
    row.push_back(std::to_string(fixture.wave[static_cast<std::size_t>(r)]));
    for (int j = 0; j < 3; ++j) row.push_back(csv::format_double(fixture.outcomes(r, j)));
    for (std::ptrdiff_t k = 0; k < fixture.trial_raw.d(); ++k) {
      const double v = fixture.trial_raw.covariates(r, k);
      row.push_back(std::isnan(v) ? std::string() : csv::format_double(v));
    }
    table.rows.push_back(std::move(row));
  }
  csv::write_table(dir + "/trial.csv", table);
  save_profile(fixture.self_profile, dir + "/profile_self.csv");
  save_profile(fixture.cohort_profile, dir + "/profile_cohort.csv");
  save_profile(fixture.external_profile, dir + "/profile_external.csv");
}

// Load the fixture from its delimited files, re-running imputation and
// recomputing the subset profile from the wave column.
inline CaseStudyFixture load_case_study_fixture(const std::string& dir) {
  const csv::Table table = csv::read_table(dir + "/trial.csv");
  CaseStudyFixture fixture;
  fixture.outcome_names = {"flu_shot", "services_frac", "invasive_frac"};

  ColumnSchema schema;
  schema.treatment = "Z";
  schema.outcome = "flu_shot";
  schema.id = "id";
  for (const std::string& name : table.header)
    if (name != "id" && name != "Z" && name != "wave" && name != "flu_shot" &&
        name != "services_frac" && name != "invasive_frac")
      schema.covariates.push_back(name);
  StudyDataset trial = load_dataset(dir + "/trial.csv", schema);

  const std::ptrdiff_t wave_col = table.column("wave");
  if (wave_col < 0) throw SchemaError("case-study trial file lacks the wave column");
  fixture.outcomes.resize(trial.n(), 3);
  fixture.wave.resize(static_cast<std::size_t>(trial.n()));
  const std::array<std::string, 3> outcome_cols{"flu_shot", "services_frac", "invasive_frac"};
  for (std::ptrdiff_t r = 0; r < trial.n(); ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    fixture.wave[static_cast<std::size_t>(r)] =
        static_cast<int>(*csv::parse_double(row[static_cast<std::size_t>(wave_col)]));
    for (std::size_t j = 0; j < outcome_cols.size(); ++j) {
      const std::ptrdiff_t col = table.column(outcome_cols[j]);
      if (col < 0) throw SchemaError("case-study trial file lacks outcome " + outcome_cols[j]);
      fixture.outcomes(r, static_cast<std::ptrdiff_t>(j)) =
          *csv::parse_double(row[static_cast<std::size_t>(col)]);
    }
  }

  fixture.trial_raw = trial;
  fixture.trial = impute_missing(trial);
  fixture.basis = BasisSpec::main_terms(static_cast<int>(fixture.trial.d()));
  std::vector<std::ptrdiff_t> wave1_rows;
  for (std::ptrdiff_t r = 0; r < trial.n(); ++r)
    if (fixture.wave[static_cast<std::size_t>(r)] == 1) wave1_rows.push_back(r);
  fixture.self_profile = profile_from_sample(fixture.trial, wave1_rows, fixture.basis);
  fixture.cohort_profile = load_profile(dir + "/profile_cohort.csv");
  fixture.external_profile = load_profile(dir + "/profile_external.csv");
  return fixture;
}

struct ToleranceRule {
  bool tuned = false;
  double multiplier = 0.05;  // fixed rule
  TuningGrid grid;           // tuned rule

  static ToleranceRule fixed(double m) { return {false, m, {}}; }
  static ToleranceRule adaptive(TuningGrid g = {}) { return {true, 0.0, std::move(g)}; }
};

struct OutcomeEstimate {
  std::string outcome;
  double tau_hat = 0;
  ConfidenceInterval ci;
};

struct CaseStudyTargetResult {
  std::string target;
  bool ok = false;
  std::string error;
  double multiplier_used = 0;
  Eigen::VectorXd treated_weights, control_weights;
  double ess_treated = 0, ess_control = 0;
  double max_weight_treated = 0, max_weight_control = 0;
  TasmdResult tasmd_treated, tasmd_control;
  std::vector<OutcomeEstimate> estimates;
};

struct CaseStudyResult {
  std::vector<CaseStudyTargetResult> targets;
};

// Full workflow for every target profile: solve both groups once with
// non-negative normalized weights, then reuse those weights for every
// outcome; bootstrap intervals re-solve per resample at the same tolerances.
inline CaseStudyResult run_case_study(const CaseStudyFixture& fixture, const ToleranceRule& rule,
                                      const BootstrapSettings& bootstrap,
                                      const SolverSettings& solver = {}) {
  CaseStudyResult result;
  const std::vector<std::pair<std::string, const TargetProfile*>> targets = {
      {"self", &fixture.self_profile},
      {"cohort", &fixture.cohort_profile},
      {"external", &fixture.external_profile}};

  const auto treated_rows = fixture.trial.group_rows(1);
  const auto control_rows = fixture.trial.group_rows(0);
  const Eigen::MatrixXd all_basis = expand(fixture.trial.covariates, fixture.basis);
  Eigen::MatrixXd B1(static_cast<std::ptrdiff_t>(treated_rows.size()), all_basis.cols());
  Eigen::MatrixXd B0(static_cast<std::ptrdiff_t>(control_rows.size()), all_basis.cols());
  for (std::size_t r = 0; r < treated_rows.size(); ++r)
    B1.row(static_cast<std::ptrdiff_t>(r)) = all_basis.row(treated_rows[r]);
  for (std::size_t r = 0; r < control_rows.size(); ++r)
    B0.row(static_cast<std::ptrdiff_t>(r)) = all_basis.row(control_rows[r]);

  for (const auto& [name, profile] : targets) {
    CaseStudyTargetResult target;
    target.target = name;
    try {
      Eigen::VectorXd deltas;
      WeightSolution s1, s0;
      if (rule.tuned) {
        const TuningResult tuned =
            tune_tolerance({B1, B0}, *profile, rule.grid, true, solver, bootstrap.threads);
        target.multiplier_used = tuned.chosen_multiplier;
        deltas = tuned.chosen_deltas.deltas;
        s1 = tuned.chosen_solutions[0];
        s0 = tuned.chosen_solutions[1];
      } else {
        target.multiplier_used = rule.multiplier;
        deltas = standardized_tolerances(rule.multiplier, *profile).deltas;
        BalanceProblem p1;
        p1.B = B1;
        p1.target = profile->means;
        p1.deltas.deltas = deltas;
        p1.nonnegative = true;
        BalanceProblem p0 = p1;
        p0.B = B0;
        s1 = solve_weights(p1, solver);
        s0 = solve_weights(p0, solver);
        if (s1.status != SolveStatus::optimal || s0.status != SolveStatus::optimal)
          throw std::runtime_error(
              "infeasible tolerance rule for target '" + name + "' (hint: inflate deltas by " +
              std::to_string(std::max(s1.infeasibility_hint, s0.infeasibility_hint)) + ")");
      }

      target.treated_weights = s1.weights;
      target.control_weights = s0.weights;
      target.ess_treated = ess(s1.weights);
      target.ess_control = ess(s0.weights);
      target.max_weight_treated = max_normalized_weight(s1.weights);
      target.max_weight_control = max_normalized_weight(s0.weights);
      target.tasmd_treated = tasmd(B1.transpose() * s1.weights, *profile);
      target.tasmd_control = tasmd(B0.transpose() * s0.weights, *profile);

      OneStepConfig config;
      config.basis = fixture.basis;
      config.profile = *profile;
      config.deltas = deltas;
      config.nonnegative = true;
      config.solver = solver;
      std::vector<const Eigen::VectorXd*> outcome_columns;
      std::vector<Eigen::VectorXd> storage;
      storage.reserve(fixture.outcome_names.size());
      for (std::ptrdiff_t j = 0; j < fixture.outcomes.cols(); ++j)
        storage.push_back(fixture.outcomes.col(j));
      for (const auto& column : storage) outcome_columns.push_back(&column);
      const std::vector<ConfidenceInterval> cis =
          bootstrap_ci_multi(fixture.trial, config, outcome_columns, bootstrap);

      for (std::size_t j = 0; j < fixture.outcome_names.size(); ++j) {
        OutcomeEstimate est;
        est.outcome = fixture.outcome_names[j];
        Eigen::VectorXd y1(static_cast<std::ptrdiff_t>(treated_rows.size()));
        Eigen::VectorXd y0(static_cast<std::ptrdiff_t>(control_rows.size()));
        for (std::size_t r = 0; r < treated_rows.size(); ++r)
          y1(static_cast<std::ptrdiff_t>(r)) =
              fixture.outcomes(treated_rows[r], static_cast<std::ptrdiff_t>(j));
        for (std::size_t r = 0; r < control_rows.size(); ++r)
          y0(static_cast<std::ptrdiff_t>(r)) =
              fixture.outcomes(control_rows[r], static_cast<std::ptrdiff_t>(j));
        est.tau_hat = weighted_mean(s1.weights, y1) - weighted_mean(s0.weights, y0);
        est.ci = cis[j];
        target.estimates.push_back(std::move(est));
      }
      target.ok = true;
    } catch (const std::exception& ex) {
      target.ok = false;
      target.error = ex.what();
    }
    result.targets.push_back(std::move(target));
  }
  return result;
}

}  // namespace onestep
