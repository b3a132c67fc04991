// onestep: balancing weights for generalizing and transporting treatment
// effect estimates. Subcommands mirror the analysis workflow: weights,
// twostep, estimate, tune, simulate, casestudy.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onestep/casestudy.hpp"
#include "onestep/data.hpp"
#include "onestep/estimate.hpp"
#include "onestep/propensity.hpp"
#include "onestep/report.hpp"
#include "onestep/sim.hpp"
#include "onestep/solver.hpp"
#include "onestep/tune.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;       // bad flags, schema errors, id mismatches
constexpr int kInfeasible = 3;  // no weights satisfy the requested balance
constexpr int kFailure = 4;     // solver or model fitting failure

struct DataOptions {
  std::string path;
  std::string treatment = "Z";
  std::string outcome = "Y";
  std::string selection;
  std::string id;
  std::vector<std::string> covariates;
  bool impute = true;
};

void add_data_options(CLI::App* cmd, DataOptions& opts, bool require_selection = false) {
  cmd->add_option("--data", opts.path, "Input delimited file (comma separated, header row)")
      ->required();
  cmd->add_option("--treatment", opts.treatment, "Treatment column (0/1)");
  cmd->add_option("--outcome", opts.outcome, "Outcome column");
  auto* sel = cmd->add_option("--selection", opts.selection,
                              "Selection indicator column for nested cohort data");
  if (require_selection) sel->required();
  cmd->add_option("--id", opts.id, "Unit id column (defaults to the 1-based row number)");
  cmd->add_option("--covariates", opts.covariates,
                  "Covariate columns (default: every non-role column)")
      ->delimiter(',');
  cmd->add_flag("--impute,!--no-impute", opts.impute,
                "Mean-impute missing covariates and append missingness indicators (default on)");
}

onestep::StudyDataset load_data(const DataOptions& opts) {
  onestep::ColumnSchema schema;
  schema.treatment = opts.treatment;
  schema.outcome = opts.outcome;
  if (!opts.selection.empty()) schema.selection = opts.selection;
  if (!opts.id.empty()) schema.id = opts.id;
  schema.covariates = opts.covariates;
  onestep::StudyDataset ds = onestep::load_dataset(opts.path, schema);
  if (opts.impute) ds = onestep::impute_missing(ds);
  return ds;
}

int resolve_column(const std::string& token, const std::vector<std::string>& names) {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == token) return static_cast<int>(j);
  if (token.size() > 1 && token.front() == 'x') {
    const std::string digits = token.substr(1);
    if (digits.find_first_not_of("0123456789") == std::string::npos) {
      const int index = std::stoi(digits);
      if (index >= 1 && index <= static_cast<int>(names.size())) return index - 1;
    }
  }
  throw onestep::SchemaError("unknown covariate '" + token + "'");
}

// Terms are written as column references with optional ^power or * product:
// "age", "age^2", "x1*x4".
onestep::BasisSpec parse_basis(const std::vector<std::string>& terms,
                               const std::vector<std::string>& names) {
  if (terms.empty()) return onestep::BasisSpec::main_terms(static_cast<int>(names.size()));
  onestep::BasisSpec spec;
  for (const std::string& term : terms) {
    const auto caret = term.find('^');
    const auto star = term.find('*');
    if (caret != std::string::npos) {
      const int col = resolve_column(term.substr(0, caret), names);
      const int power = std::stoi(term.substr(caret + 1));
      spec.terms.push_back(onestep::BasisTerm::power(col, power));
    } else if (star != std::string::npos) {
      const int a = resolve_column(term.substr(0, star), names);
      const int b = resolve_column(term.substr(star + 1), names);
      spec.terms.push_back(onestep::BasisTerm::interaction(a, b));
    } else {
      spec.terms.push_back(onestep::BasisTerm::raw(resolve_column(term, names)));
    }
  }
  return spec;
}

onestep::TuningGrid parse_grid(const std::vector<double>& values) {
  onestep::TuningGrid grid;
  if (!values.empty()) grid.multipliers = values;
  grid.validate();
  return grid;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw onestep::IoError("cannot write '" + path.string() + "'");
  return out;
}

std::vector<std::string> subset_ids(const onestep::StudyDataset& ds,
                                    const std::vector<std::ptrdiff_t>& rows) {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (auto r : rows) ids.push_back(ds.ids[static_cast<std::size_t>(r)]);
  return ids;
}

// ---------------------------------------------------------------- weights --
struct WeightsOptions {
  DataOptions data;
  std::string profile_path;
  std::string profile_from;  // all | treated | control
  std::string save_profile_path;
  std::vector<std::string> basis;
  double tol_multiplier = -1.0;
  bool tune = false;
  std::vector<double> grid;
  bool nonneg = true;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = ".";
};

int run_weights(const WeightsOptions& opts) {
  using namespace onestep;
  const StudyDataset ds = load_data(opts.data);
  const BasisSpec basis = parse_basis(opts.basis, ds.covariate_names);

  TargetProfile profile;
  if (!opts.profile_path.empty()) {
    profile = load_profile(opts.profile_path);
  } else if (opts.profile_from == "all") {
    profile = profile_from_sample(ds, basis);
  } else if (opts.profile_from == "treated") {
    profile = profile_from_sample(ds, ds.group_rows(1), basis);
  } else if (opts.profile_from == "control") {
    profile = profile_from_sample(ds, ds.group_rows(0), basis);
  } else {
    std::cerr << "weights: supply --profile FILE or --profile-from {all,treated,control}\n";
    return kUsage;
  }
  if (static_cast<std::size_t>(profile.means.size()) != basis.terms.size()) {
    std::cerr << "weights: profile has " << profile.means.size() << " terms, basis has "
              << basis.terms.size() << "\n";
    return kUsage;
  }
  if (!opts.save_profile_path.empty()) save_profile(profile, opts.save_profile_path);

  if (!opts.tune && opts.tol_multiplier < 0.0) {
    std::cerr << "weights: supply --tol-multiplier or --tune\n";
    return kUsage;
  }

  const auto treated_rows = ds.group_rows(1);
  const auto control_rows = ds.group_rows(0);
  const Eigen::MatrixXd expanded = expand(ds.covariates, basis);
  Eigen::MatrixXd B1(static_cast<std::ptrdiff_t>(treated_rows.size()), expanded.cols());
  Eigen::MatrixXd B0(static_cast<std::ptrdiff_t>(control_rows.size()), expanded.cols());
  for (std::size_t r = 0; r < treated_rows.size(); ++r)
    B1.row(static_cast<std::ptrdiff_t>(r)) = expanded.row(treated_rows[r]);
  for (std::size_t r = 0; r < control_rows.size(); ++r)
    B0.row(static_cast<std::ptrdiff_t>(r)) = expanded.row(control_rows[r]);

  std::filesystem::create_directories(opts.out_dir);
  auto report_stream = open_out(std::filesystem::path(opts.out_dir) / "report.txt");
  ReportWriter writer(report_stream);
  writer.section("run");
  writer.kv("command", std::string("weights"));
  writer.kv("data", opts.data.path);
  writer.kv("nonnegative", std::string(opts.nonneg ? "1" : "0"));

  WeightSolution s1, s0;
  ToleranceVector deltas;
  if (opts.tune) {
    try {
      const TuningResult tuned = tune_tolerance({B1, B0}, profile, parse_grid(opts.grid),
                                                opts.nonneg, {}, opts.threads);
      deltas = tuned.chosen_deltas;
      s1 = tuned.chosen_solutions[0];
      s0 = tuned.chosen_solutions[1];
      write_tuning_section(writer, tuned);
    } catch (const TuningError& err) {
      writer.section("tuning");
      writer.kv("error", std::string(err.what()));
      std::cerr << "weights: " << err.what() << "\n";
      return kInfeasible;
    }
  } else {
    deltas = standardized_tolerances(opts.tol_multiplier, profile);
    BalanceProblem p1{B1, profile.means, deltas, opts.nonneg};
    BalanceProblem p0{B0, profile.means, deltas, opts.nonneg};
    s1 = solve_weights(p1);
    s0 = solve_weights(p0);
  }

  BalanceProblem p1{B1, profile.means, deltas, opts.nonneg};
  BalanceProblem p0{B0, profile.means, deltas, opts.nonneg};
  write_balance_section(writer, "treated", p1, s1, profile);
  write_balance_section(writer, "control", p0, s0, profile);

  if (s1.status == SolveStatus::optimal && s0.status == SolveStatus::optimal) {
    save_weights((std::filesystem::path(opts.out_dir) / "weights_treated.csv").string(),
                 subset_ids(ds, treated_rows), s1.weights);
    save_weights((std::filesystem::path(opts.out_dir) / "weights_control.csv").string(),
                 subset_ids(ds, control_rows), s0.weights);
    std::cout << "weights: optimal (ess treated " << csv::format_double(ess(s1.weights))
              << ", control " << csv::format_double(ess(s0.weights)) << ")\n";
    return kOk;
  }
  if (s1.status == SolveStatus::infeasible || s0.status == SolveStatus::infeasible) {
    const double hint = std::max(s1.infeasibility_hint, s0.infeasibility_hint);
    std::cerr << "weights: infeasible balance constraints; inflating every delta by "
              << csv::format_double(hint) << " would admit uniform weights\n";
    return kInfeasible;
  }
  std::cerr << "weights: solver hit the iteration limit\n";
  return kFailure;
}

// ---------------------------------------------------------------- twostep --
struct TwoStepOptions {
  DataOptions data;
  std::vector<std::string> sel_covariates;
  std::vector<std::string> treat_covariates;
  double known_e = -1.0;
  std::string mode = "generalize";
  std::string out_dir = ".";
};

int run_twostep(const TwoStepOptions& opts) {
  using namespace onestep;
  const StudyDataset ds = load_data(opts.data);

  auto resolve_all = [&](const std::vector<std::string>& tokens) {
    std::vector<int> cols;
    if (tokens.empty()) {
      for (std::size_t j = 0; j < ds.covariate_names.size(); ++j)
        cols.push_back(static_cast<int>(j));
    } else {
      for (const std::string& token : tokens)
        cols.push_back(resolve_column(token, ds.covariate_names));
    }
    return cols;
  };
  const std::vector<int> sel_cols = resolve_all(opts.sel_covariates);
  const TreatmentSpec treatment = opts.known_e > 0.0
                                      ? TreatmentSpec(opts.known_e)
                                      : TreatmentSpec(resolve_all(opts.treat_covariates));
  const WeightMode mode =
      opts.mode == "transport" ? WeightMode::transport : WeightMode::generalize;

  const TwoStepWeights weights = two_step_weights(ds, sel_cols, treatment, mode);

  std::filesystem::create_directories(opts.out_dir);
  save_weights((std::filesystem::path(opts.out_dir) / "weights_treated.csv").string(),
               subset_ids(ds, weights.treated_rows), weights.treated_weights);
  save_weights((std::filesystem::path(opts.out_dir) / "weights_control.csv").string(),
               subset_ids(ds, weights.control_rows), weights.control_weights);

  auto report_stream = open_out(std::filesystem::path(opts.out_dir) / "report.txt");
  ReportWriter writer(report_stream);
  writer.section("run");
  writer.kv("command", std::string("twostep"));
  writer.kv("mode", opts.mode);
  writer.section("selection_model");
  writer.kv("converged", std::string(weights.selection_model.converged ? "1" : "0"));
  writer.kv("iterations", weights.selection_model.iterations);
  writer.kv("gradient_norm", weights.selection_model.final_gradient_norm);
  std::vector<std::vector<std::string>> coef_rows;
  for (std::ptrdiff_t j = 0; j < weights.selection_model.coefficients.size(); ++j)
    coef_rows.push_back({j == 0 ? "intercept"
                                : ds.covariate_names[static_cast<std::size_t>(
                                      sel_cols[static_cast<std::size_t>(j - 1)])],
                         csv::format_double(weights.selection_model.coefficients(j))});
  writer.table("selection_coefficients", {"term", "estimate"}, coef_rows);
  writer.section("treatment_model");
  if (weights.treatment_model) {
    writer.kv("converged", std::string(weights.treatment_model->converged ? "1" : "0"));
    writer.kv("iterations", weights.treatment_model->iterations);
  } else {
    writer.kv("known_e", opts.known_e);
  }
  writer.section("diagnostics");
  writer.kv("ess_treated", ess(weights.treated_weights));
  writer.kv("ess_control", ess(weights.control_weights));
  writer.kv("max_weight_treated", max_normalized_weight(weights.treated_weights));
  writer.kv("max_weight_control", max_normalized_weight(weights.control_weights));

  std::cout << "twostep: done (ess treated " << csv::format_double(ess(weights.treated_weights))
            << ", control " << csv::format_double(ess(weights.control_weights)) << ")\n";
  return kOk;
}

// --------------------------------------------------------------- estimate --
struct EstimateOptions {
  DataOptions data;
  std::string weights_treated;
  std::string weights_control;
  std::vector<std::string> outcomes;
  int bootstrap = 0;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string profile_path;
  std::vector<std::string> basis;
  double tol_multiplier = -1.0;
  bool nonneg = true;
  std::string out_dir = ".";
};

int run_estimate(const EstimateOptions& opts) {
  using namespace onestep;
  const StudyDataset ds = load_data(opts.data);
  const LoadedWeights w1 = load_weights(opts.weights_treated);
  const LoadedWeights w0 = load_weights(opts.weights_control);

  std::map<std::string, std::ptrdiff_t> row_of;
  for (std::ptrdiff_t i = 0; i < ds.n(); ++i) row_of[ds.ids[static_cast<std::size_t>(i)]] = i;
  auto match = [&](const LoadedWeights& w, double z) {
    std::vector<std::ptrdiff_t> rows;
    for (const std::string& id : w.ids) {
      const auto it = row_of.find(id);
      if (it == row_of.end())
        throw SchemaError("weight file id '" + id + "' not present in the data");
      if (ds.treatment(it->second) != z)
        throw SchemaError("weight file id '" + id + "' is not in the expected treatment group");
      rows.push_back(it->second);
    }
    return rows;
  };
  const std::vector<std::ptrdiff_t> rows1 = match(w1, 1.0);
  const std::vector<std::ptrdiff_t> rows0 = match(w0, 0.0);

  // Outcome columns: the schema outcome by default, or any listed columns
  // pulled straight from the file.
  std::vector<std::string> outcome_names = opts.outcomes;
  if (outcome_names.empty()) outcome_names = {opts.data.outcome};
  const csv::Table table = csv::read_table(opts.data.path);
  std::vector<Eigen::VectorXd> outcome_columns;
  for (const std::string& name : outcome_names) {
    const std::ptrdiff_t col = table.column(name);
    if (col < 0)
      throw SchemaError("outcome column '" + name + "' not in '" + opts.data.path + "'");
    Eigen::VectorXd y(ds.n());
    for (std::ptrdiff_t i = 0; i < ds.n(); ++i) {
      const auto value = csv::parse_double(
          table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)]);
      y(i) = value ? *value : std::numeric_limits<double>::quiet_NaN();
    }
    outcome_columns.push_back(std::move(y));
  }

  std::optional<OneStepConfig> config;
  if (opts.bootstrap > 0) {
    if (opts.profile_path.empty() || opts.tol_multiplier < 0.0) {
      std::cerr << "estimate: --bootstrap re-solves the weights per resample and needs "
                   "--profile, --basis and --tol-multiplier\n";
      return kUsage;
    }
    OneStepConfig c;
    c.basis = parse_basis(opts.basis, ds.covariate_names);
    c.profile = load_profile(opts.profile_path);
    c.deltas = standardized_tolerances(opts.tol_multiplier, c.profile).deltas;
    c.nonnegative = opts.nonneg;
    config = std::move(c);
  }

  std::filesystem::create_directories(opts.out_dir);
  auto report_stream = open_out(std::filesystem::path(opts.out_dir) / "report.txt");
  ReportWriter writer(report_stream);
  writer.section("run");
  writer.kv("command", std::string("estimate"));
  writer.kv("data", opts.data.path);
  writer.kv("seed", opts.seed);

  std::vector<ConfidenceInterval> cis;
  if (config) {
    BootstrapSettings bs;
    bs.replicates = opts.bootstrap;
    bs.level = opts.level;
    bs.seed = opts.seed;
    bs.threads = opts.threads;
    std::vector<const Eigen::VectorXd*> pointers;
    for (const auto& y : outcome_columns) pointers.push_back(&y);
    cis = bootstrap_ci_multi(ds, *config, pointers, bs);
  }

  for (std::size_t j = 0; j < outcome_names.size(); ++j) {
    Eigen::VectorXd y1(static_cast<std::ptrdiff_t>(rows1.size()));
    Eigen::VectorXd y0(static_cast<std::ptrdiff_t>(rows0.size()));
    for (std::size_t r = 0; r < rows1.size(); ++r) {
      y1(static_cast<std::ptrdiff_t>(r)) = outcome_columns[j](rows1[r]);
      if (std::isnan(y1(static_cast<std::ptrdiff_t>(r))))
        throw SchemaError("outcome '" + outcome_names[j] + "' missing for a weighted unit");
    }
    for (std::size_t r = 0; r < rows0.size(); ++r) {
      y0(static_cast<std::ptrdiff_t>(r)) = outcome_columns[j](rows0[r]);
      if (std::isnan(y0(static_cast<std::ptrdiff_t>(r))))
        throw SchemaError("outcome '" + outcome_names[j] + "' missing for a weighted unit");
    }
    const EstimateReport point = hajek(w1.weights, y1, w0.weights, y0);
    write_estimate_section(writer, outcome_names[j], point.tau_hat,
                           cis.empty() ? nullptr : &cis[j]);
    std::cout << outcome_names[j] << ": tau_hat = " << csv::format_double(point.tau_hat);
    if (!cis.empty())
      std::cout << "  [" << csv::format_double(cis[j].lower) << ", "
                << csv::format_double(cis[j].upper) << "] @" << csv::format_double(opts.level);
    std::cout << "\n";
  }
  return kOk;
}

// ------------------------------------------------------------------- tune --
struct TuneOptions {
  DataOptions data;
  std::string profile_path;
  std::vector<std::string> basis;
  std::vector<double> grid;
  bool nonneg = true;
  int threads = 1;
  std::string out_dir = ".";
};

int run_tune(const TuneOptions& opts) {
  using namespace onestep;
  const StudyDataset ds = load_data(opts.data);
  const BasisSpec basis = parse_basis(opts.basis, ds.covariate_names);
  const TargetProfile profile = opts.profile_path.empty()
                                    ? profile_from_sample(ds, basis)
                                    : load_profile(opts.profile_path);

  const auto treated_rows = ds.group_rows(1);
  const auto control_rows = ds.group_rows(0);
  const Eigen::MatrixXd expanded = expand(ds.covariates, basis);
  Eigen::MatrixXd B1(static_cast<std::ptrdiff_t>(treated_rows.size()), expanded.cols());
  Eigen::MatrixXd B0(static_cast<std::ptrdiff_t>(control_rows.size()), expanded.cols());
  for (std::size_t r = 0; r < treated_rows.size(); ++r)
    B1.row(static_cast<std::ptrdiff_t>(r)) = expanded.row(treated_rows[r]);
  for (std::size_t r = 0; r < control_rows.size(); ++r)
    B0.row(static_cast<std::ptrdiff_t>(r)) = expanded.row(control_rows[r]);

  std::filesystem::create_directories(opts.out_dir);
  auto report_stream = open_out(std::filesystem::path(opts.out_dir) / "report.txt");
  ReportWriter writer(report_stream);
  writer.section("run");
  writer.kv("command", std::string("tune"));
  try {
    const TuningResult tuned =
        tune_tolerance({B1, B0}, profile, parse_grid(opts.grid), opts.nonneg, {}, opts.threads);
    write_tuning_section(writer, tuned);
    std::cout << "tune: chose multiplier " << csv::format_double(tuned.chosen_multiplier) << "\n";
    return kOk;
  } catch (const TuningError& err) {
    writer.section("tuning");
    writer.kv("error", std::string(err.what()));
    std::cerr << "tune: " << err.what() << "\n";
    return kInfeasible;
  }
}

// --------------------------------------------------------------- simulate --
struct SimulateOptions {
  std::string setting = "randomized";
  int reps = 200;
  bool desk = false;
  bool paper_parity = false;
  int cohort = 1000;
  std::vector<std::string> methods;
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<double> grid;
  std::string out_dir = ".";
};

int run_simulate(const SimulateOptions& opts) {
  using namespace onestep;
  SimConfig config;
  config.setting =
      opts.setting == "observational" ? Setting::observational : Setting::randomized;
  config.replications = opts.paper_parity ? 800 : (opts.desk ? 200 : opts.reps);
  config.cohort_size = opts.cohort;
  config.master_seed = opts.seed;
  config.threads = opts.threads;
  config.grid = parse_grid(opts.grid);
  if (!opts.methods.empty()) {
    config.methods.clear();
    for (const std::string& name : opts.methods) config.methods.push_back(parse_method(name));
  }
  config.validate();

  const SimulationReport report = run_study(config);

  std::filesystem::create_directories(opts.out_dir);
  auto report_stream = open_out(std::filesystem::path(opts.out_dir) / "report.txt");
  ReportWriter writer(report_stream);
  write_simulation_report(writer, report);
  auto table_stream = open_out(std::filesystem::path(opts.out_dir) / "table.txt");
  table_stream << simulation_table_text(report);
  write_replication_dump((std::filesystem::path(opts.out_dir) / "replications.csv").string(),
                         report);
  std::cout << simulation_table_text(report);
  return kOk;
}

// -------------------------------------------------------------- casestudy --
struct CaseStudyOptions {
  std::string data_dir = "data/casestudy";
  std::string rule = "fixed";
  double tol_multiplier = 0.05;
  std::vector<double> grid;
  int bootstrap = 200;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = ".";
};

int run_casestudy(const CaseStudyOptions& opts) {
  using namespace onestep;
  const CaseStudyFixture fixture = load_case_study_fixture(opts.data_dir);
  const ToleranceRule rule = opts.rule == "tuned"
                                 ? ToleranceRule::adaptive(parse_grid(opts.grid))
                                 : ToleranceRule::fixed(opts.tol_multiplier);
  BootstrapSettings bs;
  bs.replicates = opts.bootstrap;
  bs.level = opts.level;
  bs.seed = opts.seed;
  bs.threads = opts.threads;
  const CaseStudyResult result = run_case_study(fixture, rule, bs);

  std::filesystem::create_directories(opts.out_dir);
  auto report_stream = open_out(std::filesystem::path(opts.out_dir) / "report.txt");
  ReportWriter writer(report_stream);
  writer.section("run");
  writer.kv("command", std::string("casestudy"));
  writer.kv("rule", opts.rule);
  writer.kv("bootstrap", opts.bootstrap);
  writer.kv("seed", opts.seed);

  const auto treated_ids = subset_ids(fixture.trial, fixture.trial.group_rows(1));
  const auto control_ids = subset_ids(fixture.trial, fixture.trial.group_rows(0));

  bool all_ok = true;
  for (const CaseStudyTargetResult& target : result.targets) {
    writer.section("target." + target.target);
    if (!target.ok) {
      writer.kv("error", target.error);
      all_ok = false;
      continue;
    }
    writer.kv("multiplier", target.multiplier_used);
    writer.kv("ess_treated", target.ess_treated);
    writer.kv("ess_control", target.ess_control);
    writer.kv("max_weight_treated", target.max_weight_treated);
    writer.kv("max_weight_control", target.max_weight_control);
    writer.kv("max_tasmd_treated", target.tasmd_treated.max());
    writer.kv("max_tasmd_control", target.tasmd_control.max());
    std::vector<std::vector<std::string>> rows;
    for (const OutcomeEstimate& est : target.estimates)
      rows.push_back({est.outcome, csv::format_double(est.tau_hat),
                      csv::format_double(est.ci.lower), csv::format_double(est.ci.upper),
                      csv::format_double(est.ci.level), std::to_string(est.ci.replicates)});
    writer.table("estimates." + target.target,
                 {"outcome", "tau_hat", "ci_lower", "ci_upper", "level", "replicates"}, rows);
    save_weights(
        (std::filesystem::path(opts.out_dir) / ("weights_" + target.target + "_treated.csv"))
            .string(),
        treated_ids, target.treated_weights);
    save_weights(
        (std::filesystem::path(opts.out_dir) / ("weights_" + target.target + "_control.csv"))
            .string(),
        control_ids, target.control_weights);
    std::cout << "target " << target.target << ": ess=("
              << csv::format_double(target.ess_treated) << ", "
              << csv::format_double(target.ess_control) << ")\n";
  }
  return all_ok ? kOk : kInfeasible;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one-step balancing weights for effect generalization and transportation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "",
                 "Read options from a file with a [subcommand] section; flags override");
  app.allow_config_extras(CLI::config_extras_mode::error);

  WeightsOptions weights_opts;
  auto* weights_cmd =
      app.add_subcommand("weights", "Solve one-step balancing weights for both groups");
  add_data_options(weights_cmd, weights_opts.data);
  weights_cmd->add_option("--profile", weights_opts.profile_path, "Target profile file");
  weights_cmd->add_option("--profile-from", weights_opts.profile_from,
                          "Build the profile from the data: all, treated or control")
      ->check(CLI::IsMember({"all", "treated", "control"}));
  weights_cmd->add_option("--save-profile", weights_opts.save_profile_path,
                          "Also write the profile used to this file");
  weights_cmd->add_option("--basis", weights_opts.basis,
                          "Basis terms, e.g. age,age^2,x1*x4 (default: all main terms)")
      ->delimiter(',');
  weights_cmd->add_option("--tol-multiplier", weights_opts.tol_multiplier,
                          "Tolerance = multiplier x target spread per term");
  weights_cmd->add_flag("--tune", weights_opts.tune, "Pick the multiplier from a grid");
  weights_cmd->add_option("--grid", weights_opts.grid, "Tuning grid (ascending multipliers)")
      ->delimiter(',');
  weights_cmd->add_flag("--nonneg,!--no-nonneg", weights_opts.nonneg,
                        "Constrain weights to be non-negative (default on)");
  weights_cmd->add_option("--seed", weights_opts.seed, "Random seed (reserved)");
  weights_cmd->add_option("--threads", weights_opts.threads, "Worker threads");
  weights_cmd->add_option("--out-dir", weights_opts.out_dir, "Output directory");

  TwoStepOptions twostep_opts;
  auto* twostep_cmd =
      app.add_subcommand("twostep", "Classical inverse probability / inverse odds weights");
  add_data_options(twostep_cmd, twostep_opts.data, true);
  twostep_cmd->add_option("--sel-covariates", twostep_opts.sel_covariates,
                          "Columns for the selection model (default: all)")
      ->delimiter(',');
  twostep_cmd->add_option("--treat-covariates", twostep_opts.treat_covariates,
                          "Columns for the treatment model (default: all)")
      ->delimiter(',');
  twostep_cmd->add_option("--known-e", twostep_opts.known_e,
                          "Known constant treatment probability (randomized designs)");
  twostep_cmd->add_option("--mode", twostep_opts.mode, "generalize or transport")
      ->check(CLI::IsMember({"generalize", "transport"}));
  twostep_cmd->add_option("--out-dir", twostep_opts.out_dir, "Output directory");

  EstimateOptions estimate_opts;
  auto* estimate_cmd =
      app.add_subcommand("estimate", "Hajek effect estimates from weight files");
  add_data_options(estimate_cmd, estimate_opts.data);
  estimate_cmd->add_option("--weights-treated", estimate_opts.weights_treated)->required();
  estimate_cmd->add_option("--weights-control", estimate_opts.weights_control)->required();
  estimate_cmd->add_option("--outcomes", estimate_opts.outcomes,
                           "Outcome columns (default: the schema outcome)")
      ->delimiter(',');
  estimate_cmd->add_option("--bootstrap", estimate_opts.bootstrap,
                           "Bootstrap replicates (0 disables intervals)");
  estimate_cmd->add_option("--level", estimate_opts.level, "Interval level");
  estimate_cmd->add_option("--seed", estimate_opts.seed, "Bootstrap master seed");
  estimate_cmd->add_option("--threads", estimate_opts.threads, "Worker threads");
  estimate_cmd->add_option("--profile", estimate_opts.profile_path,
                           "Target profile file (needed for --bootstrap)");
  estimate_cmd->add_option("--basis", estimate_opts.basis, "Basis terms for --bootstrap")
      ->delimiter(',');
  estimate_cmd->add_option("--tol-multiplier", estimate_opts.tol_multiplier,
                           "Tolerance multiplier for --bootstrap");
  estimate_cmd->add_flag("--nonneg,!--no-nonneg", estimate_opts.nonneg,
                         "Non-negative weights in bootstrap re-solves (default on)");
  estimate_cmd->add_option("--out-dir", estimate_opts.out_dir, "Output directory");

  TuneOptions tune_opts;
  auto* tune_cmd = app.add_subcommand("tune", "Score the tolerance grid without saving weights");
  add_data_options(tune_cmd, tune_opts.data);
  tune_cmd->add_option("--profile", tune_opts.profile_path,
                       "Target profile file (default: profile of the whole sample)");
  tune_cmd->add_option("--basis", tune_opts.basis, "Basis terms")->delimiter(',');
  tune_cmd->add_option("--grid", tune_opts.grid, "Tuning grid")->delimiter(',');
  tune_cmd->add_flag("--nonneg,!--no-nonneg", tune_opts.nonneg,
                     "Non-negative weights (default on)");
  tune_cmd->add_option("--threads", tune_opts.threads, "Worker threads");
  tune_cmd->add_option("--out-dir", tune_opts.out_dir, "Output directory");

  SimulateOptions simulate_opts;
  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo study of the six methods");
  simulate_cmd->add_option("--setting", simulate_opts.setting, "randomized or observational")
      ->check(CLI::IsMember({"randomized", "observational"}));
  simulate_cmd->add_option("--reps", simulate_opts.reps, "Replications (default 200)");
  simulate_cmd->add_flag("--desk", simulate_opts.desk, "Desk scale: 200 replications");
  simulate_cmd->add_flag("--paper-parity", simulate_opts.paper_parity,
                         "Original-study scale: 800 replications");
  simulate_cmd->add_option("--cohort", simulate_opts.cohort, "Cohort size (default 1000)");
  simulate_cmd->add_option("--methods", simulate_opts.methods,
                           "Subset of one1,one2,one3,two1,two2,two3 (default all)")
      ->delimiter(',');
  simulate_cmd->add_option("--seed", simulate_opts.seed, "Master seed");
  simulate_cmd->add_option("--threads", simulate_opts.threads, "Worker threads");
  simulate_cmd->add_option("--grid", simulate_opts.grid, "Tolerance tuning grid")
      ->delimiter(',');
  simulate_cmd->add_option("--out-dir", simulate_opts.out_dir, "Output directory");

  CaseStudyOptions casestudy_opts;
  auto* casestudy_cmd =
      app.add_subcommand("casestudy", "Run the bundled synthetic trial workflow");
  casestudy_cmd->add_option("--data-dir", casestudy_opts.data_dir,
                            "Fixture directory (default data/casestudy)");
  casestudy_cmd->add_option("--rule", casestudy_opts.rule, "fixed or tuned")
      ->check(CLI::IsMember({"fixed", "tuned"}));
  casestudy_cmd->add_option("--tol-multiplier", casestudy_opts.tol_multiplier,
                            "Multiplier for the fixed rule (default 0.05)");
  casestudy_cmd->add_option("--grid", casestudy_opts.grid, "Grid for the tuned rule")
      ->delimiter(',');
  casestudy_cmd->add_option("--bootstrap", casestudy_opts.bootstrap,
                            "Bootstrap replicates per outcome");
  casestudy_cmd->add_option("--level", casestudy_opts.level, "Interval level");
  casestudy_cmd->add_option("--seed", casestudy_opts.seed, "Bootstrap master seed");
  casestudy_cmd->add_option("--threads", casestudy_opts.threads, "Worker threads");
  casestudy_cmd->add_option("--out-dir", casestudy_opts.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (weights_cmd->parsed()) return run_weights(weights_opts);
    if (twostep_cmd->parsed()) return run_twostep(twostep_opts);
    if (estimate_cmd->parsed()) return run_estimate(estimate_opts);
    if (tune_cmd->parsed()) return run_tune(tune_opts);
    if (simulate_cmd->parsed()) return run_simulate(simulate_opts);
    if (casestudy_cmd->parsed()) return run_casestudy(casestudy_opts);
  } catch (const onestep::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const onestep::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const onestep::TwoStepFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const onestep::BootstrapFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
