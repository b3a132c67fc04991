#include <catch2/catch.hpp>

#include <filesystem>
#include <sstream>

#include "onestep/report.hpp"

using namespace onestep;

TEST_CASE("reports round-trip through the parser") {
  std::ostringstream out;
  ReportWriter writer(out);
  writer.section("run");
  writer.kv("command", std::string("weights"));
  writer.kv("objective", 0.125);
  writer.table("balance", {"term", "value"}, {{"age", "1.5"}, {"bmi", "-2"}});
  writer.section("diagnostics");
  writer.kv("ess", 12.75);

  std::istringstream in(out.str());
  const ParsedReport parsed = parse_report(in);
  CHECK(parsed.version == kReportHeader);
  CHECK(parsed.sections.at("run").at("command") == "weights");
  CHECK(parsed.sections.at("run").at("objective") == "0.125");
  CHECK(parsed.sections.at("diagnostics").at("ess") == "12.75");
  REQUIRE(parsed.tables.count("balance") == 1);
  CHECK(parsed.tables.at("balance").rows.size() == 2);
  CHECK(parsed.tables.at("balance").rows[1][0] == "bmi");
}

TEST_CASE("doubles print in shortest round-trip form") {
  for (double v : {0.1, 1.0 / 3.0, 12345.678901234567, -2.5e-9, 400.0}) {
    const std::string text = csv::format_double(v);
    CHECK(*csv::parse_double(text) == v);
  }
}

TEST_CASE("weight files round-trip ids and values") {
  const auto path = std::filesystem::temp_directory_path() / "onestep_w.csv";
  Eigen::VectorXd w(3);
  w << 0.5, 0.25, 0.25;
  save_weights(path.string(), {"a", "b", "c"}, w);
  const LoadedWeights loaded = load_weights(path.string());
  std::filesystem::remove(path);
  CHECK(loaded.ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(loaded.weights == w);
}

TEST_CASE("the balance section carries imbalances, duals and tasmd per term") {
  BalanceProblem p;
  p.B.resize(3, 1);
  p.B << 0.0, 1.0, 2.0;
  p.target = Eigen::VectorXd::Constant(1, 1.5);
  p.deltas.deltas = Eigen::VectorXd::Zero(1);
  p.nonnegative = false;
  const WeightSolution sol = solve_weights(p);
  TargetProfile profile;
  profile.names = {"b1"};
  profile.means = p.target;
  profile.spreads = Eigen::VectorXd::Constant(1, 2.0);

  std::ostringstream out;
  ReportWriter writer(out);
  write_balance_section(writer, "treated", p, sol, profile);
  std::istringstream in(out.str());
  const ParsedReport parsed = parse_report(in);
  CHECK(parsed.sections.at("weights.treated").at("status") == "optimal");
  const csv::Table& table = parsed.tables.at("balance.treated");
  REQUIRE(table.rows.size() == 1);
  CHECK(table.header[0] == "term");
  CHECK(table.rows[0][0] == "b1");
  CHECK(*csv::parse_double(table.rows[0][3]) == Approx(0.0).margin(1e-10));  // imbalance
}

TEST_CASE("simulation reports serialize a results table per method and model") {
  SimConfig config;
  config.cohort_size = 80;
  config.replications = 2;
  config.methods = {{true, 3}};
  const SimulationReport report = run_study(config);
  std::ostringstream out;
  ReportWriter writer(out);
  write_simulation_report(writer, report);
  std::istringstream in(out.str());
  const ParsedReport parsed = parse_report(in);
  CHECK(parsed.sections.at("simulation").at("replications") == "2");
  CHECK(parsed.tables.at("results").rows.size() == 3);  // one method x three models
  CHECK(parsed.sections.count("solver_audit") == 1);
  CHECK(parsed.tables.count("diagnostics.one3") == 1);
}
