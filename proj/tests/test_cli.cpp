// End-to-end checks of the command-line interface: exit codes, output files,
// and byte-level determinism across runs and thread counts.
#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "onestep/report.hpp"
#include "onestep/rng.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int exit_code = -1;
  fs::path dir;
};

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("onestep_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string command = std::string(ONESTEP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// 60-unit two-covariate sample where modest tolerances are feasible.
fs::path write_sample(const fs::path& dir) {
  onestep::Rng rng(321);
  std::ofstream out(dir / "sample.csv");
  out << "Z,Y,age,score\n";
  for (int i = 0; i < 60; ++i) {
    const int z = i % 2;
    const double age = 40.0 + 8.0 * rng.normal();
    const double score = 0.3 * age + rng.normal();
    const double y = 2.0 * z + 0.1 * age + rng.normal();
    out << z << ',' << y << ',' << age << ',' << score << '\n';
  }
  return dir / "sample.csv";
}

}  // namespace

TEST_CASE("weights writes weight files and a balance report") {
  const fs::path dir = fresh_dir("weights");
  const fs::path data = write_sample(dir);
  const int code = run_cli("weights --data " + data.string() +
                           " --profile-from all --tol-multiplier 0.1 --save-profile " +
                           (dir / "profile.csv").string() + " --out-dir " + dir.string());
  REQUIRE(code == 0);
  CHECK(fs::exists(dir / "weights_treated.csv"));
  CHECK(fs::exists(dir / "weights_control.csv"));
  const onestep::ParsedReport report = onestep::parse_report_file((dir / "report.txt").string());
  CHECK(report.sections.at("weights.treated").at("status") == "optimal");
  // feasibility pins every tasmd at or below the multiplier
  for (const auto& row : report.tables.at("balance.treated").rows)
    CHECK(*onestep::csv::parse_double(row[5]) <= 0.1 + 1e-8);
  fs::remove_all(dir);
}

TEST_CASE("exact balance on an unbalanceable instance exits 3 with a hint") {
  const fs::path dir = fresh_dir("infeasible");
  std::ofstream out(dir / "tiny.csv");
  out << "Z,Y,x1\n1,1,0\n1,2,0.1\n0,1,1\n0,2,0.9\n";
  out.close();
  // treated support is far below the control-heavy profile
  std::ofstream prof(dir / "profile.csv");
  prof << "term,mean,spread\nx1,0.95,0.1\n";
  prof.close();
  const int code = run_cli("weights --data " + (dir / "tiny.csv").string() + " --profile " +
                           (dir / "profile.csv").string() +
                           " --tol-multiplier 0 --out-dir " + dir.string());
  CHECK(code == 3);
  const onestep::ParsedReport report = onestep::parse_report_file((dir / "report.txt").string());
  CHECK(report.sections.at("weights.treated").at("status") == "infeasible");
  CHECK(report.sections.at("weights.treated").count("infeasibility_hint") == 1);
  fs::remove_all(dir);
}

TEST_CASE("the tune flag embeds the tuning grid in the report") {
  const fs::path dir = fresh_dir("tuneflag");
  const fs::path data = write_sample(dir);
  const int code = run_cli("weights --data " + data.string() +
                           " --profile-from all --tune --grid 0.05,0.1,0.2 --out-dir " +
                           dir.string());
  REQUIRE(code == 0);
  const onestep::ParsedReport report = onestep::parse_report_file((dir / "report.txt").string());
  CHECK(report.sections.count("tuning") == 1);
  CHECK(report.tables.at("tuning_grid").rows.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("twostep produces uniform weights on a constant-probability fixture") {
  const fs::path dir = fresh_dir("twostep");
  std::ofstream out(dir / "cohort.csv");
  out << "D,Z,Y,x1\n";
  // x1 balanced in D and Z: all fitted probabilities constant
  for (int i = 0; i < 16; ++i) {
    const int d = i < 8 ? 1 : 0;
    const int x = i % 2;
    if (d)
      out << "1," << (i % 4 < 2 ? 1 : 0) << ",1," << x << "\n";
    else
      out << "0,,," << x << "\n";
  }
  out.close();
  const int code = run_cli("twostep --data " + (dir / "cohort.csv").string() +
                           " --selection D --known-e 0.5 --out-dir " + dir.string());
  REQUIRE(code == 0);
  const onestep::LoadedWeights w =
      onestep::load_weights((dir / "weights_treated.csv").string());
  for (std::ptrdiff_t i = 0; i < w.weights.size(); ++i)
    CHECK(w.weights(i) == Approx(1.0 / static_cast<double>(w.weights.size())).margin(1e-9));

  // transport mode runs the same fixture through the inverse-odds formula
  const int transport_code = run_cli("twostep --data " + (dir / "cohort.csv").string() +
                                     " --selection D --known-e 0.5 --mode transport --out-dir " +
                                     (dir / "transport").string());
  CHECK(transport_code == 0);
  const onestep::ParsedReport report =
      onestep::parse_report_file((dir / "transport" / "report.txt").string());
  CHECK(report.sections.at("run").at("mode") == "transport");
  fs::remove_all(dir);
}

TEST_CASE("twostep without a selection column is a usage error") {
  const fs::path dir = fresh_dir("twostep_nosel");
  const fs::path data = write_sample(dir);
  CHECK(run_cli("twostep --data " + data.string() + " --out-dir " + dir.string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("estimate reproduces the worked three-unit example") {
  const fs::path dir = fresh_dir("estimate");
  std::ofstream data(dir / "three.csv");
  data << "Z,Y,x1\n1,2,0\n1,4,1\n0,1,0.5\n";
  data.close();
  std::ofstream w1(dir / "w1.csv");
  w1 << "unit_id,weight\n1,0.5\n2,0.5\n";
  w1.close();
  std::ofstream w0(dir / "w0.csv");
  w0 << "unit_id,weight\n3,1\n";
  w0.close();
  const int code = run_cli("estimate --data " + (dir / "three.csv").string() +
                           " --weights-treated " + (dir / "w1.csv").string() +
                           " --weights-control " + (dir / "w0.csv").string() + " --out-dir " +
                           dir.string());
  REQUIRE(code == 0);
  const onestep::ParsedReport report = onestep::parse_report_file((dir / "report.txt").string());
  CHECK(*onestep::csv::parse_double(report.sections.at("estimate.Y").at("tau_hat")) ==
        Approx(2.0));
  // --bootstrap 0 means no interval keys
  CHECK(report.sections.at("estimate.Y").count("ci_lower") == 0);
  fs::remove_all(dir);
}

TEST_CASE("estimate with mismatched weight ids is a usage error") {
  const fs::path dir = fresh_dir("estimate_mismatch");
  std::ofstream data(dir / "three.csv");
  data << "Z,Y,x1\n1,2,0\n1,4,1\n0,1,0.5\n";
  data.close();
  std::ofstream w1(dir / "w1.csv");
  w1 << "unit_id,weight\n1,0.5\nmissing,0.5\n";
  w1.close();
  std::ofstream w0(dir / "w0.csv");
  w0 << "unit_id,weight\n3,1\n";
  w0.close();
  CHECK(run_cli("estimate --data " + (dir / "three.csv").string() + " --weights-treated " +
                (dir / "w1.csv").string() + " --weights-control " + (dir / "w0.csv").string() +
                " --out-dir " + dir.string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("estimate bootstrap of a constant outcome has a zero-width interval at zero") {
  const fs::path dir = fresh_dir("estimate_const");
  std::ofstream data(dir / "const.csv");
  data << "Z,Y,x1\n";
  for (int i = 0; i < 20; ++i)
    data << (i % 2) << ",7.5," << 0.1 * i << "\n";
  data.close();
  std::ofstream prof(dir / "profile.csv");
  prof << "term,mean,spread\nx1,0.95,0.55\n";
  prof.close();
  int code = run_cli("weights --data " + (dir / "const.csv").string() + " --profile " +
                     (dir / "profile.csv").string() + " --tol-multiplier 0.5 --out-dir " +
                     dir.string());
  REQUIRE(code == 0);
  code = run_cli("estimate --data " + (dir / "const.csv").string() + " --weights-treated " +
                 (dir / "weights_treated.csv").string() + " --weights-control " +
                 (dir / "weights_control.csv").string() + " --bootstrap 16 --seed 3 --profile " +
                 (dir / "profile.csv").string() + " --tol-multiplier 0.5 --out-dir " +
                 dir.string());
  REQUIRE(code == 0);
  const onestep::ParsedReport report = onestep::parse_report_file((dir / "report.txt").string());
  CHECK(report.sections.at("estimate.Y").at("ci_lower") == "0");
  CHECK(report.sections.at("estimate.Y").at("ci_upper") == "0");
  fs::remove_all(dir);
}

TEST_CASE("simulate rejects unknown methods and honors seeds bytewise") {
  const fs::path dir = fresh_dir("simulate");
  CHECK(run_cli("simulate --methods bogus --out-dir " + dir.string()) == 2);

  const std::string args = "simulate --reps 3 --cohort 150 --methods one3,two3 --seed 11";
  REQUIRE(run_cli(args + " --threads 1 --out-dir " + (dir / "a").string()) == 0);
  REQUIRE(run_cli(args + " --threads 8 --out-dir " + (dir / "b").string()) == 0);
  REQUIRE(run_cli(args + " --threads 1 --out-dir " + (dir / "c").string()) == 0);
  for (const char* file : {"report.txt", "table.txt", "replications.csv"}) {
    CHECK(slurp(dir / "a" / file) == slurp(dir / "b" / file));
    CHECK(slurp(dir / "a" / file) == slurp(dir / "c" / file));
  }
  fs::remove_all(dir);
}

TEST_CASE("casestudy runs the bundled fixture end to end") {
  const fs::path dir = fresh_dir("casestudy");
  const std::string fixture_dir = std::string(ONESTEP_DATA_DIR) + "/casestudy";
  const int code = run_cli("casestudy --data-dir " + fixture_dir +
                           " --bootstrap 12 --seed 2 --threads 2 --out-dir " + dir.string());
  REQUIRE(code == 0);
  const onestep::ParsedReport report = onestep::parse_report_file((dir / "report.txt").string());
  for (const char* target : {"self", "cohort", "external"}) {
    CHECK(report.sections.count(std::string("target.") + target) == 1);
    CHECK(fs::exists(dir / (std::string("weights_") + target + "_treated.csv")));
  }
  fs::remove_all(dir);
}

TEST_CASE("options can come from a config file, with unknown keys rejected") {
  const fs::path dir = fresh_dir("config");
  const fs::path data = write_sample(dir);
  std::ofstream config(dir / "run.ini");
  config << "[weights]\ndata = " << data.string()
         << "\nprofile-from = all\ntol-multiplier = 0.2\nout-dir = " << dir.string() << "\n";
  config.close();
  CHECK(run_cli("weights --config " + (dir / "run.ini").string()) == 0);

  std::ofstream bad(dir / "bad.ini");
  bad << "[weights]\ndata = " << data.string() << "\nnot-a-real-option = 1\n";
  bad.close();
  CHECK(run_cli("weights --config " + (dir / "bad.ini").string()) == 2);
  fs::remove_all(dir);
}
