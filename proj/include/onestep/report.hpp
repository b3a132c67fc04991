// Machine-readable report format: a version header, [section] blocks of
// key = value lines, and embedded CSV tables fenced by [table:name] ... [end].
// Doubles print in shortest round-trip form, so a pinned run is byte-stable.
// The schema is append-only within a major version: new keys and tables may
// be added, existing ones keep their names and order.
#pragma once

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "onestep/csv.hpp"
#include "onestep/data.hpp"
#include "onestep/estimate.hpp"
#include "onestep/sim.hpp"
#include "onestep/solver.hpp"
#include "onestep/tune.hpp"

namespace onestep {

inline constexpr const char* kReportHeader = "#onestep-report v1";

class ReportWriter {
 public:
  explicit ReportWriter(std::ostream& out) : out_(out) { out_ << kReportHeader << '\n'; }

  void section(const std::string& name) { out_ << '[' << name << "]\n"; }

  void kv(const std::string& key, const std::string& value) {
    out_ << key << " = " << value << '\n';
  }
  void kv(const std::string& key, double value) { kv(key, csv::format_double(value)); }
  void kv(const std::string& key, int value) { kv(key, std::to_string(value)); }
  void kv(const std::string& key, long value) { kv(key, std::to_string(value)); }
  void kv(const std::string& key, std::uint64_t value) { kv(key, std::to_string(value)); }

  void table(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows) {
    out_ << "[table:" << name << "]\n";
    for (std::size_t j = 0; j < header.size(); ++j) out_ << (j ? "," : "") << header[j];
    out_ << '\n';
    for (const auto& row : rows) {
      for (std::size_t j = 0; j < row.size(); ++j) out_ << (j ? "," : "") << row[j];
      out_ << '\n';
    }
    out_ << "[end]\n";
  }

 private:
  std::ostream& out_;
};

// Parsed form, for tests and downstream tooling.
struct ParsedReport {
  std::string version;
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::map<std::string, csv::Table> tables;
};

inline ParsedReport parse_report(std::istream& in) {
  ParsedReport report;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty report");
  report.version = line;
  std::string section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      const std::string name = line.substr(1, line.size() - 2);
      if (name.rfind("table:", 0) == 0) {
        csv::Table table;
        std::string table_line;
        bool first = true;
        while (std::getline(in, table_line) && table_line != "[end]") {
          auto cells = csv::split_line(table_line);
          if (first) {
            table.header = std::move(cells);
            first = false;
          } else {
            table.rows.push_back(std::move(cells));
          }
        }
        report.tables.emplace(name.substr(6), std::move(table));
      } else {
        section = name;
        report.sections[section];
      }
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos || section.empty())
      throw IoError("malformed report line: " + line);
    report.sections[section][line.substr(0, eq)] = line.substr(eq + 3);
  }
  return report;
}

inline ParsedReport parse_report_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path + "'");
  return parse_report(in);
}

// (unit id, weight) delimited files, the exchange format for solved weights.
inline void save_weights(const std::string& path, const std::vector<std::string>& ids,
                         const Eigen::VectorXd& weights) {
  if (static_cast<std::ptrdiff_t>(ids.size()) != weights.size())
    throw std::invalid_argument("save_weights: id/weight length mismatch");
  csv::Table table;
  table.header = {"unit_id", "weight"};
  for (std::ptrdiff_t i = 0; i < weights.size(); ++i)
    table.rows.push_back({ids[static_cast<std::size_t>(i)], csv::format_double(weights(i))});
  csv::write_table(path, table);
}

struct LoadedWeights {
  std::vector<std::string> ids;
  Eigen::VectorXd weights;
};

inline LoadedWeights load_weights(const std::string& path) {
  const csv::Table table = csv::read_table(path);
  const std::ptrdiff_t id_col = table.column("unit_id");
  const std::ptrdiff_t w_col = table.column("weight");
  if (id_col < 0 || w_col < 0)
    throw SchemaError("weight file '" + path + "' needs unit_id and weight columns");
  LoadedWeights out;
  out.weights.resize(static_cast<std::ptrdiff_t>(table.rows.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out.ids.push_back(table.rows[r][static_cast<std::size_t>(id_col)]);
    const auto value = csv::parse_double(table.rows[r][static_cast<std::size_t>(w_col)]);
    if (!value)
      throw SchemaError("weight file '" + path + "' row " + std::to_string(r + 2) +
                        ": weight is not numeric");
    out.weights(static_cast<std::ptrdiff_t>(r)) = *value;
  }
  return out;
}

// Balance report for one solved group: status, objective, diagnostics and the
// per-term imbalance table.
inline void write_balance_section(ReportWriter& writer, const std::string& group,
                                  const BalanceProblem& problem, const WeightSolution& sol,
                                  const TargetProfile& profile) {
  writer.section("weights." + group);
  writer.kv("status", to_string(sol.status));
  writer.kv("units", static_cast<int>(problem.units()));
  writer.kv("iterations", sol.iterations);
  if (sol.status != SolveStatus::optimal) {
    writer.kv("infeasibility_hint", sol.infeasibility_hint);
    return;
  }
  writer.kv("objective", sol.objective);
  writer.kv("ess", ess(sol.weights));
  writer.kv("max_weight", max_normalized_weight(sol.weights));
  writer.kv("normalization_dual", sol.normalization_dual);

  const Eigen::VectorXd achieved = problem.B.transpose() * sol.weights;
  const TasmdResult balance = tasmd(achieved, profile);
  std::vector<std::vector<std::string>> rows;
  for (std::ptrdiff_t k = 0; k < problem.terms(); ++k)
    rows.push_back({profile.names[static_cast<std::size_t>(k)], csv::format_double(achieved(k)),
                    csv::format_double(profile.means(k)),
                    csv::format_double(sol.imbalances(k)),
                    csv::format_double(problem.deltas.deltas(k)),
                    csv::format_double(balance.values(k)),
                    balance.absolute[static_cast<std::size_t>(k)] ? "1" : "0",
                    csv::format_double(sol.duals(k))});
  writer.table("balance." + group,
               {"term", "achieved", "target", "imbalance", "delta", "tasmd", "tasmd_absolute",
                "dual"},
               rows);
}

inline void write_tuning_section(ReportWriter& writer, const TuningResult& tuned) {
  writer.section("tuning");
  writer.kv("chosen_multiplier", tuned.chosen_multiplier);
  std::vector<std::vector<std::string>> rows;
  for (const TuningCandidate& cand : tuned.per_candidate)
    rows.push_back({csv::format_double(cand.multiplier), cand.feasible ? "1" : "0",
                    cand.feasible ? csv::format_double(cand.score) : "inf",
                    csv::format_double(cand.ess_total), csv::format_double(cand.max_tasmd)});
  writer.table("tuning_grid", {"multiplier", "feasible", "score", "ess", "max_tasmd"}, rows);
}

inline void write_estimate_section(ReportWriter& writer, const std::string& label,
                                   double tau_hat, const ConfidenceInterval* ci) {
  writer.section("estimate." + label);
  writer.kv("tau_hat", tau_hat);
  if (ci) {
    writer.kv("ci_lower", ci->lower);
    writer.kv("ci_upper", ci->upper);
    writer.kv("ci_level", ci->level);
    writer.kv("ci_replicates", ci->replicates);
    writer.kv("ci_skipped", ci->skipped);
  }
}

inline void write_simulation_report(ReportWriter& writer, const SimulationReport& report) {
  writer.section("simulation");
  writer.kv("setting", to_string(report.setting));
  writer.kv("cohort_size", report.cohort_size);
  writer.kv("replications", report.replications);
  writer.kv("seed", report.master_seed);
  writer.section("solver_audit");
  writer.kv("optimal_solves", report.audit.solves);
  writer.kv("max_sum_violation", report.audit.max_sum_violation);
  writer.kv("max_balance_violation", report.audit.max_balance_violation);

  auto summary_row = [](const std::string& metric, const FiveNumberSummary& s) {
    return std::vector<std::string>{metric, csv::format_double(s.min),
                                    csv::format_double(s.q25), csv::format_double(s.median),
                                    csv::format_double(s.q75), csv::format_double(s.max),
                                    csv::format_double(s.mean)};
  };

  std::vector<std::vector<std::string>> cells;
  for (const MethodSummary& m : report.methods)
    for (int model = 1; model <= 3; ++model)
      cells.push_back({m.method.name(), std::to_string(model),
                       csv::format_double(m.rmse[static_cast<std::size_t>(model - 1)]),
                       csv::format_double(m.bias[static_cast<std::size_t>(model - 1)]),
                       std::to_string(m.successes), std::to_string(m.failures)});
  writer.table("results", {"method", "model", "rmse", "bias", "successes", "failures"}, cells);

  for (const MethodSummary& m : report.methods) {
    writer.section("method." + m.method.name());
    if (m.method.one_step) writer.kv("mean_multiplier", m.mean_multiplier);
    writer.kv("failures", m.failures);
    writer.table("diagnostics." + m.method.name(),
                 {"metric", "min", "q25", "median", "q75", "max", "mean"},
                 {summary_row("ess_treated", m.ess_treated),
                  summary_row("ess_control", m.ess_control),
                  summary_row("max_weight_treated", m.max_weight_treated),
                  summary_row("max_weight_control", m.max_weight_control)});
  }
}

// Compact fixed-width table for reading at the terminal, one row per method,
// one column per outcome model.
inline std::string simulation_table_text(const SimulationReport& report) {
  std::ostringstream out;
  out << "Root-mean-squared error, " << to_string(report.setting) << " setting ("
      << report.replications << " replications, cohort " << report.cohort_size << ")\n";
  out << "method     model 1    model 2    model 3\n";
  char buf[96];
  for (const MethodSummary& m : report.methods) {
    std::snprintf(buf, sizeof(buf), "%-8s%9.2f%11.2f%11.2f\n", m.method.name().c_str(),
                  m.rmse[0], m.rmse[1], m.rmse[2]);
    out << buf;
  }
  return out.str();
}

// Per-replication values behind the ESS / max-weight figures, as plot data.
inline void write_replication_dump(const std::string& path, const SimulationReport& report) {
  csv::Table table;
  table.header = {"replication", "method",      "ok",          "tau_model1",
                  "tau_model2",  "tau_model3",  "ess_treated", "ess_control",
                  "max_weight_treated", "max_weight_control", "multiplier"};
  for (const ReplicationResult& rep : report.replication_results) {
    for (const MethodRecord& record : rep.records) {
      std::vector<std::string> row{std::to_string(rep.replication), record.method.name(),
                                   record.ok ? "1" : "0"};
      if (record.ok) {
        for (int model = 0; model < 3; ++model)
          row.push_back(csv::format_double(record.tau_hat[static_cast<std::size_t>(model)]));
        row.push_back(csv::format_double(record.ess_treated));
        row.push_back(csv::format_double(record.ess_control));
        row.push_back(csv::format_double(record.max_weight_treated));
        row.push_back(csv::format_double(record.max_weight_control));
        row.push_back(record.method.one_step ? csv::format_double(record.chosen_multiplier)
                                             : std::string());
      } else {
        for (int j = 0; j < 8; ++j) row.push_back("");
      }
      table.rows.push_back(std::move(row));
    }
  }
  csv::write_table(path, table);
}

}  // namespace onestep
