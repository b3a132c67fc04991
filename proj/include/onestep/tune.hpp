// Data-adaptive choice of the tolerance multiplier over a grid. Each
// candidate is scored by the sum over treatment groups of
//
//   sum_k (standardized achieved imbalance_k)^2  +  1 / ESS(w)
//
// a squared-bias proxy plus a variance proxy; the feasible minimizer wins,
// ties break toward the smaller multiplier.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "onestep/basis.hpp"
#include "onestep/estimate.hpp"
#include "onestep/solver.hpp"
#include "onestep/thread_pool.hpp"

namespace onestep {

struct TuningGrid {
  std::vector<double> multipliers{0.0001, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1};

  void validate() const {
    if (multipliers.empty()) throw std::invalid_argument("tuning grid is empty");
    for (std::size_t i = 0; i < multipliers.size(); ++i) {
      if (multipliers[i] < 0.0) throw std::invalid_argument("tuning grid has a negative entry");
      if (i > 0 && multipliers[i] <= multipliers[i - 1])
        throw std::invalid_argument("tuning grid must be strictly ascending");
    }
  }
};

struct TuningCandidate {
  double multiplier = 0;
  bool feasible = false;
  double score = std::numeric_limits<double>::infinity();
  double ess_total = 0;
  double max_tasmd = 0;
};

struct TuningResult {
  double chosen_multiplier = 0;
  std::size_t chosen_index = 0;
  std::vector<TuningCandidate> per_candidate;
  std::vector<WeightSolution> chosen_solutions;  // one per group, same order as input
  ToleranceVector chosen_deltas;
  // Worst feasibility violations over every optimal solve performed while
  // scoring the grid, not just the winner.
  double max_sum_violation = 0;
  double max_balance_violation = 0;
  int optimal_solves = 0;
};

struct TuningError : std::runtime_error {
  std::vector<TuningCandidate> per_candidate;
  explicit TuningError(const std::string& what, std::vector<TuningCandidate> candidates)
      : std::runtime_error(what), per_candidate(std::move(candidates)) {}
};

// Joint tuning of all groups (the treated and control problems share one
// multiplier). group_bases holds each group's expanded basis matrix; all are
// balanced toward the same profile.
inline TuningResult tune_tolerance(const std::vector<Eigen::MatrixXd>& group_bases,
                                   const TargetProfile& profile, const TuningGrid& grid,
                                   bool nonnegative = true, const SolverSettings& settings = {},
                                   int threads = 1) {
  grid.validate();
  if (group_bases.empty()) throw std::invalid_argument("tune_tolerance: no groups");
  if (!profile.spreads) throw std::invalid_argument("tune_tolerance: profile has no spreads");

  const auto n_candidates = static_cast<int>(grid.multipliers.size());
  std::vector<TuningCandidate> candidates(static_cast<std::size_t>(n_candidates));
  std::vector<std::vector<WeightSolution>> solutions(static_cast<std::size_t>(n_candidates));
  std::vector<ToleranceVector> deltas(static_cast<std::size_t>(n_candidates));
  std::vector<std::array<double, 2>> violations(static_cast<std::size_t>(n_candidates),
                                                {0.0, 0.0});
  std::vector<int> solve_counts(static_cast<std::size_t>(n_candidates), 0);

  parallel_for(n_candidates, threads, [&](int c) {
    TuningCandidate& cand = candidates[static_cast<std::size_t>(c)];
    cand.multiplier = grid.multipliers[static_cast<std::size_t>(c)];
    deltas[static_cast<std::size_t>(c)] = standardized_tolerances(cand.multiplier, profile);

    double score = 0.0;
    double ess_total = 0.0;
    double worst_tasmd = 0.0;
    std::vector<WeightSolution> sols;
    sols.reserve(group_bases.size());
    for (const Eigen::MatrixXd& B : group_bases) {
      BalanceProblem p;
      p.B = B;
      p.target = profile.means;
      p.deltas = deltas[static_cast<std::size_t>(c)];
      p.nonnegative = nonnegative;
      WeightSolution sol = solve_weights(p, settings);
      if (sol.status != SolveStatus::optimal) return;  // candidate stays infeasible
      ++solve_counts[static_cast<std::size_t>(c)];
      auto& worst = violations[static_cast<std::size_t>(c)];
      worst[0] = std::max(worst[0], std::abs(sol.weights.sum() - 1.0));
      for (std::ptrdiff_t k = 0; k < p.terms(); ++k)
        worst[1] = std::max(worst[1], std::abs(sol.imbalances(k)) - p.deltas.deltas(k));
      const TasmdResult balance = tasmd(p.B.transpose() * sol.weights, profile);
      score += balance.values.squaredNorm() + 1.0 / ess(sol.weights);
      ess_total += ess(sol.weights);
      worst_tasmd = std::max(worst_tasmd, balance.max());
      sols.push_back(std::move(sol));
    }
    cand.feasible = true;
    cand.score = score;
    cand.ess_total = ess_total;
    cand.max_tasmd = worst_tasmd;
    solutions[static_cast<std::size_t>(c)] = std::move(sols);
  });

  std::ptrdiff_t best = -1;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (!candidates[c].feasible) continue;
    if (best < 0 || candidates[c].score < candidates[static_cast<std::size_t>(best)].score)
      best = static_cast<std::ptrdiff_t>(c);  // strict <: ties keep the smaller multiplier
  }
  if (best < 0)
    throw TuningError("tune_tolerance: every candidate multiplier was infeasible",
                      std::move(candidates));

  TuningResult result;
  result.chosen_index = static_cast<std::size_t>(best);
  result.chosen_multiplier = candidates[result.chosen_index].multiplier;
  result.per_candidate = std::move(candidates);
  result.chosen_solutions = std::move(solutions[result.chosen_index]);
  result.chosen_deltas = std::move(deltas[result.chosen_index]);
  for (const auto& worst : violations) {
    result.max_sum_violation = std::max(result.max_sum_violation, worst[0]);
    result.max_balance_violation = std::max(result.max_balance_violation, worst[1]);
  }
  for (int count : solve_counts) result.optimal_solves += count;
  return result;
}

}  // namespace onestep
