#include <catch2/catch.hpp>

#include <Eigen/Dense>

#include <cstring>
#include <random>

#include "onestep/solver.hpp"

using namespace onestep;

namespace {

BalanceProblem make_problem(const Eigen::MatrixXd& B, const Eigen::VectorXd& target,
                            const Eigen::VectorXd& deltas, bool nonneg) {
  BalanceProblem p;
  p.B = B;
  p.target = target;
  p.deltas.deltas = deltas;
  p.nonnegative = nonneg;
  return p;
}

Eigen::MatrixXd column(std::initializer_list<double> vals) {
  Eigen::MatrixXd B(static_cast<std::ptrdiff_t>(vals.size()), 1);
  std::ptrdiff_t i = 0;
  for (double v : vals) B(i++, 0) = v;
  return B;
}

// Duals of the equality-constrained instance by the same dense KKT route as
// the oracle weights; feeds verify_kkt independently of the active-set path.
WeightSolution oracle_solution(const Eigen::MatrixXd& B, const Eigen::VectorXd& target) {
  const std::ptrdiff_t m = B.rows();
  const std::ptrdiff_t K = B.cols();
  Eigen::MatrixXd A(K + 1, m);
  A.row(0).setConstant(1.0);
  A.bottomRows(K) = B.transpose();
  Eigen::VectorXd c(K + 1);
  c(0) = 1.0;
  c.tail(K) = target;
  const Eigen::VectorXd y = (A * A.transpose()).fullPivLu().solve(c);
  WeightSolution sol;
  sol.weights = A.transpose() * y;
  sol.normalization_dual = 2.0 * y(0);
  sol.duals = -2.0 * y.tail(K);
  sol.imbalances = B.transpose() * sol.weights - target;
  sol.objective = sol.weights.squaredNorm();
  sol.status = SolveStatus::optimal;
  return sol;
}

struct RandomInstance {
  BalanceProblem problem;
};

RandomInstance random_instance(std::mt19937_64& rng, bool nonneg, bool exact) {
  std::uniform_int_distribution<int> msize(2, 20);
  std::uniform_int_distribution<int> ksize(0, 5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int m = msize(rng);
  const int K = std::min(ksize(rng), m - 1);
  Eigen::MatrixXd B(m, K);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < K; ++k) B(i, k) = gauss(rng);
  Eigen::VectorXd target(K), deltas(K);
  for (int k = 0; k < K; ++k) {
    // target near the column mean keeps most instances feasible
    target(k) = B.col(k).mean() + 0.3 * gauss(rng);
    deltas(k) = exact ? 0.0 : 0.5 * unif(rng);
  }
  return {make_problem(B, target, deltas, nonneg)};
}

}  // namespace

TEST_CASE("equality oracle: uniform when the column mean equals the target") {
  const Eigen::VectorXd w =
      equality_oracle(column({0.0, 1.0, 2.0}), Eigen::VectorXd::Constant(1, 1.0));
  for (int i = 0; i < 3; ++i) CHECK(w(i) == Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("equality oracle matches the hand-solved 2x2 KKT system") {
  const Eigen::VectorXd w =
      equality_oracle(column({0.0, 1.0, 2.0}), Eigen::VectorXd::Constant(1, 1.5));
  CHECK(w(0) == Approx(1.0 / 12.0).margin(1e-12));
  CHECK(w(1) == Approx(4.0 / 12.0).margin(1e-12));
  CHECK(w(2) == Approx(7.0 / 12.0).margin(1e-12));
}

TEST_CASE("equality oracle with no balance constraints returns uniform") {
  const Eigen::VectorXd w = equality_oracle(Eigen::MatrixXd(4, 0), Eigen::VectorXd(0));
  for (int i = 0; i < 4; ++i) CHECK(w(i) == Approx(0.25).margin(1e-14));
}

TEST_CASE("equality oracle rejects rank-deficient constraints") {
  Eigen::MatrixXd B(3, 2);
  B.col(0) = Eigen::Vector3d(0.0, 1.0, 2.0);
  B.col(1) = 2.0 * B.col(0);
  Eigen::VectorXd target(2);
  target << 1.0, 2.0;
  CHECK_THROWS_AS(equality_oracle(B, target), std::invalid_argument);
}

TEST_CASE("normalization-only problem yields uniform weights") {
  BalanceProblem p = make_problem(Eigen::MatrixXd(4, 0), Eigen::VectorXd(0),
                                  Eigen::VectorXd(0), true);
  const WeightSolution sol = solve_weights(p);
  REQUIRE(sol.status == SolveStatus::optimal);
  for (int i = 0; i < 4; ++i) CHECK(sol.weights(i) == Approx(0.25).margin(1e-12));
  CHECK(sol.objective == Approx(0.25).margin(1e-12));
}

TEST_CASE("exact balance without bounds matches the closed form") {
  BalanceProblem p = make_problem(column({0.0, 1.0, 2.0}), Eigen::VectorXd::Constant(1, 1.5),
                                  Eigen::VectorXd::Zero(1), false);
  const WeightSolution sol = solve_weights(p);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.weights(0) == Approx(1.0 / 12.0).margin(1e-9));
  CHECK(sol.weights(1) == Approx(4.0 / 12.0).margin(1e-9));
  CHECK(sol.weights(2) == Approx(7.0 / 12.0).margin(1e-9));
}

TEST_CASE("symmetry splits the remaining mass when one unit is forced") {
  // Constraints force w1 = 0.5 (only unit with B = 0 cannot absorb it);
  // the squared objective then equalizes w2 = w3 = 0.25.
  BalanceProblem p = make_problem(column({0.0, 1.0, 1.0}), Eigen::VectorXd::Constant(1, 0.5),
                                  Eigen::VectorXd::Zero(1), true);
  const WeightSolution sol = solve_weights(p);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.weights(0) == Approx(0.5).margin(1e-9));
  CHECK(sol.weights(1) == Approx(0.25).margin(1e-9));
  CHECK(sol.weights(2) == Approx(0.25).margin(1e-9));
}

TEST_CASE("unreachable target under non-negativity reports infeasible with a hint") {
  BalanceProblem p = make_problem(column({0.0, 1.0}), Eigen::VectorXd::Constant(1, 5.0),
                                  Eigen::VectorXd::Zero(1), true);
  const WeightSolution sol = solve_weights(p);
  REQUIRE(sol.status == SolveStatus::infeasible);
  // uniform weights balance to 0.5, so every delta needs at least 4.5 of slack
  CHECK(sol.infeasibility_hint == Approx(4.5).margin(1e-12));
}

TEST_CASE("inconsistent exact-balance duplicates are infeasible") {
  Eigen::MatrixXd B(3, 2);
  B.col(0) = Eigen::Vector3d(0.0, 1.0, 2.0);
  B.col(1) = B.col(0);
  Eigen::VectorXd target(2);
  target << 1.0, 1.8;
  BalanceProblem p = make_problem(B, target, Eigen::VectorXd::Zero(2), false);
  CHECK(solve_weights(p).status == SolveStatus::infeasible);
}

TEST_CASE("consistent duplicate exact-balance constraints are tolerated") {
  Eigen::MatrixXd B(3, 2);
  B.col(0) = Eigen::Vector3d(0.0, 1.0, 2.0);
  B.col(1) = B.col(0);
  Eigen::VectorXd target(2);
  target << 1.5, 1.5;
  BalanceProblem p = make_problem(B, target, Eigen::VectorXd::Zero(2), false);
  const WeightSolution sol = solve_weights(p);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.weights(0) == Approx(1.0 / 12.0).margin(1e-9));
}

TEST_CASE("iteration cap surfaces as max-iterations") {
  BalanceProblem p = make_problem(column({0.0, 1.0, 2.0, 3.0}),
                                  Eigen::VectorXd::Constant(1, 2.5),
                                  Eigen::VectorXd::Zero(1), true);
  SolverSettings s;
  s.max_iterations = 1;
  CHECK(solve_weights(p, s).status == SolveStatus::max_iterations);
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(solve_weights(make_problem(Eigen::MatrixXd(0, 0), Eigen::VectorXd(0),
                                             Eigen::VectorXd(0), true)),
                  std::invalid_argument);
  Eigen::MatrixXd B = column({0.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(solve_weights(make_problem(B, Eigen::VectorXd::Constant(1, 0.5),
                                             Eigen::VectorXd::Zero(1), true)),
                  std::invalid_argument);
}

TEST_CASE("kkt residuals vanish for the uniform solution of the trivial problem") {
  BalanceProblem p = make_problem(Eigen::MatrixXd(4, 0), Eigen::VectorXd(0),
                                  Eigen::VectorXd(0), true);
  const WeightSolution sol = solve_weights(p);
  const KktReport rep = verify_kkt(p, sol);
  CHECK(rep.stationarity_residual == Approx(0.0).margin(1e-14));
  CHECK(rep.primal_violation == Approx(0.0).margin(1e-14));
  CHECK(rep.complementarity_violation == Approx(0.0).margin(1e-14));
}

TEST_CASE("kkt residuals of the closed-form solution stay below 1e-10") {
  const Eigen::MatrixXd B = column({0.0, 1.0, 2.0});
  const Eigen::VectorXd target = Eigen::VectorXd::Constant(1, 1.5);
  BalanceProblem p = make_problem(B, target, Eigen::VectorXd::Zero(1), false);
  const WeightSolution sol = oracle_solution(B, target);
  const KktReport rep = verify_kkt(p, sol);
  CHECK(rep.stationarity_residual <= 1e-10);
  CHECK(rep.primal_violation <= 1e-10);
  CHECK(rep.complementarity_violation <= 1e-10);
}

TEST_CASE("a perturbed solution is caught by the kkt check") {
  const Eigen::MatrixXd B = column({0.0, 1.0, 2.0});
  const Eigen::VectorXd target = Eigen::VectorXd::Constant(1, 1.5);
  BalanceProblem p = make_problem(B, target, Eigen::VectorXd::Zero(1), false);
  WeightSolution sol = oracle_solution(B, target);
  sol.weights(0) += 0.01;
  const KktReport rep = verify_kkt(p, sol);
  CHECK((rep.primal_violation > 1e-8 || rep.stationarity_residual > 1e-8));
}

TEST_CASE("dual reconstruction matches the weights on an equality instance") {
  BalanceProblem p = make_problem(column({0.0, 1.0, 2.0}), Eigen::VectorXd::Constant(1, 1.5),
                                  Eigen::VectorXd::Zero(1), false);
  const WeightSolution sol = solve_weights(p);
  const DualCheckResult res = dual_weights_check(p, sol);
  REQUIRE(res.applicable);
  CHECK(res.max_deviation <= 1e-8);
}

TEST_CASE("dual reconstruction is exact for the uniform trivial problem") {
  BalanceProblem p = make_problem(Eigen::MatrixXd(3, 0), Eigen::VectorXd(0),
                                  Eigen::VectorXd(0), true);
  const WeightSolution sol = solve_weights(p);
  const DualCheckResult res = dual_weights_check(p, sol);
  REQUIRE(res.applicable);
  CHECK(res.max_deviation == Approx(0.0).margin(1e-14));
}

TEST_CASE("dual reconstruction refuses solutions with a pinned weight") {
  // Exact balance at 3.0 forces w = (0, .1, .2, .3, .4): the first bound binds.
  BalanceProblem p = make_problem(column({0.0, 1.0, 2.0, 3.0, 4.0}),
                                  Eigen::VectorXd::Constant(1, 3.0),
                                  Eigen::VectorXd::Zero(1), true);
  const WeightSolution sol = solve_weights(p);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.weights(0) == Approx(0.0).margin(1e-10));
  const DualCheckResult res = dual_weights_check(p, sol);
  CHECK_FALSE(res.applicable);
  CHECK_FALSE(res.diagnostic.empty());
}

TEST_CASE("property: solver matches the oracle on random equality instances") {
  std::mt19937_64 rng(20260808u);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    RandomInstance inst = random_instance(rng, false, true);
    Eigen::VectorXd oracle;
    try {
      oracle = equality_oracle(inst.problem.B, inst.problem.target);
    } catch (const std::invalid_argument&) {
      continue;  // rank-deficient draw
    }
    const WeightSolution sol = solve_weights(inst.problem);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK((sol.weights - oracle).cwiseAbs().maxCoeff() <= 1e-7);
    const KktReport rep = verify_kkt(inst.problem, sol);
    CHECK(rep.pass(1e-8));
    const DualCheckResult dual = dual_weights_check(inst.problem, sol);
    REQUIRE(dual.applicable);
    CHECK(dual.max_deviation <= 1e-6);
    ++checked;
  }
  REQUIRE(checked > 80);
}

TEST_CASE("property: optimal solutions are feasible and kkt-clean") {
  std::mt19937_64 rng(98127451u);
  int optimal = 0;
  for (int trial = 0; trial < 150; ++trial) {
    RandomInstance inst = random_instance(rng, trial % 2 == 0, false);
    const WeightSolution sol = solve_weights(inst.problem);
    if (sol.status != SolveStatus::optimal) continue;
    ++optimal;
    CHECK(std::abs(sol.weights.sum() - 1.0) <= 1e-8);
    for (std::ptrdiff_t k = 0; k < inst.problem.terms(); ++k)
      CHECK(std::abs(sol.imbalances(k)) <= inst.problem.deltas.deltas(k) + 1e-8);
    if (inst.problem.nonnegative) CHECK(sol.weights.minCoeff() >= -1e-8);
    CHECK(verify_kkt(inst.problem, sol).pass(1e-8));
    // dispersion can never undercut the uniform floor
    CHECK(sol.objective >= 1.0 / static_cast<double>(inst.problem.units()) - 1e-12);
  }
  REQUIRE(optimal > 100);
}

TEST_CASE("property: widening tolerances never increases the objective") {
  std::mt19937_64 rng(555777u);
  for (int trial = 0; trial < 60; ++trial) {
    RandomInstance inst = random_instance(rng, trial % 2 == 0, false);
    if (inst.problem.terms() == 0) continue;
    const WeightSolution tight = solve_weights(inst.problem);
    BalanceProblem wide = inst.problem;
    wide.deltas.deltas *= 2.0;
    wide.deltas.deltas.array() += 0.05;
    const WeightSolution loose = solve_weights(wide);
    if (tight.status != SolveStatus::optimal || loose.status != SolveStatus::optimal) continue;
    CHECK(loose.objective <= tight.objective + 1e-9);
  }
}

TEST_CASE("property: uniform floor is attained exactly when uniform is feasible") {
  std::mt19937_64 rng(424242u);
  for (int trial = 0; trial < 60; ++trial) {
    RandomInstance inst = random_instance(rng, true, false);
    const WeightSolution sol = solve_weights(inst.problem);
    if (sol.status != SolveStatus::optimal) continue;
    const double m = static_cast<double>(inst.problem.units());
    const Eigen::VectorXd uniform_imb =
        inst.problem.B.colwise().mean().transpose() - inst.problem.target;
    const bool uniform_feasible =
        ((uniform_imb.cwiseAbs() - inst.problem.deltas.deltas).array() <= 1e-12).all();
    if (uniform_feasible)
      CHECK(sol.objective == Approx(1.0 / m).margin(1e-10));
    else
      CHECK(sol.objective > 1.0 / m);
  }
}

TEST_CASE("property: solving twice yields bitwise-identical weights") {
  std::mt19937_64 rng(31337u);
  for (int trial = 0; trial < 20; ++trial) {
    RandomInstance inst = random_instance(rng, trial % 2 == 0, trial % 3 == 0);
    const WeightSolution a = solve_weights(inst.problem);
    const WeightSolution b = solve_weights(inst.problem);
    REQUIRE(a.status == b.status);
    if (a.status != SolveStatus::optimal) continue;
    REQUIRE(a.weights.size() == b.weights.size());
    CHECK(std::memcmp(a.weights.data(), b.weights.data(),
                      sizeof(double) * static_cast<std::size_t>(a.weights.size())) == 0);
  }
}
