// Minimum-dispersion balancing weights for one treatment group:
//
//   minimize    sum_i w_i^2
//   subject to  sum_i w_i = 1
//               |sum_i w_i B(X_i)_k - target_k| <= delta_k,  k = 1..K
//               w_i >= 0                                     (optional)
//
// Solved with a dual active-set method (Goldfarb-Idnani). The Hessian is
// twice the identity, so the problem is the Euclidean projection of the
// origin onto the constraint polyhedron; the unconstrained minimizer w = 0
// is the natural warm start and no Cholesky factor is needed.
//
// Dual convention, fixed throughout the library:
//
//   2 w_i - nu + sum_k lambda_k B_ik - sigma_i = 0
//
// where nu is the normalization dual, lambda_k the balance duals
// (lambda_k > 0 means the upper constraint is active, lambda_k < 0 the
// lower), and sigma_i >= 0 the bound duals when non-negativity is on.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "onestep/basis.hpp"

namespace onestep {

enum class SolveStatus { optimal, infeasible, max_iterations };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iterations: return "max-iterations";
  }
  return "?";
}

struct SolverSettings {
  double feasibility_tol = 1e-8;
  double optimality_tol = 1e-8;
  int max_iterations = 100000;

  void validate() const {
    if (feasibility_tol <= 0.0 || optimality_tol <= 0.0 || max_iterations <= 0)
      throw std::invalid_argument("solver settings must be positive");
  }
};

// One treatment group's instance of the balance optimization.
struct BalanceProblem {
  Eigen::MatrixXd B;        // m x K basis values for the group's units
  Eigen::VectorXd target;   // K target means
  ToleranceVector deltas;   // K tolerances, 0 = exact balance
  bool nonnegative = true;
  bool normalized = true;   // always true in this artifact

  std::ptrdiff_t units() const { return B.rows(); }
  std::ptrdiff_t terms() const { return B.cols(); }

  void validate() const {
    if (B.rows() < 1) throw std::invalid_argument("balance problem needs at least one unit");
    if (target.size() != B.cols()) throw std::invalid_argument("target length != basis columns");
    deltas.validate(B.cols());
    if (!B.allFinite() || !target.allFinite())
      throw std::invalid_argument("non-finite basis or target entry");
    if (!normalized) throw std::invalid_argument("the sum-to-one constraint is not optional here");
  }
};

struct WeightSolution {
  Eigen::VectorXd weights;
  Eigen::VectorXd duals;          // K balance duals, sign encodes active side
  double normalization_dual = 0;  // nu in the stationarity identity above
  Eigen::VectorXd imbalances;     // achieved weighted mean minus target
  double objective = 0;           // sum of squared weights
  SolveStatus status = SolveStatus::infeasible;
  int iterations = 0;
  // When infeasible: smallest uniform inflation of all deltas that would make
  // the uniform-weight point feasible. A hint for the user, not a certificate.
  double infeasibility_hint = 0;
};

struct KktReport {
  double stationarity_residual = 0;
  double primal_violation = 0;
  double complementarity_violation = 0;

  bool pass(double tol) const {
    return stationarity_residual <= tol && primal_violation <= tol &&
           complementarity_violation <= tol;
  }
};

namespace detail {

// Active-set bookkeeping for the Goldfarb-Idnani iteration. Constraints are
// identified by integer ids:
//   0                    normalization (equality)
//   1 + 2k               balance k, upper side  (-B_k^T w >= -(t_k + d_k))
//   1 + 2k + 1           balance k, lower side  ( B_k^T w >=  t_k - d_k )
//   1 + 2K + i           bound w_i >= 0
// Balance constraints with delta == 0 enter through the upper id as
// equalities (both sides coincide).
struct GiState {
  const BalanceProblem* p = nullptr;
  std::ptrdiff_t m = 0, K = 0;
  Eigen::MatrixXd J;  // m x m orthogonal; first q columns span active normals
  Eigen::MatrixXd R;  // q x q upper triangular factor of the active normals
  std::vector<int> active;
  std::vector<double> u;  // duals of active constraints (GI scale)
  Eigen::VectorXd x, d, z, r, np;
  std::ptrdiff_t np_unit = -1;  // set when np is the unit vector e_i
  double r_norm = 1.0;

  explicit GiState(const BalanceProblem& prob)
      : p(&prob), m(prob.units()), K(prob.terms()) {
    J = Eigen::MatrixXd::Identity(m, m);
    R = Eigen::MatrixXd::Zero(m, m);
    x = Eigen::VectorXd::Zero(m);
    d.resize(m);
    z.resize(m);
    r.resize(m);
    np.resize(m);
  }

  std::ptrdiff_t q() const { return static_cast<std::ptrdiff_t>(active.size()); }

  bool is_equality(int id) const {
    if (id == 0) return true;
    if (id <= 2 * K && (id - 1) % 2 == 0) return p->deltas.deltas((id - 1) / 2) == 0.0;
    return false;
  }

  // Fills np with the constraint normal and returns its right-hand side b
  // (constraint reads np^T x >= b, or == b for equalities).
  double normal(int id) {
    np_unit = -1;
    if (id == 0) {
      np.setConstant(1.0);
      return 1.0;
    }
    if (id <= 2 * K) {
      const std::ptrdiff_t k = (id - 1) / 2;
      if ((id - 1) % 2 == 0) {
        np = -p->B.col(k);
        return -(p->target(k) + p->deltas.deltas(k));
      }
      np = p->B.col(k);
      return p->target(k) - p->deltas.deltas(k);
    }
    np.setZero();
    np_unit = id - 1 - 2 * K;
    np(np_unit) = 1.0;
    return 0.0;
  }

  double slack(int id) {
    if (id == 0) return x.sum() - 1.0;
    if (id <= 2 * K) {
      const std::ptrdiff_t k = (id - 1) / 2;
      const double v = p->B.col(k).dot(x);
      if ((id - 1) % 2 == 0) return -(v) + p->target(k) + p->deltas.deltas(k);
      return v - (p->target(k) - p->deltas.deltas(k));
    }
    return x(id - 1 - 2 * K);
  }

  // d = J^T np, z = J2 d2, r = R^{-1} d1
  void compute_step_directions() {
    if (np_unit >= 0)
      d = J.row(np_unit).transpose();
    else
      d.noalias() = J.transpose() * np;
    const std::ptrdiff_t nq = q();
    if (nq < m)
      z.noalias() = J.rightCols(m - nq) * d.tail(m - nq);
    else
      z.setZero();
    if (nq > 0) {
      r.head(nq) = d.head(nq);
      R.topLeftCorner(nq, nq)
          .triangularView<Eigen::Upper>()
          .solveInPlace(r.head(nq));
    }
  }

  // Append the constraint whose directions were just computed. Returns false
  // if the normal is linearly dependent on the active set.
  bool add(int id, double dual) {
    const std::ptrdiff_t nq = q();
    // Rotate d's tail to a single entry at position nq.
    for (std::ptrdiff_t j = m - 1; j > nq; --j) {
      const double cc = d(j - 1), ss = d(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d(j - 1) = h;
      d(j) = 0.0;
      const double c = cc / h, s = ss / h;
      // post-multiply J by the Givens rotation acting on columns j-1, j
      for (std::ptrdiff_t row = 0; row < m; ++row) {
        const double t1 = J(row, j - 1), t2 = J(row, j);
        J(row, j - 1) = c * t1 + s * t2;
        J(row, j) = -s * t1 + c * t2;
      }
    }
    active.push_back(id);
    u.push_back(dual);
    R.col(nq).head(nq + 1) = d.head(nq + 1);
    r_norm = std::max(r_norm, std::abs(d(nq)));
    return std::abs(d(nq)) > 1e-12 * r_norm;
  }

  // Remove the active constraint at position l, restoring triangular R.
  void drop(std::ptrdiff_t l) {
    const std::ptrdiff_t nq = q();
    for (std::ptrdiff_t i = l; i < nq - 1; ++i) {
      active[static_cast<std::size_t>(i)] = active[static_cast<std::size_t>(i + 1)];
      u[static_cast<std::size_t>(i)] = u[static_cast<std::size_t>(i + 1)];
      R.col(i) = R.col(i + 1);
    }
    active.pop_back();
    u.pop_back();
    // R now has a subdiagonal entry in columns l..q-2; rotate it away.
    for (std::ptrdiff_t i = l; i < nq - 1; ++i) {
      const double cc = R(i, i), ss = R(i + 1, i);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      const double c = cc / h, s = ss / h;
      R(i, i) = h;
      R(i + 1, i) = 0.0;
      for (std::ptrdiff_t col = i + 1; col < nq - 1; ++col) {
        const double t1 = R(i, col), t2 = R(i + 1, col);
        R(i, col) = c * t1 + s * t2;
        R(i + 1, col) = -s * t1 + c * t2;
      }
      // pre-multiplying R by G^T requires post-multiplying J by G
      for (std::ptrdiff_t row = 0; row < m; ++row) {
        const double t1 = J(row, i), t2 = J(row, i + 1);
        J(row, i) = c * t1 + s * t2;
        J(row, i + 1) = -s * t1 + c * t2;
      }
    }
    R.col(nq - 1).setZero();
  }
};

}  // namespace detail

// Smallest uniform inflation of the tolerances that admits uniform weights.
inline double uniform_relaxation_hint(const BalanceProblem& p) {
  const double m = static_cast<double>(p.units());
  double hint = 0.0;
  for (std::ptrdiff_t k = 0; k < p.terms(); ++k) {
    const double imb = p.B.col(k).sum() / m - p.target(k);
    hint = std::max(hint, std::abs(imb) - p.deltas.deltas(k));
  }
  return std::max(hint, 0.0);
}

inline WeightSolution solve_weights(const BalanceProblem& p, const SolverSettings& s = {}) {
  p.validate();
  s.validate();
  const std::ptrdiff_t m = p.units();
  const std::ptrdiff_t K = p.terms();

  detail::GiState gi(p);
  WeightSolution sol;
  sol.weights = Eigen::VectorXd::Zero(m);
  sol.duals = Eigen::VectorXd::Zero(K);
  sol.imbalances = Eigen::VectorXd::Zero(K);

  auto fail = [&](SolveStatus st, int iters) {
    sol.status = st;
    sol.iterations = iters;
    sol.infeasibility_hint = st == SolveStatus::infeasible ? uniform_relaxation_hint(p) : 0.0;
    return sol;
  };

  int iterations = 0;

  // Phase 0: equality constraints (normalization plus exact-balance terms).
  std::vector<int> equalities{0};
  for (std::ptrdiff_t k = 0; k < K; ++k)
    if (p.deltas.deltas(k) == 0.0) equalities.push_back(static_cast<int>(1 + 2 * k));

  for (int id : equalities) {
    ++iterations;
    const double b = gi.normal(id);
    gi.compute_step_directions();
    const double slack = gi.np.dot(gi.x) - b;
    const double z2 = gi.z.squaredNorm();
    if (z2 <= 1e-24) {
      // Normal lies in the span of the active set: consistent if already satisfied.
      if (std::abs(slack) > s.feasibility_tol) return fail(SolveStatus::infeasible, iterations);
      continue;
    }
    const double t = -slack / gi.z.dot(gi.np);
    gi.x += t * gi.z;
    const std::ptrdiff_t nq = gi.q();
    for (std::ptrdiff_t j = 0; j < nq; ++j) gi.u[static_cast<std::size_t>(j)] -= t * gi.r(j);
    if (!gi.add(id, t)) return fail(SolveStatus::infeasible, iterations);
  }

  const int total = static_cast<int>(1 + 2 * K + (p.nonnegative ? m : 0));
  // Violation threshold for choosing constraints to activate; stricter than
  // the reported feasibility tolerance so the final point clears it cleanly.
  const double vtol = std::min(1e-10, s.feasibility_tol);

  while (true) {
    if (++iterations > s.max_iterations) return fail(SolveStatus::max_iterations, iterations);

    // Most violated inactive inequality.
    int chosen = -1;
    double worst = -vtol;
    for (int id = 1; id < total; ++id) {
      if (gi.is_equality(id)) continue;
      bool is_active = false;
      for (int a : gi.active)
        if (a == id) { is_active = true; break; }
      if (is_active) continue;
      const double sl = gi.slack(id);
      if (sl < worst) {
        worst = sl;
        chosen = id;
      }
    }
    if (chosen < 0) break;  // feasible and therefore optimal

    gi.normal(chosen);  // fills np
    double u_plus = 0.0;
    double slack = worst;

    while (true) {
      if (++iterations > s.max_iterations) return fail(SolveStatus::max_iterations, iterations);
      gi.compute_step_directions();

      // Partial step: first active inequality whose dual would cross zero.
      double t1 = std::numeric_limits<double>::infinity();
      std::ptrdiff_t leave = -1;
      for (std::ptrdiff_t j = 0; j < gi.q(); ++j) {
        if (gi.is_equality(gi.active[static_cast<std::size_t>(j)])) continue;
        if (gi.r(j) > 1e-14) {
          const double cand = gi.u[static_cast<std::size_t>(j)] / gi.r(j);
          if (cand < t1) {
            t1 = cand;
            leave = j;
          }
        }
      }
      // Full step to the constraint boundary.
      const double zTn = gi.z.dot(gi.np);
      const bool z_zero = gi.z.squaredNorm() <= 1e-24;
      const double t2 = z_zero ? std::numeric_limits<double>::infinity() : -slack / zTn;

      const double t = std::min(t1, t2);
      if (!std::isfinite(t)) return fail(SolveStatus::infeasible, iterations);

      if (!std::isfinite(t2)) {
        // Dual-only step: adjust multipliers and drop the blocking constraint.
        for (std::ptrdiff_t j = 0; j < gi.q(); ++j)
          gi.u[static_cast<std::size_t>(j)] -= t * gi.r(j);
        u_plus += t;
        gi.drop(leave);
        continue;
      }

      gi.x += t * gi.z;
      for (std::ptrdiff_t j = 0; j < gi.q(); ++j)
        gi.u[static_cast<std::size_t>(j)] -= t * gi.r(j);
      u_plus += t;

      if (t == t2) {
        if (!gi.add(chosen, u_plus)) {
          // Numerically dependent normal right at its boundary: treat the
          // constraint as satisfied without enlarging the factorization.
          gi.active.pop_back();
          gi.u.pop_back();
        }
        break;
      }
      gi.drop(leave);
      slack = gi.slack(chosen);
    }
  }

  // Map GI duals back to the library convention (factor 2 from the Hessian,
  // sign from the constraint orientation).
  sol.weights = gi.x;
  if (p.nonnegative) {
    // Bounds solve to machine zero, not exact zero; emit true zeros.
    for (std::ptrdiff_t i = 0; i < m; ++i)
      if (sol.weights(i) < 0.0) sol.weights(i) = 0.0;
  }
  for (std::ptrdiff_t j = 0; j < gi.q(); ++j) {
    const int id = gi.active[static_cast<std::size_t>(j)];
    const double uj = gi.u[static_cast<std::size_t>(j)];
    if (id == 0) {
      sol.normalization_dual = 2.0 * uj;
    } else if (id <= 2 * K) {
      const std::ptrdiff_t k = (id - 1) / 2;
      sol.duals(k) = ((id - 1) % 2 == 0) ? 2.0 * uj : -2.0 * uj;
    }
    // bound duals are implicit in the stationarity identity
  }
  sol.imbalances = p.B.transpose() * sol.weights - p.target;
  sol.objective = sol.weights.squaredNorm();
  sol.status = SolveStatus::optimal;
  sol.iterations = iterations;
  return sol;
}

// Closed-form oracle for delta = 0, no non-negativity: minimize sum w^2
// subject to sum w = 1 and B^T w = target, via the dense KKT system
//   [ A A^T ] y = c,  w = A^T y,  A = [1^T; B^T],  c = (1, target).
// Deliberately independent of the active-set path; used to cross-check it.
inline Eigen::VectorXd equality_oracle(const Eigen::MatrixXd& B, const Eigen::VectorXd& target) {
  const std::ptrdiff_t m = B.rows();
  const std::ptrdiff_t K = B.cols();
  if (m < 1) throw std::invalid_argument("oracle needs at least one unit");
  if (target.size() != K) throw std::invalid_argument("oracle: target length mismatch");
  Eigen::MatrixXd A(K + 1, m);
  A.row(0).setConstant(1.0);
  A.bottomRows(K) = B.transpose();
  Eigen::VectorXd c(K + 1);
  c(0) = 1.0;
  c.tail(K) = target;
  const Eigen::MatrixXd gram = A * A.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  if (!lu.isInvertible()) throw std::invalid_argument("oracle: rank-deficient constraints");
  return A.transpose() * lu.solve(c);
}

// KKT residuals of a solution under the library's dual convention.
inline KktReport verify_kkt(const BalanceProblem& p, const WeightSolution& sol) {
  if (sol.status != SolveStatus::optimal)
    throw std::invalid_argument("verify_kkt requires an optimal solution");
  KktReport rep;
  const Eigen::VectorXd& w = sol.weights;

  // Primal feasibility.
  rep.primal_violation = std::abs(w.sum() - 1.0);
  const Eigen::VectorXd imb = p.B.transpose() * w - p.target;
  for (std::ptrdiff_t k = 0; k < p.terms(); ++k)
    rep.primal_violation =
        std::max(rep.primal_violation, std::abs(imb(k)) - p.deltas.deltas(k));
  if (p.nonnegative)
    rep.primal_violation = std::max(rep.primal_violation, -w.minCoeff());

  // Stationarity: sigma_i := 2 w_i - nu + (B lambda)_i must vanish (no bound)
  // or be a valid bound multiplier (non-negative, complementary with w_i).
  const Eigen::VectorXd sigma =
      2.0 * w.array() - sol.normalization_dual + (p.B * sol.duals).array();
  for (std::ptrdiff_t i = 0; i < p.units(); ++i) {
    if (p.nonnegative) {
      rep.stationarity_residual = std::max(rep.stationarity_residual, -sigma(i));
      rep.complementarity_violation =
          std::max(rep.complementarity_violation, std::abs(sigma(i) * w(i)));
    } else {
      rep.stationarity_residual = std::max(rep.stationarity_residual, std::abs(sigma(i)));
    }
  }

  // Balance-dual complementarity: a positive lambda_k demands the upper
  // boundary, a negative one the lower.
  for (std::ptrdiff_t k = 0; k < p.terms(); ++k) {
    const double up = std::max(sol.duals(k), 0.0);
    const double lo = std::max(-sol.duals(k), 0.0);
    rep.complementarity_violation = std::max(
        rep.complementarity_violation, up * std::abs(imb(k) - p.deltas.deltas(k)));
    rep.complementarity_violation = std::max(
        rep.complementarity_violation, lo * std::abs(imb(k) + p.deltas.deltas(k)));
  }
  return rep;
}

struct DualCheckResult {
  bool applicable = false;
  double max_deviation = std::numeric_limits<double>::quiet_NaN();
  std::string diagnostic;
};

// Reconstruct the weights from the dual solution and report the worst
// deviation. For the squared dispersion the conjugacy construction gives an
// affine reconstruction rho'(t) = -t/2 evaluated at B_i^T lambda - nu; the
// identity only holds where the non-negativity bound is slack, so solutions
// with a weight pinned at zero are refused.
inline DualCheckResult dual_weights_check(const BalanceProblem& p, const WeightSolution& sol,
                                          double pin_tol = 1e-9) {
  DualCheckResult res;
  if (sol.status != SolveStatus::optimal) {
    res.diagnostic = "solution is not optimal";
    return res;
  }
  if (p.nonnegative && sol.weights.minCoeff() <= pin_tol) {
    res.diagnostic =
        "non-negativity is active (a weight is pinned at zero); the affine "
        "dual reconstruction does not hold there";
    return res;
  }
  res.applicable = true;
  const Eigen::VectorXd t = (p.B * sol.duals).array() - sol.normalization_dual;
  res.max_deviation = (sol.weights + t / 2.0).cwiseAbs().maxCoeff();
  return res;
}

}  // namespace onestep
