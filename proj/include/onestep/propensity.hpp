// Logistic models for study selection and treatment assignment, and the
// classical two-step multiplicative weights built from them: inverse
// probability for generalization, inverse odds for transportation.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "onestep/data.hpp"

namespace onestep {

inline double expit(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

struct LogisticSettings {
  double gradient_tol = 1e-8;    // max-norm of the score at convergence
  double separation_cap = 30.0;  // coefficient norm treated as separation
  int max_iterations = 100;
};

struct LogisticModel {
  Eigen::VectorXd coefficients;  // intercept first
  bool converged = false;
  double final_gradient_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string diagnostic;
};

// Newton iterations on the binomial log-likelihood with an intercept and
// step halving when a step overshoots. The fit runs on internally
// standardized covariates (the MLE is affine-equivariant, so the returned
// original-scale coefficients are unchanged); the separation cap and the
// gradient tolerance both apply on that scale, which keeps them meaningful
// for covariates of any magnitude. Perfect separation is reported, not
// thrown, so simulation replications can record the failure and move on.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const LogisticSettings& settings = {}) {
  const std::ptrdiff_t n = X.rows();
  const std::ptrdiff_t p = X.cols() + 1;
  if (y.size() != n) throw std::invalid_argument("fit_logistic: X/y length mismatch");
  if (n < p + 1) throw std::invalid_argument("fit_logistic: need at least p+1 observations");
  std::ptrdiff_t ones = 0;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) throw std::invalid_argument("fit_logistic: y must be 0/1");
    if (y(i) == 1.0) ++ones;
  }
  if (ones == 0 || ones == n)
    throw std::invalid_argument("fit_logistic: y contains a single class");

  Eigen::VectorXd center = Eigen::VectorXd::Zero(p - 1);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p - 1);
  Eigen::MatrixXd design(n, p);
  design.col(0).setConstant(1.0);
  for (std::ptrdiff_t j = 0; j + 1 < p; ++j) {
    center(j) = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - center(j)).square().mean());
    scale(j) = sd > 0.0 ? sd : 1.0;
    design.col(j + 1) = (X.col(j).array() - center(j)) / scale(j);
  }

  // Rank check up front so a collinear design names its column instead of
  // producing an unstable fit.
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-8);
    if (qr.rank() < p) {
      const auto perm = qr.colsPermutation().indices();
      const std::ptrdiff_t dependent = perm(p - 1);
      throw std::invalid_argument(
          "fit_logistic: rank-deficient design (column " +
          (dependent == 0 ? std::string("intercept") : std::to_string(dependent)) + ")");
    }
  }

  auto log_likelihood = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = design * beta;
    double ll = 0.0;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      // log(1 + exp(eta)) computed stably
      const double a = eta(i);
      ll += y(i) * a - (a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)));
    }
    return ll;
  };

  // The linear predictor strictly ranking the classes certifies separation:
  // the likelihood then increases without bound along that direction and no
  // maximizer exists, even if the gradient is already tiny numerically.
  auto strictly_separated = [&](const Eigen::VectorXd& eta) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::ptrdiff_t i = 0; i < n; ++i)
      (y(i) == 1.0 ? lo = std::min(lo, eta(i)) : hi = std::max(hi, eta(i)));
    return lo > hi;
  };

  LogisticModel model;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto unstandardized = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd out(p);
    out.tail(p - 1) = b.tail(p - 1).array() / scale.array();
    out(0) = b(0) - out.tail(p - 1).dot(center);
    return out;
  };

  double ll = log_likelihood(beta);
  for (int iter = 1; iter <= settings.max_iterations; ++iter) {
    model.iterations = iter;
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd mu(n), irls_w(n);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      mu(i) = expit(eta(i));
      irls_w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const Eigen::VectorXd gradient = design.transpose() * (y - mu);
    model.final_gradient_norm = gradient.cwiseAbs().maxCoeff();
    if (strictly_separated(eta)) {
      model.coefficients = unstandardized(beta);
      model.diagnostic = "separation detected: fitted predictor splits the classes";
      return model;
    }
    if (model.final_gradient_norm <= settings.gradient_tol) {
      model.coefficients = unstandardized(beta);
      model.converged = true;
      return model;
    }
    const Eigen::MatrixXd hessian = design.transpose() * irls_w.asDiagonal() * design;
    const Eigen::VectorXd step = hessian.ldlt().solve(gradient);

    double stride = 1.0;
    Eigen::VectorXd proposal = beta + step;
    double ll_new = log_likelihood(proposal);
    int halvings = 0;
    // accept steps that hold the likelihood within rounding noise; only a
    // genuine overshoot is halved
    const double slack = 1e-10 * (1.0 + std::abs(ll));
    while (ll_new < ll - slack && halvings < 30) {
      stride *= 0.5;
      proposal = beta + stride * step;
      ll_new = log_likelihood(proposal);
      ++halvings;
    }
    beta = proposal;
    ll = ll_new;

    if (beta.norm() > settings.separation_cap) {
      model.coefficients = unstandardized(beta);
      model.diagnostic = "separation suspected: standardized coefficient norm exceeded " +
                         std::to_string(settings.separation_cap);
      return model;
    }
  }
  model.coefficients = unstandardized(beta);
  model.diagnostic = "no convergence within iteration limit";
  return model;
}

inline Eigen::VectorXd predict_prob(const LogisticModel& model, const Eigen::MatrixXd& X) {
  if (!model.converged) throw std::invalid_argument("predict_prob: model did not converge");
  if (X.cols() + 1 != model.coefficients.size())
    throw std::invalid_argument("predict_prob: dimension mismatch");
  Eigen::VectorXd probs(X.rows());
  for (std::ptrdiff_t i = 0; i < X.rows(); ++i)
    probs(i) = expit(model.coefficients(0) + X.row(i).dot(model.coefficients.tail(X.cols())));
  return probs;
}

enum class WeightMode { generalize, transport };

struct TwoStepWeights {
  Eigen::VectorXd treated_weights;  // normalized over Z=1 rows, in row order
  Eigen::VectorXd control_weights;  // normalized over Z=0 rows
  std::vector<std::ptrdiff_t> treated_rows;
  std::vector<std::ptrdiff_t> control_rows;
  WeightMode mode = WeightMode::generalize;
  LogisticModel selection_model;
  std::optional<LogisticModel> treatment_model;  // absent when e is known
};

struct TwoStepFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Either a covariate-column list for fitting the treatment model, or a known
// constant assignment probability (randomized designs).
using TreatmentSpec = std::variant<std::vector<int>, double>;

namespace detail {

inline Eigen::MatrixXd pick_columns(const Eigen::MatrixXd& X, const std::vector<int>& cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<std::ptrdiff_t>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<std::ptrdiff_t>(j)) = X.col(cols[j]);
  return out;
}

inline double clip_probability(double p) {
  return std::min(std::max(p, 1e-6), 1.0 - 1e-6);
}

}  // namespace detail

// Classical two-step construction on a nested cohort: fit selection on the
// full cohort, treatment on the selected units (or use a known constant),
// invert and multiply, then Hajek-normalize within each treatment group.
inline TwoStepWeights two_step_weights(const StudyDataset& ds,
                                       const std::vector<int>& selection_covariates,
                                       const TreatmentSpec& treatment, WeightMode mode,
                                       const LogisticSettings& settings = {}) {
  if (!ds.selection)
    throw std::invalid_argument("two_step_weights: dataset has no selection column");
  if (ds.has_missing())
    throw std::invalid_argument("two_step_weights: impute covariates first");

  const Eigen::MatrixXd Xsel = detail::pick_columns(ds.covariates, selection_covariates);
  TwoStepWeights out;
  out.mode = mode;
  out.selection_model = fit_logistic(Xsel, *ds.selection, settings);
  if (!out.selection_model.converged)
    throw TwoStepFailure("selection model: " + out.selection_model.diagnostic);

  out.treated_rows = ds.group_rows(1);
  out.control_rows = ds.group_rows(0);
  const auto selected = ds.selected_rows();

  Eigen::VectorXd pi_all = predict_prob(out.selection_model, Xsel);

  Eigen::VectorXd e_hat(ds.n());
  if (std::holds_alternative<double>(treatment)) {
    const double e = std::get<double>(treatment);
    if (e <= 0.0 || e >= 1.0)
      throw std::invalid_argument("two_step_weights: known e must lie in (0,1)");
    e_hat.setConstant(e);
  } else {
    const auto& cols = std::get<std::vector<int>>(treatment);
    Eigen::MatrixXd Xt(static_cast<std::ptrdiff_t>(selected.size()),
                       static_cast<std::ptrdiff_t>(cols.size()));
    Eigen::VectorXd z(static_cast<std::ptrdiff_t>(selected.size()));
    for (std::size_t r = 0; r < selected.size(); ++r) {
      for (std::size_t j = 0; j < cols.size(); ++j)
        Xt(static_cast<std::ptrdiff_t>(r), static_cast<std::ptrdiff_t>(j)) =
            ds.covariates(selected[r], cols[j]);
      z(static_cast<std::ptrdiff_t>(r)) = ds.treatment(selected[r]);
    }
    out.treatment_model = fit_logistic(Xt, z, settings);
    if (!out.treatment_model->converged)
      throw TwoStepFailure("treatment model: " + out.treatment_model->diagnostic);
    const Eigen::VectorXd e_sel = predict_prob(*out.treatment_model, Xt);
    e_hat.setConstant(std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < selected.size(); ++r)
      e_hat(selected[r]) = e_sel(static_cast<std::ptrdiff_t>(r));
  }

  auto raw_weight = [&](std::ptrdiff_t i, bool treated) {
    const double pi = detail::clip_probability(pi_all(i));
    const double e = detail::clip_probability(e_hat(i));
    const double assign = treated ? e : 1.0 - e;
    const double numerator = mode == WeightMode::transport ? 1.0 - pi : 1.0;
    return numerator / (pi * assign);
  };

  auto normalize = [](Eigen::VectorXd& w) {
    const double total = w.sum();
    if (!(total > 0.0) || !w.allFinite())
      throw TwoStepFailure("two-step weights did not normalize (degenerate probabilities)");
    w /= total;
  };

  out.treated_weights.resize(static_cast<std::ptrdiff_t>(out.treated_rows.size()));
  for (std::size_t r = 0; r < out.treated_rows.size(); ++r)
    out.treated_weights(static_cast<std::ptrdiff_t>(r)) = raw_weight(out.treated_rows[r], true);
  out.control_weights.resize(static_cast<std::ptrdiff_t>(out.control_rows.size()));
  for (std::size_t r = 0; r < out.control_rows.size(); ++r)
    out.control_weights(static_cast<std::ptrdiff_t>(r)) = raw_weight(out.control_rows[r], false);
  normalize(out.treated_weights);
  normalize(out.control_weights);
  return out;
}

}  // namespace onestep
