#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lmest/error.hpp"
#include "lmest/types.hpp"

namespace lmest {

// Weighted multinomial logit: maximize sum_i sum_u w_iu log p_u(x_i; B).
struct WeightedLogitProblem {
  Eigen::MatrixXd design;   // N x q, intercept added internally
  Eigen::MatrixXd weights;  // N x k fractional memberships
  int ref_class = 0;

  int k() const { return static_cast<int>(weights.cols()); }
  int q() const { return static_cast<int>(design.cols()); }

  void validate() const {
    require(design.rows() == weights.rows(), "design and weights disagree on observation count");
    require(k() >= 2, "a logit problem needs at least two classes");
    require(ref_class >= 0 && ref_class < k(), "reference class out of range");
    require((weights.array() >= 0.0).all() && weights.allFinite(), "weights must be finite and >= 0");
    require(weights.sum() > 0.0, "at least one observation needs positive weight");
    require(design.allFinite(), "design must be finite");
  }
};

struct LogitSolverOptions {
  int max_iter = 500;
  double grad_tol = 1e-8;
  // Difference-layout transitions are only required to reach this.
  double difference_grad_tol = 1e-6;
  // Coefficient magnitude treated as divergence (separation).
  double divergence = 30.0;
  double ridge = 1e-8;
};

struct LogitFit {
  Eigen::MatrixXd coef;  // (1+q) x (k-1), columns = non-reference classes ascending
  double loglik = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

// Class index held by coefficient column c when `ref` is the reference.
inline int class_of_column(int c, int ref) { return c < ref ? c : c + 1; }

inline Eigen::VectorXd class_probabilities(const Eigen::MatrixXd& coef,
                                           const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                           int ref) {
  const int k = static_cast<int>(coef.cols()) + 1;
  Eigen::VectorXd eta(k);
  eta(ref) = 0.0;
  for (int c = 0; c < k - 1; ++c)
    eta(class_of_column(c, ref)) = coef(0, c) + x.dot(coef.col(c).tail(x.size()));
  const double m = eta.maxCoeff();
  eta = (eta.array() - m).exp();
  return eta / eta.sum();
}

namespace detail {

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& design) {
  Eigen::MatrixXd x(design.rows(), design.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(design.cols()) = design;
  return x;
}

// Objective, gradient and Hessian of one weighted multinomial logit with
// intercept-augmented design xt. The parameter vector is coef in
// column-major order. Passing nullptr skips the derivative.
inline double mlogit_eval(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& w, int ref,
                          const Eigen::MatrixXd& coef, Eigen::VectorXd* grad,
                          Eigen::MatrixXd* hess) {
  const Eigen::Index N = xt.rows(), p = xt.cols();
  const int k = static_cast<int>(w.cols());
  const int m = k - 1;
  Eigen::MatrixXd eta = xt * coef;  // N x m
  Eigen::MatrixXd prob(N, m);
  Eigen::VectorXd total = w.rowwise().sum();
  double f = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    double mx = 0.0;
    for (int c = 0; c < m; ++c) mx = std::max(mx, eta(i, c));
    double z = std::exp(-mx);
    for (int c = 0; c < m; ++c) z += std::exp(eta(i, c) - mx);
    const double lse = mx + std::log(z);
    if (total(i) > 0.0) {
      f += w(i, ref) * (-lse);
      for (int c = 0; c < m; ++c) {
        const double wc = w(i, class_of_column(c, ref));
        if (wc != 0.0) f += wc * (eta(i, c) - lse);
      }
    }
    for (int c = 0; c < m; ++c) prob(i, c) = std::exp(eta(i, c) - lse);
  }
  if (grad) {
    grad->resize(p * m);
    for (int c = 0; c < m; ++c) {
      Eigen::VectorXd resid = w.col(class_of_column(c, ref)) - total.cwiseProduct(prob.col(c));
      grad->segment(c * p, p) = xt.transpose() * resid;
    }
  }
  if (hess) {
    hess->resize(p * m, p * m);
    for (int c = 0; c < m; ++c) {
      for (int d = c; d < m; ++d) {
        Eigen::VectorXd s = total.cwiseProduct(prob.col(c)).cwiseProduct(
            (c == d ? 1.0 : 0.0) * Eigen::VectorXd::Ones(N) - prob.col(d));
        Eigen::MatrixXd block = -(xt.transpose() * s.asDiagonal() * xt);
        hess->block(c * p, d * p, p, p) = block;
        if (d != c) hess->block(d * p, c * p, p, p) = block.transpose();
      }
    }
  }
  return f;
}

// Solves (-H) delta = g; retries once with a ridge before giving up.
inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& hess, const Eigen::VectorXd& grad,
                                        double ridge, const std::string& tag) {
  Eigen::MatrixXd neg = -hess;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) neg.diagonal().array() += ridge * std::max(1.0, neg.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        (ldlt.vectorD().array() > 0.0).all()) {
      Eigen::VectorXd delta = ldlt.solve(grad);
      if (delta.allFinite()) return delta;
    }
  }
  fail(ErrorKind::Numerical, tag + "singular Hessian in the logit Newton step");
}

struct NewtonResult {
  Eigen::VectorXd theta;
  double objective = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

// Damped Newton ascent over a concave objective. `eval(theta, grad, hess)`
// returns the objective; grad/hess may be null. Steps are halved until the
// objective does not decrease.
template <class Eval>
NewtonResult newton_ascent(Eval&& eval, Eigen::VectorXd theta, const LogitSolverOptions& opts,
                           double grad_tol, double accept_tol, const std::string& tag) {
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  double f = eval(theta, &grad, &hess);
  if (!std::isfinite(f)) fail(ErrorKind::Numerical, tag + "non-finite logit objective");
  NewtonResult out;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const double gmax = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
    const Eigen::VectorXd delta = newton_direction(hess, grad, opts.ridge, tag);
    const double dmax = delta.size() ? delta.cwiseAbs().maxCoeff() : 0.0;
    // A small gradient with a large Newton step means the objective is
    // flattening out towards infinity (separation): keep stepping so the
    // divergence check fires. Otherwise take one last polishing step.
    const bool small = gmax < grad_tol && dmax <= 1e-3;
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    for (int h = 0; h < 60; ++h, step *= 0.5) {
      trial = theta + step * delta;
      const double f_trial = eval(trial, nullptr, nullptr);
      if (std::isfinite(f_trial) && f_trial >= f - 1e-13 * (1.0 + std::abs(f))) {
        accepted = true;
        break;
      }
    }
    if (!accepted || trial == theta) break;  // flat to machine precision; judged below
    theta = trial;
    f = eval(theta, &grad, &hess);
    if (small) {
      ++it;
      break;
    }
    if (theta.size() && theta.cwiseAbs().maxCoeff() > opts.divergence)
      fail(ErrorKind::Separation, tag + "logit coefficients diverge past magnitude " +
                                      std::to_string(static_cast<int>(opts.divergence)) +
                                      " (separation)");
  }
  out.theta = std::move(theta);
  out.objective = f;
  out.iterations = it;
  out.grad_norm = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  // Newton only stalls above tolerance on a numerically flat objective;
  // accept when the gradient is at rounding level for the objective's scale.
  if (out.grad_norm >= accept_tol && out.grad_norm > 1e-11 * (1.0 + std::abs(f)))
    fail(ErrorKind::Convergence, tag + "logit solver did not converge, gradient max-norm " +
                                     std::to_string(out.grad_norm));
  return out;
}

inline void check_class_support(const Eigen::MatrixXd& w, const std::string& tag) {
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    if (!(w.col(c).sum() > 0.0))
      fail(ErrorKind::Separation, tag + "class " + std::to_string(c + 1) +
                                      " has zero total weight; its logit diverges (separation)");
}

}  // namespace detail

inline double mlogit_objective(const WeightedLogitProblem& problem, const Eigen::MatrixXd& coef) {
  return detail::mlogit_eval(detail::with_intercept(problem.design), problem.weights,
                             problem.ref_class, coef, nullptr, nullptr);
}

inline Eigen::MatrixXd mlogit_gradient(const WeightedLogitProblem& problem,
                                       const Eigen::MatrixXd& coef) {
  Eigen::VectorXd g;
  detail::mlogit_eval(detail::with_intercept(problem.design), problem.weights, problem.ref_class,
                      coef, &g, nullptr);
  return Eigen::Map<Eigen::MatrixXd>(g.data(), coef.rows(), coef.cols());
}

/// Newton maximization of the weighted multinomial log-likelihood.
/// `start` (optional) warm-starts the coefficients.
inline LogitFit fit_weighted_mlogit(const WeightedLogitProblem& problem,
                                    const LogitSolverOptions& opts = {},
                                    const Eigen::MatrixXd* start = nullptr,
                                    const std::string& tag = "") {
  problem.validate();
  detail::check_class_support(problem.weights, tag);
  const Eigen::Index p = problem.q() + 1, m = problem.k() - 1;
  const Eigen::MatrixXd xt = detail::with_intercept(problem.design);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p * m);
  if (start) {
    require(start->rows() == p && start->cols() == m, "logit start has the wrong shape");
    theta = Eigen::Map<const Eigen::VectorXd>(start->data(), p * m);
  }
  auto eval = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
    Eigen::Map<const Eigen::MatrixXd> coef(th.data(), p, m);
    return detail::mlogit_eval(xt, problem.weights, problem.ref_class, coef, g, h);
  };
  const auto res = detail::newton_ascent(eval, theta, opts, opts.grad_tol, opts.grad_tol, tag);
  LogitFit fit;
  fit.coef = Eigen::Map<const Eigen::MatrixXd>(res.theta.data(), p, m);
  fit.loglik = res.objective;
  fit.iterations = res.iterations;
  fit.grad_norm = res.grad_norm;
  return fit;
}

//---------------------------------------------------------------------------//
// Transition logits. Each observation is a (unit, occasion t >= 2) pair with
// covariate row design(m, .) and, for every origin state u, a length-k
// weight vector weights[u](m, .) of expected transitions u -> v.
struct TransitionProblem {
  Eigen::MatrixXd design;                // M x q2
  std::vector<Eigen::MatrixXd> weights;  // k matrices, each M x k

  int k() const { return static_cast<int>(weights.size()); }
  int q() const { return static_cast<int>(design.cols()); }

  void validate() const {
    require(k() >= 2, "transition logits need k >= 2");
    for (const auto& w : weights) {
      require(w.rows() == design.rows() && w.cols() == k(), "transition weights have the wrong shape");
      require((w.array() >= 0.0).all() && w.allFinite(), "transition weights must be finite and >= 0");
    }
    require(design.allFinite(), "design must be finite");
  }
};

struct PairwiseFit {
  std::vector<Eigen::MatrixXd> gamma;  // per origin, (1+q) x (k-1)
  double loglik = 0.0;
  std::vector<int> empty_rows;         // origins with no transition mass (left at start)
};

inline double pairwise_objective(const TransitionProblem& problem,
                                 const std::vector<Eigen::MatrixXd>& gamma) {
  const Eigen::MatrixXd xt = detail::with_intercept(problem.design);
  double f = 0.0;
  for (int u = 0; u < problem.k(); ++u)
    f += detail::mlogit_eval(xt, problem.weights[u], u, gamma[u], nullptr, nullptr);
  return f;
}

inline std::vector<Eigen::MatrixXd> pairwise_gradient(const TransitionProblem& problem,
                                                      const std::vector<Eigen::MatrixXd>& gamma) {
  const Eigen::MatrixXd xt = detail::with_intercept(problem.design);
  std::vector<Eigen::MatrixXd> out;
  for (int u = 0; u < problem.k(); ++u) {
    Eigen::VectorXd g;
    detail::mlogit_eval(xt, problem.weights[u], u, gamma[u], &g, nullptr);
    out.push_back(Eigen::Map<Eigen::MatrixXd>(g.data(), gamma[u].rows(), gamma[u].cols()));
  }
  return out;
}

/// Row-separable fit of the pairwise transition logits: one weighted logit
/// per origin u with the self-transition u as reference.
inline PairwiseFit fit_transition_pairwise(const TransitionProblem& problem,
                                           const LogitSolverOptions& opts = {},
                                           const std::vector<Eigen::MatrixXd>* start = nullptr) {
  problem.validate();
  const int k = problem.k();
  const Eigen::Index p = problem.q() + 1;
  const Eigen::MatrixXd xt = detail::with_intercept(problem.design);
  PairwiseFit out;
  for (int u = 0; u < k; ++u) {
    const Eigen::MatrixXd& w = problem.weights[u];
    Eigen::MatrixXd init = start ? (*start)[u] : Eigen::MatrixXd::Zero(p, k - 1);
    require(init.rows() == p && init.cols() == k - 1, "pairwise start has the wrong shape");
    if (!(w.sum() > 0.0)) {
      out.empty_rows.push_back(u);
      out.gamma.push_back(init);
      continue;
    }
    const std::string tag = "transition row from state " + std::to_string(u + 1) + ": ";
    detail::check_class_support(w, tag);
    auto eval = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
      Eigen::Map<const Eigen::MatrixXd> coef(th.data(), p, k - 1);
      return detail::mlogit_eval(xt, w, u, coef, g, h);
    };
    Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(init.data(), init.size());
    const auto res = detail::newton_ascent(eval, theta, opts, opts.grad_tol, opts.grad_tol, tag);
    out.gamma.push_back(Eigen::Map<const Eigen::MatrixXd>(res.theta.data(), p, k - 1));
    out.loglik += res.objective;
  }
  return out;
}

//---------------------------------------------------------------------------//
// Difference layout: logit(u -> v) = g0(u,v) + x'(g1_u - g1_v), g1_1 = 0.
// Packed parameter vector: the k(k-1) intercepts in (u, v != u) order, then
// the slope vectors g1_2..g1_k (q entries each).
struct DifferenceGamma {
  Eigen::MatrixXd intercept;  // k x k, diagonal 0
  Eigen::MatrixXd slope;      // q x k, column 0 zero
};

inline Eigen::VectorXd pack_difference(const DifferenceGamma& g) {
  const int k = static_cast<int>(g.intercept.rows());
  const int q = static_cast<int>(g.slope.rows());
  Eigen::VectorXd theta(k * (k - 1) + q * (k - 1));
  int idx = 0;
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v)
      if (v != u) theta(idx++) = g.intercept(u, v);
  for (int u = 1; u < k; ++u)
    for (int s = 0; s < q; ++s) theta(idx++) = g.slope(s, u);
  return theta;
}

inline DifferenceGamma unpack_difference(const Eigen::VectorXd& theta, int k, int q) {
  require(theta.size() == k * (k - 1) + q * (k - 1), "difference parameter vector has the wrong length");
  DifferenceGamma g{Eigen::MatrixXd::Zero(k, k), Eigen::MatrixXd::Zero(q, k)};
  int idx = 0;
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v)
      if (v != u) g.intercept(u, v) = theta(idx++);
  for (int u = 1; u < k; ++u)
    for (int s = 0; s < q; ++s) g.slope(s, u) = theta(idx++);
  return g;
}

namespace detail {

// Linear map from the packed difference parameters to the pairwise
// coefficients of origin row u (column-major (1+q) x (k-1)).
inline Eigen::MatrixXd difference_jacobian(int u, int k, int q) {
  const int p = q + 1;
  const int n_int = k * (k - 1);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(p * (k - 1), n_int + q * (k - 1));
  for (int v = 0; v < k; ++v) {
    if (v == u) continue;
    const int c = v < u ? v : v - 1;
    J(c * p, u * (k - 1) + c) = 1.0;
    for (int s = 0; s < q; ++s) {
      if (u > 0) J(c * p + 1 + s, n_int + (u - 1) * q + s) += 1.0;
      if (v > 0) J(c * p + 1 + s, n_int + (v - 1) * q + s) -= 1.0;
    }
  }
  return J;
}

inline double difference_eval(const Eigen::MatrixXd& xt, const TransitionProblem& problem,
                              const std::vector<Eigen::MatrixXd>& jac, const Eigen::VectorXd& theta,
                              Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
  const int k = problem.k();
  const Eigen::Index p = xt.cols();
  double f = 0.0;
  if (grad) grad->setZero(theta.size());
  if (hess) hess->setZero(theta.size(), theta.size());
  for (int u = 0; u < k; ++u) {
    if (!(problem.weights[u].sum() > 0.0)) continue;
    const Eigen::VectorXd row = jac[u] * theta;
    Eigen::Map<const Eigen::MatrixXd> coef(row.data(), p, k - 1);
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    f += mlogit_eval(xt, problem.weights[u], u, coef, grad ? &g : nullptr, hess ? &h : nullptr);
    if (grad) *grad += jac[u].transpose() * g;
    if (hess) *hess += jac[u].transpose() * h * jac[u];
  }
  return f;
}

inline std::vector<Eigen::MatrixXd> difference_jacobians(int k, int q) {
  std::vector<Eigen::MatrixXd> jac;
  for (int u = 0; u < k; ++u) jac.push_back(difference_jacobian(u, k, q));
  return jac;
}

}  // namespace detail

inline double difference_objective(const TransitionProblem& problem, const Eigen::VectorXd& theta) {
  return detail::difference_eval(detail::with_intercept(problem.design), problem,
                                 detail::difference_jacobians(problem.k(), problem.q()), theta,
                                 nullptr, nullptr);
}

inline Eigen::VectorXd difference_gradient(const TransitionProblem& problem,
                                           const Eigen::VectorXd& theta) {
  Eigen::VectorXd g;
  detail::difference_eval(detail::with_intercept(problem.design), problem,
                          detail::difference_jacobians(problem.k(), problem.q()), theta, &g,
                          nullptr);
  return g;
}

struct DifferenceFit {
  DifferenceGamma gamma;
  double loglik = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Joint fit of the difference-parameterized transition logits. Rows share
/// the slope vectors, so the problem is not separable; it is still concave
/// (a linear reparameterization of the pairwise objective), and is solved by
/// damped Newton through the chain rule.
inline DifferenceFit fit_transition_difference(const TransitionProblem& problem,
                                               const LogitSolverOptions& opts = {},
                                               const DifferenceGamma* start = nullptr) {
  problem.validate();
  const int k = problem.k(), q = problem.q();
  for (int u = 0; u < k; ++u)
    if (problem.weights[u].sum() > 0.0)
      detail::check_class_support(problem.weights[u],
                                  "transition row from state " + std::to_string(u + 1) + ": ");
  const Eigen::MatrixXd xt = detail::with_intercept(problem.design);
  const auto jac = detail::difference_jacobians(k, q);
  Eigen::VectorXd theta = start ? pack_difference(*start)
                                : Eigen::VectorXd::Zero(k * (k - 1) + q * (k - 1));
  auto eval = [&](const Eigen::VectorXd& th, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
    return detail::difference_eval(xt, problem, jac, th, g, h);
  };
  const auto res = detail::newton_ascent(eval, theta, opts, opts.grad_tol,
                                         opts.difference_grad_tol, "difference transitions: ");
  DifferenceFit out;
  out.gamma = unpack_difference(res.theta, k, q);
  out.loglik = res.objective;
  out.grad_norm = res.grad_norm;
  out.iterations = res.iterations;
  return out;
}

}  // namespace lmest
