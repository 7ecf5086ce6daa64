#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lmest/em.hpp"
#include "lmest/error.hpp"
#include "lmest/mlogit.hpp"
#include "lmest/model.hpp"
#include "lmest/parallel.hpp"
#include "lmest/types.hpp"

namespace lmest {

struct ThreeStepOptions {
  bool improved = false;
  int imp_max_iter = 200;
  double imp_tol = 1e-6;
  FitOptions lc;  // Step-1 latent-class fit (starts, seed, threads, solver options)

  void validate() const {
    lc.validate();
    require(imp_max_iter >= 1, "imp_max_iter must be >= 1");
    require(imp_tol > 0.0, "imp_tol must be > 0");
  }
};

namespace detail {

// Two states whose response distributions coincide on every item.
inline bool indistinguishable_states(const MeasurementParams& meas, double tol = 1e-6) {
  for (int u = 0; u < meas.k; ++u)
    for (int v = u + 1; v < meas.k; ++v) {
      double diff = 0.0;
      for (const auto& p : meas.phi) diff = std::max(diff, (p.col(u) - p.col(v)).cwiseAbs().maxCoeff());
      if (diff < tol) return true;
    }
  return false;
}

inline double max_abs_change(const LatentParams& a, const LatentParams& b) {
  auto diff = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return x.size() == 0 ? 0.0 : (x - y).cwiseAbs().maxCoeff();
  };
  if (const auto* ca = std::get_if<LatentChainParams>(&a)) {
    const auto& cb = std::get<LatentChainParams>(b);
    return std::max(diff(ca->initial, cb.initial), diff(ca->transition, cb.transition));
  }
  const auto& ra = std::get<CovariateLatentParams>(a);
  const auto& rb = std::get<CovariateLatentParams>(b);
  double d = diff(ra.beta, rb.beta);
  for (std::size_t u = 0; u < ra.gamma_pairwise.size(); ++u)
    d = std::max(d, diff(ra.gamma_pairwise[u], rb.gamma_pairwise[u]));
  d = std::max(d, diff(ra.gamma_intercept, rb.gamma_intercept));
  d = std::max(d, diff(ra.gamma_slope, rb.gamma_slope));
  return d;
}

// Emissions rescaled per occasion (common factors cancel in every moment).
inline Eigen::MatrixXd scaled_emissions(const LogEmissions& log_emis, const ResponsePanel& panel, int i) {
  Eigen::MatrixXd e;
  detail::scale_emissions(log_emis.unit(panel, i), e, i);
  return e;
}

}  // namespace detail

/// Step 2: classification moments from the Step-1 fit. b is the posterior
/// under the pooled latent-class model; bb is the product of consecutive b's.
inline PosteriorMoments step2_moments(const LCFit& lc, const ResponsePanel& panel, int threads = 1) {
  lc.phi.check_matches(panel);
  const int n = panel.n(), T = panel.T(), k = lc.phi.k;
  PosteriorMoments mom(n, T, k);
  const LogEmissions log_emis(lc.phi);
  parallel_for(n, threads, [&](int i) {
    const Eigen::MatrixXd e = detail::scaled_emissions(log_emis, panel, i);
    for (int t = 0; t < T; ++t) {
      Eigen::VectorXd p = lc.rho.cwiseProduct(e.row(t).transpose());
      p /= p.sum();
      for (int u = 0; u < k; ++u) mom.b_at(i, t, u) = p(u);
    }
    for (int t = 1; t < T; ++t)
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) mom.bb_at(i, t, u, v) = mom.b_at(i, t - 1, u) * mom.b_at(i, t, v);
  });
  return mom;
}

/// Step 3 without covariates: closed-form initial and transition
/// probabilities from the moments. A transition row with no mass is set
/// uniform and `degenerate` is raised.
inline LatentChainParams step3_basic(const PosteriorMoments& mom, bool& degenerate) {
  require(mom.T >= 2, "transition probabilities need T >= 2");
  LatentChainParams prev{Eigen::VectorXd::Constant(mom.k, 1.0 / mom.k),
                         Eigen::MatrixXd::Constant(mom.k, mom.k, 1.0 / mom.k)};
  return detail::update_chain(mom, prev, degenerate);
}

/// Step 3 with covariates: weighted multinomial logits for the initial and
/// transition probabilities, warm-started at `warm` when given.
inline CovariateLatentParams step3_cov(const PosteriorMoments& mom, const CovariatePanel& covs,
                                       TransitionLayout layout, const LogitSolverOptions& opts,
                                       const CovariateLatentParams* warm, bool& degenerate) {
  require(mom.T >= 2, "transition parameters need T >= 2");
  require(covs.n() == mom.n && covs.T() == mom.T, "covariate panel does not match the moments");
  const CovariateLatentParams start =
      warm ? *warm : CovariateLatentParams::zeros(mom.k, covs.q1(), covs.q2(), layout);
  return detail::update_regression(mom, covs, start, opts, degenerate);
}

/// Moments for one 3S-IMP cycle: Step-2 style posteriors in which the pooled
/// class weights are replaced by the model-implied marginals of the current
/// latent parameters, and bb uses the current transition probabilities.
inline PosteriorMoments improved_moments(const MeasurementParams& phi, const LatentParams& latent,
                                         const ResponsePanel& panel, const CovariatePanel* covs,
                                         int threads = 1) {
  const int n = panel.n(), T = panel.T(), k = phi.k;
  PosteriorMoments mom(n, T, k);
  const LogEmissions log_emis(phi);
  const bool basic = std::holds_alternative<LatentChainParams>(latent);
  const UnitChain shared = basic ? unit_chain(std::get<LatentChainParams>(latent), T) : UnitChain{};
  const StateMarginals shared_lambda = basic ? state_marginals(shared) : StateMarginals{};
  parallel_for(n, threads, [&](int i) {
    const UnitChain own = basic ? UnitChain{} : unit_chain(latent, covs, i, T);
    const UnitChain& chain = basic ? shared : own;
    const Eigen::MatrixXd lambda = basic ? shared_lambda.lambda : state_marginals(chain).lambda;
    const Eigen::MatrixXd e = detail::scaled_emissions(log_emis, panel, i);
    const Eigen::MatrixXd le = lambda.cwiseProduct(e);
    for (int t = 0; t < T; ++t) {
      const double z = le.row(t).sum();
      for (int u = 0; u < k; ++u) mom.b_at(i, t, u) = le(t, u) / z;
    }
    for (int t = 1; t < T; ++t) {
      const Eigen::MatrixXd& P = chain.transitions[t - 1];
      double z = 0.0;
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) z += mom.bb_at(i, t, u, v) = le(t - 1, u) * P(u, v) * e(t, v);
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) mom.bb_at(i, t, u, v) /= z;
    }
  });
  return mom;
}

namespace detail {

inline LatentParams step3(const PosteriorMoments& mom, const CovariatePanel* covs,
                          TransitionLayout layout, const LogitSolverOptions& opts,
                          const LatentParams* warm, bool& degenerate) {
  if (!covs) return step3_basic(mom, degenerate);
  const CovariateLatentParams* w = warm ? &std::get<CovariateLatentParams>(*warm) : nullptr;
  return step3_cov(mom, *covs, layout, opts, w, degenerate);
}

}  // namespace detail

/// Steps 2 and 3 (and the improved cycles when requested) on top of an
/// existing Step-1 fit, so several estimators can share one Step 1.
inline FitResult fit_3s_from_lc(const LCFit& lc, const ResponsePanel& panel,
                                const CovariatePanel* covs, TransitionLayout layout,
                                const ThreeStepOptions& opts) {
  opts.validate();
  require(panel.T() >= 2, "the three-step estimator needs T >= 2");
  if (covs) covs->check_matches(panel);
  const int threads = opts.lc.threads;

  FitResult res;
  res.loglik = lc.loglik;
  res.loglik_kind = "pooled-lc";
  res.iterations = lc.iterations;
  res.start_logliks = lc.start_logliks;
  res.traces = lc.traces;
  res.best_start = lc.best_start;
  res.state_collapse = lc.state_collapse;
  bool degenerate = lc.degenerate || detail::indistinguishable_states(lc.phi);

  const PosteriorMoments mom = step2_moments(lc, panel, threads);
  LatentParams latent = detail::step3(mom, covs, layout, opts.lc.logit, nullptr, degenerate);
  res.converged = lc.converged;

  if (opts.improved) {
    bool done = false;
    for (int c = 1; c <= opts.imp_max_iter; ++c) {
      const PosteriorMoments m = improved_moments(lc.phi, latent, panel, covs, threads);
      bool flag = false;
      LatentParams next;
      try {
        next = detail::step3(m, covs, layout, opts.lc.logit, &latent, flag);
      } catch (const Error& e) {
        throw e.with_context("improved cycle " + std::to_string(c));
      }
      degenerate = degenerate || flag;
      const double change = detail::max_abs_change(latent, next);
      latent = std::move(next);
      res.cycles = c;
      if (change < opts.imp_tol) {
        done = true;
        break;
      }
    }
    res.converged = res.converged && done;
  }
  res.degenerate = degenerate;
  res.params = ModelParams{lc.phi, std::move(latent)};
  return res;
}

/// Three-step estimator of the basic model (3S, or 3S-IMP when
/// opts.improved is set).
inline FitResult fit_3s(const ResponsePanel& panel, int k, const ThreeStepOptions& opts) {
  opts.validate();
  require(panel.T() >= 2, "the three-step estimator needs T >= 2");
  const LCFit lc = fit_lc_pooled(panel, k, opts.lc);
  return fit_3s_from_lc(lc, panel, nullptr, TransitionLayout::Pairwise, opts);
}

/// Three-step estimator of the covariate model.
inline FitResult fit_3s(const ResponsePanel& panel, const CovariatePanel& covs, int k,
                        TransitionLayout layout, const ThreeStepOptions& opts) {
  opts.validate();
  require(panel.T() >= 2, "the three-step estimator needs T >= 2");
  covs.check_matches(panel);
  const LCFit lc = fit_lc_pooled(panel, k, opts.lc);
  return fit_3s_from_lc(lc, panel, &covs, layout, opts);
}

}  // namespace lmest
