#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lmest/error.hpp"
#include "lmest/mlogit.hpp"
#include "lmest/model.hpp"
#include "lmest/parallel.hpp"
#include "lmest/types.hpp"

namespace lmest {

struct FitOptions {
  int max_iter = 1000;
  double rel_tol = 1e-8;
  int n_starts = 10;
  std::uint64_t seed = 0;
  // Scale of the random-start perturbation; 0 makes every start identical.
  double perturbation = 1.0;
  int threads = 1;
  // When set, replaces random start 0.
  std::optional<ModelParams> initial;
  LogitSolverOptions logit;

  void validate() const {
    require(max_iter >= 1, "max_iter must be >= 1");
    require(rel_tol > 0.0, "rel_tol must be > 0");
    require(n_starts >= 1, "n_starts must be >= 1");
    require(perturbation >= 0.0, "perturbation scale must be >= 0");
  }
};

struct FitResult {
  ModelParams params;
  double loglik = -std::numeric_limits<double>::infinity();
  // "full" for the manifest log-likelihood, "pooled-lc" for the Step-1
  // latent-class log-likelihood reported by the three-step estimators.
  std::string loglik_kind = "full";
  std::vector<int> iterations;               // per start
  std::vector<double> start_logliks;         // per start
  std::vector<std::vector<double>> traces;   // per start, log-likelihood after each M-step
  int best_start = 0;
  bool converged = false;
  bool degenerate = false;
  bool state_collapse = false;
  int cycles = 0;  // 3S-IMP only
};

struct LCFit {
  MeasurementParams phi;
  Eigen::VectorXd rho;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<int> iterations;
  std::vector<double> start_logliks;
  std::vector<std::vector<double>> traces;
  int best_start = 0;
  bool converged = false;
  bool degenerate = false;
  bool state_collapse = false;
};

namespace detail {

inline bool has_converged(double prev, double cur, double rel_tol) {
  return std::abs(cur - prev) / (std::abs(prev) + 1.0) < rel_tol;
}

// Column-wise floor at kProbFloor followed by renormalization.
inline void floor_columns(Eigen::MatrixXd& m) {
  for (Eigen::Index u = 0; u < m.cols(); ++u) {
    m.col(u) = m.col(u).cwiseMax(kProbFloor).cwiseMin(1.0 - kProbFloor);
    m.col(u) /= m.col(u).sum();
  }
}

// Pooled category frequencies per item over all non-missing entries
// (uniform for an item that is never observed).
inline std::vector<Eigen::VectorXd> pooled_frequencies(const ResponsePanel& panel) {
  std::vector<Eigen::VectorXd> freq;
  for (int j = 0; j < panel.r(); ++j) freq.push_back(Eigen::VectorXd::Zero(panel.cats()[j]));
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < panel.T(); ++t) {
      auto y = panel.occasion(i, t);
      for (int j = 0; j < panel.r(); ++j)
        if (y[j] != kMissing) freq[j](y[j]) += 1.0;
    }
  for (auto& f : freq) {
    const double s = f.sum();
    if (s > 0.0) f /= s;
    else f.setConstant(1.0 / static_cast<double>(f.size()));
  }
  return freq;
}

inline bool too_many_states(const ResponsePanel& panel, int k) {
  std::set<std::vector<int>> patterns;
  for (int i = 0; i < panel.n() && static_cast<int>(patterns.size()) < k; ++i)
    for (int t = 0; t < panel.T(); ++t) {
      auto y = panel.occasion(i, t);
      patterns.emplace(y.begin(), y.end());
    }
  return k > static_cast<int>(patterns.size());
}

// Closed-form phi update from state posteriors b(i,t,u). A column with zero
// posterior mass keeps its previous value.
inline MeasurementParams update_phi(const ResponsePanel& panel, const PosteriorMoments& mom,
                                    const MeasurementParams& prev) {
  const int k = mom.k;
  std::vector<Eigen::MatrixXd> counts;
  for (int j = 0; j < panel.r(); ++j) counts.push_back(Eigen::MatrixXd::Zero(panel.cats()[j], k));
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < panel.T(); ++t) {
      auto y = panel.occasion(i, t);
      const double* b = mom.b.data() + mom.b_offset(i, t);
      for (int j = 0; j < panel.r(); ++j)
        if (y[j] != kMissing)
          for (int u = 0; u < k; ++u) counts[j](y[j], u) += b[u];
    }
  MeasurementParams out{k, {}};
  for (int j = 0; j < panel.r(); ++j) {
    Eigen::MatrixXd phi = counts[j];
    for (int u = 0; u < k; ++u) {
      const double s = phi.col(u).sum();
      if (s > 0.0) phi.col(u) /= s;
      else phi.col(u) = prev.phi[j].col(u);
    }
    floor_columns(phi);
    out.phi.push_back(std::move(phi));
  }
  return out;
}

inline bool any_state_collapsed(const PosteriorMoments& mom) {
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(mom.k);
  const std::size_t cells = static_cast<std::size_t>(mom.n) * mom.T;
  for (std::size_t c = 0; c < cells; ++c)
    for (int u = 0; u < mom.k; ++u) mass(u) += mom.b[c * mom.k + u];
  return (mass.array() < 1e-8 * static_cast<double>(cells)).any();
}

}  // namespace detail

//---------------------------------------------------------------------------//
// Random starts

/// Basic-model start: phi columns perturb the pooled frequencies
/// multiplicatively, pi is uniform-perturbed, Pi is diagonal-dominant with a
/// perturbation. k = 1 yields the exact empirical start.
inline ModelParams random_start(int k, const ResponsePanel& panel, std::uint64_t seed,
                                double scale = 1.0) {
  require(k >= 1, "k must be >= 1");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto freq = detail::pooled_frequencies(panel);

  MeasurementParams meas{k, {}};
  for (int j = 0; j < panel.r(); ++j) {
    Eigen::MatrixXd phi(panel.cats()[j], k);
    for (int u = 0; u < k; ++u)
      for (int y = 0; y < panel.cats()[j]; ++y) {
        const double z = k == 1 ? 0.0 : normal(gen);
        phi(y, u) = std::max(freq[j](y), kProbFloor) * std::exp(scale * z);
      }
    for (int u = 0; u < k; ++u) phi.col(u) /= phi.col(u).sum();
    if (k > 1) detail::floor_columns(phi);
    meas.phi.push_back(std::move(phi));
  }

  LatentChainParams chain;
  chain.initial = Eigen::VectorXd::Ones(k);
  chain.transition = Eigen::MatrixXd::Ones(k, k);
  if (k > 1) {
    for (int u = 0; u < k; ++u) chain.initial(u) += scale * unif(gen);
    const double diag = 0.8, off = 0.2 / (k - 1);
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        chain.transition(u, v) = (u == v ? diag : off) * (1.0 + scale * unif(gen));
  }
  chain.initial /= chain.initial.sum();
  for (int u = 0; u < k; ++u) chain.transition.row(u) /= chain.transition.row(u).sum();
  return ModelParams{std::move(meas), std::move(chain)};
}

/// Covariate-model start: measurement block as in the basic start, logit
/// coefficients drawn N(0, (0.25 * scale)^2).
inline ModelParams random_start(int k, const ResponsePanel& panel, const CovariatePanel& covs,
                                TransitionLayout layout, std::uint64_t seed, double scale = 1.0) {
  ModelParams basic = random_start(k, panel, seed, scale);
  std::mt19937_64 gen(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 0.25);
  auto draw = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = scale * normal(gen);
  };
  auto reg = CovariateLatentParams::zeros(k, covs.q1(), covs.q2(), layout);
  if (k > 1) {
    draw(reg.beta);
    if (layout == TransitionLayout::Pairwise) {
      for (auto& g : reg.gamma_pairwise) draw(g);
    } else {
      draw(reg.gamma_intercept);
      reg.gamma_intercept.diagonal().setZero();
      draw(reg.gamma_slope);
      if (reg.q2 > 0) reg.gamma_slope.col(0).setZero();
    }
  }
  return ModelParams{std::move(basic.measurement), std::move(reg)};
}

//---------------------------------------------------------------------------//
// E-step

/// Exact posterior moments and total log-likelihood under the given
/// parameters (forward-backward for every unit).
inline PosteriorMoments posterior_moments(const MeasurementParams& meas, const LatentParams& latent,
                                          const ResponsePanel& panel, const CovariatePanel* covs,
                                          int threads = 1) {
  meas.check_matches(panel);
  const int n = panel.n(), T = panel.T(), k = meas.k;
  PosteriorMoments mom(n, T, k);
  const LogEmissions log_emis(meas);
  const bool basic = std::holds_alternative<LatentChainParams>(latent);
  const UnitChain shared = basic ? unit_chain(std::get<LatentChainParams>(latent), T) : UnitChain{};
  std::vector<double> unit_ll(n);
  parallel_for(n, threads, [&](int i) {
    const UnitChain chain = basic ? UnitChain{} : unit_chain(latent, covs, i, T);
    unit_ll[i] = forward_backward(log_emis.unit(panel, i), basic ? shared : chain, i,
                                  mom.b_unit(i), mom.bb_unit(i));
  });
  double ll = 0.0;
  for (double v : unit_ll) ll += v;
  if (!std::isfinite(ll)) fail(ErrorKind::Numerical, "non-finite log-likelihood");
  mom.loglik = ll;
  return mom;
}

namespace detail {

inline LatentChainParams update_chain(const PosteriorMoments& mom, const LatentChainParams& prev,
                                      bool& collapsed) {
  const int k = mom.k;
  LatentChainParams out;
  out.initial = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < mom.n; ++i)
    for (int u = 0; u < k; ++u) out.initial(u) += mom.b_at(i, 0, u);
  out.initial /= out.initial.sum();
  if (mom.T < 2) {
    out.transition = prev.transition;
    return out;
  }
  out.transition = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < mom.n; ++i)
    for (int t = 1; t < mom.T; ++t)
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) out.transition(u, v) += mom.bb_at(i, t, u, v);
  for (int u = 0; u < k; ++u) {
    const double s = out.transition.row(u).sum();
    if (s > 0.0) {
      out.transition.row(u) /= s;
    } else {
      out.transition.row(u).setConstant(1.0 / k);
      collapsed = true;
    }
  }
  return out;
}

inline WeightedLogitProblem initial_problem(const PosteriorMoments& mom, const CovariatePanel& covs) {
  WeightedLogitProblem p;
  p.design = covs.init_design();
  p.weights.resize(mom.n, mom.k);
  for (int i = 0; i < mom.n; ++i)
    for (int u = 0; u < mom.k; ++u) p.weights(i, u) = mom.b_at(i, 0, u);
  p.ref_class = 0;
  return p;
}

inline TransitionProblem transition_problem(const PosteriorMoments& mom, const CovariatePanel& covs) {
  TransitionProblem p;
  p.design = covs.trans_design();
  const Eigen::Index M = static_cast<Eigen::Index>(mom.n) * (mom.T - 1);
  p.weights.assign(mom.k, Eigen::MatrixXd(M, mom.k));
  for (int i = 0; i < mom.n; ++i)
    for (int t = 1; t < mom.T; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * (mom.T - 1) + t - 1;
      for (int u = 0; u < mom.k; ++u)
        for (int v = 0; v < mom.k; ++v) p.weights[u](row, v) = mom.bb_at(i, t, u, v);
    }
  return p;
}

// Weighted-logit update of (beta, Gamma) from moments, warm-started at prev.
inline CovariateLatentParams update_regression(const PosteriorMoments& mom, const CovariatePanel& covs,
                                               const CovariateLatentParams& prev,
                                               const LogitSolverOptions& opts, bool& collapsed) {
  CovariateLatentParams out = prev;
  if (mom.k < 2) return out;
  const auto init = initial_problem(mom, covs);
  out.beta = fit_weighted_mlogit(init, opts, &prev.beta, "initial logits: ").coef;
  if (mom.T < 2) return out;
  const auto trans = transition_problem(mom, covs);
  if (prev.layout == TransitionLayout::Pairwise) {
    auto fit = fit_transition_pairwise(trans, opts, &prev.gamma_pairwise);
    if (!fit.empty_rows.empty()) collapsed = true;
    out.gamma_pairwise = std::move(fit.gamma);
  } else {
    const DifferenceGamma start{prev.gamma_intercept, prev.gamma_slope};
    auto fit = fit_transition_difference(trans, opts, &start);
    out.gamma_intercept = std::move(fit.gamma.intercept);
    out.gamma_slope = std::move(fit.gamma.slope);
  }
  return out;
}

struct StartOutcome {
  ModelParams params;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  bool collapsed = false;
};

// EM from one start for the full LM model (basic or covariate latent block).
inline StartOutcome run_lm_em(const ResponsePanel& panel, const CovariatePanel* covs,
                              ModelParams params, const FitOptions& opts) {
  StartOutcome out;
  PosteriorMoments mom = posterior_moments(params.measurement, params.latent, panel, covs, opts.threads);
  out.trace.push_back(*mom.loglik);
  for (int it = 1; it <= opts.max_iter; ++it) {
    bool collapsed = detail::any_state_collapsed(mom);
    params.measurement = update_phi(panel, mom, params.measurement);
    if (auto* chain = std::get_if<LatentChainParams>(&params.latent)) {
      *chain = update_chain(mom, *chain, collapsed);
    } else {
      try {
        params.latent = update_regression(mom, *covs, params.regression(), opts.logit, collapsed);
      } catch (const Error& e) {
        throw e.with_context("EM iteration " + std::to_string(it));
      }
    }
    out.collapsed = out.collapsed || collapsed;
    const double prev = *mom.loglik;
    mom = posterior_moments(params.measurement, params.latent, panel, covs, opts.threads);
    out.trace.push_back(*mom.loglik);
    out.iterations = it;
    if (has_converged(prev, *mom.loglik, opts.rel_tol)) {
      out.converged = true;
      break;
    }
  }
  out.collapsed = out.collapsed || detail::any_state_collapsed(mom);
  out.loglik = *mom.loglik;
  out.params = std::move(params);
  return out;
}

template <class StartFn>
FitResult multi_start_lm(const ResponsePanel& panel, const CovariatePanel* covs, int k,
                         const FitOptions& opts, StartFn&& make_start) {
  FitResult result;
  std::optional<Error> first_error;
  bool have_best = false;
  for (int s = 0; s < opts.n_starts; ++s) {
    ModelParams start = (s == 0 && opts.initial) ? *opts.initial
                                                 : make_start(child_seed(opts.seed, static_cast<std::uint64_t>(s)));
    try {
      StartOutcome o = run_lm_em(panel, covs, std::move(start), opts);
      result.iterations.push_back(o.iterations);
      result.start_logliks.push_back(o.loglik);
      result.traces.push_back(o.trace);
      if (!have_best || o.loglik > result.loglik) {
        have_best = true;
        result.loglik = o.loglik;
        result.params = std::move(o.params);
        result.best_start = s;
        result.converged = o.converged;
        result.state_collapse = o.collapsed;
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Usage) throw;
      if (!first_error) first_error = e.with_context("start " + std::to_string(s + 1));
      result.iterations.push_back(0);
      result.start_logliks.push_back(-std::numeric_limits<double>::infinity());
      result.traces.emplace_back();
    }
  }
  if (!have_best) throw *first_error;
  result.degenerate = too_many_states(panel, k);
  return result;
}

// Basic FML fit; T = 1 is allowed only through this entry point (used to
// compare against the pooled latent-class fit).
inline FitResult fit_basic_em(const ResponsePanel& panel, int k, const FitOptions& opts) {
  opts.validate();
  require(k >= 1, "k must be >= 1");
  return multi_start_lm(panel, nullptr, k, opts, [&](std::uint64_t seed) {
    return random_start(k, panel, seed, opts.perturbation);
  });
}

}  // namespace detail

//---------------------------------------------------------------------------//
// Fitters

/// Step 1 of the three-step estimator: latent-class model fitted to the
/// n*T occasions treated as independent units.
inline LCFit fit_lc_pooled(const ResponsePanel& panel, int k, const FitOptions& opts) {
  opts.validate();
  require(k >= 1, "k must be >= 1");
  const int n = panel.n(), T = panel.T();
  LCFit best;
  bool have_best = false;
  std::optional<Error> first_error;

  for (int s = 0; s < opts.n_starts; ++s) {
    ModelParams start = (s == 0 && opts.initial)
                            ? *opts.initial
                            : random_start(k, panel, child_seed(opts.seed, static_cast<std::uint64_t>(s)),
                                           opts.perturbation);
    MeasurementParams meas = start.measurement;
    Eigen::VectorXd rho = std::holds_alternative<LatentChainParams>(start.latent)
                              ? start.chain().initial
                              : Eigen::VectorXd::Constant(k, 1.0 / k);
    std::vector<double> trace;
    PosteriorMoments mom(n, T, k);
    std::vector<double> unit_ll(n);

    auto estep = [&] {
      const LogEmissions log_emis(meas);
      const Eigen::ArrayXd log_rho = rho.array().log();
      parallel_for(n, opts.threads, [&](int i) {
        const Eigen::MatrixXd le = log_emis.unit(panel, i);
        double ll = 0.0;
        for (int t = 0; t < T; ++t) {
          Eigen::ArrayXd a = log_rho + le.row(t).transpose().array();
          const double m = a.maxCoeff();
          if (!std::isfinite(m))
            fail(ErrorKind::Degenerate, "zero posterior normalizer at unit " + std::to_string(i + 1) +
                                            ", occasion " + std::to_string(t + 1));
          a = (a - m).exp();
          const double z = a.sum();
          ll += m + std::log(z);
          for (int u = 0; u < k; ++u) mom.b_at(i, t, u) = a(u) / z;
        }
        unit_ll[i] = ll;
      });
      double ll = 0.0;
      for (double v : unit_ll) ll += v;
      if (!std::isfinite(ll)) fail(ErrorKind::Numerical, "non-finite pooled log-likelihood");
      return ll;
    };

    try {
      double ll = estep();
      trace.push_back(ll);
      int iters = 0;
      bool converged = false;
      bool collapsed = false;
      for (int it = 1; it <= opts.max_iter; ++it) {
        collapsed = collapsed || detail::any_state_collapsed(mom);
        meas = detail::update_phi(panel, mom, meas);
        rho.setZero();
        for (std::size_t c = 0; c < static_cast<std::size_t>(n) * T; ++c)
          for (int u = 0; u < k; ++u) rho(u) += mom.b[c * k + u];
        rho /= rho.sum();
        const double prev = ll;
        ll = estep();
        trace.push_back(ll);
        iters = it;
        if (detail::has_converged(prev, ll, opts.rel_tol)) {
          converged = true;
          break;
        }
      }
      best.iterations.push_back(iters);
      best.start_logliks.push_back(ll);
      best.traces.push_back(trace);
      if (!have_best || ll > best.loglik) {
        have_best = true;
        best.loglik = ll;
        best.phi = meas;
        best.rho = rho;
        best.best_start = s;
        best.converged = converged;
        best.state_collapse = collapsed || detail::any_state_collapsed(mom);
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Usage) throw;
      if (!first_error) first_error = e.with_context("start " + std::to_string(s + 1));
      best.iterations.push_back(0);
      best.start_logliks.push_back(-std::numeric_limits<double>::infinity());
      best.traces.emplace_back();
    }
  }
  if (!have_best) throw *first_error;
  best.degenerate = detail::too_many_states(panel, k);
  return best;
}

/// Full-maximum-likelihood EM for the basic LM model.
inline FitResult fit_basic_lm_fml(const ResponsePanel& panel, int k, const FitOptions& opts) {
  require(panel.T() >= 2,
          "transition probabilities are not identifiable with T = 1; fit the latent-class model "
          "(fit_lc_pooled) instead");
  return detail::fit_basic_em(panel, k, opts);
}

/// Full-maximum-likelihood EM for the LM model with covariates on the
/// initial and transition probabilities.
inline FitResult fit_cov_lm_fml(const ResponsePanel& panel, const CovariatePanel& covs, int k,
                                TransitionLayout layout, const FitOptions& opts) {
  opts.validate();
  require(k >= 1, "k must be >= 1");
  require(panel.T() >= 2,
          "transition parameters are not identifiable with T = 1; fit the latent-class model instead");
  covs.check_matches(panel);
  if (opts.initial) {
    require(opts.initial->has_covariates(), "initial parameters must carry a covariate latent block");
    opts.initial->regression().validate();
  }
  return detail::multi_start_lm(panel, &covs, k, opts, [&](std::uint64_t seed) {
    return random_start(k, panel, covs, layout, seed, opts.perturbation);
  });
}

}  // namespace lmest
