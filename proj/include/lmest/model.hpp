#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lmest/error.hpp"
#include "lmest/types.hpp"

namespace lmest {

// Column of a pairwise gamma block that holds destination v for origin u.
inline int dest_column(int u, int v) { return v < u ? v : v - 1; }

namespace detail {

// Softmax over `eta` in place, numerically stable.
inline void softmax_inplace(Eigen::Ref<Eigen::VectorXd> eta) {
  const double m = eta.maxCoeff();
  eta = (eta.array() - m).exp();
  eta /= eta.sum();
}

inline void check_index(const ResponsePanel& panel, int i, int t) {
  require(i >= 0 && i < panel.n(), "unit index " + std::to_string(i) + " out of range");
  require(t >= 0 && t < panel.T(), "occasion index " + std::to_string(t) + " out of range");
}

}  // namespace detail

/// Product over the non-missing items at (i, t) of phi_j(y_ij^(t), u).
/// An occasion where every item is missing contributes 1.
inline double emission_prob(const MeasurementParams& meas, const ResponsePanel& panel, int i,
                            int t, int u) {
  detail::check_index(panel, i, t);
  require(u >= 0 && u < meas.k, "state index out of range");
  require(meas.r() == panel.r(), "phi item count does not match the panel");
  double p = 1.0;
  auto y = panel.occasion(i, t);
  for (int j = 0; j < panel.r(); ++j)
    if (y[j] != kMissing) p *= meas.phi[j](y[j], u);
  return p;
}

/// Initial-state probabilities for occasion-1 covariates x1 (state 1 is the
/// logit reference).
inline Eigen::VectorXd initial_probs(const CovariateLatentParams& params,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& x1) {
  require(x1.size() == params.q1, "initial covariate vector has length " +
                                      std::to_string(x1.size()) + ", expected " +
                                      std::to_string(params.q1));
  Eigen::VectorXd eta(params.k);
  eta(0) = 0.0;
  for (int u = 1; u < params.k; ++u)
    eta(u) = params.beta(0, u - 1) + x1.dot(params.beta.col(u - 1).tail(params.q1));
  detail::softmax_inplace(eta);
  return eta;
}

/// Transition matrix at covariates x; row u uses the self-transition as the
/// logit reference.
inline Eigen::MatrixXd transition_probs(const CovariateLatentParams& params,
                                        const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  require(x.size() == params.q2, "transition covariate vector has length " +
                                     std::to_string(x.size()) + ", expected " +
                                     std::to_string(params.q2));
  const int k = params.k;
  Eigen::MatrixXd P(k, k);
  Eigen::VectorXd eta(k);
  for (int u = 0; u < k; ++u) {
    for (int v = 0; v < k; ++v) {
      if (v == u) {
        eta(v) = 0.0;
      } else if (params.layout == TransitionLayout::Pairwise) {
        const auto& g = params.gamma_pairwise[u];
        const int c = dest_column(u, v);
        eta(v) = g(0, c) + x.dot(g.col(c).tail(params.q2));
      } else {
        eta(v) = params.gamma_intercept(u, v) +
                 x.dot(params.gamma_slope.col(u) - params.gamma_slope.col(v));
      }
    }
    detail::softmax_inplace(eta);
    P.row(u) = eta.transpose();
  }
  return P;
}

//---------------------------------------------------------------------------//
// Chain parameters as seen by one unit: the initial vector and the T-1
// transition matrices (transitions[t-1] moves occasion t-1 to t).
struct UnitChain {
  Eigen::VectorXd initial;
  std::vector<Eigen::MatrixXd> transitions;

  int T() const { return static_cast<int>(transitions.size()) + 1; }
};

inline UnitChain unit_chain(const LatentChainParams& chain, int T) {
  require(T >= 1, "need T >= 1");
  return UnitChain{chain.initial, std::vector<Eigen::MatrixXd>(T - 1, chain.transition)};
}

inline UnitChain unit_chain(const CovariateLatentParams& params, const CovariatePanel& covs,
                            int i) {
  require(covs.q1() == params.q1 && covs.q2() == params.q2,
          "covariate designs do not match the latent parameters");
  UnitChain c;
  c.initial = initial_probs(params, covs.init_row(i));
  c.transitions.reserve(covs.T() - 1);
  for (int t = 1; t < covs.T(); ++t) c.transitions.push_back(transition_probs(params, covs.trans_row(i, t)));
  return c;
}

/// Builds the per-unit chain for either latent block. `covs` is required
/// only for the covariate block.
inline UnitChain unit_chain(const LatentParams& latent, const CovariatePanel* covs, int i, int T) {
  if (const auto* basic = std::get_if<LatentChainParams>(&latent)) return unit_chain(*basic, T);
  require(covs != nullptr, "covariate latent model needs a covariate panel");
  return unit_chain(std::get<CovariateLatentParams>(latent), *covs, i);
}

inline StateMarginals state_marginals(const UnitChain& chain) {
  const int k = static_cast<int>(chain.initial.size());
  StateMarginals m;
  m.lambda.resize(chain.T(), k);
  m.lambda.row(0) = chain.initial.transpose();
  for (int t = 1; t < chain.T(); ++t)
    m.lambda.row(t) = m.lambda.row(t - 1) * chain.transitions[t - 1];
  return m;
}

inline StateMarginals state_marginals(const LatentChainParams& chain, int T) {
  return state_marginals(unit_chain(chain, T));
}

inline StateMarginals state_marginals(const CovariateLatentParams& params,
                                      const CovariatePanel& covs, int i) {
  return state_marginals(unit_chain(params, covs, i));
}

//---------------------------------------------------------------------------//
// log phi tables, built once per parameter value and reused for every unit.
class LogEmissions {
 public:
  explicit LogEmissions(const MeasurementParams& meas) : k_(meas.k) {
    log_phi_.reserve(meas.phi.size());
    for (const auto& p : meas.phi) log_phi_.push_back(p.array().log().matrix());
  }

  int k() const { return k_; }

  // T x k matrix of log emission probabilities for unit i.
  Eigen::MatrixXd unit(const ResponsePanel& panel, int i) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(panel.T(), k_);
    for (int t = 0; t < panel.T(); ++t) {
      auto y = panel.occasion(i, t);
      for (int j = 0; j < panel.r(); ++j)
        if (y[j] != kMissing) out.row(t) += log_phi_[j].row(y[j]);
    }
    return out;
  }

 private:
  int k_;
  std::vector<Eigen::MatrixXd> log_phi_;
};

namespace detail {

// Shifts each row of log emissions by its max and exponentiates; the shifts
// are returned so the caller can restore the scale in the log-likelihood.
inline Eigen::VectorXd scale_emissions(const Eigen::MatrixXd& log_emis, Eigen::MatrixXd& emis,
                                       int unit) {
  const Eigen::Index T = log_emis.rows();
  Eigen::VectorXd shift(T);
  emis.resize(log_emis.rows(), log_emis.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    const double m = log_emis.row(t).maxCoeff();
    if (!std::isfinite(m))
      fail(ErrorKind::Degenerate, "zero emission probability in every state at unit " +
                                      std::to_string(unit + 1) + ", occasion " +
                                      std::to_string(t + 1));
    shift(t) = m;
    emis.row(t) = (log_emis.row(t).array() - m).exp();
  }
  return shift;
}

}  // namespace detail

/// Scaled forward-backward pass for one unit.
///
/// Writes b (T*k, row-major by occasion) and bb ((T-1)*k*k, u-major) into the
/// provided spans and returns log p(y_i | x_i). Forward variables are
/// renormalized at every occasion; the log-likelihood accumulates the log
/// normalizers plus the emission shifts, so long panels with many items do
/// not underflow.
inline double forward_backward(const Eigen::MatrixXd& log_emis, const UnitChain& chain, int unit,
                               std::span<double> b_out, std::span<double> bb_out) {
  const int T = static_cast<int>(log_emis.rows());
  const int k = static_cast<int>(log_emis.cols());
  Eigen::MatrixXd emis;
  const Eigen::VectorXd shift = detail::scale_emissions(log_emis, emis, unit);

  Eigen::MatrixXd alpha(T, k);
  Eigen::VectorXd scale(T);
  double loglik = 0.0;
  for (int t = 0; t < T; ++t) {
    if (t == 0)
      alpha.row(0) = chain.initial.transpose().cwiseProduct(emis.row(0));
    else
      alpha.row(t) = (alpha.row(t - 1) * chain.transitions[t - 1]).cwiseProduct(emis.row(t));
    scale(t) = alpha.row(t).sum();
    if (!(scale(t) > 0.0) || !std::isfinite(scale(t)))
      fail(ErrorKind::Degenerate, "zero likelihood contribution at unit " +
                                      std::to_string(unit + 1) + ", occasion " +
                                      std::to_string(t + 1));
    alpha.row(t) /= scale(t);
    loglik += std::log(scale(t)) + shift(t);
  }

  Eigen::RowVectorXd beta = Eigen::RowVectorXd::Ones(k);
  for (int u = 0; u < k; ++u) b_out[static_cast<std::size_t>(T - 1) * k + u] = alpha(T - 1, u);
  for (int t = T - 1; t >= 1; --t) {
    const Eigen::MatrixXd& P = chain.transitions[t - 1];
    const Eigen::RowVectorXd ebeta = emis.row(t).cwiseProduct(beta) / scale(t);
    double* bb = bb_out.data() + static_cast<std::size_t>(t - 1) * k * k;
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) bb[u * k + v] = alpha(t - 1, u) * P(u, v) * ebeta(v);
    beta = (P * ebeta.transpose()).transpose();
    for (int u = 0; u < k; ++u)
      b_out[static_cast<std::size_t>(t - 1) * k + u] = alpha(t - 1, u) * beta(u);
  }
  return loglik;
}

struct UnitPosterior {
  Eigen::MatrixXd b;                // T x k
  std::vector<Eigen::MatrixXd> bb;  // T-1 matrices, k x k
  double loglik = 0.0;
};

/// Posterior state and transition probabilities for unit i plus
/// log p(y_i | x_i).
inline UnitPosterior forward_backward(const MeasurementParams& meas, const UnitChain& chain,
                                      const ResponsePanel& panel, int i) {
  detail::check_index(panel, i, 0);
  meas.check_matches(panel);
  require(chain.T() == panel.T(), "chain length does not match the panel");
  require(chain.initial.size() == meas.k, "chain state count does not match phi");
  const int T = panel.T(), k = meas.k;
  std::vector<double> b(static_cast<std::size_t>(T) * k), bb(static_cast<std::size_t>(T - 1) * k * k);
  UnitPosterior out;
  out.loglik = forward_backward(LogEmissions(meas).unit(panel, i), chain, i, b, bb);
  out.b.resize(T, k);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < k; ++u) out.b(t, u) = b[static_cast<std::size_t>(t) * k + u];
  for (int t = 1; t < T; ++t) {
    Eigen::MatrixXd m(k, k);
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) m(u, v) = bb[(static_cast<std::size_t>(t - 1) * k + u) * k + v];
    out.bb.push_back(std::move(m));
  }
  return out;
}

}  // namespace lmest
