#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lmest/em.hpp"
#include "lmest/error.hpp"
#include "lmest/model.hpp"
#include "lmest/parallel.hpp"
#include "lmest/threestep.hpp"
#include "lmest/types.hpp"

namespace lmest {

// Shared AR(1) covariates: the same q columns enter the initial and the
// transition designs.
struct CovariateSpec {
  int q = 0;
  double ar = 0.5;
  double innovation_var = 1.0;
};

struct Scenario {
  std::string id;
  int n = 0, T = 0, r = 0, k = 0;
  std::vector<int> cats;
  ModelParams truth;
  std::optional<CovariateSpec> covariates;
  TransitionLayout layout = TransitionLayout::Pairwise;

  void validate() const {
    require(n >= 1 && T >= 1 && r >= 1 && k >= 1, "scenario " + id + ": n, T, r, k must be >= 1");
    require(static_cast<int>(cats.size()) == r, "scenario " + id + ": cats length differs from r");
    require(truth.k() == k && truth.measurement.r() == r, "scenario " + id + ": truth shape mismatch");
    truth.measurement.validate();
    for (int j = 0; j < r; ++j)
      require(truth.measurement.phi[j].rows() == cats[j], "scenario " + id + ": phi rows differ from cats");
    if (covariates) {
      require(truth.has_covariates(), "scenario " + id + ": covariate spec without logit parameters");
      const auto& reg = truth.regression();
      reg.validate();
      require(reg.q1 == covariates->q && reg.q2 == covariates->q,
              "scenario " + id + ": logit dimensions differ from the covariate count");
    } else {
      require(!truth.has_covariates(), "scenario " + id + ": logit parameters without covariates");
      truth.chain().validate();
    }
  }
};

inline std::vector<std::string> preset_names() {
  return {"basic-s1", "basic-s2", "basic-s3", "basic-s4", "basic-s1-n1000",
          "basic-s1-t8", "basic-s1-n1000-t8", "cov-s1", "cov-s2", "cov-s3", "cov-s4"};
}

namespace detail {

// cols[u] = (P(Y = 0 | u), P(Y = 1 | u)), given literally so 1 - 0.7 never
// turns into 0.30000000000000004.
inline MeasurementParams binary_phi(int r, const std::vector<std::pair<double, double>>& cols) {
  MeasurementParams m{static_cast<int>(cols.size()), {}};
  Eigen::MatrixXd phi(2, m.k);
  for (int u = 0; u < m.k; ++u) {
    phi(0, u) = cols[u].first;
    phi(1, u) = cols[u].second;
  }
  m.phi.assign(r, phi);
  return m;
}

// Off-diagonal value passed explicitly: (1 - 0.9) is not 0.1 in binary.
inline LatentChainParams diag_chain(int k, double diag, double off) {
  LatentChainParams c;
  c.initial = Eigen::VectorXd::Constant(k, 1.0 / k);
  c.transition = Eigen::MatrixXd::Constant(k, k, off);
  c.transition.diagonal().setConstant(diag);
  return c;
}

inline CovariateLatentParams cov_latent(int k, double intercept) {
  auto p = CovariateLatentParams::zeros(k, 2, 2, TransitionLayout::Pairwise);
  for (int c = 0; c < k - 1; ++c) p.beta.col(c) << 0.0, 0.5, 1.0;
  for (auto& g : p.gamma_pairwise)
    for (int c = 0; c < k - 1; ++c) g.col(c) << intercept, 0.5, 1.0;
  return p;
}

}  // namespace detail

/// Named simulation design. `r` overrides the default item count (5).
inline Scenario scenario_preset(const std::string& name, std::optional<int> r = std::nullopt) {
  const int items = r.value_or(5);
  require(items >= 1, "item count must be >= 1");
  Scenario s;
  s.id = name;
  s.n = 500;
  s.T = 5;
  s.r = items;
  s.cats.assign(items, 2);
    if (name == "basic-s1" || name == "basic-s1-n1000" || name == "basic-s1-t8" ||
      name == "basic-s1-n1000-t8") {
    s.k = 2;
    s.truth = {detail::binary_phi(items, {{0.7, 0.3}, {0.3, 0.7}}), detail::diag_chain(2, 0.9, 0.1)};
    if (name.find("n1000") != std::string::npos) s.n = 1000;
    if (name.find("t8") != std::string::npos) s.T = 8;
  } else if (name == "basic-s2") {
    s.k = 2;
    s.truth = {detail::binary_phi(items, {{0.7, 0.3}, {0.3, 0.7}}), detail::diag_chain(2, 0.6, 0.4)};
  } else if (name == "basic-s3") {
    s.k = 2;
    s.truth = {detail::binary_phi(items, {{0.9, 0.1}, {0.1, 0.9}}), detail::diag_chain(2, 0.9, 0.1)};
  } else if (name == "basic-s4") {
    s.k = 3;
    s.truth = {detail::binary_phi(items, {{0.7, 0.3}, {0.3, 0.7}, {0.5, 0.5}}), detail::diag_chain(3, 0.6, 0.2)};
  } else if (name == "cov-s1" || name == "cov-s2" || name == "cov-s3") {
    s.k = 2;
    const double lo = name == "cov-s3" ? 0.1 : 0.3, hi = name == "cov-s3" ? 0.9 : 0.7;
    const double g0 = name == "cov-s2" ? std::log(0.4 / 0.6) : std::log(0.1 / 0.9);
    s.truth = {detail::binary_phi(items, {{hi, lo}, {lo, hi}}), detail::cov_latent(2, g0)};
    s.covariates = CovariateSpec{2};
  } else if (name == "cov-s4") {
    s.k = 3;
    s.truth = {detail::binary_phi(items, {{0.9, 0.1}, {0.1, 0.9}, {0.5, 0.5}}), detail::cov_latent(3, std::log(0.4 / 0.6))};
    s.covariates = CovariateSpec{2};
  } else {
    std::string list;
    for (const auto& p : preset_names()) list += (list.empty() ? "" : ", ") + p;
    fail(ErrorKind::Usage, "unknown scenario '" + name + "'; presets: " + list);
  }
  s.validate();
  return s;
}

//---------------------------------------------------------------------------//
// Generators

namespace detail {

inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

template <class Probs>
int draw_category(const Probs& p, std::mt19937_64& gen) {
  const double u = uniform01(gen);
  double acc = 0.0;
  const int last = static_cast<int>(p.size()) - 1;
  for (int c = 0; c < last; ++c) {
    acc += p(c);
    if (u < acc) return c;
  }
  return last;
}

}  // namespace detail

/// Per-unit AR(1) series for q covariates, started from the stationary
/// distribution.
inline CovariatePanel gen_covariates_ar1(int n, int T, int q, std::uint64_t seed, double ar = 0.5,
                                         double innovation_var = 1.0) {
  require(q >= 0, "q must be >= 0");
  require(std::abs(ar) < 1.0, "AR coefficient must lie in (-1, 1)");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(innovation_var);
  const double sd0 = std::sqrt(innovation_var / (1.0 - ar * ar));
  Eigen::MatrixXd series(static_cast<Eigen::Index>(n) * T, q);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < q; ++c) {
      double x = sd0 * normal(gen);
      for (int t = 0; t < T; ++t) {
        if (t > 0) x = ar * x + sd * normal(gen);
        series(static_cast<Eigen::Index>(i) * T + t, c) = x;
      }
    }
  return CovariatePanel::shared(n, T, std::move(series));
}

struct SimulatedData {
  ResponsePanel responses;
  std::optional<CovariatePanel> covariates;
  std::vector<int> states;  // n*T true states, 0-based, (i*T + t)

  const CovariatePanel* covs() const { return covariates ? &*covariates : nullptr; }
};

/// Draws states and responses (and covariates when the scenario has them).
inline SimulatedData gen_panel(const Scenario& sc, std::uint64_t seed) {
  sc.validate();
  SimulatedData out;
  if (sc.covariates)
    out.covariates = gen_covariates_ar1(sc.n, sc.T, sc.covariates->q, child_seed(seed, 0),
                                        sc.covariates->ar, sc.covariates->innovation_var);
  std::mt19937_64 gen(child_seed(seed, 1));
  std::vector<int> y(static_cast<std::size_t>(sc.n) * sc.T * sc.r);
  out.states.resize(static_cast<std::size_t>(sc.n) * sc.T);
  const auto& phi = sc.truth.measurement.phi;
  for (int i = 0; i < sc.n; ++i) {
    const UnitChain chain = unit_chain(sc.truth.latent, out.covs(), i, sc.T);
    int u = detail::draw_category(chain.initial, gen);
    for (int t = 0; t < sc.T; ++t) {
      if (t > 0) u = detail::draw_category(chain.transitions[t - 1].row(u), gen);
      out.states[static_cast<std::size_t>(i) * sc.T + t] = u;
      for (int j = 0; j < sc.r; ++j)
        y[(static_cast<std::size_t>(i) * sc.T + t) * sc.r + j] = detail::draw_category(phi[j].col(u), gen);
    }
  }
  out.responses = ResponsePanel(sc.n, sc.T, sc.cats, std::move(y));
  return out;
}

//---------------------------------------------------------------------------//
// Label alignment

struct AlignedParams {
  ModelParams params;
  std::vector<int> perm;  // perm[u] = estimated state relabeled as u
};

/// Relabels `params` so that new state u is old state perm[u]. Logit
/// coefficients are re-expressed against the relabeled reference states.
inline ModelParams permute_states(const ModelParams& params, const std::vector<int>& perm) {
  const int k = params.k();
  require(static_cast<int>(perm.size()) == k, "permutation length differs from k");
  ModelParams out = params;
  for (std::size_t j = 0; j < params.measurement.phi.size(); ++j)
    for (int u = 0; u < k; ++u) out.measurement.phi[j].col(u) = params.measurement.phi[j].col(perm[u]);

  if (const auto* c = std::get_if<LatentChainParams>(&params.latent)) {
    auto& oc = std::get<LatentChainParams>(out.latent);
    for (int u = 0; u < k; ++u) {
      oc.initial(u) = c->initial(perm[u]);
      for (int v = 0; v < k; ++v) oc.transition(u, v) = c->transition(perm[u], perm[v]);
    }
    return out;
  }
  const auto& g = params.regression();
  auto& og = std::get<CovariateLatentParams>(out.latent);
  // Full coefficient vector of class s (zero for the reference class 0).
  auto beta_of = [&](int s) -> Eigen::VectorXd {
    return s == 0 ? Eigen::VectorXd::Zero(1 + g.q1) : Eigen::VectorXd(g.beta.col(s - 1));
  };
  for (int u = 1; u < k; ++u) og.beta.col(u - 1) = beta_of(perm[u]) - beta_of(perm[0]);
  if (g.layout == TransitionLayout::Pairwise) {
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        if (v != u)
          og.gamma_pairwise[u].col(dest_column(u, v)) =
              g.gamma_pairwise[perm[u]].col(dest_column(perm[u], perm[v]));
  } else {
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) og.gamma_intercept(u, v) = g.gamma_intercept(perm[u], perm[v]);
    for (int u = 0; u < k; ++u) og.gamma_slope.col(u) = g.gamma_slope.col(perm[u]) - g.gamma_slope.col(perm[0]);
  }
  return out;
}

/// Permutation of the estimated states minimizing the squared distance
/// between estimated and reference phi tables (exhaustive, k <= 6).
inline AlignedParams align_states(const ModelParams& est, const ModelParams& truth) {
  const int k = est.k();
  require(k == truth.k(), "align_states: state counts differ");
  require(k <= 6, "align_states: exhaustive alignment supports k <= 6");
  require(est.measurement.r() == truth.measurement.r(), "align_states: item counts differ");
  // cost(u, s): distance between reference column u and estimated column s.
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < est.measurement.r(); ++j)
    for (int u = 0; u < k; ++u)
      for (int s = 0; s < k; ++s)
        cost(u, s) += (est.measurement.phi[j].col(s) - truth.measurement.phi[j].col(u)).squaredNorm();
  std::vector<int> perm(k), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int u = 0; u < k; ++u) c += cost(u, perm[u]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return AlignedParams{permute_states(est, best), best};
}

//---------------------------------------------------------------------------//
// Parameter flattening (names are 1-based; categories keep their coded value)

inline std::vector<std::string> parameter_names(const ModelParams& p,
                                                const std::vector<std::string>& cov_names = {}) {
  std::vector<std::string> names;
  const int k = p.k();
  const auto S = [](int v) { return std::to_string(v); };
  for (int j = 0; j < p.measurement.r(); ++j)
    for (int y = 0; y < p.measurement.phi[j].rows(); ++y)
      for (int u = 0; u < k; ++u) names.push_back("phi_j" + S(j + 1) + "_y" + S(y) + "_u" + S(u + 1));
  if (const auto* c = std::get_if<LatentChainParams>(&p.latent)) {
    (void)c;
    for (int u = 0; u < k; ++u) names.push_back("pi_" + S(u + 1));
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) names.push_back("Pi_" + S(u + 1) + "_" + S(v + 1));
    return names;
  }
  const auto& g = p.regression();
  auto term = [&](int c, int q) {
    if (c == 0) return std::string("int");
    return static_cast<int>(cov_names.size()) == q ? cov_names[c - 1] : "x" + S(c);
  };
  for (int u = 1; u < k; ++u)
    for (int c = 0; c <= g.q1; ++c) names.push_back("beta_" + term(c, g.q1) + "_u" + S(u + 1));
  if (g.layout == TransitionLayout::Pairwise) {
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        if (v != u)
          for (int c = 0; c <= g.q2; ++c)
            names.push_back("gamma_" + term(c, g.q2) + "_u" + S(u + 1) + "_v" + S(v + 1));
  } else {
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        if (v != u) names.push_back("gamma0_u" + S(u + 1) + "_v" + S(v + 1));
    for (int u = 1; u < k; ++u)
      for (int c = 1; c <= g.q2; ++c) names.push_back("gamma1_" + term(c, g.q2) + "_u" + S(u + 1));
  }
  return names;
}

/// Values in the order of parameter_names.
inline std::vector<double> flatten_params(const ModelParams& p) {
  std::vector<double> out;
  const int k = p.k();
  for (const auto& phi : p.measurement.phi)
    for (int y = 0; y < phi.rows(); ++y)
      for (int u = 0; u < k; ++u) out.push_back(phi(y, u));
  if (const auto* c = std::get_if<LatentChainParams>(&p.latent)) {
    for (int u = 0; u < k; ++u) out.push_back(c->initial(u));
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) out.push_back(c->transition(u, v));
    return out;
  }
  const auto& g = p.regression();
  for (int u = 1; u < k; ++u)
    for (int c = 0; c <= g.q1; ++c) out.push_back(g.beta(c, u - 1));
  if (g.layout == TransitionLayout::Pairwise) {
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        if (v != u)
          for (int c = 0; c <= g.q2; ++c) out.push_back(g.gamma_pairwise[u](c, dest_column(u, v)));
  } else {
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        if (v != u) out.push_back(g.gamma_intercept(u, v));
    for (int u = 1; u < k; ++u)
      for (int c = 0; c < g.q2; ++c) out.push_back(g.gamma_slope(c, u));
  }
  return out;
}

//---------------------------------------------------------------------------//
// Monte Carlo harness

enum class Method { FML, ThreeStep, ThreeStepImp };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::FML: return "fml";
    case Method::ThreeStep: return "3s";
    case Method::ThreeStepImp: return "3s-imp";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "fml") return Method::FML;
  if (s == "3s") return Method::ThreeStep;
  if (s == "3s-imp") return Method::ThreeStepImp;
  fail(ErrorKind::Usage, "unknown method '" + s + "' (expected fml|3s|3s-imp)");
}

struct EstimationOptions {
  FitOptions fit;  // starts, EM tolerances, logit solver options
  int imp_max_iter = 200;
  double imp_tol = 1e-6;
  TransitionLayout layout = TransitionLayout::Pairwise;

  ThreeStepOptions three_step(bool improved) const {
    ThreeStepOptions o;
    o.improved = improved;
    o.imp_max_iter = imp_max_iter;
    o.imp_tol = imp_tol;
    o.lc = fit;
    return o;
  }
};

// Fits one of the built-in estimators. When `lc_cache` is given, 3S and
// 3S-IMP share a single Step-1 fit.
inline FitResult fit_method(Method m, const ResponsePanel& panel, const CovariatePanel* covs, int k,
                            const EstimationOptions& opts, std::optional<LCFit>* lc_cache = nullptr) {
  if (m == Method::FML) {
    if (covs) return fit_cov_lm_fml(panel, *covs, k, opts.layout, opts.fit);
    return fit_basic_lm_fml(panel, k, opts.fit);
  }
  const ThreeStepOptions o = opts.three_step(m == Method::ThreeStepImp);
  std::optional<LCFit> local;
  std::optional<LCFit>& lc = lc_cache ? *lc_cache : local;
  if (!lc) lc = fit_lc_pooled(panel, k, o.lc);
  return fit_3s_from_lc(*lc, panel, covs, opts.layout, o);
}

struct Replication {
  const Scenario& scenario;
  const SimulatedData& data;
  std::uint64_t fit_seed;
  std::optional<LCFit> lc_cache;  // Step-1 fit shared by the three-step estimators
};

using Estimator = std::function<FitResult(Replication&)>;

struct NamedEstimator {
  std::string name;
  Estimator fit;
};

inline NamedEstimator builtin_estimator(Method m, const EstimationOptions& opts) {
  return {to_string(m), [m, opts](Replication& rep) {
            EstimationOptions o = opts;
            o.fit.seed = rep.fit_seed;
            o.fit.threads = 1;
            return fit_method(m, rep.data.responses, rep.data.covs(), rep.scenario.k, o, &rep.lc_cache);
          }};
}

struct ReplicationDiag {
  bool failed = false;
  std::string error;
  bool converged = false;
  bool degenerate = false;
  int cycles = 0;
  int iterations = 0;  // best start
  double loglik = 0.0;
  double seconds = 0.0;  // wall time, not part of the serialized report
};

struct MethodReport {
  std::string method;
  std::vector<double> bias, se, rmse;
  int successes = 0, failures = 0;
  std::vector<ReplicationDiag> diags;            // per replication
  std::vector<std::vector<double>> estimates;    // aligned, empty for failed replications
};

struct MonteCarloOptions {
  int reps = 100;
  std::uint64_t seed = 0;
  int threads = 1;
  double max_failure_rate = 0.2;
};

struct MonteCarloReport {
  std::string scenario;
  int reps = 0;
  std::vector<std::string> names;
  std::vector<double> truth;
  std::vector<MethodReport> methods;
};

namespace detail {

struct Summary {
  std::vector<double> mean, sd;
};

// Mean and standard deviation per column; `denom_offset` 0 divides by the
// count, 1 by count - 1. Sums are shifted by the first row so identical
// rows give exactly zero spread.
inline Summary summarize(const std::vector<std::vector<double>>& rows, std::size_t dim, int denom_offset) {
  Summary s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  int count = 0;
  const std::vector<double>* first = nullptr;
  for (const auto& r : rows)
    if (!r.empty()) {
      if (!first) first = &r;
      ++count;
      for (std::size_t p = 0; p < dim; ++p) s.mean[p] += r[p] - (*first)[p];
    }
  if (count == 0) return s;
  for (std::size_t p = 0; p < dim; ++p) s.mean[p] = (*first)[p] + s.mean[p] / count;
  for (const auto& r : rows)
    if (!r.empty())
      for (std::size_t p = 0; p < dim; ++p) s.sd[p] += (r[p] - s.mean[p]) * (r[p] - s.mean[p]);
  const int denom = count - denom_offset;
  for (auto& v : s.sd) v = denom > 0 ? std::sqrt(v / denom) : 0.0;
  return s;
}

}  // namespace detail

/// Replication m draws data with child_seed(seed, m) and runs every
/// estimator on the same data; each fit is aligned to the truth.
inline MonteCarloReport run_monte_carlo(const Scenario& sc, const std::vector<NamedEstimator>& estimators,
                                        const MonteCarloOptions& opts) {
  require(opts.reps >= 2, "Monte Carlo needs reps >= 2");
  require(!estimators.empty(), "no estimators requested");
  sc.validate();
  const std::size_t M = estimators.size();
  MonteCarloReport rep;
  rep.scenario = sc.id;
  rep.reps = opts.reps;
  std::vector<std::string> cov_names;
  if (sc.covariates)
    for (int c = 0; c < sc.covariates->q; ++c) cov_names.push_back("x_" + std::to_string(c + 1));
  rep.names = parameter_names(sc.truth, cov_names);
  rep.truth = flatten_params(sc.truth);
  const std::size_t P = rep.truth.size();

  std::vector<std::vector<ReplicationDiag>> diags(opts.reps, std::vector<ReplicationDiag>(M));
  std::vector<std::vector<std::vector<double>>> est(opts.reps, std::vector<std::vector<double>>(M));
  parallel_for(opts.reps, opts.threads, [&](int m) {
    const std::uint64_t rseed = child_seed(opts.seed, static_cast<std::uint64_t>(m));
    const SimulatedData data = gen_panel(sc, child_seed(rseed, 0));
    Replication ctx{sc, data, child_seed(rseed, 1), std::nullopt};
    for (std::size_t e = 0; e < M; ++e) {
      ReplicationDiag& d = diags[m][e];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const FitResult fit = estimators[e].fit(ctx);
        const auto aligned = align_states(fit.params, sc.truth);
        est[m][e] = flatten_params(aligned.params);
        if (est[m][e].size() != P) fail(ErrorKind::Harness, "estimate has the wrong parameter count");
        d.converged = fit.converged;
        d.degenerate = fit.degenerate;
        d.cycles = fit.cycles;
        d.iterations = fit.iterations.empty() ? 0 : fit.iterations[fit.best_start];
        d.loglik = fit.loglik;
      } catch (const Error& err) {
        if (err.kind() == ErrorKind::Usage || err.kind() == ErrorKind::Harness) throw;
        d.failed = true;
        d.error = err.what();
        est[m][e].clear();
      }
      d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  });

  for (std::size_t e = 0; e < M; ++e) {
    MethodReport mr;
    mr.method = estimators[e].name;
    std::vector<std::vector<double>> rows(opts.reps);
    for (int m = 0; m < opts.reps; ++m) {
      mr.diags.push_back(diags[m][e]);
      rows[m] = est[m][e];
      if (diags[m][e].failed) ++mr.failures;
      else ++mr.successes;
    }
    if (mr.failures > opts.max_failure_rate * opts.reps)
      fail(ErrorKind::Harness, mr.method + ": " + std::to_string(mr.failures) + " of " +
                                   std::to_string(opts.reps) + " replications failed");
    const auto s = detail::summarize(rows, P, 0);
    for (std::size_t p = 0; p < P; ++p) {
      const double b = s.mean[p] - rep.truth[p];
      mr.bias.push_back(b);
      mr.se.push_back(s.sd[p]);
      mr.rmse.push_back(std::sqrt(b * b + s.sd[p] * s.sd[p]));
    }
    mr.estimates = std::move(rows);
    rep.methods.push_back(std::move(mr));
  }
  return rep;
}

inline MonteCarloReport run_monte_carlo(const Scenario& sc, const std::vector<Method>& methods,
                                        const EstimationOptions& est_opts, const MonteCarloOptions& opts) {
  std::vector<NamedEstimator> ests;
  for (Method m : methods) ests.push_back(builtin_estimator(m, est_opts));
  return run_monte_carlo(sc, ests, opts);
}

}  // namespace lmest
