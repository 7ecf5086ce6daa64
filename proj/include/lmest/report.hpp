#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lmest/em.hpp"
#include "lmest/error.hpp"
#include "lmest/model.hpp"
#include "lmest/parallel.hpp"
#include "lmest/simulate.hpp"
#include "lmest/types.hpp"

namespace lmest {

/// mu(j, u) = sum_y y * phi_j(y, u) / (c_j - 1), in [0, 1].
inline Eigen::MatrixXd item_mean_score(const MeasurementParams& meas) {
  Eigen::MatrixXd mu(meas.r(), meas.k);
  for (int j = 0; j < meas.r(); ++j) {
    const auto& phi = meas.phi[j];
    require(phi.rows() >= 2, "item " + std::to_string(j + 1) + " has fewer than 2 categories; score undefined");
    const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(phi.rows(), 0.0, static_cast<double>(phi.rows() - 1));
    mu.row(j) = (y.transpose() * phi) / static_cast<double>(phi.rows() - 1);
  }
  return mu;
}

/// Unweighted average of item scores within each section. section_of[j] is
/// the 0-based section of item j; every section in [0, d) needs an item.
inline Eigen::MatrixXd section_mean_score(const Eigen::MatrixXd& mu, const std::vector<int>& section_of) {
  require(static_cast<Eigen::Index>(section_of.size()) == mu.rows(),
          "section map must assign every item exactly once");
  if (section_of.empty()) return Eigen::MatrixXd(0, mu.cols());
  const int d = *std::max_element(section_of.begin(), section_of.end()) + 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, mu.cols());
  std::vector<int> count(d, 0);
  for (std::size_t j = 0; j < section_of.size(); ++j) {
    require(section_of[j] >= 0, "negative section index");
    out.row(section_of[j]) += mu.row(static_cast<Eigen::Index>(j));
    ++count[section_of[j]];
  }
  for (int s = 0; s < d; ++s) {
    require(count[s] > 0, "section " + std::to_string(s + 1) + " has no items");
    out.row(s) /= count[s];
  }
  return out;
}

/// States sorted ascending by their score in the pivot section; equal
/// scores keep the original state order. Returns 0-based state indices.
inline std::vector<int> order_states(const Eigen::MatrixXd& section_scores, int pivot) {
  require(pivot >= 0 && pivot < section_scores.rows(), "pivot section out of range");
  std::vector<int> order(section_scores.cols());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return section_scores(pivot, a) < section_scores(pivot, b);
  });
  return order;
}

//---------------------------------------------------------------------------//

struct ProbabilityTables {
  std::vector<int> groups;                              // group labels present, ascending
  std::vector<int> sizes;                               // units per group
  std::vector<Eigen::VectorXd> initial;                 // per group
  std::vector<std::vector<Eigen::MatrixXd>> transition; // per group, per occasion 2..T
  std::vector<std::string> notes;
};

/// Group means of the unit-level initial vectors and transition matrices
/// implied by a covariate fit. `group_of` holds one label per unit; labels
/// listed in `expected` that have no units are reported in `notes`.
inline ProbabilityTables averaged_probability_tables(const ModelParams& fit, const CovariatePanel& covs,
                                                     const std::vector<int>& group_of,
                                                     const std::vector<int>& expected = {}) {
  require(fit.has_covariates(), "averaged probability tables need a covariate fit");
  require(static_cast<int>(group_of.size()) == covs.n(), "one group label per unit is required");
  const auto& reg = fit.regression();
  const int k = reg.k, T = covs.T();
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < covs.n(); ++i) members[group_of[i]].push_back(i);
  ProbabilityTables out;
  for (int g : expected)
    if (!members.count(g)) out.notes.push_back("group " + std::to_string(g) + " has no units; omitted");
  for (const auto& [g, units] : members) {
    Eigen::VectorXd init = Eigen::VectorXd::Zero(k);
    std::vector<Eigen::MatrixXd> trans(T - 1, Eigen::MatrixXd::Zero(k, k));
    for (int i : units) {
      const UnitChain c = unit_chain(reg, covs, i);
      init += c.initial;
      for (int t = 1; t < T; ++t) trans[t - 1] += c.transitions[t - 1];
    }
    const double m = static_cast<double>(units.size());
    init /= m;
    for (auto& P : trans) P /= m;
    out.groups.push_back(g);
    out.sizes.push_back(static_cast<int>(units.size()));
    out.initial.push_back(std::move(init));
    out.transition.push_back(std::move(trans));
  }
  return out;
}

//---------------------------------------------------------------------------//
// Nonparametric bootstrap over whole units

// Refits a resampled panel; `seed` drives the refit's random starts.
using BootstrapEstimator =
    std::function<FitResult(const ResponsePanel&, const CovariatePanel*, std::uint64_t seed)>;

struct BootstrapOptions {
  int B = 99;
  std::uint64_t seed = 0;
  int threads = 1;
  double max_failure_rate = 0.2;
};

struct BootstrapResult {
  std::vector<std::string> names;
  std::vector<double> estimate;             // reference fit, flattened
  std::vector<double> se;                   // denominator (successful draws - 1)
  std::vector<std::vector<double>> draws;   // aligned per-draw estimates, empty when failed
  std::vector<std::string> errors;          // per draw, empty on success
  int failures = 0;
};

/// Indices of the units in bootstrap draw b.
inline std::vector<int> bootstrap_indices(int n, std::uint64_t seed, int b) {
  std::mt19937_64 gen(child_seed(seed, static_cast<std::uint64_t>(b)));
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> idx(n);
  for (auto& i : idx) i = pick(gen);
  return idx;
}

/// Standard errors from B whole-unit resamples; each draw is aligned to
/// `reference` (the fit on the original data) before the spread is taken.
inline BootstrapResult bootstrap_se(const ResponsePanel& panel, const CovariatePanel* covs,
                                    const ModelParams& reference, const BootstrapEstimator& estimator,
                                    const BootstrapOptions& opts) {
  require(opts.B >= 2, "bootstrap needs B >= 2");
  if (covs) covs->check_matches(panel);
  BootstrapResult res;
  res.names = parameter_names(reference, covs ? covs->names() : std::vector<std::string>{});
  res.estimate = flatten_params(reference);
  const std::size_t P = res.estimate.size();
  res.draws.assign(opts.B, {});
  res.errors.assign(opts.B, {});
  parallel_for(opts.B, opts.threads, [&](int b) {
    const std::vector<int> idx = bootstrap_indices(panel.n(), opts.seed, b);
    const ResponsePanel rp = panel.select_units(idx);
    std::optional<CovariatePanel> rc;
    if (covs) rc = covs->select_units(idx);
    try {
      const FitResult fit = estimator(rp, rc ? &*rc : nullptr,
                                      child_seed(child_seed(opts.seed, static_cast<std::uint64_t>(b)), 1));
      res.draws[b] = flatten_params(align_states(fit.params, reference).params);
      if (res.draws[b].size() != P) fail(ErrorKind::Harness, "bootstrap estimate has the wrong parameter count");
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Usage || e.kind() == ErrorKind::Harness) throw;
      res.draws[b].clear();
      res.errors[b] = e.what();
    }
  });
  for (const auto& e : res.errors)
    if (!e.empty()) ++res.failures;
  if (res.failures > opts.max_failure_rate * opts.B)
    fail(ErrorKind::Harness, std::to_string(res.failures) + " of " + std::to_string(opts.B) +
                                 " bootstrap draws failed");
  res.se = detail::summarize(res.draws, P, 1).sd;
  return res;
}

/// Bootstrap with one of the built-in estimators. FML is accepted only when
/// `allow_fml` is set.
inline BootstrapResult bootstrap_se(const ResponsePanel& panel, const CovariatePanel* covs, int k,
                                    Method method, const EstimationOptions& est, const ModelParams& reference,
                                    const BootstrapOptions& opts, bool allow_fml = false) {
  require(method != Method::FML || allow_fml,
          "bootstrap of the full-likelihood estimator needs an explicit override");
  BootstrapEstimator fn = [&, method](const ResponsePanel& p, const CovariatePanel* c, std::uint64_t seed) {
    EstimationOptions o = est;
    o.fit.seed = seed;
    o.fit.threads = 1;
    return fit_method(method, p, c, k, o);
  };
  return bootstrap_se(panel, covs, reference, fn, opts);
}

}  // namespace lmest
