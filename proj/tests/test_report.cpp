#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

#include "test_util.hpp"

using namespace lmest;

namespace {

MeasurementParams columns(const std::vector<Eigen::VectorXd>& cols) {
  MeasurementParams m{static_cast<int>(cols.size()), {}};
  Eigen::MatrixXd phi(cols[0].size(), m.k);
  for (int u = 0; u < m.k; ++u) phi.col(u) = cols[u];
  m.phi.push_back(phi);
  return m;
}

BootstrapEstimator constant_estimator(const ModelParams& p) {
  return [p](const ResponsePanel&, const CovariatePanel*, std::uint64_t) {
    FitResult f;
    f.params = p;
    return f;
  };
}

}  // namespace

TEST(Scores, EndpointsAndBinaryItem) {
  Eigen::VectorXd low(4), high(4), bin(2);
  low << 1, 0, 0, 0;
  high << 0, 0, 0, 1;
  const auto mu = item_mean_score(columns({low, high}));
  EXPECT_EQ(mu(0, 0), 0.0);
  EXPECT_EQ(mu(0, 1), 1.0);
  bin << 0.3, 0.7;
  EXPECT_NEAR(item_mean_score(columns({bin}))(0, 0), 0.7, 1e-15);
  Eigen::VectorXd mid(3);
  mid << 0.2, 0.5, 0.3;
  EXPECT_NEAR(item_mean_score(columns({mid}))(0, 0), (0.5 + 2 * 0.3) / 2, 1e-15);
}

TEST(Scores, SingleCategoryRejected) {
  MeasurementParams m{1, {Eigen::MatrixXd::Ones(1, 1)}};
  EXPECT_THROW(item_mean_score(m), Error);
}

TEST(Scores, LinearInPhi) {
  std::mt19937_64 gen(1);
  const std::vector<int> cats{2, 3, 5};
  const auto a = testutil::random_phi(3, cats, gen), b = testutil::random_phi(3, cats, gen);
  for (double alpha : {0.0, 0.25, 0.8, 1.0}) {
    MeasurementParams mix = a;
    for (std::size_t j = 0; j < cats.size(); ++j) mix.phi[j] = alpha * a.phi[j] + (1 - alpha) * b.phi[j];
    const Eigen::MatrixXd lhs = item_mean_score(mix);
    const Eigen::MatrixXd rhs = alpha * item_mean_score(a) + (1 - alpha) * item_mean_score(b);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_TRUE((lhs.array() >= 0).all() && (lhs.array() <= 1).all());
  }
}

TEST(Scores, SectionAverages) {
  Eigen::MatrixXd mu(4, 2);
  mu << 0.1, 0.9,
        0.3, 0.5,
        0.6, 0.2,
        0.4, 0.4;
  const auto one = section_mean_score(mu, {0, 0, 0, 0});
  EXPECT_LT((one.row(0) - mu.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
  const auto two = section_mean_score(mu, {1, 0, 1, 0});
  EXPECT_NEAR(two(1, 0), 0.35, 1e-15);
  EXPECT_NEAR(two(0, 1), 0.45, 1e-15);
  EXPECT_THROW(section_mean_score(mu, {0, 2, 0, 2}), Error);  // section 1 empty
  EXPECT_THROW(section_mean_score(mu, {0, 0, 0}), Error);
}

TEST(Scores, StateOrdering) {
  Eigen::MatrixXd s(2, 4);
  s << 0.5, 0.5, 0.5, 0.5,
       0.78, 0.11, 0.60, 0.29;
  auto order = order_states(s, 1);
  for (auto& o : order) ++o;
  EXPECT_EQ(order, (std::vector<int>{2, 4, 3, 1}));
  EXPECT_EQ(order_states(s, 0), (std::vector<int>{0, 1, 2, 3}));  // all tied

  std::mt19937_64 gen(2);
  std::uniform_int_distribution<int> level(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd r(1, 6);
    for (int u = 0; u < 6; ++u) r(0, u) = level(gen) / 4.0;
    const auto ord = order_states(r, 0);
    auto sorted = ord;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5}));
    for (int m = 1; m < 6; ++m) {
      EXPECT_LE(r(0, ord[m - 1]), r(0, ord[m]));
      if (r(0, ord[m - 1]) == r(0, ord[m])) EXPECT_LT(ord[m - 1], ord[m]);
    }
  }
}

TEST(Tables, SingleUnitGroupsEqualUnitProbabilities) {
  std::mt19937_64 gen(3);
  const int n = 4, T = 3, k = 3;
  const auto covs = testutil::random_covariates(n, T, 2, gen);
  const ModelParams fit{testutil::random_phi(k, {2}, gen),
                        testutil::random_regression(k, 2, 2, TransitionLayout::Pairwise, gen)};
  const auto tab = averaged_probability_tables(fit, covs, {10, 11, 12, 13});
  ASSERT_EQ(tab.groups.size(), 4u);
  for (int i = 0; i < n; ++i) {
    const auto c = unit_chain(fit.latent, &covs, i, T);
    EXPECT_LT((tab.initial[i] - c.initial).cwiseAbs().maxCoeff(), 1e-15);
    for (int t = 1; t < T; ++t)
      EXPECT_LT((tab.transition[i][t - 1] - c.transitions[t - 1]).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Tables, GroupMeansStayStochastic) {
  std::mt19937_64 gen(4);
  const int n = 30, T = 4, k = 3;
  const auto covs = testutil::random_covariates(n, T, 1, gen);
  for (auto layout : {TransitionLayout::Pairwise, TransitionLayout::Difference}) {
    const ModelParams fit{testutil::random_phi(k, {2}, gen), testutil::random_regression(k, 1, 1, layout, gen)};
    std::vector<int> group(n);
    for (int i = 0; i < n; ++i) group[i] = i % 3;
    const auto tab = averaged_probability_tables(fit, covs, group, {0, 1, 2, 7});
    ASSERT_EQ(tab.notes.size(), 1u);
    EXPECT_NE(tab.notes[0].find("7"), std::string::npos);
    EXPECT_EQ(tab.sizes, (std::vector<int>{10, 10, 10}));
    for (std::size_t g = 0; g < tab.groups.size(); ++g) {
      EXPECT_NEAR(tab.initial[g].sum(), 1.0, 1e-10);
      for (const auto& P : tab.transition[g])
        for (int u = 0; u < k; ++u) EXPECT_NEAR(P.row(u).sum(), 1.0, 1e-10);
    }
  }
}

TEST(Tables, NoCovariatesMeansNoHeterogeneity) {
  std::mt19937_64 gen(5);
  const int n = 9, T = 3;
  const auto covs = CovariatePanel::empty(n, T);
  const ModelParams fit{testutil::random_phi(2, {2}, gen),
                        testutil::random_regression(2, 0, 0, TransitionLayout::Pairwise, gen)};
  const auto tab = averaged_probability_tables(fit, covs, {0, 0, 1, 1, 1, 2, 2, 2, 2});
  for (std::size_t g = 1; g < 3; ++g) {
    EXPECT_LT((tab.initial[g] - tab.initial[0]).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((tab.transition[g][1] - tab.transition[0][1]).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_THROW(averaged_probability_tables(scenario_preset("basic-s1").truth, covs, std::vector<int>(n, 0)), Error);
}

TEST(Bootstrap, ConstantEstimatorHasZeroSpread) {
  const auto sc = scenario_preset("cov-s1");
  const auto data = gen_panel(sc, 1);
  BootstrapOptions bo;
  bo.B = 2;
  const auto res = bootstrap_se(data.responses, data.covs(), sc.truth, constant_estimator(sc.truth), bo);
  ASSERT_EQ(res.se.size(), flatten_params(sc.truth).size());
  for (double s : res.se) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(res.failures, 0);
}

TEST(Bootstrap, ResamplesWholeUnits) {
  const auto sc = scenario_preset("cov-s1");
  const auto data = gen_panel(sc, 2);
  BootstrapOptions bo;
  bo.B = 4;
  bo.seed = 8;
  int calls = 0;
  std::mutex mu;
  BootstrapEstimator check = [&](const ResponsePanel& p, const CovariatePanel* c, std::uint64_t) {
    EXPECT_EQ(p.n(), data.responses.n());
    EXPECT_EQ(p.T(), data.responses.T());
    EXPECT_EQ(p.r(), data.responses.r());
    EXPECT_NE(c, nullptr);
    std::lock_guard<std::mutex> lock(mu);
    ++calls;
    FitResult f;
    f.params = sc.truth;
    return f;
  };
  bootstrap_se(data.responses, data.covs(), sc.truth, check, bo);
  EXPECT_EQ(calls, 4);

  // each resampled unit carries its own responses and covariates
  const auto idx = bootstrap_indices(sc.n, 8, 1);
  const auto rp = data.responses.select_units(idx);
  const auto rc = data.covariates->select_units(idx);
  for (int m = 0; m < 20; ++m)
    for (int t = 0; t < sc.T; ++t) {
      EXPECT_EQ(rp(m, t, 0), data.responses(idx[m], t, 0));
      EXPECT_EQ(rc.series()(m * sc.T + t, 1), data.covariates->series()(idx[m] * sc.T + t, 1));
    }
}

TEST(Bootstrap, PrefixStableAndThreadInvariant) {
  const auto sc = scenario_preset("basic-s1");
  const auto data = gen_panel(sc, 3);
  EstimationOptions eo;
  eo.fit.n_starts = 2;
  const auto ref = fit_method(Method::ThreeStep, data.responses, nullptr, 2, eo);
  BootstrapOptions bo;
  bo.seed = 17;
  bo.B = 3;
  const auto small = bootstrap_se(data.responses, nullptr, 2, Method::ThreeStep, eo, ref.params, bo);
  bo.B = 6;
  bo.threads = 3;
  const auto big = bootstrap_se(data.responses, nullptr, 2, Method::ThreeStep, eo, ref.params, bo);
  for (int b = 0; b < 3; ++b) EXPECT_EQ(small.draws[b], big.draws[b]);
  bo.threads = 1;
  const auto big1 = bootstrap_se(data.responses, nullptr, 2, Method::ThreeStep, eo, ref.params, bo);
  EXPECT_EQ(big.se, big1.se);
}

TEST(Bootstrap, FullLikelihoodNeedsOverride) {
  const auto sc = scenario_preset("basic-s1");
  const auto data = gen_panel(sc, 4);
  EstimationOptions eo;
  eo.fit.n_starts = 1;
  BootstrapOptions bo;
  bo.B = 2;
  EXPECT_THROW(bootstrap_se(data.responses, nullptr, 2, Method::FML, eo, sc.truth, bo), Error);
  EXPECT_NO_THROW(bootstrap_se(data.responses, nullptr, 2, Method::FML, eo, sc.truth, bo, true));
}

TEST(Bootstrap, TooManyFailuresIsHarnessError) {
  const auto sc = scenario_preset("basic-s1");
  const auto data = gen_panel(sc, 5);
  BootstrapOptions bo;
  bo.B = 10;
  BootstrapEstimator bad = [&](const ResponsePanel&, const CovariatePanel*, std::uint64_t seed) -> FitResult {
    if (seed % 2 == 0) fail(ErrorKind::Degenerate, "planted");
    FitResult f;
    f.params = sc.truth;
    return f;
  };
  try {
    bootstrap_se(data.responses, nullptr, sc.truth, bad, bo);
    FAIL() << "expected a harness error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Harness);
  }
}

// Bootstrap and Monte Carlo spreads of the initial probability agree on
// benchmark data (reference Monte Carlo se 0.0234 for 3S at r=10).
TEST(Bootstrap, AgreesWithMonteCarloSpread) {
  const auto sc = scenario_preset("basic-s1", 10);
  const auto data = gen_panel(sc, 6);
  EstimationOptions eo;
  eo.fit.n_starts = 3;
  eo.fit.seed = 1;
  const auto ref = fit_method(Method::ThreeStep, data.responses, nullptr, 2, eo);
  const auto aligned = align_states(ref.params, sc.truth).params;
  BootstrapOptions bo;
  bo.B = 99;
  bo.seed = 2;
  const auto res = bootstrap_se(data.responses, nullptr, 2, Method::ThreeStep, eo, aligned, bo);
  const auto it = std::find(res.names.begin(), res.names.end(), "pi_1");
  ASSERT_NE(it, res.names.end());
  const double se = res.se[it - res.names.begin()];
  EXPECT_GE(se, 0.0234 / 1.5);
  EXPECT_LE(se, 0.0234 * 1.5);
}
