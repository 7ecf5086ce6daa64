#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace lmest;

namespace {

void expect_monotone(const std::vector<std::vector<double>>& traces) {
  for (const auto& tr : traces)
    for (std::size_t m = 1; m < tr.size(); ++m) EXPECT_GE(tr[m], tr[m - 1] - 1e-9) << "iteration " << m;
}

double independence_loglik(const ResponsePanel& p) {
  std::vector<Eigen::VectorXd> counts;
  for (int c : p.cats()) counts.push_back(Eigen::VectorXd::Zero(c));
  for (int i = 0; i < p.n(); ++i)
    for (int t = 0; t < p.T(); ++t)
      for (int j = 0; j < p.r(); ++j)
        if (p(i, t, j) != kMissing) counts[j](p(i, t, j)) += 1;
  double ll = 0.0;
  for (const auto& c : counts)
    for (int y = 0; y < c.size(); ++y)
      if (c(y) > 0) ll += c(y) * std::log(c(y) / c.sum());
  return ll;
}

FitOptions quick(int starts = 3, std::uint64_t seed = 1) {
  FitOptions o;
  o.n_starts = starts;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(RandomStart, Deterministic) {
  std::mt19937_64 gen(1);
  auto panel = testutil::random_panel(30, 3, {2, 3, 2}, gen);
  auto a = random_start(3, panel, 42);
  auto b = random_start(3, panel, 42);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(a.measurement.phi[j], b.measurement.phi[j]);
  EXPECT_EQ(a.chain().transition, b.chain().transition);
  a.measurement.validate();
  a.chain().validate();
  auto c = random_start(3, panel, 43);
  EXPECT_NE(a.measurement.phi[0], c.measurement.phi[0]);
}

TEST(RandomStart, CovariateBlockIsSmallAndValid) {
  std::mt19937_64 gen(2);
  auto panel = testutil::random_panel(30, 3, {2, 2}, gen);
  auto covs = testutil::random_covariates(30, 3, 2, gen);
  for (auto layout : {TransitionLayout::Pairwise, TransitionLayout::Difference}) {
    auto s = random_start(3, panel, covs, layout, 9);
    s.regression().validate();
    EXPECT_LT(s.regression().beta.cwiseAbs().maxCoeff(), 2.0);
  }
}

TEST(RandomStart, SingleStateIsEmpirical) {
  std::mt19937_64 gen(3);
  auto panel = testutil::random_panel(40, 4, {3, 2}, gen, 0.1);
  auto s = random_start(1, panel, 5);
  auto freq = detail::pooled_frequencies(panel);
  for (int j = 0; j < 2; ++j) EXPECT_LE((s.measurement.phi[j].col(0) - freq[j]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(RandomStart, ZeroScaleCollapsesStarts) {
  auto sc = scenario_preset("basic-s1");
  sc.n = 100;
  auto data = gen_panel(sc, 3);
  FitOptions o = quick(4);
  o.perturbation = 0.0;
  o.max_iter = 50;
  auto fit = fit_basic_lm_fml(data.responses, 2, o);
  for (double ll : fit.start_logliks) EXPECT_EQ(ll, fit.start_logliks[0]);
}

TEST(PooledLC, SingleClassClosedForm) {
  std::mt19937_64 gen(4);
  auto panel = testutil::random_panel(50, 3, {2, 4}, gen, 0.15);
  auto lc = fit_lc_pooled(panel, 1, quick(1));
  auto freq = detail::pooled_frequencies(panel);
  for (int j = 0; j < 2; ++j) EXPECT_LE((lc.phi.phi[j].col(0) - freq[j]).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(lc.rho(0), 1.0, 1e-15);
  EXPECT_NEAR(lc.loglik, independence_loglik(panel), 1e-8);
}

TEST(PooledLC, IdenticalColumnsCollapseToOneClass) {
  // Both states share one response distribution. From a symmetric start the
  // two-class fit stays on the one-class solution.
  Scenario sc = scenario_preset("basic-s1");
  for (auto& phi : sc.truth.measurement.phi) phi.col(1) = phi.col(0);
  auto data = gen_panel(sc, 8);
  FitOptions o = quick(1);
  o.perturbation = 0.0;
  auto two = fit_lc_pooled(data.responses, 2, o);
  auto one = fit_lc_pooled(data.responses, 1, quick(1));
  EXPECT_NEAR(two.loglik, one.loglik, 1e-6);
}

TEST(PooledLC, RecoversScenarioOnePhi) {
  auto sc = scenario_preset("basic-s1", 10);
  auto data = gen_panel(sc, 2024);
  auto lc = fit_lc_pooled(data.responses, 2, quick(5));
  EXPECT_NEAR(lc.rho.sum(), 1.0, 1e-10);
  ModelParams est{lc.phi, LatentChainParams{lc.rho, Eigen::Matrix2d::Identity()}};
  auto aligned = align_states(est, sc.truth);
  for (int j = 0; j < 10; ++j)
    EXPECT_LE((aligned.params.measurement.phi[j] - sc.truth.measurement.phi[j]).cwiseAbs().maxCoeff(), 0.05);
  expect_monotone(lc.traces);
}

TEST(PooledLC, DegenerateFlagWhenTooManyStates) {
  ResponsePanel p(4, 2, {2}, {0, 1, 1, 0, 0, 0, 1, 1});
  auto lc = fit_lc_pooled(p, 3, quick(2));
  EXPECT_TRUE(lc.degenerate);
}

TEST(BasicFML, SingleState) {
  std::mt19937_64 gen(5);
  auto panel = testutil::random_panel(60, 4, {2, 3, 2}, gen, 0.1);
  auto fit = fit_basic_lm_fml(panel, 1, quick(1));
  EXPECT_NEAR(fit.params.chain().initial(0), 1.0, 1e-15);
  EXPECT_NEAR(fit.params.chain().transition(0, 0), 1.0, 1e-15);
  auto freq = detail::pooled_frequencies(panel);
  for (int j = 0; j < 3; ++j)
    EXPECT_LE((fit.params.measurement.phi[j].col(0) - freq[j]).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(fit.loglik, independence_loglik(panel), 1e-8);
}

TEST(BasicFML, RejectsSingleOccasion) {
  ResponsePanel p(3, 1, {2}, {0, 1, 0});
  try {
    fit_basic_lm_fml(p, 2, quick(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Usage);
    EXPECT_NE(std::string(e.what()).find("latent-class"), std::string::npos);
  }
}

TEST(BasicFML, PooledEquivalenceAtSingleOccasion) {
  std::mt19937_64 gen(6);
  auto panel = testutil::random_panel(200, 1, {2, 2, 3, 2}, gen);
  FitOptions o = quick(3, 77);
  auto lc = fit_lc_pooled(panel, 2, o);
  auto fml = detail::fit_basic_em(panel, 2, o);
  ASSERT_EQ(lc.best_start, fml.best_start);
  for (int j = 0; j < 4; ++j)
    EXPECT_LE((lc.phi.phi[j] - fml.params.measurement.phi[j]).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((lc.rho - fml.params.chain().initial).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(lc.loglik, fml.loglik, 1e-9);
}

TEST(BasicFML, MonotoneAndValid) {
  auto sc = scenario_preset("basic-s4");
  sc.n = 200;
  auto data = gen_panel(sc, 10);
  auto fit = fit_basic_lm_fml(data.responses, 3, quick(6));
  expect_monotone(fit.traces);
  fit.params.measurement.validate();
  fit.params.chain().validate();
  double best = -INFINITY;
  for (double ll : fit.start_logliks) best = std::max(best, ll);
  EXPECT_EQ(fit.loglik, best);
}

TEST(BasicFML, FixedPointAtTruth) {
  auto sc = scenario_preset("basic-s1");
  sc.n = 20000;
  auto data = gen_panel(sc, 99);
  FitOptions o = quick(1);
  o.max_iter = 1;
  o.initial = sc.truth;
  auto fit = fit_basic_lm_fml(data.responses, 2, o);
  auto a = flatten_params(fit.params), b = flatten_params(sc.truth);
  for (std::size_t p = 0; p < a.size(); ++p) EXPECT_LT(std::abs(a[p] - b[p]), 0.02);
}

TEST(BasicFML, ThreadCountDoesNotChangeResult) {
  auto sc = scenario_preset("basic-s2");
  sc.n = 150;
  auto data = gen_panel(sc, 5);
  FitOptions o = quick(3);
  auto a = fit_basic_lm_fml(data.responses, 2, o);
  o.threads = 3;
  auto b = fit_basic_lm_fml(data.responses, 2, o);
  EXPECT_EQ(flatten_params(a.params), flatten_params(b.params));
  EXPECT_EQ(a.traces, b.traces);
}

TEST(CovFML, ZeroCovariatesMatchBasic) {
  auto sc = scenario_preset("basic-s1");
  sc.n = 300;
  auto data = gen_panel(sc, 12);
  // Tight tolerance so both fits sit on the maximum, not just near it.
  FitOptions o = quick(5);
  o.rel_tol = 1e-13;
  o.max_iter = 5000;
  auto basic = fit_basic_lm_fml(data.responses, 2, o);
  for (auto layout : {TransitionLayout::Pairwise, TransitionLayout::Difference}) {
    auto cov = fit_cov_lm_fml(data.responses, CovariatePanel::empty(300, 5), 2, layout, o);
    EXPECT_NEAR(cov.loglik, basic.loglik, 1e-6);
  }
}

TEST(CovFML, MonotoneBothLayouts) {
  auto sc = scenario_preset("cov-s1");
  sc.n = 200;
  auto data = gen_panel(sc, 21);
  for (auto layout : {TransitionLayout::Pairwise, TransitionLayout::Difference}) {
    auto fit = fit_cov_lm_fml(data.responses, *data.covariates, 2, layout, quick(4));
    expect_monotone(fit.traces);
    fit.params.measurement.validate();
    fit.params.regression().validate();
  }
}

TEST(CovFML, RequiresMatchingCovariates) {
  auto sc = scenario_preset("cov-s1");
  sc.n = 20;
  auto data = gen_panel(sc, 1);
  EXPECT_THROW(fit_cov_lm_fml(data.responses, CovariatePanel::empty(19, 5), 2, TransitionLayout::Pairwise, quick(1)),
               Error);
}
