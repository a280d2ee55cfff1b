#include "fdd/estimators.hpp"
#include "fdd/simulation.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace fdd;

namespace {

PotentialMeans flat_means(double mu00, double mu01, double mu10, double mu11)
{
  PotentialMeans m;
  m.mu00 = { { mu00 } };
  m.mu01 = { { mu01 } };
  m.mu10 = { { mu10 } };
  m.mu11 = { { mu11 } };
  return m;
}

SidedProbability step(double below, double above)
{
  return { { { below } }, { { above } } };
}

// O = M in the post cohort, all jumps 0.5, ATE_O = 0.25.
DGPSpec equal_jump_spec()
{
  DGPSpec s;
  s.window_lo = -5;
  s.window_hi = 5;
  s.n_per_cohort = 4000;
  s.means_pre = s.means_post = flat_means(0.0, 0.1, 0.2, 0.35);
  s.p_m_pre = s.p_m_post = step(0.2, 0.7);
  s.p_o_post = step(0.2, 0.7);
  s.joint_rule = JointRule::equal;
  return s;
}

} // namespace

TEST(TrueEstimands, EqualJumpsRecoverAte)
{
  const auto te = true_estimands(equal_jump_spec());
  EXPECT_NEAR(te.ate_o, 0.25, 1e-15);
  EXPECT_NEAR(te.jumps.o_post, 0.5, 1e-15);
  EXPECT_NEAR(te.jumps.m_post, 0.5, 1e-15);
  EXPECT_NEAR(te.jumps.t_post, 0.5, 1e-15);
  EXPECT_NEAR(te.tau_frd_limit, 0.25, 1e-12);
}

TEST(TrueEstimands, UnequalJumpsShiftByGapO)
{
  // dominance: dT = dM = 0.25, dO = 0.5, so dO/dT = 2 and the bias is +gap_o
  DGPSpec s = equal_jump_spec();
  s.joint_rule = JointRule::dominance;
  s.p_m_pre = s.p_m_post = step(0.2, 0.45);
  s.p_o_post = step(0.3, 0.8);
  const auto te = true_estimands(s);
  EXPECT_NEAR(te.gap_o, 0.2, 1e-15);
  EXPECT_NEAR(te.jumps.o_post / te.jumps.t_post, 2.0, 1e-12);
  // hand oracle: dY_post = 0.25 mu11 + 0.25 mu10 - 0.5 mu00, dY_pre = 0.25 mu01
  const double wald_post = (0.25 * 0.35 + 0.25 * 0.2) / 0.25;
  const double wald_pre = 0.25 * 0.1 / 0.25;
  EXPECT_NEAR(te.tau_frd_limit, wald_post - wald_pre, 1e-12);
  EXPECT_NEAR(te.tau_frd_limit, 0.25 + 0.2, 1e-12);

  const auto b = bias_decompose(te.ate_o, te.gap_o, te.gap_m, population_limits(s));
  EXPECT_NEAR(b.tau_implied, te.tau_frd_limit, 1e-12);
  EXPECT_NEAR(b.term_o, -0.2, 1e-12);
  EXPECT_NEAR(b.term_m, 0.0, 1e-12);
}

TEST(TrueEstimands, BiasLawHoldsOverRandomSpecs)
{
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const JointRule rules[] = { JointRule::independent, JointRule::dominance, JointRule::equal };
  for (int i = 0; i < 300; ++i) {
    DGPSpec s;
    s.window_lo = -1;
    s.window_hi = 1;
    s.means_pre = s.means_post = flat_means(u(rng), u(rng), u(rng), u(rng));
    s.joint_rule = rules[i % 3];
    const double pm_lo = 0.3 * u(rng);
    const double pm_hi = 0.4 + 0.3 * u(rng);
    s.p_m_pre = step(0.3 * u(rng), 0.4 + 0.3 * u(rng));
    s.p_m_post = step(pm_lo, pm_hi);
    s.p_o_post = s.joint_rule == JointRule::dominance
                   ? step(pm_lo + 0.2 * u(rng), pm_hi + 0.25 * u(rng))
                   : step(0.3 * u(rng), 0.5 + 0.5 * u(rng));
    const auto te = true_estimands(s);
    const auto b = bias_decompose(te.ate_o, te.gap_o, te.gap_m, population_limits(s));
    EXPECT_NEAR(b.tau_implied, te.tau_frd_limit, 1e-12) << "instance " << i;
  }
}

TEST(TrueEstimands, SelectionSeparatesLateFromAte)
{
  DGPSpec s = equal_jump_spec();
  s.joint_rule = JointRule::dominance;
  s.selection.active = true;
  s.selection.share_always = 0.2;
  s.selection.share_complier = 0.5;
  s.selection.shift[static_cast<std::size_t>(UnitType::complier)][3] = 0.2;
  const auto te = true_estimands(s);
  EXPECT_NEAR(te.late_o, 0.25 + 0.2, 1e-12);
  EXPECT_NEAR(te.ate_o, 0.25 + 0.5 * 0.2, 1e-12);
  // only compliers move at the cutoff, so the ratio recovers the complier effect
  EXPECT_NEAR(te.jumps.m_post, 0.5, 1e-12);
  EXPECT_NEAR(te.tau_frd_limit, te.late_o, 1e-12);
}

TEST(GenerateSample, Deterministic)
{
  const auto s = equal_jump_spec();
  const auto a = generate_sample(s, 7);
  const auto b = generate_sample(s, 7);
  const auto c = generate_sample(s, 8);
  ASSERT_EQ(a.observations.size(), 2 * s.n_per_cohort);
  bool differs = false;
  for (std::size_t i = 0; i < a.observations.size(); ++i) {
    EXPECT_EQ(a.observations[i].y, b.observations[i].y);
    EXPECT_EQ(a.observations[i].x, b.observations[i].x);
    differs |= a.observations[i].y != c.observations[i].y;
  }
  EXPECT_TRUE(differs);
}

TEST(GenerateSample, NoiseFreeSharpDesign)
{
  DGPSpec s = equal_jump_spec();
  s.noise_sd = 0.0;
  s.n_per_cohort = 500;
  s.p_m_pre = s.p_m_post = s.p_o_post = step(0.0, 1.0);
  s.means_post.mu11 = { { 0.35, 0.03, -0.01 } };
  const auto data = generate_sample(s, 3);
  for (std::size_t i = 0; i < data.observations.size(); ++i) {
    const auto& ob = data.observations[i];
    EXPECT_EQ(ob.post, i >= s.n_per_cohort);
    const int above = ob.x >= 0.0;
    EXPECT_EQ(ob.m, above);
    EXPECT_EQ(ob.o, ob.post ? above : 0);
    EXPECT_EQ(ob.y, s.means(ob.post ? Cohort::post : Cohort::pre).get(ob.o, ob.m)(ob.x));
    EXPECT_EQ(ob.cluster, cutoff_aligned_bin(ob.x, 0.0));
    EXPECT_GE(ob.x, s.window_lo);
    EXPECT_LT(ob.x, s.window_hi);
  }
}

TEST(GenerateSample, TreatmentSharesMatchBinomial)
{
  DGPSpec s = equal_jump_spec();
  s.n_per_cohort = 40000;
  s.joint_rule = JointRule::independent;
  s.p_o_post = step(0.4, 0.9);
  const auto data = generate_sample(s, 21);
  double sum_m = 0, sum_o = 0, sum_t = 0;
  double n = 0;
  for (const auto& ob : data.observations)
    if (ob.post && ob.x >= 0) {
      sum_m += ob.m;
      sum_o += ob.o;
      sum_t += ob.t();
      n += 1;
    }
  auto within = [n](double share, double p) {
    return std::abs(share / n - p) < 3.0 * std::sqrt(p * (1 - p) / n);
  };
  EXPECT_TRUE(within(sum_m, 0.7));
  EXPECT_TRUE(within(sum_o, 0.9));
  EXPECT_TRUE(within(sum_t, 0.63));
}

TEST(GenerateSample, DominanceNeverViolated)
{
  DGPSpec s = equal_jump_spec();
  s.joint_rule = JointRule::dominance;
  s.p_o_post = step(0.3, 0.9);
  for (const auto& ob : generate_sample(s, 4).observations)
    if (ob.post)
      EXPECT_GE(ob.o, ob.m);
}

TEST(DGPSpec, CheckRejects)
{
  auto expect_invalid = [](const DGPSpec& s) {
    try {
      s.check();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::invalid_spec);
    }
  };
  DGPSpec s = equal_jump_spec();
  s.cutoff = 6.0;
  expect_invalid(s);
  s = equal_jump_spec();
  s.p_m_post = step(0.2, 1.2);
  expect_invalid(s);
  s = equal_jump_spec();
  s.p_o_post.above = { { 0.5, 0.2 } }; // leaves [0, 1] inside the window
  expect_invalid(s);
  s = equal_jump_spec();
  s.joint_rule = JointRule::dominance;
  s.p_o_post = step(0.1, 0.5);
  expect_invalid(s);
  s = equal_jump_spec();
  s.selection.active = true;
  s.joint_rule = JointRule::independent;
  expect_invalid(s);
  s = equal_jump_spec();
  s.cluster_correlation = 1.5;
  expect_invalid(s);
}

TEST(MonteCarloStudy, ReproducibleAcrossThreads)
{
  DGPSpec s = equal_jump_spec();
  s.n_per_cohort = 600;
  const auto design = StudyDesign::symmetric(0.0, 5.0);
  const auto a = monte_carlo_study(s, design, StudyEstimator::diff_in_disc, 100, 5, 1);
  const auto b = monte_carlo_study(s, design, StudyEstimator::diff_in_disc, 100, 5, 3);
  EXPECT_EQ(a.estimates, b.estimates);
  EXPECT_EQ(a.mean_estimate, b.mean_estimate);
  EXPECT_NEAR(a.target, 0.25, 1e-12);
  EXPECT_THROW(monte_carlo_study(s, design, StudyEstimator::diff_in_disc, 99, 5), Error);
}

TEST(MonteCarloStudy, EstimatorNamesRoundTrip)
{
  for (auto e : { StudyEstimator::diff_in_disc, StudyEstimator::theorem3a, StudyEstimator::theorem3b,
                  StudyEstimator::two_stage_ls, StudyEstimator::rd_post, StudyEstimator::rd_pre,
                  StudyEstimator::placebo, StudyEstimator::equal_discontinuities_test })
    EXPECT_EQ(parse_study_estimator(to_string(e)), e);
  EXPECT_THROW(parse_study_estimator("nope"), Error);
}

TEST(TrueEstimands, AdditiveMeansSatisfyCorrections)
{
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    DGPSpec s;
    s.window_lo = -1;
    s.window_hi = 1;
    const double mu00 = u(rng), gap_m = u(rng) - 0.5, ate = u(rng) - 0.5;
    // additive: mu11 - mu01 = mu10 - mu00
    s.means_pre = s.means_post = flat_means(mu00, mu00 + gap_m, mu00 + ate, mu00 + gap_m + ate);
    s.joint_rule = JointRule::dominance;
    const double pm_lo = 0.3 * u(rng), pm_hi = 0.4 + 0.3 * u(rng);
    s.p_m_pre = step(0.3 * u(rng), 0.4 + 0.3 * u(rng));
    s.p_m_post = step(pm_lo, pm_hi);
    s.p_o_post = step(pm_lo + 0.2 * u(rng), pm_hi + 0.25 * u(rng));
    const auto te = true_estimands(s);
    const auto lim = population_limits(s);
    EXPECT_NEAR(theorem3a_correct(te.tau_frd_limit, lim, ate_m_from_pre(lim)), te.ate_o, 1e-12);
    EXPECT_NEAR(theorem3b_correct(te.tau_frd_limit, lim), te.ate_o, 1e-12);
    EXPECT_NEAR(ate_m_from_pre(lim), gap_m, 1e-12);
  }
}
