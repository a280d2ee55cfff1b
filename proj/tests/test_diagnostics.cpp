#include "fdd/diagnostics.hpp"
#include "fdd/simulation.hpp"

#include <gtest/gtest.h>

using namespace fdd;

namespace {

LocalFit fit(double intercept, double var)
{
  LocalFit f;
  f.intercept = intercept;
  f.slope = 0.0;
  f.n_effective = 100;
  f.hc_variance_intercept = var;
  f.cluster_variance_intercept = var;
  return f;
}

// Jumps with standard error `se` each (split evenly over the two sides).
BoundaryLimits jumps(double d_o, double dm_post, double dm_pre, double se, double dt = -1)
{
  const double v = se * se / 2.0;
  auto p = [v](double j) { return LimitPair{ fit(0.1 + j, v), fit(0.1, v) }; };
  return BoundaryLimits::from_pairs(p(0.3), p(dt < 0 ? dm_post : dt), p(dm_post), p(d_o), p(0.1),
                                    p(dm_pre));
}

void expect_rederivable(const AssumptionReport& r, std::size_t allowed = 0)
{
  EXPECT_EQ(r.verdict, derive_verdict(r.statistic, r.p_value, r.alpha, r.violations, allowed));
  if (r.p_value) {
    EXPECT_GE(*r.p_value, 0.0);
    EXPECT_LE(*r.p_value, 1.0);
  }
}

DGPSpec placebo_spec(double shift)
{
  DGPSpec s;
  s.window_lo = -2;
  s.window_hi = 2;
  s.n_per_cohort = 2000;
  s.p_m_pre = { { { 0.2 } }, { { 0.8 } } };
  s.p_m_post = s.p_m_pre;
  s.p_o_post = { { { 0.0 } }, { { 0.0 } } };
  s.means_pre.mu01 = { { 0.3, 0.02 } };
  s.means_post.mu01 = { { 0.3 + shift, 0.02 } };
  return s;
}

} // namespace

TEST(EqualDiscontinuities, IdenticalJumps)
{
  const auto r = test_equal_discontinuities(jumps(0.5, 0.5, 0.5, 1e-4));
  EXPECT_NEAR(*r.p_value, 1.0, 1e-12);
  EXPECT_EQ(r.verdict, Verdict::consistent);
  EXPECT_EQ(r.details.size(), 3u);
  expect_rederivable(r);
}

TEST(EqualDiscontinuities, FarApartJumps)
{
  const auto r = test_equal_discontinuities(jumps(0.8, 0.4, 0.4, 0.02));
  EXPECT_LT(*r.p_value, 0.001);
  EXPECT_EQ(r.verdict, Verdict::violated);
  expect_rederivable(r);
  // O_post - M_post difference is 0.4 with se sqrt(2) * 0.02
  EXPECT_NEAR(r.details.front().estimate, 0.4, 1e-12);
  EXPECT_NEAR(r.details.front().se, std::sqrt(2.0) * 0.02, 1e-12);
}

TEST(EqualDiscontinuities, KnownChiSquare)
{
  // independent components with equal variances: stat = sum (d - mean)^2 / se^2
  const double se = 0.05;
  const auto r = test_equal_discontinuities(jumps(0.6, 0.5, 0.4, se));
  const double expected = (0.01 + 0.0 + 0.01) / (se * se);
  EXPECT_NEAR(r.statistic, expected, 1e-9);
  EXPECT_NEAR(*r.p_value, std::exp(-expected / 2.0), 1e-12); // chi-square with 2 df
}

TEST(EqualDiscontinuities, SymmetricInOrdering)
{
  const auto a = test_equal_discontinuities(jumps(0.62, 0.5, 0.41, 0.03));
  const auto b = test_equal_discontinuities(jumps(0.41, 0.62, 0.5, 0.03));
  const auto c = test_equal_discontinuities(jumps(0.5, 0.41, 0.62, 0.03));
  EXPECT_NEAR(a.statistic, b.statistic, 1e-9);
  EXPECT_NEAR(a.statistic, c.statistic, 1e-9);
}

TEST(EqualDiscontinuities, OptionalT)
{
  const auto r = test_equal_discontinuities(jumps(0.5, 0.5, 0.5, 0.02, 0.9), 0.05, true);
  EXPECT_EQ(r.verdict, Verdict::violated);
  EXPECT_EQ(r.details.size(), 6u);
}

TEST(EqualDiscontinuities, MissingLimits)
{
  BoundaryLimits empty;
  try {
    test_equal_discontinuities(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::missing_limits);
  }
}

TEST(Verdict, Derivation)
{
  EXPECT_EQ(derive_verdict(3.0, 0.01, 0.05, std::nullopt), Verdict::violated);
  EXPECT_EQ(derive_verdict(1.0, 0.30, 0.05, std::nullopt), Verdict::consistent);
  EXPECT_EQ(derive_verdict(0.0, std::nullopt, 0.05, std::nullopt), Verdict::inconclusive);
  EXPECT_EQ(derive_verdict(0.0, std::nullopt, 0.05, 0u), Verdict::consistent);
  EXPECT_EQ(derive_verdict(0.0, std::nullopt, 0.05, 2u, 1), Verdict::violated);
}

TEST(Dominance, Counts)
{
  Dataset d;
  for (int i = 0; i < 10; ++i) {
    Observation ob;
    ob.post = true;
    ob.m = i % 2;
    ob.o = ob.m;
    d.observations.push_back(ob);
  }
  auto r = check_dominance(d);
  EXPECT_EQ(*r.violations, 0u);
  EXPECT_EQ(r.verdict, Verdict::consistent);
  expect_rederivable(r);

  d.observations[1].o = 0; // m = 1, o = 0
  r = check_dominance(d);
  EXPECT_EQ(*r.violations, 1u);
  EXPECT_EQ(r.verdict, Verdict::violated);
  expect_rederivable(r);
  EXPECT_EQ(check_dominance(d, 0.1).verdict, Verdict::consistent);

  Dataset pre_only;
  pre_only.observations.resize(3);
  EXPECT_THROW(check_dominance(pre_only), Error);
}

TEST(Dominance, GeneratedDominanceSample)
{
  DGPSpec s;
  s.n_per_cohort = 20000;
  s.joint_rule = JointRule::dominance;
  s.p_m_pre = { { { 0.2 } }, { { 0.6 } } };
  s.p_m_post = s.p_m_pre;
  s.p_o_post = { { { 0.3 } }, { { 0.9 } } };
  EXPECT_EQ(*check_dominance(generate_sample(s, 5)).violations, 0u);
}

TEST(Placebo, RejectsExposedRows)
{
  DGPSpec s = placebo_spec(0.0);
  s.p_o_post = s.p_m_post;
  s.joint_rule = JointRule::equal;
  const auto data = generate_sample(s, 1);
  try {
    placebo_diff_in_disc(data, StudyDesign::symmetric(0.0, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::precondition);
  }
}

TEST(Placebo, SameEstimatorAsCovariateSmoothness)
{
  const auto data = generate_sample(placebo_spec(0.05), 2);
  const auto design = StudyDesign::symmetric(0.0, 2.0);
  const auto p = placebo_diff_in_disc(data, design);
  expect_rederivable(p);

  // feed the same numbers through the covariate path: y as the covariate and
  // o = m in the pseudo-post group
  Dataset relabeled = data;
  relabeled.column_names = { "copy_of_y" };
  for (auto& ob : relabeled.observations) {
    ob.covariates = { ob.y };
    ob.y = 0.0;
    if (ob.post)
      ob.o = ob.m;
  }
  const auto c = covariate_smoothness(relabeled, design, 0);
  EXPECT_EQ(p.details.front().estimate, c.details.front().estimate);
  EXPECT_EQ(p.statistic, c.statistic);
  EXPECT_EQ(c.details.front().label, "copy_of_y");
}

TEST(CovariateSmoothness, LinearCovariateGivesZero)
{
  DGPSpec s = placebo_spec(0.0);
  s.p_o_post = s.p_m_post;
  s.joint_rule = JointRule::equal;
  auto data = generate_sample(s, 3);
  data.column_names = { "lin" };
  for (auto& ob : data.observations)
    ob.covariates = { 1.0 + 0.25 * ob.x };
  const auto r = covariate_smoothness(data, StudyDesign::symmetric(0.0, 2.0), 0);
  EXPECT_NEAR(r.details.front().estimate, 0.0, 1e-12);
  EXPECT_THROW(covariate_smoothness(data, StudyDesign::symmetric(0.0, 2.0), 3), Error);
}

TEST(Untestable, Listed)
{
  EXPECT_EQ(untestable_assumptions().size(), 4u);
}
