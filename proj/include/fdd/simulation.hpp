#pragma once

#include "fdd/core_data.hpp"
#include "fdd/diagnostics.hpp"
#include "fdd/error.hpp"
#include "fdd/estimators.hpp"
#include "fdd/kernels_llr.hpp"
#include "fdd/parallel.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace fdd {

//! Polynomial in (x - cutoff), coefficients in increasing degree.
struct Polynomial
{
  std::vector<double> coef;

  double operator()(double d) const noexcept
  {
    double acc = 0.0;
    for (auto it = coef.rbegin(); it != coef.rend(); ++it)
      acc = acc * d + *it;
    return acc;
  }
};

//! Mean of Y(o, m) given x, per cohort.
struct PotentialMeans
{
  Polynomial mu00, mu01, mu10, mu11;

  const Polynomial& get(int o, int m) const noexcept
  {
    if (o == 0)
      return m == 0 ? mu00 : mu01;
    return m == 0 ? mu10 : mu11;
  }
};

//! A probability function of x with a possible jump at the cutoff.
struct SidedProbability
{
  Polynomial below, above;

  double at(double d, bool is_above) const noexcept
  {
    return is_above ? above(d) : below(d);
  }
  double jump() const noexcept { return above(0.0) - below(0.0); }
};

enum class JointRule
{
  independent,
  dominance, // M = 1 implies O = 1
  equal      // O = M
};

inline std::string_view to_string(JointRule r)
{
  switch (r) {
    case JointRule::independent: return "independent";
    case JointRule::dominance: return "dominance";
    case JointRule::equal: return "equal";
  }
  return "?";
}

enum class UnitType
{
  always = 0,
  complier = 1,
  never = 2
};

//! Latent response types for the confounding policy. Always-takers have
//! M = 1 on both sides, compliers M = 1 above the cutoff only, never-takers
//! M = 0. In the post cohort O >= M, and a share of never-takers take O on
//! both sides. `shift[type][2*o + m]` is added to the mean of Y(o, m).
struct SelectionModel
{
  bool active = false;
  double share_always = 0.0;
  double share_complier = 1.0;
  double o_always_among_never = 0.0;
  std::array<std::array<double, 4>, 3> shift{};

  double share(UnitType t) const noexcept
  {
    switch (t) {
      case UnitType::always: return share_always;
      case UnitType::complier: return share_complier;
      case UnitType::never: return 1.0 - share_always - share_complier;
    }
    return 0.0;
  }
};

struct DGPSpec
{
  double cutoff = 0.0;
  double window_lo = -10.0;
  double window_hi = 10.0;
  std::size_t n_per_cohort = 20000;
  PotentialMeans means_pre, means_post;
  double noise_sd = 0.5;
  SidedProbability p_m_pre, p_m_post, p_o_post;
  JointRule joint_rule = JointRule::independent;
  SelectionModel selection;
  bool heteroskedastic = false;
  //! Share of the noise variance that is a common shock per cluster.
  double cluster_correlation = 0.0;
  double cluster_width = 0.25;

  const PotentialMeans& means(Cohort c) const noexcept
  {
    return c == Cohort::post ? means_post : means_pre;
  }
  const SidedProbability& p_m(Cohort c) const noexcept
  {
    return c == Cohort::post ? p_m_post : p_m_pre;
  }

  void check() const
  {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_spec, msg); };
    if (!(window_lo < cutoff && cutoff < window_hi))
      fail("window must contain the cutoff strictly");
    if (n_per_cohort < 4)
      fail("n_per_cohort must be at least 4");
    if (!(noise_sd >= 0.0))
      fail("noise_sd must be nonnegative");
    if (!(cluster_correlation >= 0.0 && cluster_correlation <= 1.0))
      fail("cluster_correlation must lie in [0, 1]");
    if (!(cluster_width > 0.0))
      fail("cluster_width must be positive");
    if (selection.active) {
      const auto& s = selection;
      if (s.share_always < 0 || s.share_complier < 0 || s.share_always + s.share_complier > 1.0 + 1e-12)
        fail("selection shares must be nonnegative and sum to at most 1");
      if (s.o_always_among_never < 0 || s.o_always_among_never > 1)
        fail("o_always_among_never must lie in [0, 1]");
      if (joint_rule == JointRule::independent)
        fail("selection model requires the dominance or equal joint rule");
      return;
    }
    const int steps = 200;
    for (int side = 0; side < 2; ++side) {
      const bool above = side == 1;
      for (int i = 0; i <= steps; ++i) {
        const double lo = above ? 0.0 : window_lo - cutoff;
        const double hi = above ? window_hi - cutoff : 0.0;
        const double d = lo + (hi - lo) * i / steps;
        for (Cohort c : { Cohort::pre, Cohort::post }) {
          const double pm = p_m(c).at(d, above);
          if (!(pm >= 0.0 && pm <= 1.0))
            fail("P(M=1|x) leaves [0,1] in the " + std::string(to_string(c)) + " cohort");
        }
        const double po = p_o_post.at(d, above);
        if (!(po >= 0.0 && po <= 1.0))
          fail("P(O=1|x) leaves [0,1]");
        if (joint_rule == JointRule::dominance && po + 1e-12 < p_m_post.at(d, above))
          fail("dominance rule needs P(O=1|x) >= P(M=1|x)");
      }
    }
  }
};

//! Cell probabilities P(O=o, M=m) for one unit type at one x.
struct JointProbabilities
{
  std::array<double, 4> p{}; // index 2*o + m
  double m() const noexcept { return p[1] + p[3]; }
  double o() const noexcept { return p[2] + p[3]; }
  double t() const noexcept { return p[3]; }
};

namespace detail {

inline JointProbabilities joint_from_marginals(double pm, double po, JointRule rule, Cohort c)
{
  JointProbabilities j;
  double p11 = 0.0;
  if (c == Cohort::pre) {
    po = 0.0;
  } else if (rule == JointRule::independent) {
    p11 = pm * po;
  } else if (rule == JointRule::dominance) {
    p11 = pm;
  } else {
    po = pm;
    p11 = pm;
  }
  j.p[3] = p11;
  j.p[2] = po - p11;
  j.p[1] = pm - p11;
  j.p[0] = 1.0 - po - pm + p11;
  return j;
}

inline JointProbabilities joint_for_type(const DGPSpec& spec, UnitType type, bool above, Cohort c)
{
  JointProbabilities j;
  const int m = type == UnitType::always ? 1 : (type == UnitType::complier ? static_cast<int>(above) : 0);
  if (c == Cohort::pre || m == 1) {
    const int o = c == Cohort::post ? m : 0;
    j.p[static_cast<std::size_t>(2 * o + m)] = 1.0;
    return j;
  }
  const double q = spec.joint_rule == JointRule::dominance && type == UnitType::never
                     ? spec.selection.o_always_among_never
                     : 0.0;
  j.p[2] = q;
  j.p[0] = 1.0 - q;
  return j;
}

struct CellLimit
{
  double y = 0.0, m = 0.0, o = 0.0, t = 0.0;
};

inline CellLimit population_cell(const DGPSpec& spec, Cohort c, bool above)
{
  CellLimit out;
  const auto& mu = spec.means(c);
  auto accumulate = [&](const JointProbabilities& j, double share,
                        const std::array<double, 4>& shift) {
    for (int o = 0; o < 2; ++o)
      for (int m = 0; m < 2; ++m) {
        const auto idx = static_cast<std::size_t>(2 * o + m);
        out.y += share * j.p[idx] * (mu.get(o, m)(0.0) + shift[idx]);
      }
    out.m += share * j.m();
    out.o += share * j.o();
    out.t += share * j.t();
  };
  if (spec.selection.active) {
    for (UnitType type : { UnitType::always, UnitType::complier, UnitType::never })
      accumulate(joint_for_type(spec, type, above, c), spec.selection.share(type),
                 spec.selection.shift[static_cast<std::size_t>(type)]);
  } else {
    const double pm = spec.p_m(c).at(0.0, above);
    const double po = c == Cohort::post ? spec.p_o_post.at(0.0, above) : 0.0;
    accumulate(joint_from_marginals(pm, po, spec.joint_rule, c), 1.0, {});
  }
  return out;
}

inline LocalFit exact_fit(double value)
{
  LocalFit f;
  f.intercept = value;
  f.slope = 0.0;
  f.n_effective = 1;
  return f;
}

} // namespace detail

//! Population boundary limits at the cutoff, with zero variances.
inline BoundaryLimits population_limits(const DGPSpec& spec)
{
  spec.check();
  const auto pa = detail::population_cell(spec, Cohort::post, true);
  const auto pb = detail::population_cell(spec, Cohort::post, false);
  const auto qa = detail::population_cell(spec, Cohort::pre, true);
  const auto qb = detail::population_cell(spec, Cohort::pre, false);
  auto pair = [](double above, double below) {
    return LimitPair{ detail::exact_fit(above), detail::exact_fit(below) };
  };
  return BoundaryLimits::from_pairs(pair(pa.y, pb.y), pair(pa.t, pb.t), pair(pa.m, pb.m),
                                    pair(pa.o, pb.o), pair(qa.y, qb.y), pair(qa.m, qb.m));
}

struct Jumps
{
  double o_post = 0.0, m_post = 0.0, t_post = 0.0, m_pre = 0.0;
};

struct TrueEstimands
{
  double ate_o = 0.0;
  double ate_m = 0.0;
  double late_o = 0.0;
  //! Y(1,0) - Y(0,0) and Y(0,1) - Y(0,0) at the cutoff, post cohort.
  double gap_o = 0.0;
  double gap_m = 0.0;
  //! Population value of the ratio-difference estimator (NaN when a
  //! denominator jump is zero).
  double tau_frd_limit = std::numeric_limits<double>::quiet_NaN();
  //! Same with the post-cohort M jump as denominator; the reduced-form and
  //! placebo estimators converge to it.
  double wald_diff_m_limit = std::numeric_limits<double>::quiet_NaN();
  double wald_post_limit = std::numeric_limits<double>::quiet_NaN();
  double wald_pre_limit = std::numeric_limits<double>::quiet_NaN();
  Jumps jumps;
};

inline TrueEstimands true_estimands(const DGPSpec& spec)
{
  spec.check();
  TrueEstimands te;
  const auto& post = spec.means_post;
  const auto& pre = spec.means_pre;

  // population-average type shifts
  std::array<double, 4> avg_shift{};
  std::array<double, 4> complier_shift{};
  if (spec.selection.active) {
    for (UnitType type : { UnitType::always, UnitType::complier, UnitType::never })
      for (std::size_t i = 0; i < 4; ++i)
        avg_shift[i] += spec.selection.share(type) * spec.selection.shift[static_cast<std::size_t>(type)][i];
    complier_shift = spec.selection.shift[static_cast<std::size_t>(UnitType::complier)];
  }
  auto mean_at = [](const PotentialMeans& mu, int o, int m, const std::array<double, 4>& shift) {
    return mu.get(o, m)(0.0) + shift[static_cast<std::size_t>(2 * o + m)];
  };
  te.ate_o = mean_at(post, 1, 1, avg_shift) - mean_at(post, 0, 1, avg_shift);
  te.ate_m = mean_at(pre, 0, 1, avg_shift) - mean_at(pre, 0, 0, avg_shift);
  te.gap_o = mean_at(post, 1, 0, avg_shift) - mean_at(post, 0, 0, avg_shift);
  te.gap_m = mean_at(post, 0, 1, avg_shift) - mean_at(post, 0, 0, avg_shift);
  te.late_o = spec.selection.active
                ? mean_at(post, 1, 1, complier_shift) - mean_at(post, 0, 1, complier_shift)
                : te.ate_o;

  const auto lim = population_limits(spec);
  te.jumps = { lim.o_post.jump(), lim.m_post.jump(), lim.t_post.jump(), lim.m_pre.jump() };
  const double dy_post = lim.y_post.jump();
  const double dy_pre = lim.y_pre.jump();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  te.wald_post_limit = te.jumps.t_post != 0.0 ? dy_post / te.jumps.t_post : nan;
  te.wald_pre_limit = te.jumps.m_pre != 0.0 ? dy_pre / te.jumps.m_pre : nan;
  te.tau_frd_limit = te.wald_post_limit - te.wald_pre_limit;
  te.wald_diff_m_limit =
    (te.jumps.m_post != 0.0 ? dy_post / te.jumps.m_post : nan) - te.wald_pre_limit;
  return te;
}

//! Draws n_per_cohort pre-cohort rows, then n_per_cohort post-cohort rows.
inline Dataset generate_sample(const DGPSpec& spec, std::uint64_t seed)
{
  spec.check();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::uniform_real_distribution<double> unif_x(spec.window_lo, spec.window_hi);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double hw = 0.5 * (spec.window_hi - spec.window_lo);
  const double rho = spec.cluster_correlation;
  const ClusterId bin_lo = cutoff_aligned_bin(spec.window_lo, spec.cutoff, spec.cluster_width);
  const ClusterId bin_hi = cutoff_aligned_bin(spec.window_hi, spec.cutoff, spec.cluster_width);

  Dataset data;
  data.observations.reserve(2 * spec.n_per_cohort);
  for (Cohort cohort : { Cohort::pre, Cohort::post }) {
    std::vector<double> shocks;
    if (rho > 0.0)
      for (ClusterId b = bin_lo; b <= bin_hi; ++b)
        shocks.push_back(normal(rng));
    const auto& mu = spec.means(cohort);
    for (std::size_t i = 0; i < spec.n_per_cohort; ++i) {
      Observation ob;
      ob.x = unif_x(rng);
      ob.post = cohort == Cohort::post;
      const double d = ob.x - spec.cutoff;
      const bool above = ob.x >= spec.cutoff;
      const double u1 = unif01(rng);
      const double u2 = unif01(rng);
      std::array<double, 4> shift{};
      if (spec.selection.active) {
        const auto& s = spec.selection;
        const UnitType type = u1 < s.share_always
                                ? UnitType::always
                                : (u1 < s.share_always + s.share_complier ? UnitType::complier
                                                                          : UnitType::never);
        shift = s.shift[static_cast<std::size_t>(type)];
        ob.m = type == UnitType::always || (type == UnitType::complier && above);
        if (ob.post)
          ob.o = ob.m == 1 || (type == UnitType::never && spec.joint_rule == JointRule::dominance &&
                               u2 < s.o_always_among_never);
      } else {
        const double pm = spec.p_m(cohort).at(d, above);
        ob.m = u1 < pm;
        if (ob.post) {
          const double po = spec.p_o_post.at(d, above);
          switch (spec.joint_rule) {
            case JointRule::independent: ob.o = u2 < po; break;
            case JointRule::dominance: ob.o = u1 < po; break;
            case JointRule::equal: ob.o = ob.m; break;
          }
        }
      }
      const double sd = spec.noise_sd * (spec.heteroskedastic ? 0.5 + std::abs(d) / hw : 1.0);
      const ClusterId bin = cutoff_aligned_bin(ob.x, spec.cutoff, spec.cluster_width);
      double eps = normal(rng);
      if (rho > 0.0)
        eps = std::sqrt(rho) * shocks[static_cast<std::size_t>(bin - bin_lo)] +
              std::sqrt(1.0 - rho) * eps;
      ob.y = mu.get(ob.o, ob.m)(d) + shift[static_cast<std::size_t>(2 * ob.o + ob.m)] + sd * eps;
      ob.cluster = bin;
      data.observations.push_back(std::move(ob));
    }
  }
  return data;
}

enum class StudyEstimator
{
  diff_in_disc,
  theorem3a,
  theorem3b,
  two_stage_ls,
  rd_post,
  rd_pre,
  placebo,
  equal_discontinuities_test
};

inline std::string_view to_string(StudyEstimator e)
{
  switch (e) {
    case StudyEstimator::diff_in_disc: return "diff_in_disc";
    case StudyEstimator::theorem3a: return "theorem3a";
    case StudyEstimator::theorem3b: return "theorem3b";
    case StudyEstimator::two_stage_ls: return "two_stage_ls";
    case StudyEstimator::rd_post: return "rd_post";
    case StudyEstimator::rd_pre: return "rd_pre";
    case StudyEstimator::placebo: return "placebo";
    case StudyEstimator::equal_discontinuities_test: return "equal_discontinuities_test";
  }
  return "?";
}

inline StudyEstimator parse_study_estimator(std::string_view s)
{
  for (auto e : { StudyEstimator::diff_in_disc, StudyEstimator::theorem3a, StudyEstimator::theorem3b,
                  StudyEstimator::two_stage_ls, StudyEstimator::rd_post, StudyEstimator::rd_pre,
                  StudyEstimator::placebo, StudyEstimator::equal_discontinuities_test })
    if (to_string(e) == s)
      return e;
  throw Error(ErrorCode::config_error, "unknown estimator '" + std::string(s) + "'");
}

//! The population quantity each estimator is compared against.
inline double study_target(StudyEstimator e, const TrueEstimands& te)
{
  switch (e) {
    case StudyEstimator::diff_in_disc: return te.tau_frd_limit;
    case StudyEstimator::theorem3a:
    case StudyEstimator::theorem3b: return te.ate_o;
    case StudyEstimator::two_stage_ls:
    case StudyEstimator::placebo: return te.wald_diff_m_limit;
    case StudyEstimator::rd_post: return te.wald_post_limit;
    case StudyEstimator::rd_pre: return te.wald_pre_limit;
    case StudyEstimator::equal_discontinuities_test: return std::numeric_limits<double>::quiet_NaN();
  }
  return std::numeric_limits<double>::quiet_NaN();
}

struct ReplicateOutcome
{
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  bool reject = false;
};

//! One estimator run on one dataset. For the equality test the estimate is
//! the Wald statistic and `reject` is p < alpha; otherwise `reject` is the
//! |estimate / se| > z test of a zero effect.
inline ReplicateOutcome run_study_estimator(StudyEstimator which, const Dataset& data,
                                            const StudyDesign& design, double alpha = 0.05)
{
  ReplicateOutcome out;
  auto from_estimate = [&](const DiffDiscEstimate& e) {
    out.estimate = e.tau;
    out.se = e.se;
    out.reject = e.se > 0 && std::abs(e.tau / e.se) > normal_critical(alpha);
  };
  switch (which) {
    case StudyEstimator::two_stage_ls:
      from_estimate(reduced_form_2sls(data, design));
      return out;
    case StudyEstimator::placebo: {
      const auto rep = placebo_diff_in_disc(data, design, PlaceboSplit::adjacent_pre_periods, alpha);
      out.estimate = rep.details.front().estimate;
      out.se = rep.details.front().se;
      out.reject = rep.verdict == Verdict::violated;
      return out;
    }
    default: break;
  }
  const auto limits = estimate_boundary_limits(data, design);
  switch (which) {
    case StudyEstimator::diff_in_disc: from_estimate(fuzzy_diff_in_disc(limits)); break;
    case StudyEstimator::rd_post: from_estimate(fuzzy_rd_cohort(limits, Cohort::post)); break;
    case StudyEstimator::rd_pre: from_estimate(fuzzy_rd_cohort(limits, Cohort::pre)); break;
    case StudyEstimator::theorem3a:
      out.estimate = theorem3a_correct(fuzzy_diff_in_disc(limits).tau, limits, ate_m_from_pre(limits));
      break;
    case StudyEstimator::theorem3b:
      out.estimate = theorem3b_correct(fuzzy_diff_in_disc(limits).tau, limits);
      break;
    case StudyEstimator::equal_discontinuities_test: {
      const auto rep = test_equal_discontinuities(limits, alpha);
      out.estimate = rep.statistic;
      out.reject = rep.verdict == Verdict::violated;
      break;
    }
    default: break;
  }
  return out;
}

struct StudyReport
{
  StudyEstimator estimator = StudyEstimator::diff_in_disc;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::size_t n_failed = 0;
  double target = std::numeric_limits<double>::quiet_NaN();
  double mean_estimate = std::numeric_limits<double>::quiet_NaN();
  double mean_bias = std::numeric_limits<double>::quiet_NaN();
  double empirical_sd = std::numeric_limits<double>::quiet_NaN();
  double mean_se = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double rejection_rate = std::numeric_limits<double>::quiet_NaN();
  TrueEstimands truth;
  std::vector<double> estimates; // successful replicates, in replicate order
  std::vector<double> ses;
};

inline StudyReport monte_carlo_study(const DGPSpec& spec, const StudyDesign& design,
                                     StudyEstimator which, std::size_t reps, std::uint64_t seed,
                                     unsigned threads = 0, double alpha = 0.05)
{
  if (reps < 100)
    throw Error(ErrorCode::precondition, "a Monte Carlo study needs at least 100 replicates");
  StudyReport rep;
  rep.estimator = which;
  rep.reps = reps;
  rep.seed = seed;
  rep.truth = true_estimands(spec);
  rep.target = study_target(which, rep.truth);

  std::vector<ReplicateOutcome> outcomes(reps);
  std::vector<char> ok(reps, 0);
  parallel_for(reps, threads, [&](std::size_t r) {
    try {
      const Dataset data = generate_sample(spec, derive_seed(seed, r));
      outcomes[r] = run_study_estimator(which, data, design, alpha);
      ok[r] = std::isfinite(outcomes[r].estimate);
    } catch (const Error&) {
    }
  });

  const double z = normal_critical(alpha);
  std::size_t n_se = 0, covered = 0, rejected = 0;
  double se_sum = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    if (!ok[r]) {
      ++rep.n_failed;
      continue;
    }
    const auto& o = outcomes[r];
    rep.estimates.push_back(o.estimate);
    rep.ses.push_back(o.se);
    rejected += o.reject;
    if (std::isfinite(o.se)) {
      ++n_se;
      se_sum += o.se;
      if (std::isfinite(rep.target) && std::abs(o.estimate - rep.target) <= z * o.se)
        ++covered;
    }
  }
  const std::size_t n_ok = rep.estimates.size();
  if (n_ok == 0)
    return rep;
  double mean = 0.0;
  for (double e : rep.estimates)
    mean += e;
  mean /= static_cast<double>(n_ok);
  double ss = 0.0;
  for (double e : rep.estimates)
    ss += (e - mean) * (e - mean);
  rep.mean_estimate = mean;
  rep.mean_bias = mean - rep.target;
  rep.empirical_sd = n_ok > 1 ? std::sqrt(ss / static_cast<double>(n_ok - 1)) : 0.0;
  rep.rejection_rate = static_cast<double>(rejected) / static_cast<double>(n_ok);
  if (n_se > 0) {
    rep.mean_se = se_sum / static_cast<double>(n_se);
    if (std::isfinite(rep.target))
      rep.coverage = static_cast<double>(covered) / static_cast<double>(n_se);
  }
  return rep;
}

} // namespace fdd
