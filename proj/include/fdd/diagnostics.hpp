#pragma once

#include "fdd/core_data.hpp"
#include "fdd/error.hpp"
#include "fdd/estimators.hpp"
#include "fdd/inference.hpp"
#include "fdd/kernels_llr.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace fdd {

enum class AssumptionName
{
  equal_discontinuities,
  dominance,
  placebo,
  covariate_smoothness
};

enum class Verdict
{
  consistent,
  violated,
  inconclusive
};

inline std::string_view to_string(AssumptionName a)
{
  switch (a) {
    case AssumptionName::equal_discontinuities: return "equal_discontinuities";
    case AssumptionName::dominance: return "dominance";
    case AssumptionName::placebo: return "placebo";
    case AssumptionName::covariate_smoothness: return "covariate_smoothness";
  }
  return "?";
}

inline std::string_view to_string(Verdict v)
{
  switch (v) {
    case Verdict::consistent: return "consistent";
    case Verdict::violated: return "violated";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

//! Identifying conditions this tool cannot test; every summary lists them.
inline const std::vector<std::string>& untestable_assumptions()
{
  static const std::vector<std::string> names = {
    "continuity_of_potential_outcome_means_at_cutoff",
    "treatment_independent_of_potential_outcomes",
    "cutoff_exogeneity_near_threshold",
    "monotone_treatment_response_to_cutoff",
  };
  return names;
}

struct ReportDetail
{
  std::string label;
  double estimate = 0.0;
  double se = 0.0;
};

struct AssumptionReport
{
  AssumptionName name = AssumptionName::equal_discontinuities;
  double statistic = 0.0;
  std::optional<double> p_value;
  std::optional<std::size_t> violations;
  double alpha = 0.05;
  std::vector<ReportDetail> details;
  Verdict verdict = Verdict::inconclusive;
};

//! Verdict as a pure function of the report's numbers.
inline Verdict derive_verdict(double statistic, std::optional<double> p_value, double alpha,
                              std::optional<std::size_t> violations,
                              std::size_t allowed_violations = 0)
{
  if (violations)
    return *violations > allowed_violations ? Verdict::violated : Verdict::consistent;
  if (!p_value || std::isnan(*p_value) || std::isnan(statistic))
    return Verdict::inconclusive;
  return *p_value < alpha ? Verdict::violated : Verdict::consistent;
}

//! Wald test that dO~, dM~ and dM- (and dT~ when `include_t`) are equal.
//! Post-cohort jumps share rows and enter with their joint covariance; the
//! pre-cohort jump is independent of them.
inline AssumptionReport test_equal_discontinuities(const BoundaryLimits& limits,
                                                   double alpha = 0.05,
                                                   bool include_t = false)
{
  struct Component
  {
    const char* label;
    Cohort cohort;
    Variable var;
  };
  std::vector<Component> comps = { { "O_post", Cohort::post, Variable::o },
                                   { "M_post", Cohort::post, Variable::m },
                                   { "M_pre", Cohort::pre, Variable::m } };
  if (include_t)
    comps.push_back({ "T_post", Cohort::post, Variable::t });
  for (const auto& c : comps)
    if (!limits.pair(c.cohort, c.var).present())
      throw Error(ErrorCode::missing_limits,
                  std::string("limit ") + c.label + " was not estimated", c.label);

  const auto k = static_cast<Eigen::Index>(comps.size());
  Eigen::VectorXd d(k);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& ci = comps[static_cast<std::size_t>(i)];
    d(i) = limits.jump(ci.cohort, ci.var);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& cj = comps[static_cast<std::size_t>(j)];
      if (ci.cohort == cj.cohort)
        v(i, j) = limits.jump_cov(ci.cohort, ci.var, cj.var);
    }
  }

  AssumptionReport rep;
  rep.name = AssumptionName::equal_discontinuities;
  rep.alpha = alpha;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double diff = d(i) - d(j);
      const double var = v(i, i) + v(j, j) - 2.0 * v(i, j);
      rep.details.push_back({ std::string(comps[static_cast<std::size_t>(i)].label) + "-" +
                                comps[static_cast<std::size_t>(j)].label,
                              diff, std::sqrt(std::max(0.0, var)) });
    }

  // contrasts against the first component; the statistic does not depend on
  // which full-rank set of differences is used
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k - 1, k);
  for (Eigen::Index i = 0; i + 1 < k; ++i) {
    c(i, 0) = 1.0;
    c(i, i + 1) = -1.0;
  }
  const Eigen::VectorXd cd = c * d;
  const Eigen::MatrixXd s = c * v * c.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const double lmax = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  const double tol = 1e-12 * lmax;
  double stat = 0.0;
  int rank = 0;
  bool unbounded = false;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double q = eig.eigenvectors().col(i).dot(cd);
    const double lambda = eig.eigenvalues()(i);
    if (lambda > tol && lambda > 0.0) {
      stat += q * q / lambda;
      ++rank;
    } else if (std::abs(q) > 1e-12) {
      unbounded = true;
    }
  }
  if (unbounded) {
    rep.statistic = std::numeric_limits<double>::infinity();
    rep.p_value = 0.0;
  } else if (rank == 0) {
    rep.statistic = 0.0;
    rep.p_value = 1.0;
  } else {
    rep.statistic = stat;
    rep.p_value = boost::math::cdf(boost::math::complement(
      boost::math::chi_squared(static_cast<double>(rank)), stat));
  }
  rep.verdict = derive_verdict(rep.statistic, rep.p_value, alpha, std::nullopt);
  return rep;
}

//! Counts post-cohort rows with o < m. `tolerance` is the allowed fraction.
inline AssumptionReport check_dominance(const Dataset& data, double tolerance = 0.0)
{
  std::size_t n_post = 0, bad = 0;
  for (const auto& ob : data.observations) {
    if (!ob.post)
      continue;
    ++n_post;
    if (ob.o < ob.m)
      ++bad;
  }
  if (n_post == 0)
    throw Error(ErrorCode::precondition, "dominance check needs post-cohort rows");
  AssumptionReport rep;
  rep.name = AssumptionName::dominance;
  rep.statistic = static_cast<double>(bad) / static_cast<double>(n_post);
  rep.violations = bad;
  rep.details.push_back({ "share_o_less_than_m", rep.statistic, 0.0 });
  const auto allowed = static_cast<std::size_t>(std::floor(tolerance * static_cast<double>(n_post)));
  rep.verdict = derive_verdict(rep.statistic, std::nullopt, rep.alpha, rep.violations, allowed);
  return rep;
}

namespace detail {

inline AssumptionReport t_test_report(AssumptionName name, const DiffDiscEstimate& est,
                                      double alpha)
{
  AssumptionReport rep;
  rep.name = name;
  rep.alpha = alpha;
  if (est.se > 0.0) {
    rep.statistic = est.tau / est.se;
  } else {
    rep.statistic = est.tau == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  rep.p_value = normal_two_sided_p(rep.statistic);
  rep.details.push_back({ "diff_in_disc", est.tau, est.se });
  rep.verdict = derive_verdict(rep.statistic, rep.p_value, alpha, std::nullopt);
  return rep;
}

} // namespace detail

enum class PlaceboSplit
{
  adjacent_pre_periods,
  untreated_region
};

//! Difference-in-discontinuities between two groups never exposed to the
//! policy of interest. The `post` flag marks the pseudo-post group, whose
//! o column is set to m so the confounding policy plays both roles.
inline AssumptionReport placebo_diff_in_disc(const Dataset& data, const StudyDesign& design,
                                             PlaceboSplit split = PlaceboSplit::adjacent_pre_periods,
                                             double alpha = 0.05,
                                             double min_first_stage = default_min_first_stage)
{
  (void)split; // the two splits differ only in how the caller built the data
  Dataset relabeled = data;
  for (auto& ob : relabeled.observations) {
    if (ob.o != 0)
      throw Error(ErrorCode::precondition,
                  "placebo data must not contain rows exposed to the policy of interest");
    if (ob.post)
      ob.o = ob.m;
  }
  const auto est = fuzzy_diff_in_disc(estimate_boundary_limits(relabeled, design), min_first_stage);
  return detail::t_test_report(AssumptionName::placebo, est, alpha);
}

//! The estimator applied with a covariate in place of the outcome.
inline AssumptionReport covariate_smoothness(const Dataset& data, const StudyDesign& design,
                                             std::size_t covariate, double alpha = 0.05,
                                             double min_first_stage = default_min_first_stage)
{
  Dataset relabeled = data;
  for (auto& ob : relabeled.observations) {
    if (covariate >= ob.covariates.size())
      throw Error(ErrorCode::precondition, "covariate index out of range");
    ob.y = ob.covariates[covariate];
  }
  const auto est = fuzzy_diff_in_disc(estimate_boundary_limits(relabeled, design), min_first_stage);
  auto rep = detail::t_test_report(AssumptionName::covariate_smoothness, est, alpha);
  if (covariate < data.column_names.size())
    rep.details.front().label = data.column_names[covariate];
  return rep;
}

} // namespace fdd
