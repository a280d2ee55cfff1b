#pragma once

#include "fdd/core_data.hpp"
#include "fdd/error.hpp"
#include "fdd/inference.hpp"
#include "fdd/kernels_llr.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fdd {

inline constexpr double default_min_first_stage = 0.05;

enum class EstimateMethod
{
  nonparametric_ratio,
  theorem3a,
  theorem3b,
  two_stage_ls
};

inline std::string_view to_string(EstimateMethod m)
{
  switch (m) {
    case EstimateMethod::nonparametric_ratio: return "nonparametric_ratio";
    case EstimateMethod::theorem3a: return "theorem3a";
    case EstimateMethod::theorem3b: return "theorem3b";
    case EstimateMethod::two_stage_ls: return "two_stage_ls";
  }
  return "?";
}

struct FirstStageEntry
{
  std::string name;
  double value = 0.0;
  double se = 0.0;
};

struct DiffDiscEstimate
{
  double tau = 0.0;
  double se = 0.0;
  std::pair<double, double> ci95{ 0.0, 0.0 };
  EstimateMethod method = EstimateMethod::nonparametric_ratio;
  //! Denominator discontinuities (nonparametric route) with their ses.
  std::vector<FirstStageEntry> first_stage;
  //! First-stage F on the excluded instruments (two-stage route).
  std::vector<std::pair<std::string, double>> first_stage_f;
  bool weak_first_stage = false;
  std::size_t n_post = 0;
  std::size_t n_pre = 0;
};

inline std::pair<double, double> normal_ci(double est, double se, double alpha = 0.05)
{
  const double z = normal_critical(alpha);
  return { est - z * se, est + z * se };
}

namespace detail {

inline void require_first_stage(double jump, double min_first_stage, const std::string& where)
{
  if (!(std::abs(jump) >= min_first_stage) || !std::isfinite(jump))
    throw Error(ErrorCode::weak_first_stage,
                "first-stage discontinuity " + std::to_string(jump) + " in " + where +
                  " is below the threshold " + std::to_string(min_first_stage),
                where);
}

} // namespace detail

//! Single-cohort Wald ratio (Y+ - Y-) / (D+ - D-). `cov_jump` is the
//! covariance of the two jumps when Y and D were fitted on the same rows.
inline DiffDiscEstimate fuzzy_rd(const LimitPair& y, const LimitPair& d,
                                 double min_first_stage = default_min_first_stage,
                                 VarianceKind kind = VarianceKind::cluster,
                                 double cov_jump = 0.0)
{
  detail::require_first_stage(d.jump(), min_first_stage, "treatment");
  DiffDiscEstimate e;
  e.tau = y.jump() / d.jump();
  e.se = std::sqrt(delta_var_ratio(y, d, e.tau, kind, cov_jump).variance);
  e.ci95 = normal_ci(e.tau, e.se);
  e.first_stage.push_back({ "D", d.jump(), std::sqrt(d.jump_variance(kind)) });
  e.n_post = y.above.n_effective + y.below.n_effective;
  return e;
}

inline DiffDiscEstimate fuzzy_rd_cohort(const BoundaryLimits& limits, Cohort cohort,
                                        double min_first_stage = default_min_first_stage)
{
  const Variable den = cohort == Cohort::post ? Variable::t : Variable::m;
  try {
    auto e = fuzzy_rd(limits.pair(cohort, Variable::y), limits.pair(cohort, den),
                      min_first_stage, limits.variance_kind,
                      limits.jump_cov(cohort, Variable::y, den));
    e.first_stage.front().name = std::string(to_string(den)) + "_" + std::string(to_string(cohort));
    if (cohort == Cohort::pre)
      std::swap(e.n_post, e.n_pre);
    return e;
  } catch (const Error& err) {
    if (err.code() == ErrorCode::weak_first_stage)
      throw Error(err.code(), err.what(), std::string(to_string(cohort)));
    throw;
  }
}

//! Difference of the post-cohort ratio (Y~ over T~) and the pre-cohort
//! ratio (Y- over M-). The cohorts are independent samples, so the variance
//! is the sum of the two delta-method variances.
inline DiffDiscEstimate fuzzy_diff_in_disc(const BoundaryLimits& limits,
                                           double min_first_stage = default_min_first_stage)
{
  const VarianceKind kind = limits.variance_kind;
  const double dt = limits.t_post.jump();
  const double dm_pre = limits.m_pre.jump();
  detail::require_first_stage(dt, min_first_stage, "post");
  detail::require_first_stage(dm_pre, min_first_stage, "pre");

  const double r_post = limits.y_post.jump() / dt;
  const double r_pre = limits.y_pre.jump() / dm_pre;
  const auto v_post = delta_var_ratio(limits.y_post, limits.t_post, r_post, kind,
                                      limits.jump_cov(Cohort::post, Variable::y, Variable::t));
  const auto v_pre = delta_var_ratio(limits.y_pre, limits.m_pre, r_pre, kind,
                                     limits.jump_cov(Cohort::pre, Variable::y, Variable::m));

  DiffDiscEstimate e;
  e.method = EstimateMethod::nonparametric_ratio;
  e.tau = r_post - r_pre;
  e.se = std::sqrt(diff_disc_var(v_post, v_pre).variance);
  e.ci95 = normal_ci(e.tau, e.se);
  auto entry = [&](const char* name, const LimitPair& p) {
    return FirstStageEntry{ name, p.jump(), std::sqrt(p.jump_variance(kind)) };
  };
  e.first_stage = { entry("T_post", limits.t_post), entry("M_pre", limits.m_pre),
                    entry("O_post", limits.o_post), entry("M_post", limits.m_post) };
  e.n_post = limits.n_post;
  e.n_pre = limits.n_pre;
  return e;
}

//! Effect of the confounding policy alone, read off the pre cohort.
inline double ate_m_from_pre(const BoundaryLimits& limits,
                             double min_first_stage = default_min_first_stage)
{
  detail::require_first_stage(limits.m_pre.jump(), min_first_stage, "pre");
  return limits.y_pre.jump() / limits.m_pre.jump();
}

//! Additive-effects correction: (dT/dO) [tau + (1 - dM/dT) ate_m].
inline double theorem3a_correct(double tau_frd, const BoundaryLimits& limits, double ate_m,
                                double min_first_stage = default_min_first_stage)
{
  const double dt = limits.t_post.jump();
  const double d_o = limits.o_post.jump();
  const double dm = limits.m_post.jump();
  detail::require_first_stage(d_o, min_first_stage, "post/O");
  detail::require_first_stage(dt, min_first_stage, "post/T");
  return dt / d_o * (tau_frd + (1.0 - dm / dt) * ate_m);
}

//! Additive effects plus O >= M: tau * dM / dO.
inline double theorem3b_correct(double tau_frd, const BoundaryLimits& limits,
                                double min_first_stage = default_min_first_stage)
{
  const double d_o = limits.o_post.jump();
  detail::require_first_stage(d_o, min_first_stage, "post/O");
  return tau_frd * limits.m_post.jump() / d_o;
}

struct BiasDecomposition
{
  double ate_o = 0.0;
  double term_o = 0.0;
  double term_m = 0.0;
  double tau_implied = 0.0;
};

//! tau = ate_o - [1 - dO/dT] gap_o - [1 - dM/dT] gap_m, where gap_o is
//! Y(1,0) - Y(0,0) and gap_m is Y(0,1) - Y(0,0) at the cutoff.
inline BiasDecomposition bias_decompose(double ate_o, double gap_o, double gap_m,
                                        const BoundaryLimits& limits)
{
  const double dt = limits.t_post.jump();
  if (dt == 0.0 || !std::isfinite(dt))
    throw Error(ErrorCode::weak_first_stage, "joint-treatment discontinuity is zero", "post");
  BiasDecomposition b;
  b.ate_o = ate_o;
  b.term_o = (1.0 - limits.o_post.jump() / dt) * gap_o;
  b.term_m = (1.0 - limits.m_post.jump() / dt) * gap_m;
  b.tau_implied = ate_o - b.term_o - b.term_m;
  return b;
}

struct IvResult
{
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  //! First-stage F of each endogenous regressor on the excluded instruments.
  std::vector<double> first_stage_f;
  std::size_t n = 0;
  std::size_t n_clusters = 0;
};

//! Two-stage least squares with CR1 cluster-robust covariance. Columns of
//! the regressor matrix are [exog, endog]; instruments are [exog, excluded].
inline IvResult iv_2sls(const Eigen::Ref<const Eigen::VectorXd>& y,
                        const Eigen::Ref<const Eigen::MatrixXd>& exog,
                        const Eigen::Ref<const Eigen::MatrixXd>& endog,
                        const Eigen::Ref<const Eigen::MatrixXd>& excluded,
                        std::span<const double> weights,
                        std::span<const ClusterId> clusters)
{
  const Eigen::Index n = y.size();
  const Eigen::Index k_ex = exog.cols();
  const Eigen::Index k_en = endog.cols();
  const Eigen::Index k_z = excluded.cols();
  if (k_z < k_en)
    throw Error(ErrorCode::rank_deficient, "fewer excluded instruments than endogenous regressors");

  Eigen::VectorXd sw(n);
  for (Eigen::Index i = 0; i < n; ++i)
    sw(i) = std::sqrt(weights[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd x(n, k_ex + k_en), z(n, k_ex + k_z);
  x << exog, endog;
  z << exog, excluded;
  x = sw.asDiagonal() * x;
  z = sw.asDiagonal() * z;
  const Eigen::VectorXd yw = sw.asDiagonal() * y;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_z(z);
  qr_z.setThreshold(1e-10);
  if (qr_z.rank() < z.cols())
    throw Error(ErrorCode::rank_deficient, "instrument matrix is rank deficient");
  const Eigen::MatrixXd x_hat = z * qr_z.solve(x);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_xh(x_hat);
  qr_xh.setThreshold(1e-10);
  if (qr_xh.rank() < x_hat.cols())
    throw Error(ErrorCode::rank_deficient, "projected regressors are collinear");

  IvResult out;
  out.n = static_cast<std::size_t>(n);
  out.coef = qr_xh.solve(yw);
  const Eigen::VectorXd resid = yw - x * out.coef;
  const Eigen::MatrixXd hessian = x_hat.transpose() * x_hat;
  const Eigen::MatrixXd scores = x_hat.array().colwise() * resid.array();
  out.vcov = cluster_robust_vcov(hessian, scores, clusters);
  {
    std::vector<ClusterId> ids(clusters.begin(), clusters.end());
    std::sort(ids.begin(), ids.end());
    out.n_clusters = static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }

  const Eigen::MatrixXd ex_w = z.leftCols(k_ex);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_ex(ex_w);
  const double df = static_cast<double>(n - z.cols());
  for (Eigen::Index j = 0; j < k_en; ++j) {
    const Eigen::VectorXd col = x.col(k_ex + j);
    const double rss_u = (col - z * qr_z.solve(col)).squaredNorm();
    const double rss_r = (col - ex_w * qr_ex.solve(col)).squaredNorm();
    double f = std::numeric_limits<double>::infinity();
    if (rss_u > 1e-14 * rss_r && df > 0)
      f = ((rss_r - rss_u) / static_cast<double>(k_z)) / (rss_u / df);
    out.first_stage_f.push_back(f);
  }
  return out;
}

enum class TwoSlsSpec
{
  simplified,
  full
};

inline std::string_view to_string(TwoSlsSpec s)
{
  return s == TwoSlsSpec::simplified ? "simplified" : "full";
}

//! Reduced-form difference-in-discontinuities by 2SLS on the window rows.
//!
//! simplified: Y ~ 1 + D + f(x, X*, D) + covariates + M + D*M, with M and D*M
//!   instrumented by X* and D*X*; f holds u^k, X* u^k, D u^k, D X* u^k for
//!   k = 1..poly_order, u = (x - cutoff) / half width. Returns the D*M
//!   coefficient.
//! full: Y ~ 1 + D + g(x, D) + covariates + M + O + D*M*O, g holding u^k and
//!   D u^k only, instrumented by X*, D*X*, X* u^k and D X* u^k. Returns the
//!   D*M*O coefficient.
//!
//! `covariates` selects covariate columns; nullopt uses all of them.
inline DiffDiscEstimate reduced_form_2sls(const Dataset& data, const StudyDesign& design,
                                          TwoSlsSpec spec = TwoSlsSpec::simplified,
                                          std::optional<std::vector<std::size_t>> covariates = std::nullopt)
{
  design.check();
  validate(data, design);
  std::vector<std::size_t> cov_idx;
  if (covariates) {
    cov_idx = *covariates;
  } else {
    for (std::size_t j = 0; j < data.column_names.size(); ++j)
      cov_idx.push_back(j);
  }

  std::vector<std::size_t> rows;
  std::size_t n_post = 0, n_pre = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!design.in_window(data.observations[i].x))
      continue;
    rows.push_back(i);
    (data.observations[i].post ? n_post : n_pre) += 1;
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const int p = design.poly_order;
  const double hw = design.half_width();

  const Eigen::Index k_poly = spec == TwoSlsSpec::simplified ? 4 * p : 2 * p;
  const Eigen::Index k_ex = 2 + k_poly + static_cast<Eigen::Index>(cov_idx.size());
  const Eigen::Index k_en = spec == TwoSlsSpec::simplified ? 2 : 3;
  const Eigen::Index k_excl = spec == TwoSlsSpec::simplified ? 2 : 2 + 2 * p;

  Eigen::VectorXd y(n);
  Eigen::MatrixXd exog(n, k_ex), endog(n, k_en), excl(n, k_excl);
  std::vector<double> w(rows.size());
  std::vector<ClusterId> g(rows.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& ob = data.observations[rows[static_cast<std::size_t>(r)]];
    const double u = (ob.x - design.cutoff) / hw;
    const double xs = design.is_above(ob.x) ? 1.0 : 0.0;
    const double d = ob.post ? 1.0 : 0.0;
    y(r) = ob.y;
    w[static_cast<std::size_t>(r)] = ob.weight;
    g[static_cast<std::size_t>(r)] = ob.cluster;

    Eigen::Index c = 0;
    exog(r, c++) = 1.0;
    exog(r, c++) = d;
    for (int k = 1; k <= p; ++k) {
      const double uk = std::pow(u, k);
      exog(r, c++) = uk;
      exog(r, c++) = d * uk;
      if (spec == TwoSlsSpec::simplified) {
        exog(r, c++) = xs * uk;
        exog(r, c++) = d * xs * uk;
      }
    }
    for (auto j : cov_idx) {
      if (j >= ob.covariates.size())
        throw Error(ErrorCode::precondition, "covariate index out of range");
      exog(r, c++) = ob.covariates[j];
    }

    excl(r, 0) = xs;
    excl(r, 1) = d * xs;
    if (spec == TwoSlsSpec::simplified) {
      endog(r, 0) = ob.m;
      endog(r, 1) = d * ob.m;
    } else {
      for (int k = 1; k <= p; ++k) {
        excl(r, 2 * k) = xs * std::pow(u, k);
        excl(r, 2 * k + 1) = d * xs * std::pow(u, k);
      }
      endog(r, 0) = ob.m;
      endog(r, 1) = ob.o;
      endog(r, 2) = d * ob.m * ob.o;
    }
  }

  const IvResult iv = iv_2sls(y, exog, endog, excl, w, g);
  const Eigen::Index target = k_ex + k_en - 1;

  DiffDiscEstimate e;
  e.method = EstimateMethod::two_stage_ls;
  e.tau = iv.coef(target);
  e.se = std::sqrt(std::max(0.0, iv.vcov(target, target)));
  e.ci95 = normal_ci(e.tau, e.se);
  const std::vector<std::string> names =
    spec == TwoSlsSpec::simplified ? std::vector<std::string>{ "M", "D*M" }
                                   : std::vector<std::string>{ "M", "O", "D*M*O" };
  for (std::size_t j = 0; j < names.size(); ++j) {
    e.first_stage_f.emplace_back(names[j], iv.first_stage_f[j]);
    if (iv.first_stage_f[j] < 4.0)
      e.weak_first_stage = true;
  }
  e.n_post = n_post;
  e.n_pre = n_pre;
  return e;
}

} // namespace fdd
