#pragma once

#include "fdd/core_data.hpp"
#include "fdd/error.hpp"
#include "fdd/kernels_llr.hpp"
#include "fdd/parallel.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fdd {

enum class VarianceMethod
{
  delta_independent,
  cluster_robust,
  cluster_bootstrap
};

inline std::string_view to_string(VarianceMethod m)
{
  switch (m) {
    case VarianceMethod::delta_independent: return "delta_independent";
    case VarianceMethod::cluster_robust: return "cluster_robust";
    case VarianceMethod::cluster_bootstrap: return "cluster_bootstrap";
  }
  return "?";
}

struct VarianceEstimate
{
  double variance = 0.0;
  VarianceMethod method = VarianceMethod::delta_independent;
  long df_or_reps = 0;
};

//! Two-sided normal critical value for level alpha.
inline double normal_critical(double alpha)
{
  return boost::math::quantile(boost::math::complement(boost::math::normal(), alpha / 2.0));
}

inline double normal_two_sided_p(double z)
{
  if (!std::isfinite(z))
    return std::isnan(z) ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z)));
}

//! Delta-method variance of the Wald ratio (num+ - num-) / (den+ - den-).
//! Above and below fits use disjoint rows; `cov_jump` is the covariance of
//! the numerator and denominator jumps (nonzero when both were fitted on the
//! same rows, zero for hand-assembled inputs).
inline VarianceEstimate delta_var_ratio(const LimitPair& num, const LimitPair& den,
                                        double ratio,
                                        VarianceKind kind = VarianceKind::cluster,
                                        double cov_jump = 0.0)
{
  const double d = den.jump();
  if (!(std::abs(d) > 0.0) || !std::isfinite(d))
    throw Error(ErrorCode::degenerate_denominator, "denominator jump is zero");
  const double var = (num.jump_variance(kind) - 2.0 * ratio * cov_jump +
                      ratio * ratio * den.jump_variance(kind)) /
                     (d * d);
  const auto n = static_cast<long>(std::min(num.above.n_effective + num.below.n_effective,
                                            den.above.n_effective + den.below.n_effective));
  return { std::max(0.0, var), VarianceMethod::delta_independent, n };
}

//! The two cohorts are independent samples, so the variances add.
inline VarianceEstimate diff_disc_var(const VarianceEstimate& post_ratio,
                                      const VarianceEstimate& pre_ratio)
{
  return { post_ratio.variance + pre_ratio.variance, post_ratio.method,
           post_ratio.df_or_reps + pre_ratio.df_or_reps };
}

//! CR1 sandwich: (G/(G-1)) ((N-1)/(N-K)) A^{-1} (sum_g s_g s_g') A^{-1}, where
//! `hessian` is A (e.g. X'WX) and row i of `scores` is x_i w_i e_i.
inline Eigen::MatrixXd cluster_robust_vcov(const Eigen::Ref<const Eigen::MatrixXd>& hessian,
                                           const Eigen::Ref<const Eigen::MatrixXd>& scores,
                                           std::span<const ClusterId> clusters)
{
  const Eigen::Index k = hessian.rows();
  const Eigen::Index n = scores.rows();
  std::unordered_map<ClusterId, Eigen::Index> index;
  for (Eigen::Index i = 0; i < n; ++i)
    index.try_emplace(clusters[static_cast<std::size_t>(i)], static_cast<Eigen::Index>(index.size()));
  const auto g = static_cast<Eigen::Index>(index.size());
  if (g < 2)
    throw Error(ErrorCode::too_few_clusters, "cluster-robust variance needs at least 2 clusters");

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(g, k);
  for (Eigen::Index i = 0; i < n; ++i)
    sums.row(index.at(clusters[static_cast<std::size_t>(i)])) += scores.row(i);
  const Eigen::MatrixXd meat = sums.transpose() * sums;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::singular_bread, "bread matrix is not positive definite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 1e-12 * eig.eigenvalues().maxCoeff())
    throw Error(ErrorCode::singular_bread, "bread matrix is singular");
  const Eigen::MatrixXd bread = ldlt.solve(Eigen::MatrixXd::Identity(k, k));

  const double gg = static_cast<double>(g);
  const double nn = static_cast<double>(n);
  const double scale = gg / (gg - 1.0) * (nn - 1.0) / std::max(1.0, nn - static_cast<double>(k));
  Eigen::MatrixXd v = scale * bread * meat * bread;
  return 0.5 * (v + v.transpose());
}

struct BootstrapResult
{
  double point = 0.0;
  double se = 0.0;
  std::pair<double, double> ci_percentile_95{ 0.0, 0.0 };
  std::vector<double> replicates;
  std::uint64_t seed = 0;
  std::size_t n_failed = 0;
  std::size_t requested = 0;

  //! More than 10% of the replicates failed.
  bool warning() const noexcept { return n_failed * 10 > requested; }
};

//! Empirical quantile as an order statistic: the ceil(q*B)-th smallest.
inline double order_statistic_quantile(std::vector<double> sorted_or_not, double q)
{
  std::sort(sorted_or_not.begin(), sorted_or_not.end());
  const auto b = sorted_or_not.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(b)));
  rank = std::clamp<std::size_t>(rank, 1, b);
  return sorted_or_not[rank - 1];
}

using Estimator = std::function<double(const Dataset&, const StudyDesign&)>;

//! Resamples clusters with replacement independently within each cohort and
//! re-runs `estimator`. Only in-window rows take part. A resampled cluster
//! drawn twice enters as two distinct clusters. Replicate r draws from a seed
//! derived from (seed, r) alone, so the result does not depend on threads.
inline BootstrapResult cluster_bootstrap(const Dataset& data, const StudyDesign& design,
                                         const Estimator& estimator, std::size_t reps,
                                         std::uint64_t seed, unsigned threads = 0)
{
  if (reps < 100)
    throw Error(ErrorCode::precondition, "cluster bootstrap needs at least 100 replicates");
  design.check();

  // clusters per cohort in ascending id order, with their in-window rows
  std::array<std::vector<std::vector<std::size_t>>, 2> clusters;
  for (int c = 0; c < 2; ++c) {
    std::map<ClusterId, std::vector<std::size_t>> by_id;
    std::map<ClusterId, std::pair<bool, bool>> sides;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& ob = data.observations[i];
      if (ob.post != (c == 1) || !design.in_window(ob.x))
        continue;
      by_id[ob.cluster].push_back(i);
      auto& s = sides[ob.cluster];
      (design.is_above(ob.x) ? s.first : s.second) = true;
    }
    std::size_t n_above = 0, n_below = 0;
    for (const auto& [id, s] : sides) {
      n_above += s.first;
      n_below += s.second;
    }
    if (n_above < 2 || n_below < 2)
      throw Error(ErrorCode::too_few_clusters,
                  "each cohort needs at least 2 clusters on each side of the cutoff",
                  c == 1 ? "post" : "pre");
    for (auto& [id, rows] : by_id)
      clusters[static_cast<std::size_t>(c)].push_back(std::move(rows));
  }

  BootstrapResult out;
  out.seed = seed;
  out.requested = reps;
  out.point = estimator(data, design);

  std::vector<double> values(reps, 0.0);
  std::vector<char> ok(reps, 0);
  parallel_for(reps, threads, [&](std::size_t r) {
    std::mt19937_64 rng(derive_seed(seed, r));
    Dataset sample;
    sample.column_names = data.column_names;
    ClusterId next_id = 0;
    for (const auto& pool : clusters) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t d = 0; d < pool.size(); ++d) {
        const auto& rows = pool[pick(rng)];
        for (auto i : rows) {
          sample.observations.push_back(data.observations[i]);
          sample.observations.back().cluster = next_id;
        }
        ++next_id;
      }
    }
    try {
      const double v = estimator(sample, design);
      if (std::isfinite(v)) {
        values[r] = v;
        ok[r] = 1;
      }
    } catch (const Error&) {
    }
  });

  for (std::size_t r = 0; r < reps; ++r) {
    if (ok[r])
      out.replicates.push_back(values[r]);
    else
      ++out.n_failed;
  }
  if (out.replicates.empty())
    throw Error(ErrorCode::all_replicates_failed, "every bootstrap replicate failed");

  const double nb = static_cast<double>(out.replicates.size());
  double mean = 0.0;
  for (double v : out.replicates)
    mean += v;
  mean /= nb;
  double ss = 0.0;
  for (double v : out.replicates)
    ss += (v - mean) * (v - mean);
  out.se = out.replicates.size() > 1 ? std::sqrt(ss / (nb - 1.0)) : 0.0;
  out.ci_percentile_95 = { order_statistic_quantile(out.replicates, 0.025),
                           order_statistic_quantile(out.replicates, 0.975) };
  return out;
}

} // namespace fdd
