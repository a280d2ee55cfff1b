#pragma once

#include "fdd/core_data.hpp"
#include "fdd/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fdd {

inline double kernel_weight(Kernel k, double u) noexcept
{
  const double a = std::abs(u);
  switch (k) {
    case Kernel::triangular: return a < 1.0 ? 1.0 - a : 0.0;
    // constant 1 on the support; only weight ratios matter in WLS
    case Kernel::uniform: return a <= 1.0 ? 1.0 : 0.0;
    case Kernel::epanechnikov: return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
  }
  return 0.0;
}

enum class Variable
{
  y,
  t,
  m,
  o
};

inline std::string_view to_string(Variable v)
{
  switch (v) {
    case Variable::y: return "Y";
    case Variable::t: return "T";
    case Variable::m: return "M";
    case Variable::o: return "O";
  }
  return "?";
}

//! One-sided local polynomial fit. The intercept estimates the boundary
//! limit of E[v | x] at the cutoff.
struct LocalFit
{
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double slope = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_effective = 0;
  std::size_t n_clusters = 0;
  double hc_variance_intercept = 0.0;
  double cluster_variance_intercept = 0.0;

  double variance(VarianceKind kind) const noexcept
  {
    return kind == VarianceKind::cluster ? cluster_variance_intercept
                                         : hc_variance_intercept;
  }

  bool present() const noexcept { return n_effective > 0; }
};

struct FitOptions
{
  Side side = Side::above;
  double cutoff = 0.0;
  double h = 1.0;
  Kernel kernel = Kernel::triangular;
  int poly_order = 1;
  CutoffSide at_cutoff = CutoffSide::treated;
};

struct LlrRow
{
  double x = 0.0;
  double v = 0.0;
  double weight = 1.0;
  ClusterId cluster = 0;
};

//! Several responses fitted on the same rows with the same kernel weights.
//! The covariance matrices are over the intercepts of `fits`; fits on the
//! same rows are correlated, fits on disjoint rows are not.
struct JointFit
{
  std::vector<LocalFit> fits;
  Eigen::MatrixXd hc_cov;
  Eigen::MatrixXd cluster_cov;
};

namespace detail {

inline bool on_side(double x, const FitOptions& opt) noexcept
{
  const bool above =
    x > opt.cutoff || (x == opt.cutoff && opt.at_cutoff == CutoffSide::treated);
  return opt.side == Side::above ? above : !above;
}

} // namespace detail

//! Weighted local polynomial regression of each column of `v` on powers of
//! (x - cutoff), restricted to one side of the cutoff, with row weights
//! weight * K((x - cutoff) / h). Regressors are scaled by h internally.
inline JointFit llr_boundary_joint(std::span<const double> x,
                                   const Eigen::Ref<const Eigen::MatrixXd>& v,
                                   std::span<const double> weight,
                                   std::span<const ClusterId> cluster,
                                   const FitOptions& opt)
{
  if (!(opt.h > 0.0))
    throw Error(ErrorCode::invalid_design, "bandwidth must be positive");
  const int k = opt.poly_order + 1;
  const Eigen::Index r = v.cols();

  std::vector<std::size_t> rows;
  std::vector<double> w;
  rows.reserve(x.size());
  double x_min = std::numeric_limits<double>::infinity();
  double x_max = -x_min;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!detail::on_side(x[i], opt))
      continue;
    const double wi = weight[i] * kernel_weight(opt.kernel, (x[i] - opt.cutoff) / opt.h);
    if (wi <= 0.0)
      continue;
    rows.push_back(i);
    w.push_back(wi);
    x_min = std::min(x_min, x[i]);
    x_max = std::max(x_max, x[i]);
  }
  const std::size_t n = rows.size();
  if (n < static_cast<std::size_t>(std::max(2, k)) || !(x_max > x_min))
    throw Error(ErrorCode::insufficient_support,
                "only " + std::to_string(n) +
                  " rows with positive weight (or no spread in x) on the " +
                  std::string(to_string(opt.side)) + " side");

  const auto ku = static_cast<std::size_t>(k);
  const auto ru = static_cast<std::size_t>(r);
  auto regressors = [&](double xi, double* z) {
    const double u = (xi - opt.cutoff) / opt.h;
    z[0] = 1.0;
    z[1] = u;
    z[2] = u * u;
  };

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(k, r);
  double z[3];
  for (std::size_t p = 0; p < n; ++p) {
    const auto i = static_cast<Eigen::Index>(rows[p]);
    regressors(x[rows[p]], z);
    for (std::size_t c = 0; c < ku; ++c) {
      const double wz = w[p] * z[c];
      for (std::size_t d = 0; d < ku; ++d)
        a(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)) += wz * z[d];
      for (Eigen::Index j = 0; j < r; ++j)
        b(static_cast<Eigen::Index>(c), j) += wz * v(i, j);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || lmin <= 1e-13 * lmax)
    throw Error(ErrorCode::singular_fit, "local design matrix is rank deficient");
  const Eigen::MatrixXd a_inv = a.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd coef = a_inv * b;

  // intercept influence: psi_i = e1' A^{-1} z_i w_i e_i
  Eigen::MatrixXd hc = Eigen::MatrixXd::Zero(r, r);
  std::unordered_map<ClusterId, std::size_t> cluster_index;
  std::vector<double> cluster_sums; // row-major, one row of r per cluster
  std::vector<double> psi(ru);
  for (std::size_t p = 0; p < n; ++p) {
    const auto i = static_cast<Eigen::Index>(rows[p]);
    regressors(x[rows[p]], z);
    double lever = 0.0;
    for (std::size_t c = 0; c < ku; ++c)
      lever += a_inv(0, static_cast<Eigen::Index>(c)) * z[c];
    lever *= w[p];
    for (std::size_t j = 0; j < ru; ++j) {
      double fitted = 0.0;
      for (std::size_t c = 0; c < ku; ++c)
        fitted += z[c] * coef(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
      psi[j] = lever * (v(i, static_cast<Eigen::Index>(j)) - fitted);
    }
    for (std::size_t j = 0; j < ru; ++j)
      for (std::size_t l = 0; l < ru; ++l)
        hc(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) += psi[j] * psi[l];
    auto [it, inserted] = cluster_index.try_emplace(cluster[rows[p]], cluster_index.size());
    if (inserted)
      cluster_sums.insert(cluster_sums.end(), psi.begin(), psi.end());
    else
      for (std::size_t j = 0; j < ru; ++j)
        cluster_sums[it->second * ru + j] += psi[j];
  }
  const double dof = static_cast<double>(std::max<std::size_t>(n - ku, 1));
  const double nn = static_cast<double>(n);
  hc *= nn / dof;

  const std::size_t g_count = cluster_index.size();
  Eigen::MatrixXd cr;
  if (g_count >= 2) {
    cr = Eigen::MatrixXd::Zero(r, r);
    for (std::size_t g = 0; g < g_count; ++g)
      for (std::size_t j = 0; j < ru; ++j)
        for (std::size_t l = 0; l < ru; ++l)
          cr(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) +=
            cluster_sums[g * ru + j] * cluster_sums[g * ru + l];
    const double gg = static_cast<double>(g_count);
    cr *= gg / (gg - 1.0) * (nn - 1.0) / dof;
  } else {
    cr = hc;
  }

  JointFit out;
  out.fits.resize(static_cast<std::size_t>(r));
  for (Eigen::Index j = 0; j < r; ++j) {
    auto& f = out.fits[static_cast<std::size_t>(j)];
    f.intercept = coef(0, j);
    f.slope = coef(1, j) / opt.h;
    f.n_effective = n;
    f.n_clusters = g_count;
    f.hc_variance_intercept = std::max(0.0, hc(j, j));
    f.cluster_variance_intercept = std::max(0.0, cr(j, j));
  }
  out.hc_cov = std::move(hc);
  out.cluster_cov = std::move(cr);
  return out;
}

inline LocalFit llr_boundary(std::span<const LlrRow> data, const FitOptions& opt)
{
  std::vector<double> x(data.size()), w(data.size());
  std::vector<ClusterId> g(data.size());
  Eigen::MatrixXd v(static_cast<Eigen::Index>(data.size()), 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    x[i] = data[i].x;
    w[i] = data[i].weight;
    g[i] = data[i].cluster;
    v(static_cast<Eigen::Index>(i), 0) = data[i].v;
  }
  return llr_boundary_joint(x, v, w, g, opt).fits.front();
}

struct LimitPair
{
  LocalFit above;
  LocalFit below;

  double jump() const noexcept { return above.intercept - below.intercept; }

  //! Sides are fitted on disjoint rows, so their variances add.
  double jump_variance(VarianceKind kind) const noexcept
  {
    return above.variance(kind) + below.variance(kind);
  }

  bool present() const noexcept { return above.present() && below.present(); }
};

//! The one-sided limits at the cutoff: Y, T, M, O for the post cohort, Y and
//! M for the pre cohort. Intercept covariances are kept per cohort and side,
//! indexed by Variable (the pre matrices use only the Y and M entries).
struct BoundaryLimits
{
  LimitPair y_post, t_post, m_post, o_post;
  LimitPair y_pre, m_pre;
  Eigen::Matrix4d cov_post_above = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d cov_post_below = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d cov_pre_above = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d cov_pre_below = Eigen::Matrix4d::Zero();
  VarianceKind variance_kind = VarianceKind::cluster;
  std::size_t n_post = 0;
  std::size_t n_pre = 0;

  //! Limits assembled by hand; same-side fits treated as uncorrelated.
  static BoundaryLimits from_pairs(LimitPair y_post, LimitPair t_post,
                                   LimitPair m_post, LimitPair o_post,
                                   LimitPair y_pre, LimitPair m_pre,
                                   VarianceKind kind = VarianceKind::cluster)
  {
    BoundaryLimits b;
    b.y_post = y_post;
    b.t_post = t_post;
    b.m_post = m_post;
    b.o_post = o_post;
    b.y_pre = y_pre;
    b.m_pre = m_pre;
    b.variance_kind = kind;
    for (Variable v : { Variable::y, Variable::t, Variable::m, Variable::o }) {
      const auto i = static_cast<Eigen::Index>(v);
      b.cov_post_above(i, i) = b.pair(Cohort::post, v).above.variance(kind);
      b.cov_post_below(i, i) = b.pair(Cohort::post, v).below.variance(kind);
    }
    for (Variable v : { Variable::y, Variable::m }) {
      const auto i = static_cast<Eigen::Index>(v);
      b.cov_pre_above(i, i) = b.pair(Cohort::pre, v).above.variance(kind);
      b.cov_pre_below(i, i) = b.pair(Cohort::pre, v).below.variance(kind);
    }
    return b;
  }

  const LimitPair& pair(Cohort c, Variable v) const
  {
    if (c == Cohort::pre) {
      if (v == Variable::y)
        return y_pre;
      if (v == Variable::m)
        return m_pre;
      throw Error(ErrorCode::missing_limits, "pre cohort has only Y and M limits");
    }
    switch (v) {
      case Variable::y: return y_post;
      case Variable::t: return t_post;
      case Variable::m: return m_post;
      case Variable::o: return o_post;
    }
    return y_post;
  }

  LimitPair& pair(Cohort c, Variable v)
  {
    return const_cast<LimitPair&>(std::as_const(*this).pair(c, v));
  }

  double jump(Cohort c, Variable v) const { return pair(c, v).jump(); }

  //! Covariance of two jumps within one cohort (above + below blocks).
  double jump_cov(Cohort c, Variable a, Variable b) const
  {
    const auto i = static_cast<Eigen::Index>(a);
    const auto j = static_cast<Eigen::Index>(b);
    if (c == Cohort::post)
      return cov_post_above(i, j) + cov_post_below(i, j);
    return cov_pre_above(i, j) + cov_pre_below(i, j);
  }
};

namespace detail {

struct CohortColumns
{
  std::vector<double> x, w;
  std::vector<ClusterId> g;
  std::vector<std::array<double, 4>> values; // indexed by Variable
};

inline CohortColumns cohort_columns(const Dataset& data, const StudyDesign& design,
                                    Cohort cohort)
{
  CohortColumns c;
  const bool want_post = cohort == Cohort::post;
  for (const auto& ob : data.observations) {
    if (ob.post != want_post || !design.in_window(ob.x))
      continue;
    c.x.push_back(ob.x);
    c.w.push_back(ob.weight);
    c.g.push_back(ob.cluster);
    c.values.push_back({ ob.y, static_cast<double>(ob.t()),
                         static_cast<double>(ob.m), static_cast<double>(ob.o) });
  }
  return c;
}

} // namespace detail

inline BoundaryLimits estimate_boundary_limits(const Dataset& data,
                                               const StudyDesign& design)
{
  design.check();
  validate(data, design);
  BoundaryLimits out;
  out.variance_kind = design.variance;

  for (Cohort cohort : { Cohort::post, Cohort::pre }) {
    const auto cols = detail::cohort_columns(data, design, cohort);
    (cohort == Cohort::post ? out.n_post : out.n_pre) = cols.x.size();
    const std::vector<Variable> vars =
      cohort == Cohort::post
        ? std::vector<Variable>{ Variable::y, Variable::t, Variable::m, Variable::o }
        : std::vector<Variable>{ Variable::y, Variable::m };
    Eigen::MatrixXd v(static_cast<Eigen::Index>(cols.x.size()),
                      static_cast<Eigen::Index>(vars.size()));
    for (std::size_t i = 0; i < cols.x.size(); ++i)
      for (std::size_t j = 0; j < vars.size(); ++j)
        v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cols.values[i][static_cast<std::size_t>(vars[j])];

    for (Side side : { Side::above, Side::below }) {
      FitOptions opt;
      opt.side = side;
      opt.cutoff = design.cutoff;
      opt.h = design.bandwidths.get(cohort, side);
      opt.kernel = design.kernel;
      opt.poly_order = design.poly_order;
      opt.at_cutoff = design.at_cutoff;
      const std::string cell =
        std::string(to_string(cohort)) + "/" + std::string(to_string(side));
      JointFit jf;
      try {
        jf = llr_boundary_joint(cols.x, v, cols.w, cols.g, opt);
      } catch (const Error& e) {
        std::string names;
        for (auto var : vars)
          names += (names.empty() ? "" : ",") + std::string(to_string(var));
        throw Error(e.code(), "cell " + cell + " (" + names + "): " + e.what(), cell);
      }
      const Eigen::MatrixXd& cov =
        design.variance == VarianceKind::cluster ? jf.cluster_cov : jf.hc_cov;
      Eigen::Matrix4d& target = cohort == Cohort::post
                                  ? (side == Side::above ? out.cov_post_above : out.cov_post_below)
                                  : (side == Side::above ? out.cov_pre_above : out.cov_pre_below);
      for (std::size_t j = 0; j < vars.size(); ++j) {
        LimitPair& p = out.pair(cohort, vars[j]);
        (side == Side::above ? p.above : p.below) = jf.fits[j];
        for (std::size_t l = 0; l < vars.size(); ++l)
          target(static_cast<Eigen::Index>(vars[j]), static_cast<Eigen::Index>(vars[l])) =
            cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
      }
    }
  }
  return out;
}

//! Geometric grid of 20 bandwidths spanning [0.1, 1] x window half width.
inline std::vector<double> bandwidth_grid(const StudyDesign& design)
{
  std::vector<double> grid(20);
  const double hw = design.half_width();
  for (int k = 0; k < 20; ++k)
    grid[static_cast<std::size_t>(k)] = hw * 0.1 * std::pow(10.0, k / 19.0);
  return grid;
}

namespace detail {

// Local linear prediction at x0 from neighbours strictly on one side of it.
// Returns NaN when the neighbourhood cannot support a line.
inline double one_sided_prediction(std::span<const double> xs,
                                   std::span<const double> vs,
                                   std::span<const double> ws, std::size_t i,
                                   bool look_right, double h, Kernel kernel)
{
  const double x0 = xs[i];
  double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
  std::size_t count = 0;
  auto add = [&](std::size_t j) {
    const double d = xs[j] - x0;
    const double wj = ws[j] * kernel_weight(kernel, d / h);
    if (wj <= 0.0 || d == 0.0)
      return;
    ++count;
    s0 += wj;
    s1 += wj * d;
    s2 += wj * d * d;
    t0 += wj * vs[j];
    t1 += wj * d * vs[j];
  };
  if (look_right) {
    for (std::size_t j = i + 1; j < xs.size() && xs[j] - x0 <= h; ++j)
      add(j);
  } else {
    for (std::size_t j = i; j-- > 0 && x0 - xs[j] <= h;)
      add(j);
  }
  const double det = s0 * s2 - s1 * s1;
  if (count < 2 || !(det > 1e-12 * s0 * s2))
    return std::numeric_limits<double>::quiet_NaN();
  return (t0 * s2 - s1 * t1) / det;
}

} // namespace detail

//! Leave-one-out bandwidth choice: each in-window observation is predicted by
//! a local linear fit on the observations beyond it (away from the cutoff),
//! mimicking a boundary fit. Ties resolve to the larger bandwidth.
inline double select_bandwidth(const Dataset& data, const StudyDesign& design,
                               Variable variable, Cohort cohort)
{
  design.check();
  const auto cols = detail::cohort_columns(data, design, cohort);
  if (cols.x.size() < 20)
    throw Error(ErrorCode::insufficient_support,
                "bandwidth selection needs at least 20 in-window observations",
                std::string(to_string(cohort)));

  struct SideData
  {
    std::vector<double> x, v, w;
  };
  SideData above, below;
  {
    std::vector<std::size_t> order(cols.x.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return cols.x[a] < cols.x[b]; });
    for (auto i : order) {
      SideData& s = design.is_above(cols.x[i]) ? above : below;
      s.x.push_back(cols.x[i]);
      s.v.push_back(cols.values[i][static_cast<std::size_t>(variable)]);
      s.w.push_back(cols.w[i]);
    }
  }

  const auto grid = bandwidth_grid(design);
  // evaluation set: points supported at the smallest bandwidth
  struct Eval
  {
    const SideData* side;
    std::size_t index;
    bool look_right;
  };
  std::vector<Eval> evals;
  for (auto [side, right] : { std::pair{ &above, true }, std::pair{ &below, false } })
    for (std::size_t i = 0; i < side->x.size(); ++i)
      if (std::isfinite(detail::one_sided_prediction(side->x, side->v, side->w, i,
                                                     right, grid.front(), design.kernel)))
        evals.push_back({ side, i, right });
  if (evals.empty())
    throw Error(ErrorCode::insufficient_support,
                "no observation supports a one-sided fit at the smallest bandwidth",
                std::string(to_string(cohort)));

  double mean_v = 0, var_v = 0;
  for (const auto& row : cols.values)
    mean_v += row[static_cast<std::size_t>(variable)];
  mean_v /= static_cast<double>(cols.values.size());
  for (const auto& row : cols.values)
    var_v += std::pow(row[static_cast<std::size_t>(variable)] - mean_v, 2);
  var_v /= static_cast<double>(cols.values.size());
  const double abs_tol = 1e-12 * var_v + 1e-300;

  double best_h = grid.back();
  double best_err = std::numeric_limits<double>::infinity();
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    double sse = 0;
    for (const auto& e : evals) {
      const double pred = detail::one_sided_prediction(
        e.side->x, e.side->v, e.side->w, e.index, e.look_right, *it, design.kernel);
      sse += std::pow(e.side->v[e.index] - pred, 2);
    }
    const double err = sse / static_cast<double>(evals.size());
    if (err < best_err - abs_tol - 1e-9 * std::abs(best_err) ||
        !std::isfinite(best_err)) {
      best_err = err;
      best_h = *it;
    }
  }
  return best_h;
}

} // namespace fdd
