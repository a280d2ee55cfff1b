#pragma once

#include "fdd/error.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fdd {

using ClusterId = std::int64_t;

enum class Kernel
{
  triangular,
  uniform,
  epanechnikov
};

enum class Side
{
  above,
  below
};

enum class Cohort
{
  pre,
  post
};

//! Which side an observation sitting exactly on the cutoff joins.
enum class CutoffSide
{
  treated,
  control
};

enum class VarianceKind
{
  cluster,
  hc
};

inline std::string_view to_string(Kernel k)
{
  switch (k) {
    case Kernel::triangular: return "triangular";
    case Kernel::uniform: return "uniform";
    case Kernel::epanechnikov: return "epanechnikov";
  }
  return "?";
}

inline std::string_view to_string(Side s)
{
  return s == Side::above ? "above" : "below";
}

inline std::string_view to_string(Cohort c)
{
  return c == Cohort::post ? "post" : "pre";
}

inline std::string_view to_string(VarianceKind v)
{
  return v == VarianceKind::cluster ? "cluster" : "hc";
}

inline Kernel parse_kernel(std::string_view s)
{
  if (s == "triangular")
    return Kernel::triangular;
  if (s == "uniform")
    return Kernel::uniform;
  if (s == "epanechnikov")
    return Kernel::epanechnikov;
  throw Error(ErrorCode::config_error, "unknown kernel '" + std::string(s) + "'");
}

struct Observation
{
  double y = 0.0;
  double x = 0.0;
  bool post = false;
  int m = 0;
  int o = 0;
  ClusterId cluster = 0;
  double weight = 1.0;
  std::vector<double> covariates;

  //! Joint participation indicator, derived on demand.
  int t() const noexcept { return m * o; }
};

struct Bandwidths
{
  double below_pre = 1.0;
  double above_pre = 1.0;
  double below_post = 1.0;
  double above_post = 1.0;

  static Bandwidths shared(double h) { return { h, h, h, h }; }

  double get(Cohort c, Side s) const noexcept
  {
    if (c == Cohort::pre)
      return s == Side::above ? above_pre : below_pre;
    return s == Side::above ? above_post : below_post;
  }

  double& get(Cohort c, Side s) noexcept
  {
    if (c == Cohort::pre)
      return s == Side::above ? above_pre : below_pre;
    return s == Side::above ? above_post : below_post;
  }
};

struct StudyDesign
{
  double cutoff = 0.0;
  double window_lo = -1.0;
  double window_hi = 1.0;
  Kernel kernel = Kernel::triangular;
  Bandwidths bandwidths = Bandwidths::shared(1.0);
  int poly_order = 1;
  CutoffSide at_cutoff = CutoffSide::treated;
  VarianceKind variance = VarianceKind::cluster;

  //! Window [cutoff - half_width, cutoff + half_width] with every bandwidth
  //! equal to the half width.
  static StudyDesign symmetric(double cutoff, double half_width)
  {
    StudyDesign d;
    d.cutoff = cutoff;
    d.window_lo = cutoff - half_width;
    d.window_hi = cutoff + half_width;
    d.bandwidths = Bandwidths::shared(half_width);
    return d;
  }

  double half_width() const noexcept { return 0.5 * (window_hi - window_lo); }

  bool in_window(double x) const noexcept
  {
    return x >= window_lo && x <= window_hi;
  }

  bool is_above(double x) const noexcept
  {
    return x > cutoff || (x == cutoff && at_cutoff == CutoffSide::treated);
  }

  Side side_of(double x) const noexcept
  {
    return is_above(x) ? Side::above : Side::below;
  }

  void check() const
  {
    if (!std::isfinite(cutoff) || !std::isfinite(window_lo) ||
        !std::isfinite(window_hi))
      throw Error(ErrorCode::invalid_design, "non-finite cutoff or window");
    if (!(window_lo < cutoff && cutoff < window_hi))
      throw Error(ErrorCode::invalid_design,
                  "window must contain the cutoff strictly");
    for (double h : { bandwidths.below_pre, bandwidths.above_pre,
                      bandwidths.below_post, bandwidths.above_post })
      if (!(h > 0.0) || !std::isfinite(h))
        throw Error(ErrorCode::invalid_design, "bandwidths must be positive");
    if (poly_order != 1 && poly_order != 2)
      throw Error(ErrorCode::invalid_design, "poly_order must be 1 or 2");
  }
};

struct Dataset
{
  std::vector<Observation> observations;
  std::vector<std::string> column_names;

  std::size_t size() const noexcept { return observations.size(); }
  bool empty() const noexcept { return observations.empty(); }
};

//! Quarter-of-age style bin index: bins of `width` aligned to the cutoff, so
//! no bin straddles it.
inline ClusterId cutoff_aligned_bin(double x, double cutoff, double width = 0.25)
{
  return static_cast<ClusterId>(std::floor((x - cutoff) / width));
}

struct ValidationReport
{
  // [cohort][side], cohort 0 = pre, side 0 = below, inside the window.
  std::array<std::array<std::size_t, 2>, 2> cell_counts{};
  std::size_t n_total = 0;
  std::size_t n_in_window = 0;
  std::size_t illegal_o = 0;        // post=false rows with o=1
  std::size_t o_less_than_m = 0;    // post rows with o < m
  std::size_t bad_indicators = 0;   // m or o outside {0,1}
  std::size_t negative_weights = 0;
  std::size_t missing_covariates = 0;

  std::size_t count(Cohort c, Side s) const noexcept
  {
    return cell_counts[c == Cohort::post][s == Side::above];
  }

  bool cells_supported() const noexcept
  {
    for (const auto& row : cell_counts)
      for (auto n : row)
        if (n == 0)
          return false;
    return true;
  }
};

inline ValidationReport validate(const Dataset& data, const StudyDesign& design)
{
  if (data.empty())
    throw Error(ErrorCode::empty_dataset, "dataset has no observations");
  ValidationReport r;
  r.n_total = data.size();
  const std::size_t n_cov = data.column_names.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ob = data.observations[i];
    bool finite = std::isfinite(ob.x) && std::isfinite(ob.y) &&
                  std::isfinite(ob.weight);
    for (double c : ob.covariates)
      finite = finite && std::isfinite(c);
    if (!finite)
      throw Error(ErrorCode::non_finite_value,
                  "non-finite value in row " + std::to_string(i + 1),
                  std::to_string(i + 1));
    if (ob.m < 0 || ob.m > 1 || ob.o < 0 || ob.o > 1)
      ++r.bad_indicators;
    if (ob.weight < 0.0)
      ++r.negative_weights;
    if (!ob.post && ob.o != 0)
      ++r.illegal_o;
    if (ob.post && ob.o < ob.m)
      ++r.o_less_than_m;
    if (ob.covariates.size() != n_cov)
      ++r.missing_covariates;
    if (design.in_window(ob.x)) {
      ++r.n_in_window;
      ++r.cell_counts[ob.post][design.is_above(ob.x)];
    }
  }
  return r;
}

} // namespace fdd
