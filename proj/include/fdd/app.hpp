#pragma once

// Subcommand orchestration shared by the command-line tool and the tests.

#include "fdd/core_data.hpp"
#include "fdd/diagnostics.hpp"
#include "fdd/error.hpp"
#include "fdd/estimators.hpp"
#include "fdd/inference.hpp"
#include "fdd/io.hpp"
#include "fdd/kernels_llr.hpp"
#include "fdd/simulation.hpp"

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fdd {

enum class RatioRoute
{
  ratio,     // nonparametric boundary limits
  tsls,      // reduced-form 2SLS, simplified form
  tsls_full  // reduced-form 2SLS, full form
};

struct RunConfig
{
  std::string input;
  ColumnMapping columns;
  StudyDesign design;
  bool window_set = false;
  bool cutoff_set = false;
  bool bandwidth_set = false;
  //! Pick each cohort's bandwidth by leave-one-out cross-validation.
  bool bandwidth_auto = false;
  RatioRoute route = RatioRoute::ratio;
  std::size_t bootstrap_reps = 0;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  double min_first_stage = default_min_first_stage;
  unsigned threads = 0;
  bool diagnostics = true;
  std::string out_json;
  std::string out_binned;
  std::string out_sample;
  // rd
  std::optional<Cohort> rd_cohort;
  // binned
  double bin_width = 0.25;
  Variable bin_variable = Variable::y;
  // simulate
  std::optional<DGPSpec> dgp;
  std::size_t reps = 500;
  StudyEstimator study = StudyEstimator::diff_in_disc;
};

//! Seed used when neither the config nor the command line sets one.
inline std::uint64_t default_seed()
{
  if (const char* env = std::getenv("FDD_SEED"))
    if (const auto v = detail::parse_int(env); v && *v >= 0)
      return static_cast<std::uint64_t>(*v);
  return 20240101;
}

namespace detail {

inline std::size_t config_count(const std::string& key, const std::string& value)
{
  const auto v = parse_int(value);
  if (!v || *v < 0)
    throw Error(ErrorCode::config_error, key + ": expected a nonnegative integer", key);
  return static_cast<std::size_t>(*v);
}

} // namespace detail

//! Applies `key = value` settings. Keys (all optional):
//!   input, cutoff, window = lo,hi, bandwidth = h|auto, bw_left_pre,
//!   bw_right_pre, bw_left_post, bw_right_post, kernel, poly_order,
//!   at_cutoff = treated|control, variance = cluster|hc,
//!   col.outcome, col.running, col.post, col.m, col.o, col.cluster,
//!   col.weight, col.covariates = a,b,c (empty string disables o/cluster),
//!   estimator = ratio|2sls|2sls_full, bootstrap_reps, seed, alpha,
//!   min_first_stage, threads, diagnostics, out_json, out_binned, out_sample,
//!   cohort = pre|post, bin_width, bin_variable = Y|T|M|O,
//!   reps, study_estimator, and the dgp.* keys of dgp_from_config.
inline void apply_config(const ConfigMap& cfg, RunConfig& rc)
{
  bool any_dgp = false;
  std::optional<double> shared_h;
  std::optional<double> bw[2][2]; // [post][right]
  for (const auto& [key, value] : cfg) {
    auto num = [&] { return detail::config_double(key, value); };
    if (key.rfind("dgp.", 0) == 0) {
      any_dgp = true;
    } else if (key == "input") {
      rc.input = value;
    } else if (key == "cutoff") {
      rc.design.cutoff = num();
      rc.cutoff_set = true;
    } else if (key == "window") {
      const auto w = detail::config_list(key, value);
      if (w.size() != 2)
        throw Error(ErrorCode::config_error, "window: expected lo,hi", key);
      rc.design.window_lo = w[0];
      rc.design.window_hi = w[1];
      rc.window_set = true;
    } else if (key == "bandwidth") {
      if (value == "auto")
        rc.bandwidth_auto = true;
      else
        shared_h = num();
    } else if (key == "bw_left_pre") {
      bw[0][0] = num();
    } else if (key == "bw_right_pre") {
      bw[0][1] = num();
    } else if (key == "bw_left_post") {
      bw[1][0] = num();
    } else if (key == "bw_right_post") {
      bw[1][1] = num();
    } else if (key == "kernel") {
      rc.design.kernel = parse_kernel(value);
    } else if (key == "poly_order") {
      rc.design.poly_order = static_cast<int>(detail::config_count(key, value));
    } else if (key == "at_cutoff") {
      if (value != "treated" && value != "control")
        throw Error(ErrorCode::config_error, "at_cutoff: expected treated or control", key);
      rc.design.at_cutoff = value == "treated" ? CutoffSide::treated : CutoffSide::control;
    } else if (key == "variance") {
      if (value != "cluster" && value != "hc")
        throw Error(ErrorCode::config_error, "variance: expected cluster or hc", key);
      rc.design.variance = value == "cluster" ? VarianceKind::cluster : VarianceKind::hc;
    } else if (key == "col.outcome") {
      rc.columns.outcome = value;
    } else if (key == "col.running") {
      rc.columns.running = value;
    } else if (key == "col.post") {
      rc.columns.post = value;
    } else if (key == "col.m") {
      rc.columns.m = value;
    } else if (key == "col.o") {
      rc.columns.o = value;
    } else if (key == "col.cluster") {
      rc.columns.cluster = value;
    } else if (key == "col.weight") {
      rc.columns.weight = value;
    } else if (key == "col.covariates") {
      rc.columns.covariates.clear();
      if (!value.empty())
        rc.columns.covariates = detail::split(value, ',');
    } else if (key == "estimator") {
      if (value == "ratio")
        rc.route = RatioRoute::ratio;
      else if (value == "2sls")
        rc.route = RatioRoute::tsls;
      else if (value == "2sls_full")
        rc.route = RatioRoute::tsls_full;
      else
        throw Error(ErrorCode::config_error, "estimator: expected ratio, 2sls or 2sls_full", key);
    } else if (key == "bootstrap_reps") {
      rc.bootstrap_reps = detail::config_count(key, value);
    } else if (key == "seed") {
      rc.seed = detail::config_count(key, value);
    } else if (key == "alpha") {
      rc.alpha = num();
      if (!(rc.alpha > 0.0 && rc.alpha < 1.0))
        throw Error(ErrorCode::config_error, "alpha must lie in (0, 1)", key);
    } else if (key == "min_first_stage") {
      rc.min_first_stage = num();
    } else if (key == "threads") {
      rc.threads = static_cast<unsigned>(detail::config_count(key, value));
    } else if (key == "diagnostics") {
      rc.diagnostics = detail::config_bool(key, value);
    } else if (key == "out_json") {
      rc.out_json = value;
    } else if (key == "out_binned") {
      rc.out_binned = value;
    } else if (key == "out_sample") {
      rc.out_sample = value;
    } else if (key == "cohort") {
      if (value == "pre")
        rc.rd_cohort = Cohort::pre;
      else if (value == "post")
        rc.rd_cohort = Cohort::post;
      else if (value == "both")
        rc.rd_cohort.reset();
      else
        throw Error(ErrorCode::config_error, "cohort: expected pre, post or both", key);
    } else if (key == "bin_width") {
      rc.bin_width = num();
    } else if (key == "bin_variable") {
      if (value == "Y")
        rc.bin_variable = Variable::y;
      else if (value == "T")
        rc.bin_variable = Variable::t;
      else if (value == "M")
        rc.bin_variable = Variable::m;
      else if (value == "O")
        rc.bin_variable = Variable::o;
      else
        throw Error(ErrorCode::config_error, "bin_variable: expected Y, T, M or O", key);
    } else if (key == "reps") {
      rc.reps = detail::config_count(key, value);
    } else if (key == "study_estimator") {
      rc.study = parse_study_estimator(value);
    } else {
      throw Error(ErrorCode::config_error, "unknown key '" + key + "'", key);
    }
  }
  if (any_dgp)
    rc.dgp = dgp_from_config(cfg);
  if (shared_h) {
    rc.design.bandwidths = Bandwidths::shared(*shared_h);
    rc.bandwidth_set = true;
  }
  for (int c = 0; c < 2; ++c)
    for (int s = 0; s < 2; ++s)
      if (bw[c][s]) {
        rc.design.bandwidths.get(c ? Cohort::post : Cohort::pre, s ? Side::above : Side::below) = *bw[c][s];
        rc.bandwidth_set = true;
      }
}

inline RunConfig make_run_config(const ConfigMap& cfg)
{
  RunConfig rc;
  rc.seed = default_seed();
  apply_config(cfg, rc);
  return rc;
}

struct RunOutput
{
  Json json;
  std::string table;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;
};

namespace detail {

//! Two-column aligned text table.
class TextTable
{
public:
  void row(std::string label, std::string value) { rows_.emplace_back(std::move(label), std::move(value)); }
  void row(std::string label, double value)
  {
    std::ostringstream s;
    s << std::setprecision(6) << value;
    row(std::move(label), s.str());
  }
  void section(std::string title) { rows_.emplace_back("[" + title + "]", ""); }

  std::string str() const
  {
    std::size_t w = 0;
    for (const auto& r : rows_)
      if (!r.second.empty())
        w = std::max(w, r.first.size());
    std::ostringstream out;
    for (const auto& [label, value] : rows_) {
      if (value.empty())
        out << label << '\n';
      else
        out << "  " << std::left << std::setw(static_cast<int>(w)) << label << "  " << value << '\n';
    }
    return out.str();
  }

private:
  std::vector<std::pair<std::string, std::string>> rows_;
};

inline void finalize_design(RunConfig& rc)
{
  if (!rc.window_set)
    throw Error(ErrorCode::config_error, "a window (lo,hi) is required", "window");
  if (!rc.bandwidth_set && !rc.bandwidth_auto)
    rc.design.bandwidths = Bandwidths::shared(rc.design.half_width());
  rc.design.check();
}

inline Dataset load_input(const RunConfig& rc, RunOutput& out, bool default_o_from_m = true)
{
  if (rc.input.empty())
    throw Error(ErrorCode::config_error, "no input file given", "input");
  IngestOptions opt;
  opt.cutoff = rc.design.cutoff;
  opt.default_o_from_m = default_o_from_m;
  opt.log = [&out](const std::string& msg) { out.notes.push_back(msg); };
  Dataset data = ingest_csv(rc.input, rc.columns, opt);
  const auto rep = validate(data, rc.design);
  if (rep.illegal_o)
    out.warnings.push_back(std::to_string(rep.illegal_o) + " pre-cohort rows have o = 1");
  if (rep.bad_indicators)
    throw Error(ErrorCode::parse_error, "m and o must be 0 or 1");
  if (rep.negative_weights)
    throw Error(ErrorCode::parse_error, "weights must be nonnegative");
  return data;
}

inline void apply_auto_bandwidths(RunConfig& rc, const Dataset& data, RunOutput& out)
{
  if (!rc.bandwidth_auto)
    return;
  for (Cohort c : { Cohort::pre, Cohort::post }) {
    const double h = select_bandwidth(data, rc.design, Variable::y, c);
    rc.design.bandwidths.get(c, Side::below) = h;
    rc.design.bandwidths.get(c, Side::above) = h;
    out.notes.push_back("selected bandwidth " + std::to_string(h) + " for the " +
                        std::string(to_string(c)) + " cohort");
  }
}

inline Json design_json(const StudyDesign& d)
{
  Json j;
  j["cutoff"] = json_number(d.cutoff);
  j["window"] = Json::array({ json_number(d.window_lo), json_number(d.window_hi) });
  j["kernel"] = std::string(to_string(d.kernel));
  j["poly_order"] = d.poly_order;
  j["bandwidths"] = { { "left_pre", json_number(d.bandwidths.below_pre) },
                      { "right_pre", json_number(d.bandwidths.above_pre) },
                      { "left_post", json_number(d.bandwidths.below_post) },
                      { "right_post", json_number(d.bandwidths.above_post) } };
  j["at_cutoff"] = d.at_cutoff == CutoffSide::treated ? "treated" : "control";
  j["variance"] = std::string(to_string(d.variance));
  return j;
}

inline Json estimate_json(const DiffDiscEstimate& e)
{
  Json j;
  j["tau"] = json_number(e.tau);
  j["se"] = json_number(e.se);
  j["ci95"] = json_pair(e.ci95);
  j["method"] = std::string(to_string(e.method));
  return j;
}

inline Json first_stage_json(const DiffDiscEstimate& e)
{
  Json arr = Json::array();
  for (const auto& f : e.first_stage)
    arr.push_back({ { "name", f.name }, { "jump", json_number(f.value) }, { "se", json_number(f.se) } });
  for (const auto& [name, f] : e.first_stage_f)
    arr.push_back({ { "name", name }, { "F", json_number(f) } });
  return arr;
}

inline Json limits_json(const BoundaryLimits& lim)
{
  Json j;
  const VarianceKind k = lim.variance_kind;
  auto add = [&](const std::string& name, const LimitPair& p) {
    j[name] = { { "above", json_number(p.above.intercept) },
                { "below", json_number(p.below.intercept) },
                { "jump", json_number(p.jump()) },
                { "jump_se", json_number(std::sqrt(p.jump_variance(k))) },
                { "n_above", p.above.n_effective },
                { "n_below", p.below.n_effective } };
  };
  add("Y_post", lim.y_post);
  add("T_post", lim.t_post);
  add("M_post", lim.m_post);
  add("O_post", lim.o_post);
  add("Y_pre", lim.y_pre);
  add("M_pre", lim.m_pre);
  return j;
}

inline Json report_json(const AssumptionReport& r)
{
  Json j;
  j["name"] = std::string(to_string(r.name));
  j["statistic"] = json_number(r.statistic);
  j["p_value"] = r.p_value ? json_number(*r.p_value) : Json(nullptr);
  j["violations"] = r.violations ? Json(*r.violations) : Json(nullptr);
  j["alpha"] = json_number(r.alpha);
  j["verdict"] = std::string(to_string(r.verdict));
  Json det = Json::array();
  for (const auto& d : r.details)
    det.push_back({ { "label", d.label }, { "estimate", json_number(d.estimate) }, { "se", json_number(d.se) } });
  j["details"] = det;
  return j;
}

inline Json error_json(const Error& e)
{
  return { { "error", std::string(to_string(e.code())) }, { "message", e.what() } };
}

inline void table_report(TextTable& t, const AssumptionReport& r)
{
  std::ostringstream s;
  s << to_string(r.verdict) << " (stat " << std::setprecision(4) << r.statistic;
  if (r.p_value)
    s << ", p " << *r.p_value;
  if (r.violations)
    s << ", violations " << *r.violations;
  s << ")";
  t.row(std::string(to_string(r.name)), s.str());
}

inline Json header(const std::string& command)
{
  Json j;
  j["schema_version"] = schema_version;
  j["command"] = command;
  return j;
}

inline std::vector<AssumptionReport> all_reports(const Dataset& data, const RunConfig& rc,
                                                 const BoundaryLimits& limits, Json& errors)
{
  std::vector<AssumptionReport> out;
  out.push_back(test_equal_discontinuities(limits, rc.alpha));
  out.push_back(check_dominance(data));
  for (std::size_t j = 0; j < data.column_names.size(); ++j) {
    try {
      out.push_back(covariate_smoothness(data, rc.design, j, rc.alpha, rc.min_first_stage));
    } catch (const Error& e) {
      Json err = error_json(e);
      err["covariate"] = data.column_names[j];
      errors.push_back(err);
    }
  }
  return out;
}

inline Json untestable_json()
{
  Json arr = Json::array();
  for (const auto& n : untestable_assumptions())
    arr.push_back(n);
  return arr;
}

} // namespace detail

//! The difference-in-discontinuities estimate with corrections, optional
//! cluster bootstrap and the diagnostics summary.
inline RunOutput run_estimate(RunConfig rc)
{
  RunOutput out;
  detail::finalize_design(rc);
  const Dataset data = detail::load_input(rc, out);
  detail::apply_auto_bandwidths(rc, data, out);

  const BoundaryLimits limits = estimate_boundary_limits(data, rc.design);
  auto compute = [&rc](const Dataset& d, const BoundaryLimits* lim) {
    switch (rc.route) {
      case RatioRoute::tsls: return reduced_form_2sls(d, rc.design, TwoSlsSpec::simplified);
      case RatioRoute::tsls_full: return reduced_form_2sls(d, rc.design, TwoSlsSpec::full);
      case RatioRoute::ratio: break;
    }
    return fuzzy_diff_in_disc(lim ? *lim : estimate_boundary_limits(d, rc.design), rc.min_first_stage);
  };
  const DiffDiscEstimate est = compute(data, &limits);
  if (est.weak_first_stage)
    out.warnings.push_back("weak first stage");

  Json j = detail::header("estimate");
  j["input"] = rc.input;
  j["n_obs"] = data.size();
  j["n_post"] = est.n_post;
  j["n_pre"] = est.n_pre;
  j["design"] = detail::design_json(rc.design);
  j["estimate"] = detail::estimate_json(est);
  j["first_stage"] = detail::first_stage_json(est);
  j["weak_first_stage"] = est.weak_first_stage;
  j["limits"] = detail::limits_json(limits);

  detail::TextTable t;
  t.section("difference-in-discontinuities");
  t.row("tau", est.tau);
  t.row("se", est.se);
  {
    std::ostringstream s;
    s << std::setprecision(6) << "[" << est.ci95.first << ", " << est.ci95.second << "]";
    t.row("95% CI", s.str());
  }
  t.row("method", std::string(to_string(est.method)));
  t.row("n post / pre", std::to_string(est.n_post) + " / " + std::to_string(est.n_pre));
  for (const auto& f : est.first_stage)
    t.row("first stage " + f.name, f.value);
  for (const auto& [name, f] : est.first_stage_f)
    t.row("first-stage F " + name, f);

  Json corr;
  auto guarded = [&](const char* name, auto&& fn) {
    try {
      const double v = fn();
      corr[name] = json_number(v);
      t.row(name, v);
    } catch (const Error& e) {
      corr[name] = nullptr;
      out.warnings.push_back(std::string(name) + " unavailable: " + e.what());
    }
  };
  t.section("corrections");
  guarded("ate_m", [&] { return ate_m_from_pre(limits, rc.min_first_stage); });
  guarded("theorem3a", [&] {
    return theorem3a_correct(est.tau, limits, ate_m_from_pre(limits, rc.min_first_stage), rc.min_first_stage);
  });
  guarded("theorem3b", [&] { return theorem3b_correct(est.tau, limits, rc.min_first_stage); });
  j["corrections"] = corr;

  if (rc.bootstrap_reps > 0) {
    const Estimator fn = [&compute](const Dataset& d, const StudyDesign&) { return compute(d, nullptr).tau; };
    const auto b = cluster_bootstrap(data, rc.design, fn, rc.bootstrap_reps, rc.seed, rc.threads);
    j["bootstrap"] = { { "reps", b.requested },
                       { "seed", b.seed },
                       { "se", json_number(b.se) },
                       { "ci_percentile_95", json_pair(b.ci_percentile_95) },
                       { "n_failed", b.n_failed } };
    if (b.warning())
      out.warnings.push_back(std::to_string(b.n_failed) + " of " + std::to_string(b.requested) +
                             " bootstrap replicates failed");
    t.section("cluster bootstrap");
    t.row("reps / seed", std::to_string(b.requested) + " / " + std::to_string(b.seed));
    t.row("se", b.se);
    std::ostringstream s;
    s << std::setprecision(6) << "[" << b.ci_percentile_95.first << ", " << b.ci_percentile_95.second << "]";
    t.row("percentile 95% CI", s.str());
  }

  if (rc.diagnostics) {
    Json errors = Json::array();
    Json reps = Json::array();
    t.section("diagnostics");
    for (const auto& r : detail::all_reports(data, rc, limits, errors)) {
      reps.push_back(detail::report_json(r));
      detail::table_report(t, r);
    }
    j["diagnostics"] = reps;
    if (!errors.empty())
      j["diagnostic_errors"] = errors;
  }
  j["untestable_assumptions"] = detail::untestable_json();
  out.json = std::move(j);
  out.table = t.str();
  return out;
}

//! Single-cohort fuzzy RD: post cohort on T, pre cohort on M.
inline RunOutput run_rd(RunConfig rc)
{
  RunOutput out;
  detail::finalize_design(rc);
  const Dataset data = detail::load_input(rc, out);
  detail::apply_auto_bandwidths(rc, data, out);
  const BoundaryLimits limits = estimate_boundary_limits(data, rc.design);
  Json j = detail::header("rd");
  j["input"] = rc.input;
  j["design"] = detail::design_json(rc.design);
  Json arr = Json::array();
  detail::TextTable t;
  for (Cohort c : { Cohort::post, Cohort::pre }) {
    if (rc.rd_cohort && *rc.rd_cohort != c)
      continue;
    const auto e = fuzzy_rd_cohort(limits, c, rc.min_first_stage);
    Json r = detail::estimate_json(e);
    r["cohort"] = std::string(to_string(c));
    r["first_stage"] = detail::first_stage_json(e);
    r["outcome_jump"] = json_number(limits.pair(c, Variable::y).jump());
    arr.push_back(r);
    t.section(std::string(to_string(c)) + " cohort");
    t.row("wald", e.tau);
    t.row("se", e.se);
    t.row("outcome jump", limits.pair(c, Variable::y).jump());
    for (const auto& f : e.first_stage)
      t.row("first stage " + f.name, f.value);
  }
  j["rd"] = arr;
  out.json = std::move(j);
  out.table = t.str();
  return out;
}

inline RunOutput run_diagnose(RunConfig rc)
{
  RunOutput out;
  detail::finalize_design(rc);
  const Dataset data = detail::load_input(rc, out);
  detail::apply_auto_bandwidths(rc, data, out);
  const BoundaryLimits limits = estimate_boundary_limits(data, rc.design);
  Json j = detail::header("diagnose");
  j["input"] = rc.input;
  j["design"] = detail::design_json(rc.design);
  Json errors = Json::array();
  Json reps = Json::array();
  detail::TextTable t;
  t.section("diagnostics");
  for (const auto& r : detail::all_reports(data, rc, limits, errors)) {
    reps.push_back(detail::report_json(r));
    detail::table_report(t, r);
  }
  j["diagnostics"] = reps;
  if (!errors.empty())
    j["diagnostic_errors"] = errors;
  j["untestable_assumptions"] = detail::untestable_json();
  out.json = std::move(j);
  out.table = t.str();
  return out;
}

//! Placebo run: `post` marks the pseudo-post group, no row may carry o = 1;
//! a missing o column means o = 0.
inline RunOutput run_placebo(RunConfig rc)
{
  RunOutput out;
  detail::finalize_design(rc);
  const Dataset data = detail::load_input(rc, out, false);
  detail::apply_auto_bandwidths(rc, data, out);
  const auto r = placebo_diff_in_disc(data, rc.design, PlaceboSplit::adjacent_pre_periods, rc.alpha,
                                      rc.min_first_stage);
  Json j = detail::header("placebo");
  j["input"] = rc.input;
  j["design"] = detail::design_json(rc.design);
  j["placebo"] = detail::report_json(r);
  detail::TextTable t;
  t.section("placebo");
  t.row("estimate", r.details.front().estimate);
  t.row("se", r.details.front().se);
  detail::table_report(t, r);
  out.json = std::move(j);
  out.table = t.str();
  return out;
}

//! Monte Carlo study on the configured DGP. The design defaults to the DGP's
//! cutoff and window with every bandwidth equal to the half width.
inline RunOutput run_simulate(RunConfig rc)
{
  RunOutput out;
  if (!rc.dgp)
    throw Error(ErrorCode::config_error, "simulate needs dgp.* keys", "dgp");
  const DGPSpec& spec = *rc.dgp;
  if (!rc.cutoff_set)
    rc.design.cutoff = spec.cutoff;
  if (!rc.window_set) {
    rc.design.window_lo = spec.window_lo;
    rc.design.window_hi = spec.window_hi;
    rc.window_set = true;
  }
  detail::finalize_design(rc);
  if (!rc.out_sample.empty())
    write_csv(generate_sample(spec, rc.seed), rc.out_sample);

  const auto rep = monte_carlo_study(spec, rc.design, rc.study, rc.reps, rc.seed, rc.threads, rc.alpha);
  Json j = detail::header("simulate");
  Json dgp;
  for (const auto& [k, v] : parse_config_text(dgp_to_config(spec)))
    dgp[k.substr(4)] = v;
  j["dgp"] = dgp;
  j["design"] = detail::design_json(rc.design);
  j["estimator"] = std::string(to_string(rc.study));
  j["reps"] = rep.reps;
  j["seed"] = rep.seed;
  const auto& te = rep.truth;
  j["truth"] = { { "ate_o", json_number(te.ate_o) },
                 { "ate_m", json_number(te.ate_m) },
                 { "late_o", json_number(te.late_o) },
                 { "gap_o", json_number(te.gap_o) },
                 { "gap_m", json_number(te.gap_m) },
                 { "tau_frd_limit", json_number(te.tau_frd_limit) },
                 { "wald_diff_m_limit", json_number(te.wald_diff_m_limit) },
                 { "jumps",
                   { { "O_post", json_number(te.jumps.o_post) },
                     { "M_post", json_number(te.jumps.m_post) },
                     { "T_post", json_number(te.jumps.t_post) },
                     { "M_pre", json_number(te.jumps.m_pre) } } } };
  j["report"] = { { "target", json_number(rep.target) },
                  { "mean_estimate", json_number(rep.mean_estimate) },
                  { "mean_bias", json_number(rep.mean_bias) },
                  { "empirical_sd", json_number(rep.empirical_sd) },
                  { "mean_se", json_number(rep.mean_se) },
                  { "coverage", json_number(rep.coverage) },
                  { "rejection_rate", json_number(rep.rejection_rate) },
                  { "n_failed", rep.n_failed } };
  if (rep.n_failed * 10 > rep.reps)
    out.warnings.push_back(std::to_string(rep.n_failed) + " of " + std::to_string(rep.reps) +
                           " replicates failed");
  detail::TextTable t;
  t.section("Monte Carlo: " + std::string(to_string(rc.study)));
  t.row("reps / seed", std::to_string(rep.reps) + " / " + std::to_string(rep.seed));
  t.row("target", rep.target);
  t.row("mean estimate", rep.mean_estimate);
  t.row("mean bias", rep.mean_bias);
  t.row("empirical sd", rep.empirical_sd);
  t.row("mean se", rep.mean_se);
  t.row("coverage", rep.coverage);
  t.row("rejection rate", rep.rejection_rate);
  t.row("failed", std::to_string(rep.n_failed));
  out.json = std::move(j);
  out.table = t.str();
  return out;
}

//! Binned means for both cohorts; the TSV goes to out_binned.
inline RunOutput run_binned(RunConfig rc, std::ostream* tsv_fallback = nullptr)
{
  RunOutput out;
  detail::finalize_design(rc);
  const Dataset data = detail::load_input(rc, out);
  std::vector<BinnedSeries> series;
  for (Cohort c : { Cohort::pre, Cohort::post })
    series.push_back(binned_series(data, rc.design, c, rc.bin_variable, rc.bin_width));
  if (!rc.out_binned.empty()) {
    std::ofstream f(rc.out_binned);
    if (!f)
      throw Error(ErrorCode::file_not_found, "cannot write '" + rc.out_binned + "'", rc.out_binned);
    write_binned_tsv(series, f);
  } else if (tsv_fallback) {
    write_binned_tsv(series, *tsv_fallback);
  }
  Json j = detail::header("binned");
  j["input"] = rc.input;
  j["variable"] = std::string(to_string(rc.bin_variable));
  j["bin_width"] = json_number(rc.bin_width);
  Json arr = Json::array();
  detail::TextTable t;
  for (const auto& s : series) {
    std::size_t n = 0;
    for (auto c : s.counts)
      n += c;
    arr.push_back({ { "cohort", std::string(to_string(s.cohort)) }, { "bins", s.centers.size() }, { "n", n } });
    t.row(std::string(to_string(s.cohort)) + " bins / rows",
          std::to_string(s.centers.size()) + " / " + std::to_string(n));
  }
  j["series"] = arr;
  out.json = std::move(j);
  out.table = t.str();
  return out;
}

inline RunOutput run_command(const std::string& command, const RunConfig& rc)
{
  if (command == "estimate")
    return run_estimate(rc);
  if (command == "rd")
    return run_rd(rc);
  if (command == "diagnose")
    return run_diagnose(rc);
  if (command == "placebo")
    return run_placebo(rc);
  if (command == "simulate")
    return run_simulate(rc);
  if (command == "binned")
    return run_binned(rc);
  throw Error(ErrorCode::config_error, "unknown command '" + command + "'", command);
}

} // namespace fdd
