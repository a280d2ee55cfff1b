#pragma once

#include "fdd/core_data.hpp"
#include "fdd/error.hpp"
#include "fdd/kernels_llr.hpp"
#include "fdd/simulation.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdd {

using Json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

// ---------------------------------------------------------------- text helpers

namespace detail {

inline std::string trim(std::string_view s)
{
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep)
{
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s)
{
  const std::string t = trim(s);
  if (t.empty())
    return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size())
    return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s)
{
  const std::string t = trim(s);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(std::string_view s)
{
  std::string t = trim(s);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true")
    return true;
  if (t == "0" || t == "false")
    return false;
  return std::nullopt;
}

//! Splits one CSV record; double quotes protect commas and "" escapes a quote.
inline std::vector<std::string> split_csv_record(const std::string& line)
{
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

inline std::string format_g17(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

// ---------------------------------------------------------------- CSV

struct ColumnMapping
{
  std::string outcome = "y";
  std::string running = "x";
  std::string post = "post";
  std::string m = "m";
  //! Empty means absent: o defaults to m for post rows and 0 otherwise.
  std::string o = "o";
  //! Empty means absent: clusters default to quarter-width bins of x.
  std::string cluster = "cluster";
  std::string weight;
  std::vector<std::string> covariates;
};

struct IngestOptions
{
  //! Used for the default cluster bins.
  double cutoff = 0.0;
  double bin_width = 0.25;
  //! Without an o column: o = m for post rows when true, else o = 0.
  bool default_o_from_m = true;
  //! Receives notes about defaulted columns.
  std::function<void(const std::string&)> log;
};

//! Reads a comma-separated file with a header row. Optional columns (o,
//! cluster, weight) that are named in `map` but missing from the header fall
//! back to their defaults; required columns must be present.
inline Dataset ingest_csv(const std::string& path, const ColumnMapping& map,
                          const IngestOptions& opt = {})
{
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorCode::file_not_found, "cannot open '" + path + "'", path);
  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorCode::header_mismatch, "file has no header row", path);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    line.erase(0, 3);
  const auto header = detail::split_csv_record(line);
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    if (name.empty())
      return std::nullopt;
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::string> missing;
  auto require = [&](const std::string& name) {
    const auto idx = find(name);
    if (!idx)
      missing.push_back(name.empty() ? "<unnamed>" : name);
    return idx.value_or(0);
  };
  const std::size_t c_y = require(map.outcome);
  const std::size_t c_x = require(map.running);
  const std::size_t c_post = require(map.post);
  const std::size_t c_m = require(map.m);
  std::vector<std::size_t> c_cov;
  for (const auto& name : map.covariates)
    c_cov.push_back(require(name));
  if (!map.weight.empty() && !find(map.weight))
    missing.push_back(map.weight);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing)
      list += (list.empty() ? "" : ",") + m;
    throw Error(ErrorCode::header_mismatch, "missing columns: " + list, list);
  }
  const auto c_o = find(map.o);
  const auto c_cluster = find(map.cluster);
  const auto c_w = find(map.weight);
  if (!c_o && opt.log)
    opt.log(opt.default_o_from_m ? "no o column: setting o = m for post rows and 0 otherwise"
                                 : "no o column: setting o = 0");
  if (!c_cluster && opt.log)
    opt.log("no cluster column: clustering on quarter-width bins of the running variable");

  Dataset data;
  data.column_names = map.covariates;
  std::vector<std::string> cluster_raw;
  std::size_t row = 0;
  auto bad = [&](const std::string& column, const std::string& value) {
    return Error(ErrorCode::parse_error,
                 "row " + std::to_string(row) + ", column '" + column + "': cannot parse '" + value + "'",
                 "row=" + std::to_string(row) + ";column=" + column);
  };
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty())
      continue;
    const auto f = detail::split_csv_record(line);
    if (f.size() != header.size())
      throw Error(ErrorCode::parse_error,
                  "row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                    " fields, header has " + std::to_string(header.size()),
                  "row=" + std::to_string(row));
    Observation ob;
    auto num = [&](std::size_t c, const std::string& name) {
      const auto v = detail::parse_double(f[c]);
      if (!v)
        throw bad(name, f[c]);
      return *v;
    };
    auto indicator = [&](std::size_t c, const std::string& name) {
      const auto v = detail::parse_bool(f[c]);
      if (!v)
        throw bad(name, f[c]);
      return static_cast<int>(*v);
    };
    ob.y = num(c_y, map.outcome);
    ob.x = num(c_x, map.running);
    ob.post = indicator(c_post, map.post) == 1;
    ob.m = indicator(c_m, map.m);
    ob.o = c_o ? indicator(*c_o, map.o) : (ob.post && opt.default_o_from_m ? ob.m : 0);
    if (c_w)
      ob.weight = num(*c_w, map.weight);
    for (std::size_t j = 0; j < c_cov.size(); ++j)
      ob.covariates.push_back(num(c_cov[j], map.covariates[j]));
    if (c_cluster) {
      if (f[*c_cluster].empty())
        throw bad(map.cluster, "");
      cluster_raw.push_back(f[*c_cluster]);
    } else {
      ob.cluster = cutoff_aligned_bin(ob.x, opt.cutoff, opt.bin_width);
    }
    data.observations.push_back(std::move(ob));
  }

  if (c_cluster) {
    // integer labels are kept; any other label set is interned in order of
    // first appearance
    std::vector<ClusterId> ids;
    bool all_int = true;
    for (const auto& s : cluster_raw) {
      const auto v = detail::parse_int(s);
      if (!v) {
        all_int = false;
        break;
      }
      ids.push_back(*v);
    }
    if (!all_int) {
      ids.clear();
      std::unordered_map<std::string, ClusterId> interned;
      for (const auto& s : cluster_raw)
        ids.push_back(interned.try_emplace(s, static_cast<ClusterId>(interned.size())).first->second);
      if (opt.log)
        opt.log("non-integer cluster labels interned as 0.." + std::to_string(interned.size() - 1));
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
      data.observations[i].cluster = ids[i];
  }
  if (data.observations.empty())
    throw Error(ErrorCode::empty_dataset, "'" + path + "' has no data rows", path);
  return data;
}

//! Writes y,x,post,m,o,cluster,weight and the covariates at 17 significant
//! digits, so ingest_csv reads back identical doubles.
inline void write_csv(const Dataset& data, const std::string& path)
{
  std::ofstream out(path);
  if (!out)
    throw Error(ErrorCode::file_not_found, "cannot write '" + path + "'", path);
  out << "y,x,post,m,o,cluster,weight";
  for (const auto& c : data.column_names)
    out << ',' << c;
  out << '\n';
  for (const auto& ob : data.observations) {
    out << detail::format_g17(ob.y) << ',' << detail::format_g17(ob.x) << ',' << (ob.post ? 1 : 0)
        << ',' << ob.m << ',' << ob.o << ',' << ob.cluster << ',' << detail::format_g17(ob.weight);
    for (double v : ob.covariates)
      out << ',' << detail::format_g17(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------- config

//! Flat config: one `key = value` per line, `#` starts a comment, blank lines
//! ignored, later keys override earlier ones.
using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<text>")
{
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty())
      continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || detail::trim(t.substr(0, eq)).empty())
      throw Error(ErrorCode::config_error,
                  origin + ":" + std::to_string(n) + ": expected key = value", origin);
    out[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
  }
  return out;
}

inline ConfigMap parse_config_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorCode::file_not_found, "cannot open config '" + path + "'", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

namespace detail {

inline double config_double(const std::string& key, const std::string& value)
{
  const auto v = parse_double(value);
  if (!v)
    throw Error(ErrorCode::config_error, key + ": expected a number, got '" + value + "'", key);
  return *v;
}

inline std::vector<double> config_list(const std::string& key, const std::string& value)
{
  std::vector<double> out;
  for (const auto& part : split(value, ','))
    out.push_back(config_double(key, part));
  return out;
}

inline bool config_bool(const std::string& key, const std::string& value)
{
  const auto v = parse_bool(value);
  if (!v)
    throw Error(ErrorCode::config_error, key + ": expected true/false, got '" + value + "'", key);
  return *v;
}

inline std::string format_list(const std::vector<double>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + format_g17(v[i]);
  return s;
}

} // namespace detail

//! Reads the `dgp.` keys of a config. Keys:
//!   dgp.cutoff, dgp.window = lo,hi, dgp.n_per_cohort, dgp.noise_sd,
//!   dgp.mu{00,01,10,11}.{pre,post} = polynomial coefficients in (x - cutoff),
//!   dgp.p_m.{pre,post}.{below,above}, dgp.p_o.post.{below,above},
//!   dgp.joint_rule = independent|dominance|equal, dgp.heteroskedastic,
//!   dgp.cluster_correlation, dgp.cluster_width,
//!   dgp.selection = true|false, dgp.selection.share_always,
//!   dgp.selection.share_complier, dgp.selection.o_always_among_never,
//!   dgp.selection.shift.{always,complier,never} = four shifts for
//!   (o,m) = 00,01,10,11.
//! Unknown dgp. keys are an error.
inline DGPSpec dgp_from_config(const ConfigMap& cfg)
{
  DGPSpec s;
  for (const auto& [key, value] : cfg) {
    if (key.rfind("dgp.", 0) != 0)
      continue;
    const std::string k = key.substr(4);
    auto poly = [&] { return Polynomial{ detail::config_list(key, value) }; };
    if (k == "cutoff") {
      s.cutoff = detail::config_double(key, value);
    } else if (k == "window") {
      const auto w = detail::config_list(key, value);
      if (w.size() != 2)
        throw Error(ErrorCode::config_error, key + ": expected lo,hi", key);
      s.window_lo = w[0];
      s.window_hi = w[1];
    } else if (k == "n_per_cohort") {
      const auto n = detail::parse_int(value);
      if (!n || *n <= 0)
        throw Error(ErrorCode::config_error, key + ": expected a positive integer", key);
      s.n_per_cohort = static_cast<std::size_t>(*n);
    } else if (k == "noise_sd") {
      s.noise_sd = detail::config_double(key, value);
    } else if (k.size() >= 8 && k.rfind("mu", 0) == 0 && k[4] == '.') {
      const int o = k[2] - '0', m = k[3] - '0';
      const std::string cohort = k.substr(5);
      if ((o != 0 && o != 1) || (m != 0 && m != 1) || (cohort != "pre" && cohort != "post"))
        throw Error(ErrorCode::config_error, "unknown key '" + key + "'", key);
      auto& mu = cohort == "post" ? s.means_post : s.means_pre;
      (o == 0 ? (m == 0 ? mu.mu00 : mu.mu01) : (m == 0 ? mu.mu10 : mu.mu11)) = poly();
    } else if (k == "p_m.pre.below") {
      s.p_m_pre.below = poly();
    } else if (k == "p_m.pre.above") {
      s.p_m_pre.above = poly();
    } else if (k == "p_m.post.below") {
      s.p_m_post.below = poly();
    } else if (k == "p_m.post.above") {
      s.p_m_post.above = poly();
    } else if (k == "p_o.post.below") {
      s.p_o_post.below = poly();
    } else if (k == "p_o.post.above") {
      s.p_o_post.above = poly();
    } else if (k == "joint_rule") {
      if (value == "independent")
        s.joint_rule = JointRule::independent;
      else if (value == "dominance")
        s.joint_rule = JointRule::dominance;
      else if (value == "equal")
        s.joint_rule = JointRule::equal;
      else
        throw Error(ErrorCode::config_error, key + ": unknown rule '" + value + "'", key);
    } else if (k == "heteroskedastic") {
      s.heteroskedastic = detail::config_bool(key, value);
    } else if (k == "cluster_correlation") {
      s.cluster_correlation = detail::config_double(key, value);
    } else if (k == "cluster_width") {
      s.cluster_width = detail::config_double(key, value);
    } else if (k == "selection") {
      s.selection.active = detail::config_bool(key, value);
    } else if (k == "selection.share_always") {
      s.selection.share_always = detail::config_double(key, value);
    } else if (k == "selection.share_complier") {
      s.selection.share_complier = detail::config_double(key, value);
    } else if (k == "selection.o_always_among_never") {
      s.selection.o_always_among_never = detail::config_double(key, value);
    } else if (k.rfind("selection.shift.", 0) == 0) {
      const std::string type = k.substr(16);
      std::size_t idx = 0;
      if (type == "always")
        idx = 0;
      else if (type == "complier")
        idx = 1;
      else if (type == "never")
        idx = 2;
      else
        throw Error(ErrorCode::config_error, "unknown key '" + key + "'", key);
      const auto v = detail::config_list(key, value);
      if (v.size() != 4)
        throw Error(ErrorCode::config_error, key + ": expected four shifts", key);
      std::copy(v.begin(), v.end(), s.selection.shift[idx].begin());
    } else {
      throw Error(ErrorCode::config_error, "unknown key '" + key + "'", key);
    }
  }
  try {
    s.check();
  } catch (const Error& e) {
    throw Error(ErrorCode::config_error, std::string("invalid DGP: ") + e.what(), "dgp");
  }
  return s;
}

//! Inverse of dgp_from_config.
inline std::string dgp_to_config(const DGPSpec& s)
{
  std::ostringstream o;
  auto line = [&](const std::string& k, const std::string& v) { o << "dgp." << k << " = " << v << '\n'; };
  line("cutoff", detail::format_g17(s.cutoff));
  line("window", detail::format_g17(s.window_lo) + "," + detail::format_g17(s.window_hi));
  line("n_per_cohort", std::to_string(s.n_per_cohort));
  line("noise_sd", detail::format_g17(s.noise_sd));
  for (const char* cohort : { "pre", "post" }) {
    const auto& mu = std::string(cohort) == "post" ? s.means_post : s.means_pre;
    for (int om = 0; om < 4; ++om)
      line("mu" + std::to_string(om / 2) + std::to_string(om % 2) + "." + cohort,
           detail::format_list(mu.get(om / 2, om % 2).coef));
  }
  line("p_m.pre.below", detail::format_list(s.p_m_pre.below.coef));
  line("p_m.pre.above", detail::format_list(s.p_m_pre.above.coef));
  line("p_m.post.below", detail::format_list(s.p_m_post.below.coef));
  line("p_m.post.above", detail::format_list(s.p_m_post.above.coef));
  line("p_o.post.below", detail::format_list(s.p_o_post.below.coef));
  line("p_o.post.above", detail::format_list(s.p_o_post.above.coef));
  line("joint_rule", std::string(to_string(s.joint_rule)));
  line("heteroskedastic", s.heteroskedastic ? "true" : "false");
  line("cluster_correlation", detail::format_g17(s.cluster_correlation));
  line("cluster_width", detail::format_g17(s.cluster_width));
  line("selection", s.selection.active ? "true" : "false");
  if (s.selection.active) {
    line("selection.share_always", detail::format_g17(s.selection.share_always));
    line("selection.share_complier", detail::format_g17(s.selection.share_complier));
    line("selection.o_always_among_never", detail::format_g17(s.selection.o_always_among_never));
    const char* names[] = { "always", "complier", "never" };
    for (std::size_t t = 0; t < 3; ++t)
      line(std::string("selection.shift.") + names[t],
           detail::format_list({ s.selection.shift[t].begin(), s.selection.shift[t].end() }));
  }
  return o.str();
}

// ---------------------------------------------------------------- JSON

//! Rounds to 12 significant digits; non-finite values become null.
inline Json json_number(double v)
{
  if (!std::isfinite(v))
    return nullptr;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::strtod(buf, nullptr);
}

inline Json json_pair(const std::pair<double, double>& p)
{
  return Json::array({ json_number(p.first), json_number(p.second) });
}

inline std::string dump_json(const Json& j)
{
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- binned series

struct BinnedSeries
{
  Cohort cohort = Cohort::post;
  Variable variable = Variable::y;
  std::vector<double> centers;
  std::vector<double> means; // NaN for empty bins
  std::vector<std::size_t> counts;
};

//! Cutoff-aligned bins of `width` clipped to the window; together they
//! partition [window_lo, window_hi]. Each bin is half-open on the right
//! except the last, which also takes x = window_hi.
inline BinnedSeries binned_series(const Dataset& data, const StudyDesign& design, Cohort cohort,
                                  Variable variable = Variable::y, double width = 0.25)
{
  if (!(width > 0.0))
    throw Error(ErrorCode::invalid_design, "bin width must be positive");
  const double t = design.cutoff;
  const ClusterId k_lo = cutoff_aligned_bin(design.window_lo, t, width);
  ClusterId k_hi = cutoff_aligned_bin(design.window_hi, t, width);
  if (t + static_cast<double>(k_hi) * width >= design.window_hi && k_hi > k_lo)
    --k_hi; // window_hi sits on a bin edge
  const auto nb = static_cast<std::size_t>(k_hi - k_lo + 1);
  BinnedSeries out;
  out.cohort = cohort;
  out.variable = variable;
  out.counts.assign(nb, 0);
  std::vector<double> sums(nb, 0.0);
  for (const auto& ob : data.observations) {
    if (ob.post != (cohort == Cohort::post) || !design.in_window(ob.x))
      continue;
    const ClusterId k = std::clamp(cutoff_aligned_bin(ob.x, t, width), k_lo, k_hi);
    const auto i = static_cast<std::size_t>(k - k_lo);
    double v = ob.y;
    switch (variable) {
      case Variable::y: v = ob.y; break;
      case Variable::t: v = ob.t(); break;
      case Variable::m: v = ob.m; break;
      case Variable::o: v = ob.o; break;
    }
    sums[i] += v;
    ++out.counts[i];
  }
  for (std::size_t i = 0; i < nb; ++i) {
    const double edge = t + static_cast<double>(k_lo + static_cast<ClusterId>(i)) * width;
    const double lo = std::max(design.window_lo, edge);
    const double hi = std::min(design.window_hi, edge + width);
    out.centers.push_back(0.5 * (lo + hi));
    out.means.push_back(out.counts[i] ? sums[i] / static_cast<double>(out.counts[i])
                                      : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

//! Tab-separated bin_center, mean, count, cohort; empty bins print NA.
inline void write_binned_tsv(const std::vector<BinnedSeries>& series, std::ostream& out)
{
  out << "bin_center\tmean\tcount\tcohort\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.centers.size(); ++i) {
      out << detail::format_g17(s.centers[i]) << '\t'
          << (s.counts[i] ? detail::format_g17(s.means[i]) : std::string("NA")) << '\t'
          << s.counts[i] << '\t' << to_string(s.cohort) << '\n';
    }
}

} // namespace fdd
