// fdd_cli: difference-in-discontinuities estimation, diagnostics and Monte
// Carlo studies from the command line.

#include "fdd/app.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace {

struct Flag
{
  const char* name;
  const char* key;
  const char* help;
};

// Every flag is a config key; command-line values override the config file.
const std::vector<Flag> flags = {
  { "--input", "input", "input CSV file" },
  { "--cutoff", "cutoff", "cutoff of the running variable" },
  { "--window", "window", "estimation window as lo,hi" },
  { "--bandwidth", "bandwidth", "shared bandwidth, or 'auto'" },
  { "--bw-left-pre", "bw_left_pre", "bandwidth below the cutoff, pre cohort" },
  { "--bw-right-pre", "bw_right_pre", "bandwidth above the cutoff, pre cohort" },
  { "--bw-left-post", "bw_left_post", "bandwidth below the cutoff, post cohort" },
  { "--bw-right-post", "bw_right_post", "bandwidth above the cutoff, post cohort" },
  { "--kernel", "kernel", "triangular, uniform or epanechnikov" },
  { "--poly-order", "poly_order", "local polynomial order (1 or 2)" },
  { "--cluster-col", "col.cluster", "cluster column (default: quarter bins of x)" },
  { "--estimator", "estimator", "ratio, 2sls or 2sls_full" },
  { "--bootstrap-reps", "bootstrap_reps", "cluster bootstrap replicates (0 = delta method only)" },
  { "--seed", "seed", "random seed (default: FDD_SEED)" },
  { "--alpha", "alpha", "test level" },
  { "--threads", "threads", "worker threads (default: FDD_THREADS or all cores)" },
  { "--out-json", "out_json", "write the JSON document here" },
  { "--out-binned", "out_binned", "write the binned TSV here" },
  { "--out-sample", "out_sample", "simulate: also write one sample drawn with the seed" },
  { "--reps", "reps", "simulate: Monte Carlo replicates" },
  { "--study-estimator", "study_estimator", "simulate: estimator under study" },
  { "--cohort", "cohort", "rd: pre, post or both" },
  { "--bin-width", "bin_width", "binned: bin width" },
  { "--bin-variable", "bin_variable", "binned: Y, T, M or O" },
};

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Fuzzy difference-in-discontinuities toolkit" };
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key = value config file");
  std::vector<std::string> values(flags.size());
  std::vector<CLI::Option*> options;
  for (std::size_t i = 0; i < flags.size(); ++i)
    options.push_back(app.add_option(flags[i].name, values[i], flags[i].help));
  bool no_diagnostics = false;
  app.add_flag("--no-diagnostics", no_diagnostics, "skip the diagnostics summary");

  for (const char* cmd : { "estimate", "rd", "diagnose", "placebo", "simulate", "binned" })
    app.add_subcommand(cmd)->fallthrough();
  app.get_subcommand("estimate")->description("difference-in-discontinuities estimate with corrections");
  app.get_subcommand("rd")->description("single-cohort fuzzy RD");
  app.get_subcommand("diagnose")->description("assumption diagnostics");
  app.get_subcommand("placebo")->description("placebo difference-in-discontinuities");
  app.get_subcommand("simulate")->description("Monte Carlo study from dgp.* config keys");
  app.get_subcommand("binned")->description("binned means for plotting");

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    fdd::ConfigMap cfg;
    if (!config_path.empty())
      cfg = fdd::parse_config_file(config_path);
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (options[i]->count() > 0)
        cfg[flags[i].key] = values[i];
    if (no_diagnostics)
      cfg["diagnostics"] = "false";

    fdd::RunConfig rc = fdd::make_run_config(cfg);
    fdd::RunOutput out = command == "binned" ? fdd::run_binned(rc, &std::cout)
                                             : fdd::run_command(command, rc);
    for (const auto& n : out.notes)
      std::cerr << "note: " << n << '\n';
    for (const auto& w : out.warnings)
      std::cerr << "warning: " << w << '\n';
    if (!rc.out_json.empty()) {
      std::ofstream f(rc.out_json, std::ios::binary);
      if (!f)
        throw fdd::Error(fdd::ErrorCode::file_not_found, "cannot write '" + rc.out_json + "'", rc.out_json);
      f << fdd::dump_json(out.json);
    }
    if (command != "binned" || !rc.out_binned.empty())
      std::cout << out.table;
  } catch (const fdd::Error& e) {
    std::cerr << "error: " << fdd::to_string(e.code()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: INTERNAL: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
