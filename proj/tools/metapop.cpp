// metapop: command-line front end.
//
//   metapop analyze  --config model.json [--trials N] [--seed S]
//   metapop simulate --config model.json [--trials N] [--horizon H]
//   metapop periodic | randenv | pipeline | validate --config cfg.json
//
// Reports go to --out (or stdout) as JSON, or CSV with --format csv.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "metapop/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Source-sink metapopulation persistence analysis"};
  app.require_subcommand(1);

  std::string config, out, format = "json";
  metapop::CliOptions opt;
  opt.threads = metapop::default_threads();
  std::uint64_t seed = 0, trials = 0, horizon = 0;

  const std::pair<const char*, const char*> commands[] = {
      {"analyze", "growth rate, return functional and occupancy by every method"},
      {"simulate", "branching-process simulation: survival, growth, lineage occupancy"},
      {"periodic", "two-state periodic environment"},
      {"randenv", "Markov random environment: Lyapunov exponent and lower bound"},
      {"pipeline", "sink-pipeline depleting rate, closed form and linear system"},
      {"validate", "check a config without analysing it"},
  };
  for (const auto& [name, about] : commands) {
    CLI::App* sub = app.add_subcommand(name, about);
    sub->add_option("--config", config, "model/config JSON file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "RNG seed (overrides the config)");
    sub->add_option("--trials", trials, "Monte Carlo sample count (walks, runs or Lyapunov steps)");
    sub->add_option("--horizon", horizon, "simulation horizon in generations");
    sub->add_option("--out", out, "output file (default stdout)");
    sub->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--threads", opt.threads, "worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--trials")) opt.trials = trials;
  if (sub->count("--horizon")) opt.horizon = horizon;

  try {
    const auto result = metapop::run_command(sub->get_name(), metapop::read_json_file(config), opt);
    std::string text;
    if (format == "csv") {
      if (result.csv.empty()) throw metapop::ValidationError(sub->get_name() + " has no CSV form");
      text = result.csv;
    } else {
      text = metapop::dump(result.report) + "\n";
    }
    if (out.empty()) {
      std::cout << text;
    } else {
      std::ofstream f(out);
      if (!f) throw metapop::ValidationError("cannot write " + out);
      f << text;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return metapop::exit_code_for(e);
  }
}
