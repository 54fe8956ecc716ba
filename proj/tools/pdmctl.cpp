// pdmctl: solve, verify and benchmark experiments described by JSON configs.

#include <iostream>

#include <CLI11.hpp>

#include "pdm/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Primal-dual proximal method with changing constraints"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  pdm::GlobalFlags flags;
  std::string trace;
  std::uint64_t seed = 0;
  app.add_option("--trace", trace, "Write the per-iteration trace CSV here");
  app.add_option("--seed", seed, "Override the configuration seed");
  app.add_flag("--quiet", flags.quiet, "Suppress normal output");

  std::string config;
  pdm::Command command = pdm::Command::Solve;
  auto add = [&](const char* name, const char* help, pdm::Command which) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("config", config, "Experiment configuration (JSON)")->required();
    sub->callback([&command, which] { command = which; });
  };
  add("solve", "Run PDM and/or PDMI to the stopping rule or budget", pdm::Command::Solve);
  add("verify", "Check the convergence invariants on an instance", pdm::Command::Verify);
  add("bench", "Time PDMI rounds for a list of agent counts", pdm::Command::Bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (app.count("--trace")) flags.trace = trace;
  if (app.count("--seed")) flags.seed = seed;
  return pdm::run_command(command, config, flags, std::cout, std::cerr);
}
