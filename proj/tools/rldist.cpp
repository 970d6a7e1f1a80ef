// rldist: config-driven experiment runner.
//
//   rldist run --config exp.json [--out-dir DIR] [--seed N] [--max-iters N] [--workers N] [--csv]
//   rldist validate --config exp.json

#include <iostream>

#include "CLI11.hpp"
#include "rldist/cli/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Distributed reinforcement learning experiment runner"};
  app.require_subcommand(1);

  rldist::cli::RunOptions opts;
  auto* run = app.add_subcommand("run", "Train (or tune) until a stop condition");
  run->add_option("--config", opts.config_path, "Experiment config (JSON)")->required();
  run->add_option("--out-dir", opts.out_dir, "Directory for metrics.jsonl and checkpoint.bin");
  run->add_option("--seed", opts.seed, "Override the config seed");
  run->add_option("--max-iters", opts.max_iters, "Override stop.max_iterations");
  run->add_option("--workers", opts.workers, "Override num_evaluators");
  run->add_flag("--csv", opts.csv, "Also write metrics.csv");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("--config", validate_path, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : rldist::cli::kExitInvalid;
  }
  if (*run) return rldist::cli::run_experiment(opts, std::cout, std::cerr);
  return rldist::cli::validate_command(validate_path, std::cout);
}
