// imf-lab: run IMF experiments, seed sweeps and projection-geometry checks.
//
//   imf-lab run config.json [--output-dir DIR] [--quiet] [--tolerance-override T]
//   imf-lab sweep config.json [--jobs J] ...
//   imf-lab verify-geometry --cardinality K --interior N --trials T --seed S
//   imf-lab version
//
// Exit codes: 0 all certificates pass, 1 a certificate failed, 2 bad input,
// 3 numerical failure.

#include <iostream>

#include "CLI11.hpp"

#include "imf/experiment.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

int code(imf::ExitCode c) { return static_cast<int>(c); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative Markovian Fitting lab for discrete Schrodinger bridges"};
  app.require_subcommand(1);

  imf::RunOptions options;
  std::string output_dir;
  double tolerance = 0.0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--output-dir", output_dir, "Directory for report files");
    cmd->add_flag("--quiet", options.quiet, "Suppress the console summary");
    cmd->add_option("--tolerance-override", tolerance, "Replace the certificate tolerance")
        ->check(CLI::NonNegativeNumber);
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(run);

  auto* sweep = app.add_subcommand("sweep", "Run the config once per sweep seed");
  sweep->add_option("config", config_path, "Experiment config with a sweep section")->required();
  sweep->add_option("--jobs", options.jobs, "Seeds evaluated concurrently")
      ->check(CLI::PositiveNumber);
  add_common(sweep);

  int cardinality = 0, interior = 0, trials = 1000;
  std::uint64_t seed = 0;
  auto* geometry = app.add_subcommand("verify-geometry", "Certify the subspace geometry");
  geometry->add_option("--cardinality", cardinality, "|X|")->required();
  geometry->add_option("--interior", interior, "Interior time count N")->required();
  geometry->add_option("--trials", trials, "Random trials per check");
  geometry->add_option("--seed", seed, "Seed")->required();
  add_common(geometry);

  app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(imf::ExitCode::config_error);
  }

  if (!output_dir.empty()) options.output_dir = output_dir;
  auto any_tolerance = [&](CLI::App* cmd) {
    if (cmd->count("--tolerance-override") > 0) options.tolerance_override = tolerance;
  };

  try {
    if (app.got_subcommand("version")) {
      std::cout << "imf-lab " << kVersion << '\n';
      return 0;
    }
    if (app.got_subcommand(run)) {
      any_tolerance(run);
      const imf::ExperimentConfig cfg = imf::load_config(config_path);
      if (cfg.sweep) std::cerr << "note: sweep section ignored by 'run'\n";
      return code(imf::run_experiment(cfg, options).exit_code);
    }
    if (app.got_subcommand(sweep)) {
      any_tolerance(sweep);
      const imf::ExperimentConfig cfg = imf::load_config(config_path);
      if (!cfg.sweep) throw imf::ConfigError("config has no sweep section");
      return code(imf::run_sweep(cfg, options).exit_code);
    }
    any_tolerance(geometry);
    return code(imf::verify_projection_geometry(cardinality, interior, trials, seed, options)
                    .exit_code);
  } catch (const imf::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(imf::ExitCode::config_error);
  } catch (const imf::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return code(imf::ExitCode::numerical_failure);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(imf::ExitCode::numerical_failure);
  }
}
