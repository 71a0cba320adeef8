// Command-line front end: run, sweep, validate and seed-report on a JSON config.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "islandsmc/errors.hpp"
#include "islandsmc/harness.hpp"

namespace {

using islandsmc::harness::RunConfig;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> n1;
  std::optional<int> n2;
  std::optional<int> horizon;
  std::optional<int> replications;
  std::optional<std::string> algorithm;
  std::optional<std::string> observations;

  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "Override the seed");
    app->add_option("--workers", workers, "Override the worker count");
    app->add_option("--N1", n1, "Override the island count");
    app->add_option("--N2", n2, "Override the particles per island");
    app->add_option("--horizon", horizon, "Override the number of steps");
    app->add_option("--replications", replications, "Override the replication count");
    app->add_option("--algorithm", algorithm, "Override the algorithm");
    app->add_option("--observations", observations, "Trajectory CSV to filter instead of simulating");
  }

  void apply(RunConfig& c) const {
    if (seed) c.seed = *seed;
    if (workers) c.workers = *workers;
    if (n1) c.n1 = *n1;
    if (n2) c.n2 = *n2;
    if (horizon) c.horizon = *horizon;
    if (replications) c.replications = *replications;
    if (algorithm) c.algorithm = *algorithm;
    if (observations) c.observations = *observations;
  }
};

void report_violations(const islandsmc::ConfigError& e) {
  std::cerr << "configuration is invalid:\n";
  for (const auto& v : e.violations()) std::cerr << "  - " << v << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Island particle filters: experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides overrides;
  auto* run_cmd = app.add_subcommand("run", "Run one configuration and write its artifacts");
  auto* sweep_cmd = app.add_subcommand("sweep", "Compute error and variance surfaces over (N1, N2)");
  auto* validate_cmd = app.add_subcommand("validate", "Check a configuration and list every violation");
  auto* seed_cmd = app.add_subcommand("seed-report", "Print the random streams a run would use");
  for (auto* cmd : {run_cmd, sweep_cmd, validate_cmd, seed_cmd}) {
    cmd->add_option("config", config_path, "JSON configuration file")->required();
    overrides.attach(cmd);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = islandsmc::harness::load_config(config_path);
    overrides.apply(config);

    if (validate_cmd->parsed()) {
      islandsmc::harness::require_valid(config);
      std::cout << "ok " << islandsmc::harness::config_hash(config) << '\n';
      return 0;
    }
    if (seed_cmd->parsed()) {
      std::cout << islandsmc::harness::seed_report(config).dump(2) << '\n';
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto result = islandsmc::harness::sweep(config);
      std::cout << result.surface.metadata.dump(2) << '\n';
      if (result.any_failed()) {
        std::cerr << "one or more sweep cells failed\n";
        return 4;
      }
      return 0;
    }
    const auto record = islandsmc::harness::run(config);
    std::cout << "completed " << record.total_steps << " steps, " << record.extinction_events
              << " extinction events, " << record.runtime_seconds << " s\n";
    if (record.rmse) {
      for (const auto& row : record.rmse->rows) {
        std::cout << row.signal << ": lipf " << row.lipf_rmse << ", ikf " << row.ikf_rmse << ", difference "
                  << row.mean_difference << " [" << row.ci_low << ", " << row.ci_high << "]\n";
      }
    }
    return 0;
  } catch (const islandsmc::ConfigError& e) {
    report_violations(e);
    return 2;
  } catch (const islandsmc::ExtinctionError& e) {
    std::cerr << "extinction: level " << islandsmc::to_string(e.level()) << ", step " << e.step() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
