#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "islandsmc/diagnostics.hpp"
#include "islandsmc/models.hpp"

namespace islandsmc::harness {

inline constexpr int kSchemaVersion = 1;

/// Environment variable naming the directory relative output paths resolve against.
inline constexpr const char* kOutputRootEnv = "ISLANDSMC_OUTPUT_ROOT";

/// Stream keys under RandomStream(seed).
inline constexpr std::uint64_t kTruthKey = 1;
inline constexpr std::uint64_t kFilterKey = 2;
inline constexpr std::uint64_t kPartnerKey = 3;

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string model = "growth";       ///< growth | mobile | custom-linear
  std::string algorithm = "lipf";     ///< lipf | ikf | bootstrap | grid-oracle
  std::optional<int> n1;
  std::optional<int> n2;
  /// Island count of the IKF partner in rmse comparisons; defaults to n1.
  std::optional<int> ikf_n1;
  std::optional<int> horizon;  ///< defaults to the model's horizon
  std::uint64_t seed = 0;
  int replications = 1;
  int workers = 1;
  int eval_step = 50;
  /// Output kind (trajectory, estimates, error-surface, rmse, psd) to path.
  std::map<std::string, std::string> outputs;
  std::vector<std::pair<int, int>> surface_grid;
  nlohmann::json model_params = nlohmann::json::object();
  std::optional<std::string> observations;

  bool operator==(const RunConfig&) const = default;
};

/// Structural parse; every type error and unknown key is collected into one ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

/// Semantic checks; returns every violation (empty when valid).
std::vector<std::string> validate(const RunConfig& config);
/// Throws ConfigError when validate() reports anything.
void require_valid(const RunConfig& config);

/// Git-style content hash of the canonical JSON serialization.
std::string config_hash(const RunConfig& config);

StateSpaceModel build_model(const RunConfig& config);
int effective_horizon(const RunConfig& config);

/// Absolute paths are kept; relative ones resolve against $ISLANDSMC_OUTPUT_ROOT
/// (or the working directory when unset).
std::filesystem::path resolve_output(const std::string& path);

struct EstimateRow {
  int replication = 0;
  int step = 0;
  Vector predicted;
  Vector filtered;
  /// log of the mean, min and max island potential (NaN where undefined).
  double log_island_mean = 0.0;
  double log_island_min = 0.0;
  double log_island_max = 0.0;
  double ess_island = 0.0;
  double ess_inner = 0.0;
};

struct RunRecord {
  std::vector<std::string> signals;
  std::vector<EstimateRow> rows;
  /// Seconds per step, parallel to rows; never written to CSV bodies.
  std::vector<double> step_seconds;
  std::vector<Trajectory> trajectories;
  /// Ground-truth signals of replication 0, one per row step.
  std::vector<Vector> truth_path;
  std::optional<RmseTable> rmse;
  int total_steps = 0;
  int extinction_events = 0;
  double runtime_seconds = 0.0;
};

/// Runs the configured algorithm on one replication's observations.
std::vector<EstimateRow> run_replication(const RunConfig& config, const StateSpaceModel& model, const Trajectory& traj,
                                         int replication, std::vector<double>* step_seconds = nullptr);

/// Validates, simulates (or loads) the observations, runs every replication and
/// writes the requested artifacts with their JSON sidecars.
RunRecord run(const RunConfig& config);

struct SweepCell {
  int n1 = 0;
  int n2 = 0;
  std::vector<Vector> estimates;  ///< one battery vector per replication
  std::optional<std::string> failure;
};

struct SweepResult {
  std::vector<TestFunction> battery;
  Vector oracle;
  std::vector<SweepCell> cells;
  ErrorSurface surface;

  bool any_failed() const;
};

/// Error and variance surfaces of LIPF against the grid oracle at eval_step.
/// A failing cell is recorded and the sweep continues.
SweepResult sweep(const RunConfig& config);

/// Seeds and stream labels a run would use, without running it.
nlohmann::json seed_report(const RunConfig& config);

void write_estimates_csv(std::ostream& os, const RunRecord& record);
void write_rmse_csv(std::ostream& os, const RmseTable& table);
void write_psd_csv(std::ostream& os, const RunRecord& record);
void write_surface_csv(std::ostream& os, const SweepResult& result, bool variance);
void write_sweep_replications_csv(std::ostream& os, const SweepResult& result);

}  // namespace islandsmc::harness
