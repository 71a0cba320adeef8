#include "islandsmc/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "islandsmc/errors.hpp"
#include "islandsmc/io.hpp"
#include "islandsmc/kalman.hpp"
#include "islandsmc/lipf.hpp"
#include "islandsmc/parallel.hpp"

namespace islandsmc::harness {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::set<std::string> kModels = {"growth", "mobile", "custom-linear"};
const std::set<std::string> kAlgorithms = {"lipf", "ikf", "bootstrap", "grid-oracle"};
const std::set<std::string> kOutputs = {"trajectory", "estimates", "error-surface", "rmse", "psd"};
const std::set<std::string> kKeys = {"schema_version", "model",        "algorithm",  "N1",           "N2",
                                     "ikf_N1",         "horizon",      "seed",       "replications", "workers",
                                     "eval_step",      "outputs",      "surface_grid", "model_params", "observations"};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::optional<int> read_int(const json& j, const char* key, std::vector<std::string>& errs) {
  if (!j.contains(key)) return std::nullopt;
  const json& v = j.at(key);
  if (!v.is_number_integer()) {
    errs.push_back(std::string("'") + key + "' must be an integer");
    return std::nullopt;
  }
  const auto value = v.get<long long>();
  if (value < std::numeric_limits<int>::min() || value > std::numeric_limits<int>::max()) {
    errs.push_back(std::string("'") + key + "' is out of range");
    return std::nullopt;
  }
  return static_cast<int>(value);
}

std::optional<std::string> read_string(const json& j, const char* key, std::vector<std::string>& errs) {
  if (!j.contains(key)) return std::nullopt;
  if (!j.at(key).is_string()) {
    errs.push_back(std::string("'") + key + "' must be a string");
    return std::nullopt;
  }
  return j.at(key).get<std::string>();
}

bool writable_location(const std::filesystem::path& target) {
  std::error_code ec;
  if (std::filesystem::is_directory(target, ec)) return false;
  if (std::filesystem::exists(target, ec)) return ::access(target.c_str(), W_OK) == 0;
  std::filesystem::path dir = target.parent_path();
  if (dir.empty()) dir = ".";
  while (!std::filesystem::exists(dir, ec)) {
    if (!dir.has_parent_path() || dir.parent_path() == dir) return false;
    dir = dir.parent_path();
  }
  return std::filesystem::is_directory(dir, ec) && ::access(dir.c_str(), W_OK) == 0;
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  std::filesystem::path out = p;
  out.replace_filename(p.stem().string() + suffix + p.extension().string());
  return out;
}

Trajectory load_observations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open observations file '" + path + "'");
  return read_trajectory_csv(in);
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  body(out);
  if (!out) throw ArgumentError("failed writing '" + path.string() + "'");
}

json sidecar(const RunConfig& config, const std::string& kind, double wall_clock) {
  return {{"schema_version", kSchemaVersion},
          {"artifact", kind},
          {"seed", config.seed},
          {"config_hash", config_hash(config)},
          {"battery_version", kBatteryVersion},
          {"model", config.model},
          {"algorithm", config.algorithm},
          {"wall_clock_seconds", wall_clock},
          {"config", to_json(config)}};
}

void write_artifact(const std::filesystem::path& path, const json& meta,
                    const std::function<void(std::ostream&)>& body) {
  write_file(path, body);
  std::filesystem::path meta_path = path;
  meta_path += ".json";
  write_file(meta_path, [&](std::ostream& os) { os << meta.dump(2) << '\n'; });
}

std::string fmt(double v) { return io::format_double(v); }

// Summary statistics of a vector of log island potentials.
void fill_potential_summary(EstimateRow& row, const Vector& log_island) {
  const double top = log_island.maxCoeff();
  row.log_island_max = top;
  row.log_island_min = log_island.minCoeff();
  row.log_island_mean = top == -std::numeric_limits<double>::infinity()
                            ? top
                            : top + std::log((log_island.array() - top).exp().mean());
}

double ess_from_logs(const Vector& l) {
  const double top = l.maxCoeff();
  if (top == -std::numeric_limits<double>::infinity()) return 0.0;
  return effective_sample_size((l.array() - top).exp().matrix());
}

PosteriorSummary grid_summary(const GridFilter& gf) {
  PosteriorSummary s;
  s.param_mean = Vector::Constant(1, gf.mean(Coord::kTheta));
  s.state_mean = Vector::Constant(1, gf.mean(Coord::kX));
  s.mean_force_strength = gf.expectation(Coord::kTheta, [](double v) { return std::abs(v); });
  return s;
}

std::optional<RateFit> try_fit(const std::function<RateFit()>& f) {
  try {
    return f();
  } catch (const Error&) {
    return std::nullopt;
  }
}

json fit_json(const std::optional<RateFit>& fit) {
  if (!fit) return nullptr;
  return {{"slope", fit->slope},
          {"intercept", fit->intercept},
          {"ci_low", fit->ci_low},
          {"ci_high", fit->ci_high},
          {"points", fit->points}};
}

}  // namespace

// ------------------------------------------------------------------ config

RunConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError({"configuration must be a JSON object"});
  std::vector<std::string> errs;
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.count(key)) errs.push_back("unknown key '" + key + "'");
  }
  RunConfig c;
  if (auto v = read_int(j, "schema_version", errs)) c.schema_version = *v;
  if (auto v = read_string(j, "model", errs)) c.model = *v;
  if (auto v = read_string(j, "algorithm", errs)) c.algorithm = *v;
  c.n1 = read_int(j, "N1", errs);
  c.n2 = read_int(j, "N2", errs);
  c.ikf_n1 = read_int(j, "ikf_N1", errs);
  c.horizon = read_int(j, "horizon", errs);
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (s.is_number_unsigned()) {
      c.seed = s.get<std::uint64_t>();
    } else if (s.is_number_integer() && s.get<long long>() >= 0) {
      c.seed = static_cast<std::uint64_t>(s.get<long long>());
    } else {
      errs.push_back("'seed' must be a non-negative 64-bit integer");
    }
  }
  if (auto v = read_int(j, "replications", errs)) c.replications = *v;
  if (auto v = read_int(j, "workers", errs)) c.workers = *v;
  if (auto v = read_int(j, "eval_step", errs)) c.eval_step = *v;
  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    if (!o.is_object()) {
      errs.push_back("'outputs' must map output kinds to paths");
    } else {
      for (const auto& [kind, path] : o.items()) {
        if (!path.is_string()) {
          errs.push_back("output '" + kind + "' must be a path string");
          continue;
        }
        c.outputs[kind] = path.get<std::string>();
      }
    }
  }
  if (j.contains("surface_grid")) {
    const json& g = j.at("surface_grid");
    if (!g.is_array()) {
      errs.push_back("'surface_grid' must be a list of [N1, N2] pairs");
    } else {
      for (const json& cell : g) {
        if (!cell.is_array() || cell.size() != 2 || !cell[0].is_number_integer() || !cell[1].is_number_integer()) {
          errs.push_back("'surface_grid' entries must be [N1, N2] integer pairs");
          continue;
        }
        c.surface_grid.emplace_back(cell[0].get<int>(), cell[1].get<int>());
      }
    }
  }
  if (j.contains("model_params")) {
    if (!j.at("model_params").is_object()) {
      errs.push_back("'model_params' must be an object");
    } else {
      c.model_params = j.at("model_params");
    }
  }
  c.observations = read_string(j, "observations", errs);
  if (!errs.empty()) {
    // Report the semantic problems of whatever did parse alongside the structural ones.
    for (std::string& e : validate(c)) {
      if (std::find(errs.begin(), errs.end(), e) == errs.end()) errs.push_back(std::move(e));
    }
    throw ConfigError(std::move(errs));
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open configuration file '" + path.string() + "'"});
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j = {{"schema_version", c.schema_version},
            {"model", c.model},
            {"algorithm", c.algorithm},
            {"seed", c.seed},
            {"replications", c.replications},
            {"workers", c.workers},
            {"eval_step", c.eval_step},
            {"model_params", c.model_params}};
  if (c.n1) j["N1"] = *c.n1;
  if (c.n2) j["N2"] = *c.n2;
  if (c.ikf_n1) j["ikf_N1"] = *c.ikf_n1;
  if (c.horizon) j["horizon"] = *c.horizon;
  j["outputs"] = json::object();
  for (const auto& [kind, path] : c.outputs) j["outputs"][kind] = path;
  if (!c.surface_grid.empty()) {
    j["surface_grid"] = json::array();
    for (const auto& [a, b] : c.surface_grid) j["surface_grid"].push_back({a, b});
  }
  if (c.observations) j["observations"] = *c.observations;
  return j;
}

std::string config_hash(const RunConfig& config) { return io::git_blob_hash(to_json(config).dump()); }

std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> errs;
  if (c.schema_version != kSchemaVersion) {
    errs.push_back("unsupported schema_version " + std::to_string(c.schema_version));
  }
  const bool model_ok = kModels.count(c.model) > 0;
  if (!model_ok) errs.push_back("unknown model '" + c.model + "'");
  if (!kAlgorithms.count(c.algorithm)) errs.push_back("unknown algorithm '" + c.algorithm + "'");

  const auto positive = [&](const std::optional<int>& v, const char* name) {
    if (v && *v < 1) errs.push_back(std::string("'") + name + "' must be positive");
  };
  positive(c.n1, "N1");
  positive(c.n2, "N2");
  positive(c.ikf_n1, "ikf_N1");
  positive(c.horizon, "horizon");
  if (c.replications < 1) errs.push_back("'replications' must be positive");
  if (c.workers < 1) errs.push_back("'workers' must be positive");
  if (c.eval_step < 1) errs.push_back("'eval_step' must be positive");

  if (c.algorithm == "lipf") {
    // A surface grid supplies the sizes of a sweep.
    if (!c.n1 && c.surface_grid.empty()) errs.push_back("lipf requires N1");
    if (!c.n2 && c.surface_grid.empty()) errs.push_back("lipf requires N2");
  } else if (c.algorithm == "bootstrap") {
    if (!c.n1) errs.push_back("bootstrap requires N1");
    if (c.n2) errs.push_back("bootstrap forbids N2 (it is the single-particle-island filter)");
  } else if (c.algorithm == "ikf") {
    if (!c.n1) errs.push_back("ikf requires N1");
    if (c.n2) errs.push_back("ikf forbids N2 (its inner measures are exact)");
    if (c.model == "growth") errs.push_back("ikf needs a conditionally linear-Gaussian model, not growth");
  } else if (c.algorithm == "grid-oracle") {
    if (c.n1) errs.push_back("grid-oracle forbids N1");
    if (c.n2) errs.push_back("grid-oracle forbids N2");
    if (c.model != "growth") errs.push_back("grid-oracle is only available for the growth model");
  }

  if (model_ok) {
    try {
      (void)build_model(c);
    } catch (const std::exception& e) {
      errs.push_back(std::string("model_params: ") + e.what());
    }
  }

  for (const auto& [kind, path] : c.outputs) {
    if (!kOutputs.count(kind)) {
      errs.push_back("unknown output kind '" + kind + "'");
      continue;
    }
    if (path.empty()) {
      errs.push_back("output '" + kind + "' has an empty path");
    } else if (!writable_location(resolve_output(path))) {
      errs.push_back("output '" + kind + "' path '" + resolve_output(path).string() + "' is not writable");
    }
  }
  if (c.outputs.count("rmse")) {
    if (c.algorithm != "lipf") errs.push_back("rmse output pairs LIPF with IKF and requires algorithm lipf");
    if (c.model == "growth") errs.push_back("rmse output needs a conditionally linear-Gaussian model");
    if (c.observations) errs.push_back("rmse output needs simulated ground truth, not an observations file");
  }
  if (c.outputs.count("error-surface")) {
    if (c.model != "growth") errs.push_back("error-surface output needs the growth-model oracle");
    if (c.algorithm != "lipf") errs.push_back("error-surface output requires algorithm lipf");
  }
  if (c.outputs.count("psd") && c.horizon && *c.horizon < 16) {
    errs.push_back("psd output needs a horizon of at least 16 steps");
  }
  for (const auto& [a, b] : c.surface_grid) {
    if (a < 1 || b < 1) errs.push_back("surface_grid cells must be positive");
  }
  if (c.observations) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(*c.observations, ec)) {
      errs.push_back("observations file '" + *c.observations + "' does not exist");
    }
  }
  return errs;
}

void require_valid(const RunConfig& config) {
  auto errs = validate(config);
  if (!errs.empty()) throw ConfigError(std::move(errs));
}

StateSpaceModel build_model(const RunConfig& c) {
  if (c.model == "growth") return growth_model(growth_params_from_json(c.model_params));
  if (c.model == "mobile") return mobile_model(mobile_params_from_json(c.model_params));
  if (c.model == "custom-linear") return linear_model(linear_params_from_json(c.model_params));
  throw ConfigError({"unknown model '" + c.model + "'"});
}

int effective_horizon(const RunConfig& config) {
  if (config.horizon) return *config.horizon;
  return build_model(config).horizon;
}

std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / p;
  return p;
}

// ------------------------------------------------------------------ run

std::vector<EstimateRow> run_replication(const RunConfig& config, const StateSpaceModel& model, const Trajectory& traj,
                                         int replication, std::vector<double>* step_seconds) {
  const int horizon = config.horizon ? *config.horizon : traj.horizon();
  if (horizon > traj.horizon()) throw ArgumentError("horizon exceeds the available observations");
  const RandomStream rng = RandomStream(config.seed).derive(kFilterKey, static_cast<std::uint64_t>(replication));
  std::vector<EstimateRow> rows;
  rows.reserve(static_cast<std::size_t>(horizon));
  const auto obs = [&](int n) -> const Vector& { return traj.y[static_cast<std::size_t>(n)]; };

  if (config.algorithm == "lipf" || config.algorithm == "bootstrap") {
    const int n2 = config.algorithm == "bootstrap" ? 1 : *config.n2;
    IslandSystem system = lipf_init(model.fk, *config.n1, n2, rng);
    for (int n = 0; n < horizon; ++n) {
      const auto t0 = std::chrono::steady_clock::now();
      EstimateRow row;
      row.replication = replication;
      row.step = n;
      row.predicted = signal_values(model, summarize(system, false));
      lipf_weigh(system, model.fk, obs(n), config.workers);
      row.filtered = signal_values(model, summarize(system, true));
      fill_potential_summary(row, system.weights->log_island);
      const EssDiagnostics ess = ess_diagnostics(system);
      row.ess_island = ess.island;
      row.ess_inner = ess.inner_mean;
      if (n + 1 < horizon) system = lipf_step(std::move(system), model.fk, obs(n), rng, config.workers);
      rows.push_back(std::move(row));
      if (step_seconds) step_seconds->push_back(seconds_since(t0));
    }
  } else if (config.algorithm == "ikf") {
    if (!model.linear) throw ArgumentError("model has no linear-Gaussian description");
    const LinearGaussianSpec& spec = *model.linear;
    KalmanIslandSystem system = ikf_init(model.fk, spec, *config.n1, rng);
    for (int n = 0; n < horizon; ++n) {
      const auto t0 = std::chrono::steady_clock::now();
      EstimateRow row;
      row.replication = replication;
      row.step = n;
      row.predicted = signal_values(model, summarize(system, spec, obs(n), false));
      ikf_weigh(system, spec, obs(n));
      row.filtered = signal_values(model, summarize(system, spec, obs(n), true));
      fill_potential_summary(row, system.log_potentials);
      row.ess_island = ess_from_logs(system.log_potentials);
      row.ess_inner = kNaN;
      if (n + 1 < horizon) system = ikf_step(std::move(system), spec, obs(n), model.fk, rng, config.workers);
      rows.push_back(std::move(row));
      if (step_seconds) step_seconds->push_back(seconds_since(t0));
    }
  } else if (config.algorithm == "grid-oracle") {
    const GrowthModelParams params = growth_params_from_json(config.model_params);
    GridFilter gf = grid_filter_init(params);
    for (int n = 0; n < horizon; ++n) {
      const auto t0 = std::chrono::steady_clock::now();
      EstimateRow row;
      row.replication = replication;
      row.step = n;
      row.predicted = signal_values(model, grid_summary(gf));
      row.filtered = signal_values(model, grid_summary(grid_filter_correct(gf, params, obs(n)[0])));
      row.log_island_mean = row.log_island_min = row.log_island_max = kNaN;
      row.ess_island = row.ess_inner = kNaN;
      if (n + 1 < horizon) gf = grid_filter_step(gf, params, obs(n)[0]);
      rows.push_back(std::move(row));
      if (step_seconds) step_seconds->push_back(seconds_since(t0));
    }
  } else {
    throw ConfigError({"unknown algorithm '" + config.algorithm + "'"});
  }
  return rows;
}

RunRecord run(const RunConfig& config) {
  require_valid(config);
  if (config.algorithm == "lipf" && (!config.n1 || !config.n2)) throw ConfigError({"run with lipf requires N1 and N2"});
  const auto start = std::chrono::steady_clock::now();
  const StateSpaceModel model = build_model(config);
  RunRecord record;
  record.signals = signal_names(model);

  std::optional<Trajectory> shared;
  if (config.observations) shared = load_observations(*config.observations);
  const int horizon = config.horizon ? *config.horizon : (shared ? shared->horizon() : model.horizon);

  for (int r = 0; r < config.replications; ++r) {
    Trajectory traj = shared ? *shared
                             : simulate(model, horizon,
                                        RandomStream(config.seed).derive(kTruthKey, static_cast<std::uint64_t>(r)));
    RunConfig local = config;
    local.horizon = horizon;
    auto rows = run_replication(local, model, traj, r, &record.step_seconds);
    record.total_steps += static_cast<int>(rows.size());
    record.rows.insert(record.rows.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
    if (r == 0) {
      for (int n = 0; n < horizon; ++n) {
        const auto un = static_cast<std::size_t>(n);
        record.truth_path.push_back(truth_signals(model, traj.theta[un], traj.x[un]));
      }
    }
    record.trajectories.push_back(std::move(traj));
  }

  if (config.outputs.count("rmse")) {
    RmseConfig rc;
    rc.lipf_n1 = *config.n1;
    rc.lipf_n2 = *config.n2;
    rc.ikf_n1 = config.ikf_n1.value_or(*config.n1);
    rc.horizon = horizon;
    rc.replications = config.replications;
    rc.workers = config.workers;
    record.rmse = rmse_comparison(model, rc, RandomStream(config.seed));
  }
  record.runtime_seconds = seconds_since(start);

  const auto path_of = [&](const char* kind) { return resolve_output(config.outputs.at(kind)); };
  if (config.outputs.count("trajectory")) {
    json meta = sidecar(config, "trajectory", record.runtime_seconds);
    meta["replication"] = 0;
    write_artifact(path_of("trajectory"), meta,
                   [&](std::ostream& os) { write_trajectory_csv(os, record.trajectories.front()); });
  }
  if (config.outputs.count("estimates")) {
    json meta = sidecar(config, "estimates", record.runtime_seconds);
    meta["rows"] = record.rows.size();
    meta["total_steps"] = record.total_steps;
    meta["extinction_events"] = record.extinction_events;
    meta["step_seconds"] = record.step_seconds;
    meta["signals"] = record.signals;
    write_artifact(path_of("estimates"), meta, [&](std::ostream& os) { write_estimates_csv(os, record); });
  }
  if (config.outputs.count("psd")) {
    json meta = sidecar(config, "psd", record.runtime_seconds);
    meta["replication"] = 0;
    write_artifact(path_of("psd"), meta, [&](std::ostream& os) { write_psd_csv(os, record); });
  }
  if (record.rmse) {
    json meta = sidecar(config, "rmse", record.runtime_seconds);
    meta["replications"] = record.rmse->replications;
    meta["bootstrap_resamples"] = RmseConfig{}.bootstrap_resamples;
    write_artifact(path_of("rmse"), meta, [&](std::ostream& os) { write_rmse_csv(os, *record.rmse); });
  }
  if (config.outputs.count("error-surface")) {
    RunConfig cell = config;
    cell.surface_grid = {{*config.n1, *config.n2}};
    (void)sweep(cell);
  }
  return record;
}

// ------------------------------------------------------------------ sweep

bool SweepResult::any_failed() const {
  for (const SweepCell& c : cells) {
    if (c.failure) return true;
  }
  return false;
}

SweepResult sweep(const RunConfig& config) {
  require_valid(config);
  std::vector<std::string> errs;
  if (config.model != "growth") errs.push_back("sweep needs the growth-model oracle");
  if (config.algorithm != "lipf") errs.push_back("sweep requires algorithm lipf");
  std::vector<std::pair<int, int>> grid = config.surface_grid;
  if (grid.empty() && config.n1 && config.n2) grid.emplace_back(*config.n1, *config.n2);
  if (grid.empty()) errs.push_back("sweep needs a nonempty surface_grid");
  if (!errs.empty()) throw ConfigError(std::move(errs));

  const auto start = std::chrono::steady_clock::now();
  const StateSpaceModel model = build_model(config);
  const GrowthModelParams params = growth_params_from_json(config.model_params);
  const Trajectory traj = config.observations
                              ? load_observations(*config.observations)
                              : simulate(model, config.eval_step, RandomStream(config.seed).derive(kTruthKey, 0));
  if (traj.horizon() < config.eval_step) throw ArgumentError("observations end before eval_step");

  SweepResult result;
  const GridFilter oracle = grid_oracle(params, traj, config.eval_step);
  result.battery = make_battery(oracle);
  result.oracle = oracle_values(result.battery, oracle);

  const auto reps = static_cast<std::size_t>(config.replications);
  for (const auto& [n1, n2] : grid) {
    SweepCell cell;
    cell.n1 = n1;
    cell.n2 = n2;
    cell.estimates.assign(reps, Vector());
    try {
      parallel_for(reps, config.workers, [&](std::size_t r) {
        cell.estimates[r] = lipf_battery_run(model, traj, n1, n2, config.eval_step, result.battery,
                                             RandomStream(config.seed).derive(kFilterKey, r));
      });
      result.surface.cells.push_back(aggregate_cell(n1, n2, cell.estimates, result.oracle, result.battery));
    } catch (const Error& e) {
      cell.failure = e.what();
      cell.estimates.clear();
    }
    result.cells.push_back(std::move(cell));
  }

  const ErrorSurface& s = result.surface;
  const auto variance_fit = [&](RateAxis axis) {
    return try_fit([&] {
      ErrorSurface v = s;
      for (ErrorCell& c : v.cells) c.l2_error = c.variance;
      return rate_regression(v, axis);
    });
  };
  const auto fit_n1 = try_fit([&] { return rate_regression(s, RateAxis::kN1); });
  const auto fit_n2 = try_fit([&] { return rate_regression(s, RateAxis::kN2); });
  const auto fit_joint = try_fit([&] { return rate_regression(s, RateAxis::kJoint); });
  const auto var_n1 = variance_fit(RateAxis::kN1);
  const auto var_n2 = variance_fit(RateAxis::kN2);

  json& meta = result.surface.metadata;
  meta["eval_step"] = config.eval_step;
  meta["replications"] = config.replications;
  meta["oracle_boundary_mass"] = oracle.boundary_mass;
  meta["error_slope_n1"] = fit_json(fit_n1);
  meta["error_slope_n2"] = fit_json(fit_n2);
  meta["error_slope_joint"] = fit_json(fit_joint);
  meta["variance_slope_n1"] = fit_json(var_n1);
  meta["variance_slope_n2"] = fit_json(var_n2);
  // Positive when variance falls faster with N1 than with N2.
  meta["variance_asymmetry"] = (var_n1 && var_n2) ? json(var_n2->slope - var_n1->slope) : json(nullptr);
  meta["battery"] = json::array();
  for (std::size_t k = 0; k < result.battery.size(); ++k) {
    const TestFunction& f = result.battery[k];
    meta["battery"].push_back({{"name", f.name},
                               {"location", f.location},
                               {"scale", f.scale},
                               {"oracle", result.oracle[static_cast<Eigen::Index>(k)]}});
  }
  meta["failed_cells"] = json::array();
  for (const SweepCell& c : result.cells) {
    if (c.failure) meta["failed_cells"].push_back({{"N1", c.n1}, {"N2", c.n2}, {"error", *c.failure}});
  }

  if (config.outputs.count("error-surface")) {
    const double wall = seconds_since(start);
    const auto base = resolve_output(config.outputs.at("error-surface"));
    json m = sidecar(config, "error-surface", wall);
    m["surface"] = meta;
    write_artifact(base, m, [&](std::ostream& os) { write_surface_csv(os, result, false); });
    m["artifact"] = "variance-surface";
    write_artifact(with_suffix(base, "_variance"), m, [&](std::ostream& os) { write_surface_csv(os, result, true); });
    m["artifact"] = "surface-replications";
    write_artifact(with_suffix(base, "_replications"), m,
                   [&](std::ostream& os) { write_sweep_replications_csv(os, result); });
  }
  return result;
}

json seed_report(const RunConfig& config) {
  const RandomStream root(config.seed);
  const auto hex = [](std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
  };
  json streams = json::array();
  for (int r = 0; r < config.replications; ++r) {
    const auto ur = static_cast<std::uint64_t>(r);
    streams.push_back({{"replication", r},
                       {"truth", hex(root.derive(kTruthKey, ur).stream_id())},
                       {"filter", hex(root.derive(kFilterKey, ur).stream_id())},
                       {"ikf_partner", hex(root.derive(kPartnerKey, ur).stream_id())}});
  }
  return {{"schema_version", kSchemaVersion},
          {"seed", config.seed},
          {"config_hash", config_hash(config)},
          {"derivation",
           {{"truth", "RandomStream(seed).derive(1, replication)"},
            {"filter", "RandomStream(seed).derive(2, replication)"},
            {"ikf_partner", "RandomStream(seed).derive(3, replication)"},
            {"sweep_trajectory", "RandomStream(seed).derive(1, 0)"}}},
          {"streams", streams}};
}

// ------------------------------------------------------------------ writers

void write_estimates_csv(std::ostream& os, const RunRecord& record) {
  std::vector<std::string> header = {"replication", "step"};
  for (const auto& s : record.signals) header.push_back("pred_" + s);
  for (const auto& s : record.signals) header.push_back("filt_" + s);
  header.insert(header.end(), {"log_island_potential_mean", "log_island_potential_min", "log_island_potential_max",
                               "ess_island", "ess_inner_mean"});
  io::write_csv_row(os, header);
  for (const EstimateRow& row : record.rows) {
    std::vector<std::string> f = {std::to_string(row.replication), std::to_string(row.step)};
    for (Eigen::Index k = 0; k < row.predicted.size(); ++k) f.push_back(fmt(row.predicted[k]));
    for (Eigen::Index k = 0; k < row.filtered.size(); ++k) f.push_back(fmt(row.filtered[k]));
    for (double v : {row.log_island_mean, row.log_island_min, row.log_island_max, row.ess_island, row.ess_inner}) {
      f.push_back(fmt(v));
    }
    io::write_csv_row(os, f);
  }
}

void write_rmse_csv(std::ostream& os, const RmseTable& table) {
  io::write_csv_row(os, {"signal", "lipf_rmse", "ikf_rmse", "mean_difference", "ci_low", "ci_high", "replications"});
  for (const RmseRow& r : table.rows) {
    io::write_csv_row(os, {r.signal, fmt(r.lipf_rmse), fmt(r.ikf_rmse), fmt(r.mean_difference), fmt(r.ci_low),
                           fmt(r.ci_high), std::to_string(table.replications)});
  }
}

void write_psd_csv(std::ostream& os, const RunRecord& record) {
  std::vector<std::vector<double>> filt(record.signals.size());
  for (const EstimateRow& row : record.rows) {
    if (row.replication != 0) continue;
    for (std::size_t k = 0; k < filt.size(); ++k) filt[k].push_back(row.filtered[static_cast<Eigen::Index>(k)]);
  }
  if (filt.empty() || filt.front().size() < 16) throw ArgumentError("psd output needs at least 16 steps");
  const std::size_t steps = filt.front().size();
  std::vector<std::string> header = {"frequency"};
  std::vector<Periodogram> columns;
  for (std::size_t k = 0; k < filt.size(); ++k) {
    header.push_back("filt_" + record.signals[k]);
    columns.push_back(periodogram(filt[k]));
  }
  bool truth_known = record.truth_path.size() >= steps;
  for (std::size_t n = 0; n < steps && truth_known; ++n) truth_known = record.truth_path[n].allFinite();
  if (truth_known) {
    for (std::size_t k = 0; k < record.signals.size(); ++k) {
      std::vector<double> series(steps);
      for (std::size_t n = 0; n < steps; ++n) series[n] = record.truth_path[n][static_cast<Eigen::Index>(k)];
      header.push_back("truth_" + record.signals[k]);
      columns.push_back(periodogram(series));
    }
  }
  io::write_csv_row(os, header);
  const Eigen::Index bins = columns.front().frequency.size();
  for (Eigen::Index b = 0; b < bins; ++b) {
    std::vector<std::string> f = {fmt(columns.front().frequency[b])};
    for (const Periodogram& p : columns) f.push_back(fmt(p.power[b]));
    io::write_csv_row(os, f);
  }
}

void write_surface_csv(std::ostream& os, const SweepResult& result, bool variance) {
  if (variance) {
    io::write_csv_row(os, {"N1", "N2", "replications", "variance", "variance_theta", "variance_x", "status"});
  } else {
    io::write_csv_row(os, {"N1", "N2", "replications", "l2_error", "l2_error_theta", "l2_error_x", "status"});
  }
  std::size_t ok = 0;
  for (const SweepCell& c : result.cells) {
    std::vector<std::string> f = {std::to_string(c.n1), std::to_string(c.n2)};
    if (c.failure) {
      f.insert(f.end(), {"0", "nan", "nan", "nan", "failed: " + *c.failure});
    } else {
      const ErrorCell& e = result.surface.cells[ok++];
      f.push_back(std::to_string(e.replications));
      if (variance) {
        f.insert(f.end(), {fmt(e.variance), fmt(e.variance_theta), fmt(e.variance_x)});
      } else {
        f.insert(f.end(), {fmt(e.l2_error), fmt(e.l2_error_theta), fmt(e.l2_error_x)});
      }
      f.push_back("ok");
    }
    io::write_csv_row(os, f);
  }
}

void write_sweep_replications_csv(std::ostream& os, const SweepResult& result) {
  std::vector<std::string> header = {"N1", "N2", "replication"};
  for (const TestFunction& f : result.battery) header.push_back(f.name);
  io::write_csv_row(os, header);
  std::vector<std::string> oracle_row = {"oracle", "oracle", ""};
  for (Eigen::Index k = 0; k < result.oracle.size(); ++k) oracle_row.push_back(fmt(result.oracle[k]));
  io::write_csv_row(os, oracle_row);
  for (const SweepCell& c : result.cells) {
    for (std::size_t r = 0; r < c.estimates.size(); ++r) {
      std::vector<std::string> f = {std::to_string(c.n1), std::to_string(c.n2), std::to_string(r)};
      for (Eigen::Index k = 0; k < c.estimates[r].size(); ++k) f.push_back(fmt(c.estimates[r][k]));
      io::write_csv_row(os, f);
    }
  }
}

}  // namespace islandsmc::harness
