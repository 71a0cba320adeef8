#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "islandsmc/kalman.hpp"
#include "islandsmc/lipf.hpp"
#include "islandsmc/models.hpp"

namespace islandsmc {

// ------------------------------------------------------------------ grid oracle

enum class Coord { kTheta, kX };

struct GridFilterConfig {
  int n_x = 400;
  int max_theta_points = 400;
  double width_sd = 6.0;
  /// Grids are widened while the predictor puts more than this on the boundary band.
  double expand_threshold = 1e-6;
  /// After max_expansions widenings, boundary mass above this is an error.
  double fail_threshold = 1e-4;
  int max_expansions = 6;
};

/// Deterministic discretized Bayes recursion for the growth model on a joint
/// (theta, x) lattice. Both axes share the spacing `spacing` so that x - theta
/// stays on a lattice during prediction. The density is the predictor at
/// `step` (conditioned on y_0..y_{step-1}).
struct GridFilter {
  Vector theta_grid;
  Vector x_grid;
  double spacing = 1.0;
  /// rows index theta, columns index x; entries sum to one.
  Matrix density;
  int step = 0;
  /// Mass in the outer band of the predictor grid.
  double boundary_mass = 0.0;

  Vector theta_marginal() const { return density.rowwise().sum(); }
  Vector x_marginal() const { return density.colwise().sum().transpose(); }

  double mean(Coord c) const;
  double variance(Coord c) const;
  /// Expectation of a function of one coordinate, evaluated at grid nodes.
  double expectation(Coord c, const std::function<double(double)>& f) const;
  /// P(c <= q) with each node's mass spread uniformly over its cell.
  double cdf(Coord c, double q) const;
  /// Inverse of cdf().
  double quantile(Coord c, double p) const;
};

/// Predictor at step 0: product of the initial theta and x laws.
GridFilter grid_filter_init(const GrowthModelParams& params, const GridFilterConfig& config = {});

/// Multiplies by the likelihood of obs (flat when sigma_y2 is infinite) and
/// renormalizes; the step index is unchanged.
GridFilter grid_filter_correct(const GridFilter& gf, const GrowthModelParams& params, double obs);

/// Correction with y_n followed by the exact prediction to step n+1 on a fresh
/// grid placed at +-width_sd predictive standard deviations. Throws
/// GridTooSmallError if the boundary mass stays above fail_threshold.
GridFilter grid_filter_step(const GridFilter& gf, const GrowthModelParams& params, double obs,
                            const GridFilterConfig& config = {});

/// Predictor at `step` given y_0..y_{step-1} of `traj`.
GridFilter grid_oracle(const GrowthModelParams& params, const Trajectory& traj, int step,
                       const GridFilterConfig& config = {});

// ------------------------------------------------------------------ test battery

/// Bounded (or normalized) test function of one coordinate.
struct TestFunction {
  enum class Kind { kIndicator, kSquash, kStandardized, kStandardizedSquare };
  std::string name;
  Coord coord = Coord::kX;
  Kind kind = Kind::kIndicator;
  double location = 0.0;  ///< decile for indicators, mean otherwise
  double scale = 1.0;

  double operator()(double v) const;
};

/// Frozen battery version written to every artifact.
inline constexpr const char* kBatteryVersion = "v1";

/// Per coordinate: indicators at the nine oracle deciles, v/(1+|v|) and the
/// first two standardized moments (oracle mean and sd).
std::vector<TestFunction> make_battery(const GridFilter& oracle);

/// Oracle value of every battery function (indicators via cdf()).
Vector oracle_values(const std::vector<TestFunction>& battery, const GridFilter& oracle);

/// Battery expectations under the island system's pooled predictor measure.
Vector battery_estimates(const std::vector<TestFunction>& battery, const IslandSystem& system);

/// sqrt(mean over functions and replications of (estimate - oracle)^2).
/// Each element of `estimates` is one replication. `mask` (optional) restricts
/// the battery rows that enter the mean.
double l2_error(const std::vector<Vector>& estimates, const Vector& oracle, const std::vector<bool>& mask = {});

// ------------------------------------------------------------------ surfaces

struct ErrorCell {
  int n1 = 0;
  int n2 = 0;
  int replications = 0;
  double l2_error = 0.0;
  double l2_error_theta = 0.0;
  double l2_error_x = 0.0;
  /// Mean over battery functions of the across-replication sample variance.
  double variance = 0.0;
  double variance_theta = 0.0;
  double variance_x = 0.0;
};

struct ErrorSurface {
  std::vector<ErrorCell> cells;
  nlohmann::json metadata;
};

ErrorCell aggregate_cell(int n1, int n2, const std::vector<Vector>& estimates, const Vector& oracle,
                         const std::vector<TestFunction>& battery);

/// Runs LIPF on the observations of `traj` up to `eval_step` and returns the
/// battery estimates of the predictor at that step.
Vector lipf_battery_run(const StateSpaceModel& model, const Trajectory& traj, int n1, int n2, int eval_step,
                        const std::vector<TestFunction>& battery, const RandomStream& rng, int workers = 1);

enum class RateAxis { kN1, kN2, kJoint };

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int points = 0;
};

/// OLS of log(error) on log(n) with a 95% Student-t interval for the slope.
/// Needs >= 4 points spanning >= 16x; throws RegressionError on degenerate data.
RateFit rate_regression(const std::vector<double>& n, const std::vector<double>& error);

/// Axis N1 uses the largest group of cells sharing N2 (and vice versa); joint
/// regresses on N1*N2 over every cell.
RateFit rate_regression(const ErrorSurface& surface, RateAxis axis);

// ------------------------------------------------------------------ signals

/// Point estimates feeding the per-signal outputs.
struct PosteriorSummary {
  Vector param_mean;
  Vector state_mean;
  double mean_force_strength = 0.0;
};

PosteriorSummary summarize(const IslandSystem& system, bool filtered);
/// Filtered summaries need the observation to correct each island.
PosteriorSummary summarize(const KalmanIslandSystem& system, const LinearGaussianSpec& spec, const Vector& obs,
                           bool filtered);

/// Names of the reported signals for a model (theta_k, x_k, plus speed,
/// force_strength and force_orientation for the mobile model).
std::vector<std::string> signal_names(const StateSpaceModel& model);
Vector signal_values(const StateSpaceModel& model, const PosteriorSummary& summary);
Vector truth_signals(const StateSpaceModel& model, const Vector& theta, const Vector& x);

// ------------------------------------------------------------------ RMSE

struct RmseRow {
  std::string signal;
  double lipf_rmse = 0.0;
  double ikf_rmse = 0.0;
  double mean_difference = 0.0;  ///< lipf - ikf
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct RmseTable {
  std::vector<RmseRow> rows;
  int replications = 0;
  /// Per replication RMSE, [replication][signal].
  std::vector<std::vector<double>> lipf_per_replication;
  std::vector<std::vector<double>> ikf_per_replication;
};

struct RmseConfig {
  int lipf_n1 = 100;
  int lipf_n2 = 300;
  int ikf_n1 = 100;
  int horizon = 500;
  int replications = 20;
  int bootstrap_resamples = 10000;
  int workers = 1;
};

/// Paired comparison of filtered estimates on shared simulated observations:
/// speed, force strength and force orientation for the mobile model.
RmseTable rmse_comparison(const StateSpaceModel& model, const RmseConfig& config, const RandomStream& rng);

/// Per-signal filtered estimate paths of both filters on one trajectory.
std::vector<Vector> lipf_filtered_signals(const StateSpaceModel& model, const Trajectory& traj, int n1, int n2,
                                          const RandomStream& rng, int workers = 1);
std::vector<Vector> ikf_filtered_signals(const StateSpaceModel& model, const Trajectory& traj, int n1,
                                         const RandomStream& rng, int workers = 1);

/// Percentile bootstrap 95% interval of the mean.
std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values, int resamples, RandomStream rng);

// ------------------------------------------------------------------ spectrum

struct Periodogram {
  Vector frequency;  ///< cycles per step, 0 .. 1/2
  Vector power;
  std::size_t length = 0;

  /// Sum over all Fourier frequencies, mirrored bins included; equals
  /// sum((x - mean)^2).
  double total() const;
};

/// Periodogram |FFT_k|^2 / length of the mean-removed signal at the Fourier
/// frequencies k / length, k = 0 .. length/2. No windowing.
Periodogram periodogram(const std::vector<double>& signal);

}  // namespace islandsmc
