#pragma once

#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "islandsmc/fk_core.hpp"
#include "islandsmc/kalman.hpp"

namespace islandsmc {

/// A benchmark problem: the Feynman-Kac description used by the filters, an
/// observation sampler for simulation and, when the state equation is linear
/// given theta, the Gaussian description used by the interacting Kalman filter.
struct StateSpaceModel {
  std::string name;
  FkModel fk;
  std::function<Vector(int n, const Vector& theta, ConstVectorRef x, RandomStream&)> observe;
  std::optional<LinearGaussianSpec> linear;
  nlohmann::json params;
  int horizon = 1;
};

/// Nonlinear growth benchmark with a periodically forced environment:
///
///   theta_{n+1} = 8 cos(1.2 (n+1)) + N(0, sigma_theta2)
///   x_{n+1}     = x_n / 2 + 25 x_n / (1 + x_n^2) + theta_{n+1} + N(0, sigma_x2)
///   y_n         = x_n + N(0, sigma_y2)
///
/// theta_0 ~ N(0, sigma_theta2), x_0 ~ N(0, sigma_x2). An infinite sigma_y2
/// gives a flat potential.
struct GrowthModelParams {
  double sigma_theta2 = 1.0;
  double sigma_x2 = 1.0;
  double sigma_y2 = 10.0;
  int horizon = 1000;
};

/// Mobile pushed by an unobserved force theta:
///
///   theta_{n+1} = (cos theta^1_n, sin theta^2_n) + N(0, sigma_theta)
///   X_{n+1}     = X_n + V_n (cos alpha, sin alpha) dt + theta_{n+1} dt + N(0, sigma_x)
///   V_{n+1}     = V_n + jump,   jump ~ N(0, jump_var) with prob 1 - exp(-poisson_rate)
///   y_n         = (X^1_n, X^2_n, V_n) + N(0, sigma_y)
///
/// State vector is (X^1, X^2, V).
struct MobileModelParams {
  double dt = 15.0;
  double alpha = std::numbers::pi / 2.0;
  Matrix sigma_theta = Matrix::Identity(2, 2);
  Matrix sigma_x = 1.5 * Matrix::Identity(2, 2);
  Matrix sigma_y = Eigen::Vector3d(0.5, 0.5, 1.0).asDiagonal();
  double poisson_rate = 0.03;
  double jump_var = 3.0;
  Vector m_x0 = Vector::Zero(2);
  Matrix sigma_x0 = 1.5 * Matrix::Identity(2, 2);
  double m_v0 = 1.0;
  double sigma_v0 = 1.0;
  Vector m_theta0 = Vector::Zero(2);
  Matrix sigma_theta0 = Matrix::Identity(2, 2);
  int horizon = 500;

  double jump_probability() const { return 1.0 - std::exp(-poisson_rate); }
};

/// Scalar conditionally linear-Gaussian fixture:
///
///   theta_{n+1} = rho theta_n + N(0, q_theta)
///   x_{n+1}     = a x_n + theta_{n+1} + N(0, q_x)
///   y_n         = x_n + N(0, r)
struct LinearModelParams {
  double a = 0.9;
  double rho = 1.0;
  double q_theta = 0.0;
  double q_x = 1.0;
  double r = 1.0;
  double theta0_mean = 0.0;
  double theta0_var = 1.0;
  double x0_mean = 0.0;
  double x0_var = 1.0;
  int horizon = 200;
};

StateSpaceModel growth_model(const GrowthModelParams& params);
StateSpaceModel mobile_model(const MobileModelParams& params);
StateSpaceModel linear_model(const LinearModelParams& params);

/// Parameter overrides from JSON; unknown keys raise ArgumentError.
GrowthModelParams growth_params_from_json(const nlohmann::json& j);
MobileModelParams mobile_params_from_json(const nlohmann::json& j);
LinearModelParams linear_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GrowthModelParams& p);
nlohmann::json to_json(const MobileModelParams& p);
nlohmann::json to_json(const LinearModelParams& p);

/// Deterministic drift 8 cos(1.2 n) of the growth environment at time n.
inline double growth_param_drift(int n) { return 8.0 * std::cos(1.2 * n); }
inline double growth_state_drift(double x) { return 0.5 * x + 25.0 * x / (1.0 + x * x); }

/// |theta| and atan2(theta^2, theta^1).
inline double force_strength(const Vector& theta) { return theta.norm(); }
inline double force_orientation(const Vector& theta) { return std::atan2(theta[1], theta[0]); }

/// d X_{n+1} / d (X^1_n, X^2_n, V_n, theta^1_{n+1}, theta^2_{n+1}) for a fixed noise draw.
Matrix mobile_position_jacobian(const MobileModelParams& params);

/// Ground truth path: theta, x, y for steps 0..horizon.
struct Trajectory {
  std::vector<Vector> theta;
  std::vector<Vector> x;
  std::vector<Vector> y;
  std::uint64_t seed = 0;
  std::string param_hash;

  int horizon() const { return static_cast<int>(x.size()) - 1; }
};

/// Joint draw of (theta_n, x_n, y_n), n = 0..horizon. Step n draws from
/// rng.derive(n) in the order theta, x, y.
Trajectory simulate(const StateSpaceModel& model, int horizon, const RandomStream& rng);

/// CSV with a leading "# seed=<seed>,param_hash=<hash>" line, then a header
/// step,theta_0..,x_0..,y_0.. and one row per step.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& is);

/// Git-style content hash of the model's parameter JSON.
std::string param_hash(const StateSpaceModel& model);

}  // namespace islandsmc
