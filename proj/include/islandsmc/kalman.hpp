#pragma once

#include <functional>
#include <vector>

#include "islandsmc/fk_core.hpp"

namespace islandsmc {

/// Gaussian measure N(mean, cov).
struct GaussianBelief {
  Vector mean;
  Matrix cov;
};

/// Coefficients of the conditionally linear-Gaussian system at one (theta, n):
///
///   X_n = A X_{n-1} + a + B eps^X,   eps^X ~ N(0, sigma_x)
///   Y_n = C X_n     + c + D eps^Y,   eps^Y ~ N(0, sigma_y)
struct LinearGaussianStep {
  Matrix A, B, C, D;
  Vector a, c;
  Matrix sigma_x, sigma_y;
};

/// Parameter-dependent linear-Gaussian system plus its initial law.
struct LinearGaussianSpec {
  int state_dim = 1;
  int obs_dim = 1;
  std::function<LinearGaussianStep(const Vector& theta, int n)> at;
  std::function<GaussianBelief(const Vector& theta0)> initial;
};

/// One island of the interacting Kalman filter: a parameter value and the exact
/// Gaussian predictor of the state given that parameter history.
struct KalmanIsland {
  Vector theta;
  GaussianBelief belief;
};

struct KalmanIslandSystem {
  std::vector<KalmanIsland> islands;
  int step = 0;
  /// log island potentials of the last weighting, valid when weighted_step == step.
  Vector log_potentials;
  int weighted_step = -1;
};

/// Correction with observation y: K = S_pred C^T (C S_pred C^T + D Sy D^T)^-1,
/// mean += K (y - C m - c), covariance by the Joseph form.
/// Throws NumericalError if the innovation covariance is singular or has
/// condition number >= 1e12.
GaussianBelief kalman_correct(const GaussianBelief& belief, const LinearGaussianStep& step, const Vector& obs);

/// Prediction m' = A m + a, S' = A S A^T + B Sx B^T.
GaussianBelief kalman_predict(const GaussianBelief& corrected, const LinearGaussianStep& step);

/// log of dN(C m + c, C S C^T + D Sy D^T) / dN(0, D Sy D^T) at obs, i.e. the
/// integral of the Gaussian likelihood ratio against the predictor.
double gaussian_island_log_potential(const KalmanIsland& island, const LinearGaussianStep& step, const Vector& obs);

inline double gaussian_island_potential(const KalmanIsland& island, const LinearGaussianStep& step,
                                        const Vector& obs) {
  return std::exp(gaussian_island_log_potential(island, step, obs));
}

/// Symmetrizes `cov` and clamps eigenvalues in [-1e-10, 0) to zero. Throws
/// NumericalError for eigenvalues below -1e-10.
Matrix enforce_psd(const Matrix& cov);

/// theta^i_0 from model.init_param, belief from spec.initial(theta^i_0).
KalmanIslandSystem ikf_init(const FkModel& model, const LinearGaussianSpec& spec, int n_islands,
                            const RandomStream& rng);

/// Caches the island log potentials for the current step and observation.
void ikf_weigh(KalmanIslandSystem& system, const LinearGaussianSpec& spec, const Vector& obs);

/// One iteration of the interacting Kalman filter: island selection on the
/// Gaussian potentials, correction with obs, parameter mutation by
/// model.param_kernel and prediction under the new parameter.
///
/// Streams: island selection uses rng.derive(step, 0); island slot i draws its
/// parameter from rng.derive(step, 1, i).
KalmanIslandSystem ikf_step(KalmanIslandSystem system, const LinearGaussianSpec& spec, const Vector& obs,
                            const FkModel& model, const RandomStream& rng, int workers = 1);

}  // namespace islandsmc
