#pragma once

#include <Eigen/Dense>

#include <functional>

#include "islandsmc/errors.hpp"
#include "islandsmc/random_stream.hpp"

namespace islandsmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;

/// A Feynman-Kac model in a random environment: an environment (parameter)
/// chain, a state chain driven by it, and potentials coupling them to the
/// observations.
///
/// Time indices follow the filtering convention: param_kernel(n, theta_{n-1})
/// draws theta_n, and state_kernel(n, theta_n, x_{n-1}) draws x_n. Potentials
/// are supplied in log form; an additive constant may be dropped since only
/// ratios matter.
struct FkModel {
  int state_dim = 1;
  int param_dim = 1;
  int obs_dim = 1;

  std::function<Vector(RandomStream&)> init_param;
  std::function<void(const Vector& theta, VectorRef x, RandomStream&)> init_state;
  std::function<Vector(int n, const Vector& theta_prev, RandomStream&)> param_kernel;
  std::function<void(int n, const Vector& theta, ConstVectorRef x_prev, VectorRef x_next, RandomStream&)>
      state_kernel;
  /// log G_n(theta, x) given y_n; -infinity encodes a zero potential.
  std::function<double(int n, const Vector& theta, ConstVectorRef x, const Vector& obs)> log_potential;
};

/// Population of state points (one per column) with weights summing to one and
/// a running log normalizing constant.
struct WeightedEnsemble {
  Matrix points;
  Vector weights;
  double log_norm = 0.0;

  WeightedEnsemble() = default;
  /// Uniformly weighted ensemble over the columns of `pts`.
  explicit WeightedEnsemble(Matrix pts);

  Eigen::Index size() const { return points.cols(); }
  Eigen::Index dim() const { return points.rows(); }

  /// Rescales weights to sum to one. Throws ExtinctionError if they sum to zero.
  void normalize();
};

/// log G_n(theta, xi^j) for every point of the ensemble, in column order.
/// Throws EvaluationError naming the first NaN or +inf entry.
Vector evaluate_log_potentials(const FkModel& model, int n, const Vector& theta, const Matrix& points,
                               const Vector& obs);

/// exp of evaluate_log_potentials; the model's dropped constants stay dropped.
Vector evaluate_potentials(const FkModel& model, int n, const Vector& theta, const WeightedEnsemble& ensemble,
                           const Vector& obs);

/// Boltzmann-Gibbs selection probabilities w_j / sum_k w_k.
///
/// Throws ArgumentError on negative entries, EvaluationError on NaN or inf, and
/// ExtinctionError (tagged with `step` and `level`) when every weight is zero.
Vector boltzmann_gibbs(const Vector& weights, long step = -1,
                       ExtinctionLevel level = ExtinctionLevel::kEnsemble);

/// Same as boltzmann_gibbs applied to exp(log_weights), computed after
/// subtracting the maximum so Gaussian likelihoods do not underflow.
Vector boltzmann_gibbs_log(const Vector& log_weights, long step = -1,
                           ExtinctionLevel level = ExtinctionLevel::kEnsemble);

/// Draws column j of the result from M^X_{theta_next, n}(points.col(j), .) using
/// the substream rng.derive(j), so columns are independent of evaluation order.
Matrix mutate(const FkModel& model, int n, const Vector& theta_next, const Matrix& points,
              const RandomStream& rng);

/// sum_j w_j f(xi^j). The ensemble must be normalized.
Vector ensemble_mean(const WeightedEnsemble& ensemble, const std::function<Vector(ConstVectorRef)>& f);

/// Effective sample size (sum w)^2 / sum w^2 of an unnormalized weight vector.
double effective_sample_size(const Vector& weights);

}  // namespace islandsmc
