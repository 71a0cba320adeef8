#include "islandsmc/fk_core.hpp"

#include <cmath>
#include <limits>

#include "islandsmc/errors.hpp"

namespace islandsmc {

WeightedEnsemble::WeightedEnsemble(Matrix pts) : points(std::move(pts)) {
  if (points.cols() < 1) throw ArgumentError("ensemble must hold at least one point");
  weights = Vector::Constant(points.cols(), 1.0 / static_cast<double>(points.cols()));
}

void WeightedEnsemble::normalize() {
  const double total = weights.sum();
  if (!(total > 0.0)) throw ExtinctionError(ExtinctionLevel::kEnsemble, -1);
  weights /= total;
}

Vector evaluate_log_potentials(const FkModel& model, int n, const Vector& theta, const Matrix& points,
                               const Vector& obs) {
  if (points.cols() < 1) throw ArgumentError("cannot evaluate potentials on an empty ensemble");
  if (obs.size() != model.obs_dim) throw ArgumentError("observation has wrong dimension");
  Vector out(points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double lg = model.log_potential(n, theta, points.col(j), obs);
    if (std::isnan(lg) || lg == std::numeric_limits<double>::infinity()) {
      throw EvaluationError("non-finite potential", j);
    }
    out[j] = lg;
  }
  return out;
}

Vector evaluate_potentials(const FkModel& model, int n, const Vector& theta, const WeightedEnsemble& ensemble,
                           const Vector& obs) {
  return evaluate_log_potentials(model, n, theta, ensemble.points, obs).unaryExpr([](double v) { return std::exp(v); });
}

Vector boltzmann_gibbs(const Vector& weights, long step, ExtinctionLevel level) {
  if (weights.size() == 0) throw ArgumentError("empty weight vector");
  double total = 0.0;
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    const double w = weights[j];
    if (std::isnan(w) || std::isinf(w)) throw EvaluationError("non-finite weight", j);
    if (w < 0.0) throw ArgumentError("negative weight at index " + std::to_string(j));
    total += w;
  }
  if (!(total > 0.0)) throw ExtinctionError(level, step);
  return weights / total;
}

Vector boltzmann_gibbs_log(const Vector& log_weights, long step, ExtinctionLevel level) {
  if (log_weights.size() == 0) throw ArgumentError("empty weight vector");
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < log_weights.size(); ++j) {
    const double lw = log_weights[j];
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity()) {
      throw EvaluationError("non-finite log weight", j);
    }
    top = std::max(top, lw);
  }
  if (top == -std::numeric_limits<double>::infinity()) throw ExtinctionError(level, step);
  Vector w = (log_weights.array() - top).unaryExpr([](double v) { return std::exp(v); }).matrix();
  return w / w.sum();
}

Matrix mutate(const FkModel& model, int n, const Vector& theta_next, const Matrix& points, const RandomStream& rng) {
  Matrix out(points.rows(), points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    RandomStream stream = rng.derive(static_cast<std::uint64_t>(j));
    model.state_kernel(n, theta_next, points.col(j), out.col(j), stream);
    if (!out.col(j).allFinite()) throw EvaluationError("state kernel returned a non-finite state", j);
  }
  return out;
}

Vector ensemble_mean(const WeightedEnsemble& ensemble, const std::function<Vector(ConstVectorRef)>& f) {
  Vector acc;
  for (Eigen::Index j = 0; j < ensemble.size(); ++j) {
    Vector v = f(ensemble.points.col(j));
    if (!v.allFinite()) throw EvaluationError("non-finite test function value", j);
    if (j == 0) {
      acc = ensemble.weights[j] * v;
    } else {
      acc += ensemble.weights[j] * v;
    }
  }
  return acc;
}

double effective_sample_size(const Vector& weights) {
  const double s = weights.sum();
  const double s2 = weights.squaredNorm();
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

}  // namespace islandsmc
