#include "islandsmc/lipf.hpp"

#include <cmath>
#include <limits>

#include "islandsmc/errors.hpp"
#include "islandsmc/parallel.hpp"
#include "islandsmc/resampling.hpp"

namespace islandsmc {

namespace {

constexpr std::uint64_t kInitKey = ~0ULL;

double log_mean_exp(const Vector& v) {
  const double top = v.maxCoeff();
  if (top == -std::numeric_limits<double>::infinity()) return top;
  return top + std::log((v.array() - top).exp().mean());
}

const IslandWeights& require_weights(const IslandSystem& system) {
  if (!system.weights || system.weights->step != system.step) {
    throw ArgumentError("island system has no potentials for the current step");
  }
  return *system.weights;
}

// Normalized island weights from the cached log island potentials.
Vector island_probs(const IslandWeights& w) { return boltzmann_gibbs_log(w.log_island, w.step, ExtinctionLevel::kIsland); }

}  // namespace

double island_log_potential(const FkModel& model, int n, const Island& island, const Vector& obs) {
  return log_mean_exp(evaluate_log_potentials(model, n, island.theta, island.inner.points, obs));
}

IslandSystem lipf_init(const FkModel& model, int n_islands, int n_inner, const RandomStream& rng) {
  if (n_islands < 1 || n_inner < 1) throw ArgumentError("N1 and N2 must be positive");
  IslandSystem system;
  system.islands.resize(static_cast<std::size_t>(n_islands));
  for (int i = 0; i < n_islands; ++i) {
    RandomStream stream = rng.derive(kInitKey, static_cast<std::uint64_t>(i));
    Island& island = system.islands[static_cast<std::size_t>(i)];
    island.theta = model.init_param(stream);
    if (!island.theta.allFinite()) throw EvaluationError("initial parameter is not finite", i);
    Matrix points(model.state_dim, n_inner);
    for (int j = 0; j < n_inner; ++j) {
      RandomStream particle = stream.derive(static_cast<std::uint64_t>(j));
      model.init_state(island.theta, points.col(j), particle);
    }
    island.inner = WeightedEnsemble(std::move(points));
  }
  return system;
}

void lipf_weigh(IslandSystem& system, const FkModel& model, const Vector& obs, int workers) {
  IslandWeights w;
  w.step = system.step;
  w.log_inner.resize(system.islands.size());
  w.log_island.resize(static_cast<Eigen::Index>(system.islands.size()));
  parallel_for(system.islands.size(), workers, [&](std::size_t i) {
    const Island& island = system.islands[i];
    w.log_inner[i] = evaluate_log_potentials(model, system.step, island.theta, island.inner.points, obs);
    w.log_island[static_cast<Eigen::Index>(i)] = log_mean_exp(w.log_inner[i]);
  });
  system.weights = std::move(w);
}

IslandSystem lipf_step(IslandSystem system, const FkModel& model, const Vector& obs, const RandomStream& rng,
                       int workers) {
  if (system.islands.empty()) throw ArgumentError("island system is empty");
  const int n = system.step;
  if (!system.weights || system.weights->step != n) lipf_weigh(system, model, obs, workers);
  const IslandWeights& w = *system.weights;

  RandomStream select_stream = rng.derive(static_cast<std::uint64_t>(n), 0);
  const auto ancestors = multinomial_resample(island_probs(w), system.islands.size(), select_stream).indices;

  const Eigen::Index n_inner = system.n_inner();
  IslandSystem next;
  next.step = n + 1;
  next.islands.resize(system.islands.size());
  parallel_for(system.islands.size(), workers, [&](std::size_t i) {
    const auto a = static_cast<std::size_t>(ancestors[i]);
    const Island& parent = system.islands[a];
    const RandomStream slot = rng.derive(static_cast<std::uint64_t>(n), 1, i);

    RandomStream inner_stream = slot.derive(0);
    const Vector inner_probs = boltzmann_gibbs_log(w.log_inner[a], n, ExtinctionLevel::kInner);
    const auto picks = multinomial_resample(inner_probs, static_cast<std::size_t>(n_inner), inner_stream).indices;
    Matrix selected(parent.inner.dim(), n_inner);
    for (Eigen::Index j = 0; j < n_inner; ++j) selected.col(j) = parent.inner.points.col(picks[static_cast<std::size_t>(j)]);

    RandomStream param_stream = slot.derive(1);
    Island& child = next.islands[i];
    child.theta = model.param_kernel(n + 1, parent.theta, param_stream);
    if (!child.theta.allFinite()) throw EvaluationError("parameter kernel returned a non-finite value", static_cast<std::ptrdiff_t>(i));
    child.inner = WeightedEnsemble(mutate(model, n + 1, child.theta, selected, slot.derive(2)));
    child.inner.log_norm = parent.inner.log_norm + w.log_island[static_cast<Eigen::Index>(a)];
  });
  return next;
}

double estimate(const IslandSystem& system,
                const std::function<double(const Vector&, const WeightedEnsemble&)>& fbar) {
  if (system.islands.empty()) throw ArgumentError("island system is empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < system.islands.size(); ++i) {
    const double v = fbar(system.islands[i].theta, system.islands[i].inner);
    if (!std::isfinite(v)) throw EvaluationError("non-finite island test function", static_cast<std::ptrdiff_t>(i));
    acc += v;
  }
  return acc / static_cast<double>(system.islands.size());
}

double pooled_expectation(const IslandSystem& system, const std::function<double(const Vector&, ConstVectorRef)>& f,
                          bool filtered) {
  if (system.islands.empty()) throw ArgumentError("island system is empty");
  if (!filtered) {
    double acc = 0.0;
    for (const Island& island : system.islands) {
      double inner = 0.0;
      for (Eigen::Index j = 0; j < island.inner.size(); ++j) inner += f(island.theta, island.inner.points.col(j));
      acc += inner / static_cast<double>(island.inner.size());
    }
    return acc / static_cast<double>(system.islands.size());
  }
  const IslandWeights& w = require_weights(system);
  // Particle (i, j) weighs exp(log G_ij - M) with M the global maximum.
  double top = -std::numeric_limits<double>::infinity();
  for (const Vector& l : w.log_inner) top = std::max(top, l.maxCoeff());
  if (top == -std::numeric_limits<double>::infinity()) throw ExtinctionError(ExtinctionLevel::kIsland, w.step);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < system.islands.size(); ++i) {
    const Island& island = system.islands[i];
    for (Eigen::Index j = 0; j < island.inner.size(); ++j) {
      const double g = std::exp(w.log_inner[i][j] - top);
      if (g == 0.0) continue;
      num += g * f(island.theta, island.inner.points.col(j));
      den += g;
    }
  }
  return num / den;
}

MarginalEstimates marginal_estimates(const IslandSystem& system, bool filtered) {
  if (system.islands.empty()) throw ArgumentError("island system is empty");
  const auto n1 = system.islands.size();
  const Eigen::Index pd = system.islands.front().theta.size();
  const Eigen::Index sd = system.islands.front().inner.dim();

  // Island weights and per-island inner weights, uniform for the predictor.
  Vector island_w = Vector::Constant(static_cast<Eigen::Index>(n1), 1.0 / static_cast<double>(n1));
  std::vector<Vector> inner_w(n1);
  if (filtered) {
    const IslandWeights& w = require_weights(system);
    island_w = island_probs(w);
    for (std::size_t i = 0; i < n1; ++i) inner_w[i] = boltzmann_gibbs_log(w.log_inner[i], w.step, ExtinctionLevel::kInner);
  } else {
    for (std::size_t i = 0; i < n1; ++i) inner_w[i] = system.islands[i].inner.weights;
  }

  MarginalEstimates out;
  out.param_mean = Vector::Zero(pd);
  out.state_mean = Vector::Zero(sd);
  for (std::size_t i = 0; i < n1; ++i) {
    const Island& island = system.islands[i];
    const double wi = island_w[static_cast<Eigen::Index>(i)];
    out.param_mean += wi * island.theta;
    out.state_mean += wi * (island.inner.points * inner_w[i]);
  }
  out.param_var = Vector::Zero(pd);
  out.state_var = Vector::Zero(sd);
  for (std::size_t i = 0; i < n1; ++i) {
    const Island& island = system.islands[i];
    const double wi = island_w[static_cast<Eigen::Index>(i)];
    out.param_var += wi * (island.theta - out.param_mean).array().square().matrix();
    const Matrix centered = island.inner.points.colwise() - out.state_mean;
    out.state_var += wi * (centered.array().square().matrix() * inner_w[i]);
  }
  return out;
}

EssDiagnostics ess_diagnostics(const IslandSystem& system) {
  const IslandWeights& w = require_weights(system);
  EssDiagnostics out;
  const auto ess_log = [](const Vector& l) {
    const double top = l.maxCoeff();
    if (top == -std::numeric_limits<double>::infinity()) return 0.0;
    return effective_sample_size((l.array() - top).exp().matrix());
  };
  out.island = ess_log(w.log_island);
  double acc = 0.0;
  for (const Vector& l : w.log_inner) acc += ess_log(l);
  out.inner_mean = acc / static_cast<double>(w.log_inner.size());
  return out;
}

}  // namespace islandsmc
