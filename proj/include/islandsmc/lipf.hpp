#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "islandsmc/fk_core.hpp"

namespace islandsmc {

/// One island: a parameter value and the particle approximation of the
/// quenched predictor attached to its parameter history.
struct Island {
  Vector theta;
  WeightedEnsemble inner;

  /// Running sum over past steps of log(mean inner potential).
  double inner_log_norm() const { return inner.log_norm; }
};

/// Log potentials of the current generation for the current observation.
struct IslandWeights {
  int step = 0;
  /// log G_n(theta^i, xi^{i,j}) per island.
  std::vector<Vector> log_inner;
  /// log of the island potential, i.e. log of the mean inner potential.
  Vector log_island;
};

/// N1 islands sharing N2; the outer empirical measure of the island filter.
struct IslandSystem {
  std::vector<Island> islands;
  int step = 0;
  std::optional<IslandWeights> weights;

  std::size_t n_islands() const { return islands.size(); }
  Eigen::Index n_inner() const { return islands.empty() ? 0 : islands.front().inner.size(); }
};

/// log of the island potential (1/N2) sum_j G_n(theta, xi^j); computed as a
/// log-mean-exp so that it never underflows.
double island_log_potential(const FkModel& model, int n, const Island& island, const Vector& obs);

inline double island_potential(const FkModel& model, int n, const Island& island, const Vector& obs) {
  return std::exp(island_log_potential(model, n, island, obs));
}

/// theta^i_0 i.i.d. from the initial parameter law, N2 states per island i.i.d.
/// from the initial state law given theta^i_0. Island i uses rng.derive(~0, i)
/// and particle j of it the further substream .derive(j).
IslandSystem lipf_init(const FkModel& model, int n_islands, int n_inner, const RandomStream& rng);

/// Evaluates and caches all potentials of the current generation against obs.
void lipf_weigh(IslandSystem& system, const FkModel& model, const Vector& obs, int workers = 1);

/// One iteration of the labeled island particle filter with y_n = obs:
///   1. island potentials,
///   2. multinomial island selection I,
///   3. inner multinomial selection J^i against the population of island I^i,
///   4. theta^i_{n+1} ~ M^Theta_{n+1}(theta^{I^i}_n, .),
///   5. xi^{i,j}_{n+1} ~ M^X_{theta^i_{n+1}, n+1}(xi^{I^i, J^{i,j}}_n, .).
///
/// Substreams: island selection rng.derive(n, 0); island slot i uses
/// s = rng.derive(n, 1, i) with s.derive(0) for inner selection, s.derive(1)
/// for the parameter move and s.derive(2).derive(j) for particle slot j. The
/// result is therefore identical for every value of `workers`.
///
/// Throws ExtinctionError tagged kIsland or kInner with the step index.
IslandSystem lipf_step(IslandSystem system, const FkModel& model, const Vector& obs, const RandomStream& rng,
                       int workers = 1);

/// (1/N1) sum_i fbar(theta^i, inner^i).
double estimate(const IslandSystem& system, const std::function<double(const Vector&, const WeightedEnsemble&)>& fbar);

/// Expectation of f(theta, x) under the pooled particle measure. The predictor
/// weighs every particle equally; the filtered variant weighs particle (i, j)
/// by G_n(theta^i, xi^{i,j}) and requires cached weights.
double pooled_expectation(const IslandSystem& system, const std::function<double(const Vector&, ConstVectorRef)>& f,
                          bool filtered = false);

struct MarginalEstimates {
  Vector param_mean;
  Vector state_mean;
  Vector param_var;
  Vector state_var;
};

/// Componentwise parameter moments over the islands and state moments over the
/// pooled N1*N2 particles. `filtered` reweights both by the cached potentials.
MarginalEstimates marginal_estimates(const IslandSystem& system, bool filtered = false);

struct EssDiagnostics {
  double island = 0.0;      ///< (sum Gbar)^2 / sum Gbar^2
  double inner_mean = 0.0;  ///< mean over islands of the inner analogue
};

/// Requires cached weights.
EssDiagnostics ess_diagnostics(const IslandSystem& system);

}  // namespace islandsmc
