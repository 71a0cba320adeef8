#include "islandsmc/kalman.hpp"

#include <cmath>
#include <numbers>

#include "islandsmc/errors.hpp"
#include "islandsmc/parallel.hpp"
#include "islandsmc/resampling.hpp"

namespace islandsmc {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kPsdSlack = 1e-10;

void check_spd(const Matrix& s, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(lo > 0.0) || cond >= kMaxCondition) throw NumericalError(what, cond);
}

// log density of N(0, s) at r.
double log_gauss(const Vector& r, const Matrix& s) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance not positive definite", 0.0);
  const Vector z = llt.matrixL().solve(r);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + log_det + static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi));
}

}  // namespace

Matrix enforce_psd(const Matrix& cov) {
  Matrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector& lambda = eig.eigenvalues();
  if (lambda.minCoeff() >= 0.0) return sym;
  if (lambda.minCoeff() < -kPsdSlack) throw NumericalError("covariance is not positive semidefinite", lambda.minCoeff());
  const Vector clamped = lambda.cwiseMax(0.0);
  return eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
}

GaussianBelief kalman_correct(const GaussianBelief& belief, const LinearGaussianStep& step, const Vector& obs) {
  const Matrix& sigma = belief.cov;
  const Matrix r = step.D * step.sigma_y * step.D.transpose();
  const Matrix s = step.C * sigma * step.C.transpose() + r;
  check_spd(s, "singular innovation covariance");
  // K = Sigma C^T S^-1, solved as S K^T = C Sigma.
  const Matrix gain = s.ldlt().solve(step.C * sigma).transpose();
  GaussianBelief out;
  out.mean = belief.mean + gain * (obs - (step.C * belief.mean + step.c));
  const Matrix ikc = Matrix::Identity(sigma.rows(), sigma.cols()) - gain * step.C;
  out.cov = enforce_psd(ikc * sigma * ikc.transpose() + gain * r * gain.transpose());
  return out;
}

GaussianBelief kalman_predict(const GaussianBelief& corrected, const LinearGaussianStep& step) {
  if (step.A.cols() != corrected.mean.size()) throw ArgumentError("transition matrix does not match state dimension");
  GaussianBelief out;
  out.mean = step.A * corrected.mean + step.a;
  const Matrix p = step.A * corrected.cov * step.A.transpose() + step.B * step.sigma_x * step.B.transpose();
  out.cov = 0.5 * (p + p.transpose());
  return out;
}

double gaussian_island_log_potential(const KalmanIsland& island, const LinearGaussianStep& step, const Vector& obs) {
  const Matrix r = step.D * step.sigma_y * step.D.transpose();
  const Matrix s = step.C * island.belief.cov * step.C.transpose() + r;
  check_spd(s, "innovation covariance not positive definite");
  const Vector residual = obs - (step.C * island.belief.mean + step.c);
  return log_gauss(residual, s) - log_gauss(obs, r);
}

KalmanIslandSystem ikf_init(const FkModel& model, const LinearGaussianSpec& spec, int n_islands,
                            const RandomStream& rng) {
  if (n_islands < 1) throw ArgumentError("need at least one island");
  KalmanIslandSystem system;
  system.islands.resize(static_cast<std::size_t>(n_islands));
  for (int i = 0; i < n_islands; ++i) {
    RandomStream stream = rng.derive(0xffffffffULL, static_cast<std::uint64_t>(i));
    auto& island = system.islands[static_cast<std::size_t>(i)];
    island.theta = model.init_param(stream);
    island.belief = spec.initial(island.theta);
  }
  return system;
}

void ikf_weigh(KalmanIslandSystem& system, const LinearGaussianSpec& spec, const Vector& obs) {
  system.log_potentials.resize(static_cast<Eigen::Index>(system.islands.size()));
  for (std::size_t i = 0; i < system.islands.size(); ++i) {
    const auto& island = system.islands[i];
    system.log_potentials[static_cast<Eigen::Index>(i)] =
        gaussian_island_log_potential(island, spec.at(island.theta, system.step), obs);
  }
  system.weighted_step = system.step;
}

KalmanIslandSystem ikf_step(KalmanIslandSystem system, const LinearGaussianSpec& spec, const Vector& obs,
                            const FkModel& model, const RandomStream& rng, int workers) {
  if (system.islands.empty()) throw ArgumentError("need at least one island");
  if (system.weighted_step != system.step) ikf_weigh(system, spec, obs);
  const int n = system.step;
  const Vector probs = boltzmann_gibbs_log(system.log_potentials, n, ExtinctionLevel::kIsland);
  RandomStream select_stream = rng.derive(static_cast<std::uint64_t>(n), 0);
  const auto ancestors = multinomial_resample(probs, system.islands.size(), select_stream).indices;

  KalmanIslandSystem next;
  next.step = n + 1;
  next.islands.resize(system.islands.size());
  parallel_for(system.islands.size(), workers, [&](std::size_t i) {
    const KalmanIsland& parent = system.islands[static_cast<std::size_t>(ancestors[i])];
    const GaussianBelief corrected = kalman_correct(parent.belief, spec.at(parent.theta, n), obs);
    RandomStream stream = rng.derive(static_cast<std::uint64_t>(n), 1, i);
    KalmanIsland& child = next.islands[i];
    child.theta = model.param_kernel(n + 1, parent.theta, stream);
    child.belief = kalman_predict(corrected, spec.at(child.theta, n + 1));
  });
  return next;
}

}  // namespace islandsmc
