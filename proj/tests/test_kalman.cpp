#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numbers>

#include "islandsmc/kalman.hpp"
#include "islandsmc/models.hpp"

using namespace islandsmc;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }
Vector svec(double v) { return Vector::Constant(1, v); }

LinearGaussianStep scalar_step(double a_coef, double a_off, double b, double sx, double c_coef, double c_off,
                               double d, double sy) {
  return {scalar(a_coef), scalar(b), scalar(c_coef), scalar(d), svec(a_off), svec(c_off), scalar(sx), scalar(sy)};
}

Matrix random_psd(int dim, RandomStream& rng, bool rank_deficient = false) {
  Matrix g(dim, dim);
  for (auto& x : g.reshaped()) x = rng.normal();
  if (rank_deficient && dim > 1) g.col(0).setZero();
  return g * g.transpose();
}

Matrix random_matrix(int rows, int cols, RandomStream& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.reshaped()) x = rng.normal();
  return m;
}

double log_gauss_density(const Vector& r, const Matrix& s) {
  const Eigen::LLT<Matrix> llt(s);
  const Vector z = llt.matrixL().solve(r);
  return -0.5 * z.squaredNorm() - Matrix(llt.matrixL()).diagonal().array().log().sum() -
         0.5 * static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("scalar correction by hand") {
  const GaussianBelief prior{svec(0.0), scalar(1.0)};
  const auto step = scalar_step(1, 0, 1, 1, 1, 0, 1, 1);
  const GaussianBelief post = kalman_correct(prior, step, svec(2.0));
  CHECK(post.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(post.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("a certain prior ignores the data") {
  LinearGaussianStep step;
  step.C = Matrix::Identity(2, 2);
  step.D = Matrix::Identity(2, 2);
  step.c = Vector::Zero(2);
  step.sigma_y = Matrix::Identity(2, 2);
  const GaussianBelief prior{Vector::Constant(2, 3.0), Matrix::Zero(2, 2)};
  const GaussianBelief post = kalman_correct(prior, step, Vector::Constant(2, -10.0));
  CHECK(post.mean == prior.mean);
  CHECK(post.cov.isZero(1e-15));
}

TEST_CASE("scalar prediction by hand") {
  const GaussianBelief corrected{svec(1.0), scalar(0.5)};
  const GaussianBelief pred = kalman_predict(corrected, scalar_step(2, 1, 1, 3, 1, 0, 1, 1));
  CHECK(pred.mean[0] == doctest::Approx(3.0));
  CHECK(pred.cov(0, 0) == doctest::Approx(5.0));

  LinearGaussianStep identity;
  identity.A = Matrix::Identity(2, 2);
  identity.a = Vector::Zero(2);
  identity.B = Matrix::Zero(2, 2);
  identity.sigma_x = Matrix::Identity(2, 2);
  const GaussianBelief b{Vector::Constant(2, 1.5), Matrix::Identity(2, 2) * 0.7};
  const GaussianBelief same = kalman_predict(b, identity);
  CHECK(same.mean == b.mean);
  CHECK(same.cov.isApprox(b.cov, 1e-15));

  LinearGaussianStep memoryless = identity;
  memoryless.A = Matrix::Zero(2, 2);
  memoryless.B = Matrix::Identity(2, 2) * 2.0;
  const GaussianBelief fresh = kalman_predict(b, memoryless);
  CHECK(fresh.cov.isApprox(Matrix::Identity(2, 2) * 4.0, 1e-15));
  CHECK_THROWS_AS(kalman_predict(GaussianBelief{Vector::Zero(3), Matrix::Zero(3, 3)}, identity), ArgumentError);
}

TEST_CASE("Joseph form matches the textbook update") {
  RandomStream rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 4;
    const int m = 1 + (trial / 4) % 3;
    LinearGaussianStep step;
    step.C = random_matrix(m, n, rng);
    step.D = Matrix::Identity(m, m);
    step.c = random_matrix(m, 1, rng);
    step.sigma_y = random_psd(m, rng) + Matrix::Identity(m, m);
    const GaussianBelief prior{random_matrix(n, 1, rng), random_psd(n, rng) + 0.1 * Matrix::Identity(n, n)};
    const Vector y = random_matrix(m, 1, rng);
    const GaussianBelief post = kalman_correct(prior, step, y);
    const Matrix s = step.C * prior.cov * step.C.transpose() + step.sigma_y;
    const Matrix k = prior.cov * step.C.transpose() * s.inverse();
    const Matrix textbook = (Matrix::Identity(n, n) - k * step.C) * prior.cov;
    CHECK((post.cov - textbook).norm() <= 1e-10 * std::max(1.0, textbook.norm()));
    CHECK((post.mean - (prior.mean + k * (y - step.C * prior.mean - step.c))).norm() <= 1e-10 * (1.0 + post.mean.norm()));
  }
}

TEST_CASE("singular innovation covariance") {
  const GaussianBelief prior{svec(0.0), scalar(0.0)};
  try {
    kalman_correct(prior, scalar_step(1, 0, 1, 1, 1, 0, 1, 0.0), svec(1.0));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(!(e.condition_number() < 1e12));
  }
  LinearGaussianStep ill;
  ill.C = Matrix::Identity(2, 2);
  ill.D = Matrix::Identity(2, 2);
  ill.c = Vector::Zero(2);
  ill.sigma_y = Eigen::Vector2d(1.0, 1e-13).asDiagonal();
  CHECK_THROWS_AS(kalman_correct({Vector::Zero(2), Matrix::Zero(2, 2)}, ill, Vector::Zero(2)), NumericalError);
}

TEST_CASE("covariances stay symmetric positive semidefinite") {
  RandomStream rng(33);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + trial % 4;
    const int m = 1 + (trial / 4) % 3;
    LinearGaussianStep step;
    step.A = random_matrix(n, n, rng);
    step.a = random_matrix(n, 1, rng);
    step.B = random_matrix(n, n, rng);
    step.sigma_x = random_psd(n, rng, trial % 3 == 0);
    step.C = random_matrix(m, n, rng);
    step.c = random_matrix(m, 1, rng);
    step.D = random_matrix(m, m, rng) + 3.0 * Matrix::Identity(m, m);
    step.sigma_y = random_psd(m, rng) + Matrix::Identity(m, m);
    const GaussianBelief prior{random_matrix(n, 1, rng), random_psd(n, rng, trial % 2 == 0)};
    GaussianBelief post;
    try {
      post = kalman_correct(prior, step, random_matrix(m, 1, rng));
    } catch (const NumericalError&) {
      continue;
    }
    const GaussianBelief pred = kalman_predict(post, step);
    for (const Matrix* cov : {static_cast<const Matrix*>(&post.cov), static_cast<const Matrix*>(&pred.cov)}) {
      REQUIRE((*cov - cov->transpose()).cwiseAbs().maxCoeff() <= 1e-10);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(*cov, Eigen::EigenvaluesOnly);
      REQUIRE(eig.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff()));
    }
  }
}

TEST_CASE("PSD enforcement") {
  Matrix nearly(2, 2);
  nearly << 1.0, 0.0, 0.0, -5e-11;
  const Matrix fixed = enforce_psd(nearly);
  CHECK(fixed(1, 1) == doctest::Approx(0.0).epsilon(1e-15));
  Matrix bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1e-6;
  CHECK_THROWS_AS(enforce_psd(bad), NumericalError);
  Matrix asym(2, 2);
  asym << 2.0, 1.0, 0.0, 2.0;
  CHECK(enforce_psd(asym).isApprox(enforce_psd(asym).transpose(), 0.0));
}

TEST_CASE("Gaussian island potential") {
  const auto step = scalar_step(1, 0, 1, 1, 1, 0, 1, 1);
  const KalmanIsland island{svec(0.0), {svec(0.0), scalar(1.0)}};
  // potential(y) * N(y; 0, 1) is the predictive density N(y; 0, 2).
  for (double y : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
    const double lp = gaussian_island_log_potential(island, step, svec(y));
    const double predictive = lp - 0.5 * y * y - 0.5 * std::log(2.0 * std::numbers::pi);
    CHECK(predictive == doctest::Approx(-y * y / 4.0 - 0.5 * std::log(4.0 * std::numbers::pi)).epsilon(1e-13));
  }
  const KalmanIsland certain{svec(0.0), {svec(1.5), scalar(0.0)}};
  auto shifted = step;
  shifted.c = svec(0.5);
  const double at_mode = gaussian_island_log_potential(certain, shifted, svec(2.0));
  for (double d : {-1.0, -0.1, 0.1, 1.0}) {
    // Compare predictive densities: the denominators depend on y, not on the island.
    const double off = gaussian_island_log_potential(certain, shifted, svec(2.0 + d)) - 0.5 * (2.0 + d) * (2.0 + d);
    CHECK(off < at_mode - 0.5 * 4.0);
  }
  const KalmanIsland twin = island;
  CHECK(gaussian_island_potential(island, step, svec(0.7)) == gaussian_island_potential(twin, step, svec(0.7)));
}

TEST_CASE("Gaussian island potential matches Monte Carlo integration of the likelihood ratio") {
  RandomStream rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = trial < 10 ? 1 : 2;
    LinearGaussianStep step;
    step.C = random_matrix(n, n, rng);
    step.c = 0.3 * random_matrix(n, 1, rng);
    step.D = Matrix::Identity(n, n);
    step.sigma_y = random_psd(n, rng) + 2.0 * Matrix::Identity(n, n);
    const GaussianBelief belief{0.5 * random_matrix(n, 1, rng), 0.3 * random_psd(n, rng) + 0.1 * Matrix::Identity(n, n)};
    const Vector y = random_matrix(n, 1, rng);
    const double exact = gaussian_island_potential({svec(0.0), belief}, step, y);

    const Matrix lower = belief.cov.llt().matrixL();
    const int samples = 100000;
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < samples; ++k) {
      Vector z(n);
      for (auto& v : z) v = rng.normal();
      const Vector x = belief.mean + lower * z;
      const double g = std::exp(log_gauss_density(y - step.C * x - step.c, step.sigma_y) -
                                log_gauss_density(y, step.sigma_y));
      s += g;
      s2 += g * g;
    }
    const double mean = s / samples;
    const double se = std::sqrt((s2 / samples - mean * mean) / samples);
    CHECK(std::abs(mean - exact) < 4.0 * se);
  }
}

TEST_CASE("single island with a frozen parameter is a Kalman filter") {
  LinearModelParams lp;
  lp.q_theta = 0.0;
  lp.theta0_var = 0.0;
  lp.theta0_mean = 0.4;
  const StateSpaceModel m = linear_model(lp);
  const Trajectory traj = simulate(m, 30, RandomStream(5));
  KalmanIslandSystem sys = ikf_init(m.fk, *m.linear, 1, RandomStream(6));
  double mean = lp.x0_mean;
  double var = lp.x0_var;
  for (int n = 0; n < 30; ++n) {
    CHECK(sys.islands[0].belief.mean[0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(sys.islands[0].belief.cov(0, 0) == doctest::Approx(var).epsilon(1e-12));
    const double y = traj.y[static_cast<std::size_t>(n)][0];
    const double k = var / (var + lp.r);
    const double mc = mean + k * (y - mean);
    const double vc = (1.0 - k) * var;
    mean = lp.a * mc + 0.4;
    var = lp.a * lp.a * vc + lp.q_x;
    sys = ikf_step(std::move(sys), *m.linear, traj.y[static_cast<std::size_t>(n)], m.fk, RandomStream(7));
    CHECK(sys.islands[0].theta[0] == 0.4);
  }
}

TEST_CASE("equal potentials select islands uniformly") {
  LinearModelParams lp;
  lp.q_theta = 0.0;
  const StateSpaceModel m = linear_model(lp);
  const int islands = 4;
  std::vector<double> counts(islands, 0.0);
  const int steps = 5000;
  for (int t = 0; t < steps; ++t) {
    KalmanIslandSystem sys;
    for (int i = 0; i < islands; ++i) sys.islands.push_back({svec(static_cast<double>(i)), {svec(0.0), scalar(1.0)}});
    sys.step = 0;
    // Same belief and potential; theta only labels islands (a = theta drift lands after selection).
    auto spec = *m.linear;
    spec.at = [base = m.linear->at](const Vector&, int n) { return base(svec(0.0), n); };
    FkModel fk = m.fk;
    fk.param_kernel = [](int, const Vector& t, RandomStream&) { return t; };
    const KalmanIslandSystem next = ikf_step(sys, spec, svec(0.3), fk, RandomStream(40, static_cast<std::uint64_t>(t)));
    for (const auto& island : next.islands) counts[static_cast<std::size_t>(island.theta[0])] += 1.0;
  }
  const double expected = steps * islands / static_cast<double>(islands);
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(islands - 1.0);
  CHECK(stat < boost::math::quantile(boost::math::complement(dist, 1e-3)));
}

TEST_CASE("interacting Kalman filter on the mobile model stays numerically sound") {
  const StateSpaceModel m = mobile_model(MobileModelParams{});
  const Trajectory traj = simulate(m, 500, RandomStream(12));
  KalmanIslandSystem sys = ikf_init(m.fk, *m.linear, 100, RandomStream(13));
  for (int n = 0; n < 500; ++n) {
    REQUIRE_NOTHROW(sys = ikf_step(std::move(sys), *m.linear, traj.y[static_cast<std::size_t>(n)], m.fk, RandomStream(14)));
  }
  for (const auto& island : sys.islands) {
    CHECK(island.belief.mean.allFinite());
    CHECK(island.belief.cov.allFinite());
  }
}

TEST_CASE("interacting Kalman filter output does not depend on the worker count") {
  const StateSpaceModel m = mobile_model(MobileModelParams{});
  const Trajectory traj = simulate(m, 40, RandomStream(2));
  KalmanIslandSystem a = ikf_init(m.fk, *m.linear, 32, RandomStream(3));
  KalmanIslandSystem b = a;
  for (int n = 0; n < 40; ++n) {
    a = ikf_step(std::move(a), *m.linear, traj.y[static_cast<std::size_t>(n)], m.fk, RandomStream(4), 1);
    b = ikf_step(std::move(b), *m.linear, traj.y[static_cast<std::size_t>(n)], m.fk, RandomStream(4), 4);
  }
  for (std::size_t i = 0; i < a.islands.size(); ++i) {
    CHECK(a.islands[i].theta == b.islands[i].theta);
    CHECK(a.islands[i].belief.mean == b.islands[i].belief.mean);
    CHECK(a.islands[i].belief.cov == b.islands[i].belief.cov);
  }
}
