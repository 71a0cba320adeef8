#include <doctest.h>

#include <cmath>
#include <limits>

#include "islandsmc/fk_core.hpp"
#include "islandsmc/models.hpp"
#include "islandsmc/resampling.hpp"

using namespace islandsmc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

Matrix row(std::initializer_list<double> v) { return vec(v).transpose(); }

// Identity dynamics with no noise and a unit potential.
FkModel identity_model(int dim) {
  FkModel m;
  m.state_dim = dim;
  m.param_dim = 1;
  m.obs_dim = 1;
  m.init_param = [](RandomStream&) { return Vector::Zero(1); };
  m.init_state = [](const Vector&, VectorRef x, RandomStream&) { x.setZero(); };
  m.param_kernel = [](int, const Vector& t, RandomStream&) { return t; };
  m.state_kernel = [](int, const Vector&, ConstVectorRef x, VectorRef out, RandomStream&) { out = x; };
  m.log_potential = [](int, const Vector&, ConstVectorRef, const Vector&) { return 0.0; };
  return m;
}

}  // namespace

TEST_CASE("random streams are pure functions of their label") {
  RandomStream a(42, 7);
  RandomStream b(42, 7);
  for (int k = 0; k < 100; ++k) CHECK(a.next() == b.next());
  const RandomStream root(9);
  RandomStream c = root.derive(3, 4);
  RandomStream d = root.derive(3).derive(4);
  CHECK(c.stream_id() == d.stream_id());
  CHECK(c.next() == d.next());
  CHECK(root.derive(1).stream_id() != root.derive(2).stream_id());
  RandomStream u(1);
  for (int k = 0; k < 10000; ++k) {
    const double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
}

TEST_CASE("standard normal draws have unit variance") {
  RandomStream rng(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(n));
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("growth potentials") {
  GrowthModelParams p;
  const StateSpaceModel m = growth_model(p);
  const WeightedEnsemble at_zero(row({0.0}));
  CHECK(evaluate_potentials(m.fk, 0, vec({0.0}), at_zero, vec({0.0}))[0] == doctest::Approx(1.0).epsilon(1e-15));
  const WeightedEnsemble one_sd(row({0.0, 1.0}));
  const Vector g = evaluate_potentials(m.fk, 0, vec({0.0}), one_sd, vec({std::sqrt(10.0)}));
  CHECK(g[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(g[1] / g[0] == doctest::Approx(std::exp(-0.5 * (std::pow(std::sqrt(10.0) - 1.0, 2) - 10.0) / 10.0)));
}

TEST_CASE("mobile potential peaks at zero residual") {
  const StateSpaceModel m = mobile_model(MobileModelParams{});
  RandomStream rng(3);
  const Vector y = vec({1.0, -2.0, 0.5});
  Matrix points(3, 101);
  points.col(0) = y;
  for (int j = 1; j <= 100; ++j) {
    for (int k = 0; k < 3; ++k) points(k, j) = y[k] + rng.normal();
  }
  const Vector g = evaluate_potentials(m.fk, 0, vec({0.0, 0.0}), WeightedEnsemble(points), y);
  for (int j = 1; j <= 100; ++j) CHECK(g[j] < g[0]);
}

TEST_CASE("potential evaluation rejects non-finite values") {
  FkModel m = identity_model(1);
  m.log_potential = [](int, const Vector&, ConstVectorRef x, const Vector&) {
    return x[0] > 1.5 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  };
  const WeightedEnsemble e(row({0.0, 1.0, 2.0}));
  try {
    evaluate_potentials(m, 0, vec({0.0}), e, vec({0.0}));
    FAIL("expected EvaluationError");
  } catch (const EvaluationError& err) {
    CHECK(err.index() == 2);
  }
  m.log_potential = [](int, const Vector&, ConstVectorRef, const Vector&) {
    return -std::numeric_limits<double>::infinity();
  };
  CHECK(evaluate_potentials(m, 0, vec({0.0}), e, vec({0.0})).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Boltzmann-Gibbs normalization") {
  CHECK(boltzmann_gibbs(vec({1, 1, 1, 1})).isApprox(vec({0.25, 0.25, 0.25, 0.25}), 1e-15));
  CHECK(boltzmann_gibbs(vec({2, 0, 0})) == vec({1, 0, 0}));
  const Vector p = boltzmann_gibbs(vec({1, 3}));
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(std::abs(boltzmann_gibbs(vec({0.3, 0.1, 7.0, 2.2})).sum() - 1.0) < 1e-12);
}

TEST_CASE("Boltzmann-Gibbs is invariant under positive rescaling") {
  RandomStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Vector w(17);
    for (auto& x : w) x = rng.uniform() * 5.0;
    const Vector base = boltzmann_gibbs(w);
    for (int k = -3; k <= 3; ++k) {
      const Vector scaled = boltzmann_gibbs(w * std::pow(10.0, k));
      CHECK((scaled - base).cwiseAbs().maxCoeff() <= 1e-12);
      const Vector logged = boltzmann_gibbs_log((w * std::pow(10.0, k)).array().log().matrix());
      CHECK((logged - base).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("Boltzmann-Gibbs error conditions") {
  try {
    boltzmann_gibbs(vec({0, 0, 0}), 17, ExtinctionLevel::kInner);
    FAIL("expected ExtinctionError");
  } catch (const ExtinctionError& e) {
    CHECK(e.step() == 17);
    CHECK(e.level() == ExtinctionLevel::kInner);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(boltzmann_gibbs(vec({nan, nan})), EvaluationError);
  CHECK_THROWS_AS(boltzmann_gibbs(vec({1.0, -1.0})), ArgumentError);
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(boltzmann_gibbs_log(vec({ninf, ninf}), 4), ExtinctionError);
  CHECK_THROWS_AS(boltzmann_gibbs_log(vec({0.0, nan})), EvaluationError);
  // Log weights far below exp's underflow point still normalize.
  const Vector p = boltzmann_gibbs_log(vec({-2000.0, -2000.0 + std::log(3.0)}));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("mutation") {
  const FkModel id = identity_model(2);
  Matrix pts(2, 3);
  pts << 1, 2, 3, 4, 5, 6;
  CHECK(mutate(id, 1, vec({0.0}), pts, RandomStream(1)) == pts);

  GrowthModelParams gp;
  gp.sigma_x2 = 0.0;
  const StateSpaceModel growth = growth_model(gp);
  CHECK(mutate(growth.fk, 1, vec({0.0}), row({1.0}), RandomStream(1))(0, 0) == doctest::Approx(13.0).epsilon(1e-15));

  MobileModelParams mp;
  mp.sigma_x = Matrix::Zero(2, 2);
  mp.poisson_rate = 0.0;
  const StateSpaceModel mobile = mobile_model(mp);
  Matrix state(3, 1);
  state << 4.0, -1.0, 2.0;
  const Matrix next = mutate(mobile.fk, 1, vec({0.1, -0.2}), state, RandomStream(2));
  CHECK(next(0, 0) == doctest::Approx(4.0 + 0.1 * 15.0).epsilon(1e-12));
  CHECK(next(1, 0) == doctest::Approx(-1.0 + 2.0 * 15.0 - 0.2 * 15.0).epsilon(1e-12));
  CHECK(next(2, 0) == 2.0);
}

TEST_CASE("mutation is reproducible and non-finite states are rejected") {
  const StateSpaceModel growth = growth_model(GrowthModelParams{});
  Matrix pts = Matrix::Random(1, 50);
  const Matrix a = mutate(growth.fk, 3, vec({0.5}), pts, RandomStream(7, 1));
  const Matrix b = mutate(growth.fk, 3, vec({0.5}), pts, RandomStream(7, 1));
  CHECK(a == b);
  // Column j only depends on its own substream.
  const Matrix head = mutate(growth.fk, 3, vec({0.5}), pts.leftCols(5), RandomStream(7, 1));
  CHECK(head == a.leftCols(5));
  FkModel bad = identity_model(1);
  bad.state_kernel = [](int, const Vector&, ConstVectorRef, VectorRef out, RandomStream&) {
    out[0] = std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(mutate(bad, 0, vec({0.0}), row({1.0}), RandomStream(1)), EvaluationError);
}

TEST_CASE("ensemble means") {
  WeightedEnsemble e(row({0.0, 2.0}));
  const auto id = [](ConstVectorRef x) { return Vector(x); };
  CHECK(ensemble_mean(e, id)[0] == 1.0);
  CHECK(ensemble_mean(e, [](ConstVectorRef) { return Vector::Ones(1); })[0] == 1.0);
  WeightedEnsemble w(row({0.0, 4.0}));
  w.weights = vec({1.0, 3.0});
  w.normalize();
  CHECK(ensemble_mean(w, id)[0] == doctest::Approx(3.0).epsilon(1e-15));
  WeightedEnsemble dead(row({1.0}));
  dead.weights = vec({0.0});
  CHECK_THROWS_AS(dead.normalize(), ExtinctionError);
  CHECK_THROWS_AS(WeightedEnsemble(Matrix(1, 0)), ArgumentError);
}

TEST_CASE("ensemble mean of the constant function is exactly one") {
  RandomStream rng(8);
  for (int t = 0; t < 50; ++t) {
    WeightedEnsemble e(Matrix::Random(2, 64));
    for (auto& w : e.weights) w = rng.uniform();
    e.normalize();
    CHECK(std::abs(e.weights.sum() - 1.0) <= 1e-12);
    CHECK(ensemble_mean(e, [](ConstVectorRef) { return Vector::Ones(1); })[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a selection-mutation step with unit potential is a pure mutation") {
  const StateSpaceModel growth = growth_model(GrowthModelParams{});
  FkModel flat = growth.fk;
  flat.log_potential = [](int, const Vector&, ConstVectorRef, const Vector&) { return 0.0; };
  const Matrix pts = row({-1.0, 0.0, 2.0, 5.0});
  const Vector theta = vec({0.3});
  double expected = 0.0;
  for (Eigen::Index j = 0; j < pts.cols(); ++j) expected += (growth_state_drift(pts(0, j)) + theta[0]) / 4.0;

  const int reps = 10000;
  double s = 0.0, s2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    RandomStream rng(99, static_cast<std::uint64_t>(r));
    const Vector probs = boltzmann_gibbs_log(evaluate_log_potentials(flat, 0, theta, pts, vec({0.0})));
    const auto idx = multinomial_resample(probs, 4, rng).indices;
    Matrix selected(1, 4);
    for (int j = 0; j < 4; ++j) selected(0, j) = pts(0, idx[static_cast<std::size_t>(j)]);
    const Matrix next = mutate(flat, 1, theta, selected, rng.derive(1));
    const double m = next.mean();
    s += m;
    s2 += m * m;
  }
  const double mean = s / reps;
  const double se = std::sqrt((s2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - expected) < 3.0 * se);
}

TEST_CASE("effective sample size") {
  CHECK(effective_sample_size(vec({1, 1, 1, 1})) == doctest::Approx(4.0));
  CHECK(effective_sample_size(vec({5, 0, 0})) == doctest::Approx(1.0));
  CHECK(effective_sample_size(vec({0, 0})) == 0.0);
}
