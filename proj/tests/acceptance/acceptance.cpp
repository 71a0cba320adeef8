// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "islandsmc/diagnostics.hpp"
#include "islandsmc/harness.hpp"
#include "islandsmc/kalman.hpp"
#include "islandsmc/lipf.hpp"
#include "islandsmc/models.hpp"
#include "islandsmc/parallel.hpp"
#include "islandsmc/resampling.hpp"

using namespace islandsmc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int hardware_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& artifact_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::current_path() / "acceptance_artifacts";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ------------------------------------------------------------------ 1

Outcome exact_kalman() {
  LinearModelParams lp;
  lp.a = 0.9;
  lp.q_theta = 0.0;
  lp.theta0_var = 0.0;
  lp.theta0_mean = 0.5;
  lp.q_x = 1.0;
  lp.r = 2.0;
  lp.x0_mean = 5.0;
  lp.x0_var = 1.0;
  const StateSpaceModel m = linear_model(lp);
  const int steps = 200;
  const Trajectory traj = simulate(m, steps, RandomStream(101));
  KalmanIslandSystem sys = ikf_init(m.fk, *m.linear, 1, RandomStream(102));

  double mean = lp.x0_mean;
  double var = lp.x0_var;
  double worst = 0.0;
  for (int n = 0; n < steps; ++n) {
    const double y = traj.y[static_cast<std::size_t>(n)][0];
    const double gain = var / (var + lp.r);
    const double fm = mean + gain * (y - mean);
    const double fv = (1.0 - gain) * var;
    mean = lp.a * fm + lp.theta0_mean;
    var = lp.a * lp.a * fv + lp.q_x;
    sys = ikf_step(std::move(sys), *m.linear, traj.y[static_cast<std::size_t>(n)], m.fk, RandomStream(103));
    const GaussianBelief& b = sys.islands[0].belief;
    worst = std::max({worst, std::abs(b.mean[0] - mean) / std::abs(mean), std::abs(b.cov(0, 0) - var) / var});
  }
  return {worst <= 1e-10, fmt("max relative error %.3e over %d steps", worst, steps)};
}

// ------------------------------------------------------------------ 2

Outcome bootstrap_reduction() {
  const StateSpaceModel m = growth_model(GrowthModelParams{});
  const int steps = 100;
  const int particles = 500;
  const Trajectory traj = simulate(m, steps, RandomStream(201));
  const RandomStream rng(202);

  // Standalone bootstrap filter over (theta, x) with one theta path, drawing
  // from the same stream positions as a single-island system.
  RandomStream init = rng.derive(~0ULL, 0);
  Vector theta = Vector::Constant(1, init.normal());
  Matrix particles_x(1, particles);
  for (int j = 0; j < particles; ++j) {
    RandomStream s = init.derive(static_cast<std::uint64_t>(j));
    particles_x(0, j) = s.normal();
  }
  IslandSystem sys = lipf_init(m.fk, 1, particles, rng);
  bool equal = sys.islands[0].inner.points == particles_x && sys.islands[0].theta == theta;
  for (int n = 0; n < steps && equal; ++n) {
    const Vector& y = traj.y[static_cast<std::size_t>(n)];
    Vector logw(particles);
    for (int j = 0; j < particles; ++j) {
      const double r = y[0] - particles_x(0, j);
      logw[j] = -r * r * (0.5 / 10.0);
    }
    const RandomStream slot = rng.derive(static_cast<std::uint64_t>(n), 1, 0);
    RandomStream pick = slot.derive(0);
    const auto idx = multinomial_resample(boltzmann_gibbs_log(logw), particles, pick).indices;
    RandomStream param = slot.derive(1);
    theta = Vector::Constant(1, growth_param_drift(n + 1) + param.normal());
    Matrix next(1, particles);
    const RandomStream moves = slot.derive(2);
    for (int j = 0; j < particles; ++j) {
      RandomStream s = moves.derive(static_cast<std::uint64_t>(j));
      next(0, j) = growth_state_drift(particles_x(0, idx[static_cast<std::size_t>(j)])) + theta[0] + s.normal();
    }
    particles_x = next;

    sys = lipf_step(std::move(sys), m.fk, y, rng);
    equal = sys.islands[0].inner.points == particles_x && sys.islands[0].theta == theta;
  }
  return {equal, equal ? fmt("all %d particle states equal at every one of %d steps", particles, steps)
                       : std::string("particle states diverged")};
}

// ------------------------------------------------------------------ 3

Outcome inner_consistency() {
  LinearModelParams lp;
  lp.a = 1.0;
  lp.q_theta = 0.0;
  lp.theta0_var = 0.0;
  lp.theta0_mean = 0.0;
  lp.q_x = 1.0;
  lp.r = 10.0;
  const StateSpaceModel m = linear_model(lp);
  const Vector theta = Vector::Zero(1);
  const Trajectory traj = simulate(m, 101, RandomStream(1));
  const int n2 = 10000;
  const int reps = 100;
  const std::vector<int> checked = {10, 50, 100};

  std::vector<GaussianBelief> kalman(101);
  GaussianBelief kf = m.linear->initial(theta);
  for (int n = 0; n <= 100; ++n) {
    kalman[static_cast<std::size_t>(n)] = kf;
    kf = kalman_predict(kalman_correct(kf, m.linear->at(theta, n), traj.y[static_cast<std::size_t>(n)]),
                        m.linear->at(theta, n + 1));
  }
  std::vector<std::vector<int>> inside(reps, std::vector<int>(checked.size(), 0));
  parallel_for(static_cast<std::size_t>(reps), hardware_workers(), [&](std::size_t r) {
    const RandomStream rng(301, r);
    IslandSystem sys = lipf_init(m.fk, 1, n2, rng);
    for (int n = 0; n <= 100; ++n) {
      const auto it = std::find(checked.begin(), checked.end(), n);
      if (it != checked.end()) {
        const auto& pts = sys.islands[0].inner.points;
        const double mean = pts.mean();
        const double sd = std::sqrt((pts.array() - mean).square().sum() / (n2 - 1.0));
        const double exact = kalman[static_cast<std::size_t>(n)].mean[0];
        inside[r][static_cast<std::size_t>(it - checked.begin())] = std::abs(mean - exact) <= 4.0 * sd / std::sqrt(n2);
      }
      if (n == 100) break;
      sys = lipf_step(std::move(sys), m.fk, traj.y[static_cast<std::size_t>(n)], rng);
    }
  });
  bool pass = true;
  std::string detail = "replications within bound:";
  for (std::size_t k = 0; k < checked.size(); ++k) {
    int count = 0;
    for (const auto& row : inside) count += row[k];
    pass = pass && count >= 95;
    detail += fmt(" step %d: %d/%d", checked[k], count, reps);
  }
  return {pass, detail};
}

// ------------------------------------------------------------------ 4, 5

harness::RunConfig surface_config(std::vector<std::pair<int, int>> grid, const std::string& name) {
  harness::RunConfig c;
  c.model = "growth";
  c.algorithm = "lipf";
  c.seed = 4242;
  c.replications = 100;
  c.eval_step = 50;
  c.workers = hardware_workers();
  c.surface_grid = std::move(grid);
  c.outputs = {{"error-surface", (artifact_dir() / name).string()}};
  return c;
}

Outcome rate_check() {
  std::vector<std::pair<int, int>> grid;
  for (int n1 : {25, 50, 100, 200, 400}) grid.emplace_back(n1, 200);
  for (int n2 : {25, 50, 100, 400}) grid.emplace_back(200, n2);
  const harness::SweepResult res = harness::sweep(surface_config(grid, "rate_surface.csv"));
  if (res.any_failed()) return {false, "a surface cell failed"};
  const RateFit f1 = rate_regression(res.surface, RateAxis::kN1);
  const RateFit f2 = rate_regression(res.surface, RateAxis::kN2);
  const auto in_band = [](double s) { return s >= -0.65 && s <= -0.35; };
  std::string detail = fmt("slope N1 %.3f [%.3f, %.3f], slope N2 %.3f [%.3f, %.3f]; errors N1 axis:", f1.slope,
                           f1.ci_low, f1.ci_high, f2.slope, f2.ci_low, f2.ci_high);
  for (const ErrorCell& c : res.surface.cells) {
    if (c.n2 == 200) detail += fmt(" %d:%.4f", c.n1, c.l2_error);
  }
  detail += "; N2 axis:";
  for (const ErrorCell& c : res.surface.cells) {
    if (c.n1 == 200) detail += fmt(" %d:%.4f", c.n2, c.l2_error);
  }
  return {in_band(f1.slope) && in_band(f2.slope), detail};
}

Outcome joint_convergence() {
  std::vector<std::pair<int, int>> grid;
  for (int k = 3; k <= 7; ++k) grid.emplace_back(1 << k, 1 << k);
  const harness::SweepResult res = harness::sweep(surface_config(grid, "joint_surface.csv"));
  if (res.any_failed()) return {false, "a surface cell failed"};
  bool decreasing = true;
  std::string detail = "mean L2 error:";
  for (std::size_t k = 0; k < res.surface.cells.size(); ++k) {
    detail += fmt(" %d:%.4f", res.surface.cells[k].n1, res.surface.cells[k].l2_error);
    if (k > 0) decreasing = decreasing && res.surface.cells[k].l2_error < res.surface.cells[k - 1].l2_error;
  }
  return {decreasing, detail};
}

// ------------------------------------------------------------------ 6

Eigen::VectorXd normalized(std::vector<double> w) {
  Eigen::VectorXd p = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return p / p.sum();
}

Outcome resampling_statistics() {
  std::vector<Eigen::VectorXd> battery = {
      normalized({1, 1}),
      normalized({1, 2, 3, 4}),
      normalized({0.01, 0.09, 0.9}),
      normalized({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}),
      normalized({1e-3, 1, 1, 1}),
      normalized({5, 0.5, 0.05, 0.5, 5}),
  };
  RandomStream gen(600);
  for (int b = 0; b < 4; ++b) {
    std::vector<double> w(static_cast<std::size_t>(20 + 30 * b));
    for (double& v : w) v = std::exp(2.0 * gen.normal());
    battery.push_back(normalized(w));
  }
  const std::size_t draws = 1000000;
  bool pass = true;
  double worst_p = 1.0;
  for (std::size_t b = 0; b < battery.size(); ++b) {
    const auto& p = battery[b];
    RandomStream rng(601, b);
    const auto idx = multinomial_resample(p, draws, rng).indices;
    std::vector<double> counts(static_cast<std::size_t>(p.size()), 0.0);
    for (int i : idx) counts[static_cast<std::size_t>(i)] += 1.0;
    double stat = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double expected = p[k] * static_cast<double>(draws);
      stat += std::pow(counts[static_cast<std::size_t>(k)] - expected, 2) / expected;
    }
    const boost::math::chi_squared dist(static_cast<double>(p.size() - 1));
    const double pval = boost::math::cdf(boost::math::complement(dist, stat));
    worst_p = std::min(worst_p, pval);
    pass = pass && pval > 1e-3;
  }

  const Eigen::VectorXd p = battery[5];
  Eigen::VectorXd values(p.size());
  values << -3.0, 1.0, 2.5, 0.0, 7.0;
  const double target = p.dot(values);
  const int reps = 20000;
  double s = 0.0, s2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    RandomStream rng(602, static_cast<std::uint64_t>(r));
    const auto idx = multinomial_resample(p, 10, rng).indices;
    double mean = 0.0;
    for (int i : idx) mean += values[i];
    mean /= 10.0;
    s += mean;
    s2 += mean * mean;
  }
  const double mean = s / reps;
  const double se = std::sqrt((s2 / reps - mean * mean) / reps);
  const bool unbiased = std::abs(mean - target) <= 4.0 * se;
  return {pass && unbiased, fmt("smallest chi-square p-value %.4f over %zu vectors; resampled mean off by %.2f se",
                                worst_p, battery.size(), std::abs(mean - target) / se)};
}

// ------------------------------------------------------------------ 7, 9

harness::RunConfig smoke_config(const std::string& model, int n1, int n2, int horizon, int workers,
                                const std::string& tag) {
  harness::RunConfig c;
  c.model = model;
  c.algorithm = "lipf";
  c.n1 = n1;
  c.n2 = n2;
  c.horizon = horizon;
  c.seed = 7;
  c.workers = workers;
  c.outputs = {{"estimates", (artifact_dir() / (model + "_estimates_" + tag + ".csv")).string()}};
  return c;
}

Outcome smoke_runs() {
  bool pass = true;
  std::string detail;
  for (const auto& c : {smoke_config("growth", 200, 100, 1000, hardware_workers(), "a"),
                        smoke_config("mobile", 100, 300, 500, hardware_workers(), "a")}) {
    const auto start = std::chrono::steady_clock::now();
    const harness::RunRecord rec = harness::run(c);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool ok = rec.extinction_events == 0 && rec.total_steps == *c.horizon && secs < 180.0;
    pass = pass && ok;
    detail += fmt("%s N1=%d N2=%d horizon %d: %d extinctions, %.1f s; ", c.model.c_str(), *c.n1, *c.n2, *c.horizon,
                  rec.extinction_events, secs);
  }
  return {pass, detail};
}

Outcome determinism() {
  bool pass = true;
  std::string detail;
  const int other = hardware_workers() == 3 ? 5 : 3;
  for (const auto& [model, n1, n2, horizon] :
       std::vector<std::tuple<std::string, int, int, int>>{{"growth", 200, 100, 1000}, {"mobile", 100, 300, 500}}) {
    const auto first = smoke_config(model, n1, n2, horizon, hardware_workers(), "a");
    if (!fs::exists(first.outputs.at("estimates"))) harness::run(first);
    const auto second = smoke_config(model, n1, n2, horizon, other, "b");
    harness::run(second);
    const bool same = slurp(first.outputs.at("estimates")) == slurp(second.outputs.at("estimates"));
    pass = pass && same;
    detail += fmt("%s estimates with %d vs %d workers %s; ", model.c_str(), first.workers, other,
                  same ? "identical" : "DIFFER");
  }
  harness::RunConfig ikf;
  ikf.model = "mobile";
  ikf.algorithm = "ikf";
  ikf.n1 = 100;
  ikf.horizon = 500;
  ikf.seed = 7;
  for (int w : {1, other}) {
    ikf.workers = w;
    ikf.outputs = {{"estimates", (artifact_dir() / ("mobile_ikf_estimates_w" + std::to_string(w) + ".csv")).string()}};
    harness::run(ikf);
  }
  const bool same = slurp(artifact_dir() / "mobile_ikf_estimates_w1.csv") ==
                    slurp(artifact_dir() / ("mobile_ikf_estimates_w" + std::to_string(other) + ".csv"));
  pass = pass && same;
  detail += fmt("mobile ikf estimates with 1 vs %d workers %s", other, same ? "identical" : "DIFFER");
  return {pass, detail};
}

// ------------------------------------------------------------------ 8

Outcome lipf_vs_ikf() {
  RmseConfig rc;
  rc.workers = hardware_workers();
  const RmseTable t = rmse_comparison(mobile_model(MobileModelParams{}), rc, RandomStream(808));
  std::ofstream out(artifact_dir() / "mobile_rmse.csv", std::ios::binary);
  harness::write_rmse_csv(out, t);
  std::string detail;
  bool pass = false;
  for (const RmseRow& r : t.rows) {
    detail += fmt("%s: lipf %.4f ikf %.4f diff CI [%.4f, %.4f]; ", r.signal.c_str(), r.lipf_rmse, r.ikf_rmse, r.ci_low,
                  r.ci_high);
    if (r.signal == "speed") pass = r.ci_high < 0.0 && t.replications >= 20;
  }
  return {pass, detail + fmt("%d replications", t.replications)};
}

// ------------------------------------------------------------------ 10

Outcome conservation() {
  const GrowthModelParams p;
  const Trajectory traj = simulate(growth_model(p), 100, RandomStream(1001));
  GridFilter gf = grid_filter_init(p);
  double worst = std::abs(gf.density.sum() - 1.0);
  for (int n = 0; n < 100; ++n) {
    gf = grid_filter_step(gf, p, traj.y[static_cast<std::size_t>(n)][0]);
    worst = std::max(worst, std::abs(gf.density.sum() - 1.0));
  }
  const Trajectory long_traj = simulate(growth_model(p), 1000, RandomStream(1002));
  std::vector<double> x;
  for (const Vector& v : long_traj.x) x.push_back(v[0]);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double energy = 0.0;
  for (double v : x) energy += (v - mean) * (v - mean);
  const double parseval = std::abs(periodogram(x).total() - energy) / energy;
  return {worst <= 1e-9 && parseval <= 1e-8,
          fmt("max |sum - 1| %.3e over 100 steps; Parseval relative error %.3e", worst, parseval)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "exact Kalman equivalence", 1.0, exact_kalman},
      {2, "bootstrap reduction", 1.0, bootstrap_reduction},
      {3, "inner-measure consistency", 120.0, inner_consistency},
      {4, "rate check along N1 and N2", 900.0, rate_check},
      {5, "joint convergence along N1 = N2 = 2^k", 600.0, joint_convergence},
      {6, "resampling statistics", 60.0, resampling_statistics},
      {7, "reference-size smoke runs", 360.0, smoke_runs},
      {8, "LIPF vs IKF speed RMSE", 600.0, lipf_vs_ikf},
      {9, "determinism across worker counts", 0.0, determinism},
      {10, "grid-oracle conservation and Parseval", 0.0, conservation},
  };
  std::printf("workers: %d\n", hardware_workers());
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_seconds <= 0.0 || secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s criterion %d (%s): %s; %.2f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : " (over budget)");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
