#include "islandsmc/diagnostics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

#include "islandsmc/errors.hpp"
#include "islandsmc/parallel.hpp"

namespace islandsmc {

// ============================================================ grid oracle

namespace {

struct Axis {
  Vector nodes;
};

Vector lattice(double center, int count, double spacing) {
  Vector v(count);
  const double start = center - 0.5 * (count - 1) * spacing;
  for (int k = 0; k < count; ++k) v[k] = start + k * spacing;
  return v;
}

int points_for(double sd, double width, double spacing) {
  if (!(sd > 0.0)) return 1;
  return static_cast<int>(std::ceil(2.0 * width * sd / spacing)) + 1;
}

struct GridLayout {
  Vector theta;
  Vector x;
  double spacing;
};

GridLayout place_grids(double mean_theta, double sd_theta, double mean_x, double sd_x, double width,
                       const GridFilterConfig& config) {
  double spacing = 0.0;
  if (sd_x > 0.0) spacing = 2.0 * width * sd_x / (config.n_x - 1);
  if (sd_theta > 0.0) spacing = std::max(spacing, 2.0 * width * sd_theta / (config.max_theta_points - 1));
  if (!(spacing > 0.0)) spacing = 1.0;
  GridLayout g;
  g.spacing = spacing;
  g.theta = lattice(mean_theta, points_for(sd_theta, width, spacing), spacing);
  g.x = lattice(mean_x, points_for(sd_x, width, spacing), spacing);
  return g;
}

double boundary_band_mass(const Matrix& p) {
  const auto band = [](Eigen::Index n) -> Eigen::Index {
    return n <= 1 ? 0 : std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(0.02 * static_cast<double>(n))));
  };
  const Eigen::Index br = band(p.rows());
  const Eigen::Index bc = band(p.cols());
  double mass = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const bool edge_row = r < br || r >= p.rows() - br;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      if (edge_row || c < bc || c >= p.cols() - bc) mass += p(r, c);
    }
  }
  return mass;
}

Vector gaussian_nodes(const Vector& nodes, double mean, double var) {
  if (!(var > 0.0)) {
    Vector w = Vector::Zero(nodes.size());
    Eigen::Index best = 0;
    (nodes.array() - mean).abs().minCoeff(&best);
    w[best] = 1.0;
    return w;
  }
  return (-(nodes.array() - mean).square() / (2.0 * var)).exp().matrix();
}

double grid_param_drift(int n, double /*theta*/) { return growth_param_drift(n); }

const Vector& axis_nodes(const GridFilter& gf, Coord c) { return c == Coord::kTheta ? gf.theta_grid : gf.x_grid; }

Vector axis_mass(const GridFilter& gf, Coord c) { return c == Coord::kTheta ? gf.theta_marginal() : gf.x_marginal(); }

}  // namespace

double GridFilter::expectation(Coord c, const std::function<double(double)>& f) const {
  const Vector& nodes = axis_nodes(*this, c);
  const Vector mass = axis_mass(*this, c);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) acc += mass[k] * f(nodes[k]);
  return acc;
}

double GridFilter::mean(Coord c) const {
  return expectation(c, [](double v) { return v; });
}

double GridFilter::variance(Coord c) const {
  const double m = mean(c);
  return expectation(c, [m](double v) { return (v - m) * (v - m); });
}

double GridFilter::cdf(Coord c, double q) const {
  const Vector& nodes = axis_nodes(*this, c);
  const Vector mass = axis_mass(*this, c);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    const double frac = std::clamp((q - (nodes[k] - 0.5 * spacing)) / spacing, 0.0, 1.0);
    acc += mass[k] * frac;
  }
  return acc;
}

double GridFilter::quantile(Coord c, double p) const {
  const Vector& nodes = axis_nodes(*this, c);
  const Vector mass = axis_mass(*this, c);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    if (mass[k] > 0.0 && acc + mass[k] >= p) {
      return nodes[k] - 0.5 * spacing + spacing * (p - acc) / mass[k];
    }
    acc += mass[k];
  }
  return nodes[nodes.size() - 1] + 0.5 * spacing;
}

GridFilter grid_filter_init(const GrowthModelParams& params, const GridFilterConfig& config) {
  const double sd_theta = std::sqrt(std::max(0.0, params.sigma_theta2));
  const double sd_x = std::sqrt(std::max(0.0, params.sigma_x2));
  const GridLayout layout = place_grids(0.0, sd_theta, 0.0, sd_x, config.width_sd, config);
  GridFilter gf;
  gf.theta_grid = layout.theta;
  gf.x_grid = layout.x;
  gf.spacing = layout.spacing;
  gf.density = gaussian_nodes(layout.theta, 0.0, params.sigma_theta2) *
               gaussian_nodes(layout.x, 0.0, params.sigma_x2).transpose();
  gf.density /= gf.density.sum();
  gf.boundary_mass = boundary_band_mass(gf.density);
  gf.step = 0;
  return gf;
}

GridFilter grid_filter_correct(const GridFilter& gf, const GrowthModelParams& params, double obs) {
  GridFilter out = gf;
  if (std::isinf(params.sigma_y2)) return out;
  const Vector like = (-(gf.x_grid.array() - obs).square() / (2.0 * params.sigma_y2)).exp().matrix();
  out.density = gf.density * like.asDiagonal();
  const double total = out.density.sum();
  if (!(total > 0.0)) throw GridTooSmallError("likelihood vanishes on the whole grid");
  out.density /= total;
  return out;
}

GridFilter grid_filter_step(const GridFilter& gf, const GrowthModelParams& params, double obs,
                            const GridFilterConfig& config) {
  const GridFilter corrected = grid_filter_correct(gf, params, obs);
  const int next_step = gf.step + 1;
  const Matrix& p = corrected.density;
  const Eigen::Index n_theta_old = p.rows();
  const Eigen::Index n_x_old = p.cols();

  Vector drift(n_theta_old);
  for (Eigen::Index c = 0; c < n_theta_old; ++c) drift[c] = grid_param_drift(next_step, corrected.theta_grid[c]);
  Vector fx(n_x_old);
  for (Eigen::Index k = 0; k < n_x_old; ++k) fx[k] = growth_state_drift(corrected.x_grid[k]);

  // Predictive moments used to place the new lattice.
  const Vector p_theta = p.rowwise().sum();
  const double m_theta = p_theta.dot(drift);
  const double v_theta = p_theta.dot((drift.array() - m_theta).square().matrix()) + params.sigma_theta2;
  double m_x = 0.0;
  for (Eigen::Index c = 0; c < n_theta_old; ++c)
    for (Eigen::Index k = 0; k < n_x_old; ++k) m_x += p(c, k) * (fx[k] + drift[c]);
  double v_x = 0.0;
  for (Eigen::Index c = 0; c < n_theta_old; ++c)
    for (Eigen::Index k = 0; k < n_x_old; ++k) v_x += p(c, k) * std::pow(fx[k] + drift[c] - m_x, 2);
  v_x += params.sigma_theta2 + params.sigma_x2;
  const double sd_theta = std::sqrt(std::max(0.0, v_theta));
  const double sd_x = std::sqrt(std::max(0.0, v_x));

  GridFilter out;
  out.step = next_step;
  for (int expansion = 0;; ++expansion) {
    const double width = config.width_sd * std::pow(1.5, expansion);
    const GridLayout g = place_grids(m_theta, sd_theta, m_x, sd_x, width, config);
    const Eigen::Index nt = g.theta.size();
    const Eigen::Index nx = g.x.size();
    const double h = g.spacing;

    // Environment transition between the old and the new theta lattice.
    Matrix transition(nt, n_theta_old);
    for (Eigen::Index c = 0; c < n_theta_old; ++c) {
      transition.col(c) = gaussian_nodes(g.theta, drift[c], params.sigma_theta2);
      if (!(params.sigma_theta2 > 0.0)) {
        const double idx = (drift[c] - g.theta[0]) / h;
        if (idx < -0.5 || idx > nt - 0.5) transition.col(c).setZero();
      }
    }
    const Matrix q = transition * p;  // (theta', x)

    Matrix next = Matrix::Zero(nt, nx);
    if (params.sigma_x2 > 0.0) {
      // x'_a - theta'_b sits on the lattice offset + (a - b) h.
      const double offset = g.x[0] - g.theta[0];
      const Eigen::Index rows = nx + nt - 1;
      Matrix kernel(rows, n_x_old);
      const double inv = 1.0 / (2.0 * params.sigma_x2);
      for (Eigen::Index k = 0; k < rows; ++k) {
        const double z = offset + static_cast<double>(k - (nt - 1)) * h;
        kernel.row(k) = (-(z - fx.array()).square() * inv).exp().matrix().transpose();
      }
      for (Eigen::Index b = 0; b < nt; ++b) {
        next.row(b) = (kernel.middleRows(nt - 1 - b, nx) * q.row(b).transpose()).transpose();
      }
    } else {
      for (Eigen::Index b = 0; b < nt; ++b) {
        for (Eigen::Index k = 0; k < n_x_old; ++k) {
          const double target = (g.theta[b] + fx[k] - g.x[0]) / h;
          const auto a = static_cast<Eigen::Index>(std::lround(target));
          if (a >= 0 && a < nx) next(b, a) += q(b, k);
        }
      }
    }
    const double total = next.sum();
    if (!(total > 0.0)) throw GridTooSmallError("prediction left no mass on the grid");
    next /= total;
    const double edge = boundary_band_mass(next);
    if (edge <= config.expand_threshold || expansion >= config.max_expansions) {
      if (edge > config.fail_threshold) {
        throw GridTooSmallError("boundary mass " + std::to_string(edge) + " at step " + std::to_string(next_step));
      }
      out.theta_grid = g.theta;
      out.x_grid = g.x;
      out.spacing = h;
      out.density = std::move(next);
      out.boundary_mass = edge;
      return out;
    }
  }
}

GridFilter grid_oracle(const GrowthModelParams& params, const Trajectory& traj, int step,
                       const GridFilterConfig& config) {
  if (step < 0 || step > traj.horizon()) throw ArgumentError("oracle step outside the trajectory");
  GridFilter gf = grid_filter_init(params, config);
  for (int n = 0; n < step; ++n) gf = grid_filter_step(gf, params, traj.y[static_cast<std::size_t>(n)][0], config);
  return gf;
}

// ============================================================ battery

double TestFunction::operator()(double v) const {
  switch (kind) {
    case Kind::kIndicator:
      return v <= location ? 1.0 : 0.0;
    case Kind::kSquash:
      return v / (1.0 + std::abs(v));
    case Kind::kStandardized:
      return (v - location) / scale;
    case Kind::kStandardizedSquare: {
      const double z = (v - location) / scale;
      return z * z;
    }
  }
  return 0.0;
}

std::vector<TestFunction> make_battery(const GridFilter& oracle) {
  std::vector<TestFunction> out;
  for (Coord c : {Coord::kTheta, Coord::kX}) {
    const std::string prefix = c == Coord::kTheta ? "theta" : "x";
    for (int k = 1; k <= 9; ++k) {
      TestFunction f;
      f.name = prefix + "_le_q" + std::to_string(k);
      f.coord = c;
      f.kind = TestFunction::Kind::kIndicator;
      f.location = oracle.quantile(c, k / 10.0);
      out.push_back(f);
    }
    const double m = oracle.mean(c);
    const double var = oracle.variance(c);
    const double s = var > 0.0 ? std::sqrt(var) : 1.0;
    out.push_back({prefix + "_squash", c, TestFunction::Kind::kSquash, 0.0, 1.0});
    out.push_back({prefix + "_z", c, TestFunction::Kind::kStandardized, m, s});
    out.push_back({prefix + "_z2", c, TestFunction::Kind::kStandardizedSquare, m, s});
  }
  return out;
}

Vector oracle_values(const std::vector<TestFunction>& battery, const GridFilter& oracle) {
  Vector out(static_cast<Eigen::Index>(battery.size()));
  for (std::size_t k = 0; k < battery.size(); ++k) {
    const TestFunction& f = battery[k];
    out[static_cast<Eigen::Index>(k)] = f.kind == TestFunction::Kind::kIndicator
                                            ? oracle.cdf(f.coord, f.location)
                                            : oracle.expectation(f.coord, [&f](double v) { return f(v); });
  }
  return out;
}

Vector battery_estimates(const std::vector<TestFunction>& battery, const IslandSystem& system) {
  if (system.islands.empty()) throw ArgumentError("island system is empty");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(battery.size()));
  const double n1 = static_cast<double>(system.islands.size());
  for (const Island& island : system.islands) {
    const double inv_n2 = 1.0 / static_cast<double>(island.inner.size());
    const auto xs = island.inner.points.row(0);
    for (std::size_t k = 0; k < battery.size(); ++k) {
      const TestFunction& f = battery[k];
      double v = 0.0;
      if (f.coord == Coord::kTheta) {
        v = f(island.theta[0]);
      } else {
        for (Eigen::Index j = 0; j < xs.size(); ++j) v += f(xs[j]);
        v *= inv_n2;
      }
      out[static_cast<Eigen::Index>(k)] += v / n1;
    }
  }
  return out;
}

double l2_error(const std::vector<Vector>& estimates, const Vector& oracle, const std::vector<bool>& mask) {
  if (estimates.empty()) throw ArgumentError("no replications");
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(oracle.size())) {
    throw ArgumentError("mask does not match the battery");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (const Vector& e : estimates) {
    if (e.size() != oracle.size()) throw ArgumentError("estimate and oracle batteries differ in size");
    for (Eigen::Index k = 0; k < oracle.size(); ++k) {
      if (!mask.empty() && !mask[static_cast<std::size_t>(k)]) continue;
      acc += (e[k] - oracle[k]) * (e[k] - oracle[k]);
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("empty battery");
  return std::sqrt(acc / static_cast<double>(count));
}

// ============================================================ surfaces

ErrorCell aggregate_cell(int n1, int n2, const std::vector<Vector>& estimates, const Vector& oracle,
                         const std::vector<TestFunction>& battery) {
  if (battery.size() != static_cast<std::size_t>(oracle.size())) throw ArgumentError("battery and oracle differ in size");
  std::vector<bool> theta_mask(battery.size());
  std::vector<bool> x_mask(battery.size());
  for (std::size_t k = 0; k < battery.size(); ++k) {
    theta_mask[k] = battery[k].coord == Coord::kTheta;
    x_mask[k] = !theta_mask[k];
  }
  ErrorCell cell;
  cell.n1 = n1;
  cell.n2 = n2;
  cell.replications = static_cast<int>(estimates.size());
  cell.l2_error = l2_error(estimates, oracle);
  cell.l2_error_theta = l2_error(estimates, oracle, theta_mask);
  cell.l2_error_x = l2_error(estimates, oracle, x_mask);

  const auto r = static_cast<double>(estimates.size());
  double var_all = 0.0, var_theta = 0.0, var_x = 0.0;
  int count_theta = 0, count_x = 0;
  for (std::size_t k = 0; k < battery.size(); ++k) {
    double mean = 0.0;
    for (const Vector& e : estimates) mean += e[static_cast<Eigen::Index>(k)];
    mean /= r;
    double ss = 0.0;
    for (const Vector& e : estimates) ss += std::pow(e[static_cast<Eigen::Index>(k)] - mean, 2);
    const double var = estimates.size() > 1 ? ss / (r - 1.0) : 0.0;
    var_all += var;
    if (theta_mask[k]) {
      var_theta += var;
      ++count_theta;
    } else {
      var_x += var;
      ++count_x;
    }
  }
  cell.variance = var_all / static_cast<double>(battery.size());
  cell.variance_theta = count_theta ? var_theta / count_theta : 0.0;
  cell.variance_x = count_x ? var_x / count_x : 0.0;
  return cell;
}

Vector lipf_battery_run(const StateSpaceModel& model, const Trajectory& traj, int n1, int n2, int eval_step,
                        const std::vector<TestFunction>& battery, const RandomStream& rng, int workers) {
  if (eval_step > traj.horizon()) throw ArgumentError("evaluation step beyond the trajectory");
  IslandSystem system = lipf_init(model.fk, n1, n2, rng);
  for (int n = 0; n < eval_step; ++n) {
    system = lipf_step(std::move(system), model.fk, traj.y[static_cast<std::size_t>(n)], rng, workers);
  }
  return battery_estimates(battery, system);
}

RateFit rate_regression(const std::vector<double>& n, const std::vector<double>& error) {
  if (n.size() != error.size()) throw ArgumentError("size mismatch in rate regression");
  if (n.size() < 4) throw ArgumentError("rate regression needs at least 4 points");
  const auto [lo, hi] = std::minmax_element(n.begin(), n.end());
  if (!(*lo > 0.0) || *hi / *lo < 16.0 - 1e-12) throw ArgumentError("rate regression needs a span of at least 16x");
  const auto m = static_cast<double>(n.size());
  std::vector<double> lx(n.size()), ly(n.size());
  for (std::size_t k = 0; k < n.size(); ++k) {
    if (!(error[k] > 0.0) || !std::isfinite(error[k])) throw RegressionError("errors must be positive and finite");
    lx[k] = std::log(n[k]);
    ly[k] = std::log(error[k]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    mx += lx[k];
    my += ly[k];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
    syy += (ly[k] - my) * (ly[k] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw RegressionError("degenerate data: zero variance");
  RateFit fit;
  fit.points = static_cast<int>(n.size());
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) sse += std::pow(ly[k] - (fit.intercept + fit.slope * lx[k]), 2);
  const double se = std::sqrt(std::max(0.0, sse / (m - 2.0)) / sxx);
  const boost::math::students_t dist(m - 2.0);
  const double t = boost::math::quantile(dist, 0.975);
  fit.ci_low = fit.slope - t * se;
  fit.ci_high = fit.slope + t * se;
  return fit;
}

RateFit rate_regression(const ErrorSurface& surface, RateAxis axis) {
  std::vector<double> ns, errs;
  if (axis == RateAxis::kJoint) {
    for (const ErrorCell& c : surface.cells) {
      ns.push_back(static_cast<double>(c.n1) * c.n2);
      errs.push_back(c.l2_error);
    }
    return rate_regression(ns, errs);
  }
  // Group by the fixed coordinate and use the largest group (ties: larger fixed value).
  std::map<int, std::vector<const ErrorCell*>> groups;
  for (const ErrorCell& c : surface.cells) groups[axis == RateAxis::kN1 ? c.n2 : c.n1].push_back(&c);
  const std::vector<const ErrorCell*>* best = nullptr;
  for (const auto& [key, cells] : groups) {
    if (!best || cells.size() >= best->size()) best = &cells;
  }
  if (!best) throw ArgumentError("empty surface");
  for (const ErrorCell* c : *best) {
    ns.push_back(axis == RateAxis::kN1 ? c->n1 : c->n2);
    errs.push_back(c->l2_error);
  }
  return rate_regression(ns, errs);
}

// ============================================================ signals

PosteriorSummary summarize(const IslandSystem& system, bool filtered) {
  const MarginalEstimates m = marginal_estimates(system, filtered);
  PosteriorSummary s;
  s.param_mean = m.param_mean;
  s.state_mean = m.state_mean;
  // |theta| is constant inside an island, so the pooled measure reduces to island weights.
  if (filtered) {
    const Vector w = boltzmann_gibbs_log(system.weights->log_island, system.step, ExtinctionLevel::kIsland);
    for (std::size_t i = 0; i < system.islands.size(); ++i) {
      s.mean_force_strength += w[static_cast<Eigen::Index>(i)] * system.islands[i].theta.norm();
    }
  } else {
    for (const Island& island : system.islands) s.mean_force_strength += island.theta.norm();
    s.mean_force_strength /= static_cast<double>(system.islands.size());
  }
  return s;
}

PosteriorSummary summarize(const KalmanIslandSystem& system, const LinearGaussianSpec& spec, const Vector& obs,
                           bool filtered) {
  if (system.islands.empty()) throw ArgumentError("no islands");
  const auto n1 = static_cast<Eigen::Index>(system.islands.size());
  Vector w = Vector::Constant(n1, 1.0 / static_cast<double>(n1));
  if (filtered) {
    Vector logs = system.log_potentials;
    if (system.weighted_step != system.step) {
      logs.resize(n1);
      for (Eigen::Index i = 0; i < n1; ++i) {
        const auto& island = system.islands[static_cast<std::size_t>(i)];
        logs[i] = gaussian_island_log_potential(island, spec.at(island.theta, system.step), obs);
      }
    }
    w = boltzmann_gibbs_log(logs, system.step, ExtinctionLevel::kIsland);
  }
  PosteriorSummary s;
  s.param_mean = Vector::Zero(system.islands.front().theta.size());
  s.state_mean = Vector::Zero(system.islands.front().belief.mean.size());
  for (Eigen::Index i = 0; i < n1; ++i) {
    const auto& island = system.islands[static_cast<std::size_t>(i)];
    s.param_mean += w[i] * island.theta;
    s.mean_force_strength += w[i] * island.theta.norm();
    if (filtered) {
      s.state_mean += w[i] * kalman_correct(island.belief, spec.at(island.theta, system.step), obs).mean;
    } else {
      s.state_mean += w[i] * island.belief.mean;
    }
  }
  return s;
}

std::vector<std::string> signal_names(const StateSpaceModel& model) {
  std::vector<std::string> out;
  for (int k = 0; k < model.fk.param_dim; ++k) out.push_back("theta_" + std::to_string(k));
  for (int k = 0; k < model.fk.state_dim; ++k) out.push_back("x_" + std::to_string(k));
  if (model.name == "mobile") {
    out.insert(out.end(), {"speed", "force_strength", "force_orientation"});
  }
  return out;
}

Vector signal_values(const StateSpaceModel& model, const PosteriorSummary& s) {
  const auto names = signal_names(model);
  Vector out(static_cast<Eigen::Index>(names.size()));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < s.param_mean.size(); ++j) out[k++] = s.param_mean[j];
  for (Eigen::Index j = 0; j < s.state_mean.size(); ++j) out[k++] = s.state_mean[j];
  if (model.name == "mobile") {
    out[k++] = s.state_mean[2];
    out[k++] = s.mean_force_strength;
    out[k++] = std::atan2(s.param_mean[1], s.param_mean[0]);
  }
  return out;
}

Vector truth_signals(const StateSpaceModel& model, const Vector& theta, const Vector& x) {
  PosteriorSummary s;
  s.param_mean = theta;
  s.state_mean = x;
  s.mean_force_strength = theta.norm();
  return signal_values(model, s);
}

// ============================================================ RMSE

std::vector<Vector> lipf_filtered_signals(const StateSpaceModel& model, const Trajectory& traj, int n1, int n2,
                                          const RandomStream& rng, int workers) {
  const int horizon = traj.horizon();
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(horizon));
  IslandSystem system = lipf_init(model.fk, n1, n2, rng);
  for (int n = 0; n < horizon; ++n) {
    const Vector& y = traj.y[static_cast<std::size_t>(n)];
    lipf_weigh(system, model.fk, y, workers);
    out.push_back(signal_values(model, summarize(system, true)));
    if (n + 1 < horizon) system = lipf_step(std::move(system), model.fk, y, rng, workers);
  }
  return out;
}

std::vector<Vector> ikf_filtered_signals(const StateSpaceModel& model, const Trajectory& traj, int n1,
                                         const RandomStream& rng, int workers) {
  if (!model.linear) throw ArgumentError("model has no linear-Gaussian description");
  const LinearGaussianSpec& spec = *model.linear;
  const int horizon = traj.horizon();
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(horizon));
  KalmanIslandSystem system = ikf_init(model.fk, spec, n1, rng);
  for (int n = 0; n < horizon; ++n) {
    const Vector& y = traj.y[static_cast<std::size_t>(n)];
    ikf_weigh(system, spec, y);
    out.push_back(signal_values(model, summarize(system, spec, y, true)));
    if (n + 1 < horizon) system = ikf_step(std::move(system), spec, y, model.fk, rng, workers);
  }
  return out;
}

std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values, int resamples, RandomStream rng) {
  if (values.empty() || resamples < 1) throw ArgumentError("bootstrap needs data and resamples");
  const std::size_t r = values.size();
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double acc = 0.0;
    for (std::size_t k = 0; k < r; ++k) {
      auto idx = static_cast<std::size_t>(rng.uniform() * static_cast<double>(r));
      acc += values[std::min(idx, r - 1)];
    }
    m = acc / static_cast<double>(r);
  }
  std::sort(means.begin(), means.end());
  const auto pick = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  return {pick(0.025), pick(0.975)};
}

RmseTable rmse_comparison(const StateSpaceModel& model, const RmseConfig& config, const RandomStream& rng) {
  if (config.replications < 1) throw ArgumentError("need at least one replication");
  const auto names = signal_names(model);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const bool mobile_signal = names[k] == "speed" || names[k] == "force_strength" || names[k] == "force_orientation";
    if (model.name != "mobile" || mobile_signal) chosen.push_back(k);
  }
  const auto reps = static_cast<std::size_t>(config.replications);
  RmseTable table;
  table.replications = config.replications;
  table.lipf_per_replication.assign(reps, std::vector<double>(chosen.size()));
  table.ikf_per_replication.assign(reps, std::vector<double>(chosen.size()));

  parallel_for(reps, config.workers, [&](std::size_t r) {
    const Trajectory traj = simulate(model, config.horizon, rng.derive(1, r));
    const auto lipf = lipf_filtered_signals(model, traj, config.lipf_n1, config.lipf_n2, rng.derive(2, r));
    const auto ikf = ikf_filtered_signals(model, traj, config.ikf_n1, rng.derive(3, r));
    for (std::size_t s = 0; s < chosen.size(); ++s) {
      const std::size_t k = chosen[s];
      const bool angular = names[k] == "force_orientation";
      double se_lipf = 0.0, se_ikf = 0.0;
      for (int n = 0; n < config.horizon; ++n) {
        const auto un = static_cast<std::size_t>(n);
        const double truth = truth_signals(model, traj.theta[un], traj.x[un])[static_cast<Eigen::Index>(k)];
        double dl = lipf[un][static_cast<Eigen::Index>(k)] - truth;
        double di = ikf[un][static_cast<Eigen::Index>(k)] - truth;
        if (angular) {
          dl = std::remainder(dl, 2.0 * std::numbers::pi);
          di = std::remainder(di, 2.0 * std::numbers::pi);
        }
        se_lipf += dl * dl;
        se_ikf += di * di;
      }
      table.lipf_per_replication[r][s] = std::sqrt(se_lipf / config.horizon);
      table.ikf_per_replication[r][s] = std::sqrt(se_ikf / config.horizon);
    }
  });

  for (std::size_t s = 0; s < chosen.size(); ++s) {
    RmseRow row;
    row.signal = names[chosen[s]];
    std::vector<double> diffs(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      row.lipf_rmse += table.lipf_per_replication[r][s];
      row.ikf_rmse += table.ikf_per_replication[r][s];
      diffs[r] = table.lipf_per_replication[r][s] - table.ikf_per_replication[r][s];
    }
    row.lipf_rmse /= static_cast<double>(reps);
    row.ikf_rmse /= static_cast<double>(reps);
    row.mean_difference = row.lipf_rmse - row.ikf_rmse;
    std::tie(row.ci_low, row.ci_high) = bootstrap_mean_ci(diffs, config.bootstrap_resamples, rng.derive(4, s));
    table.rows.push_back(row);
  }
  return table;
}

// ============================================================ spectrum

Periodogram periodogram(const std::vector<double>& signal) {
  const auto n = signal.size();
  if (n < 16) throw ArgumentError("periodogram needs at least 16 samples");
  double mean = 0.0;
  for (double v : signal) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> in(n);
  for (std::size_t k = 0; k < n; ++k) in[k] = signal[k] - mean;
  const std::size_t bins = n / 2 + 1;
  std::vector<fftw_complex> out(bins);
  static std::mutex planner_mutex;
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex);
    fftw_destroy_plan(plan);
  }
  Periodogram p;
  p.frequency.resize(static_cast<Eigen::Index>(bins));
  p.power.resize(static_cast<Eigen::Index>(bins));
  for (std::size_t k = 0; k < bins; ++k) {
    const double mag2 = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    p.frequency[static_cast<Eigen::Index>(k)] = static_cast<double>(k) / static_cast<double>(n);
    p.power[static_cast<Eigen::Index>(k)] = mag2 / static_cast<double>(n);
  }
  p.length = n;
  return p;
}

double Periodogram::total() const {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < power.size(); ++k) {
    const bool paired = k > 0 && !(length % 2 == 0 && static_cast<std::size_t>(k) == length / 2);
    acc += (paired ? 2.0 : 1.0) * power[k];
  }
  return acc;
}

}  // namespace islandsmc
