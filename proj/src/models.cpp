#include "islandsmc/models.hpp"

#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "islandsmc/errors.hpp"
#include "islandsmc/io.hpp"

namespace islandsmc {

namespace {

double sd_of(double var) { return var > 0.0 ? std::sqrt(var) : 0.0; }

// Lower Cholesky factor of a PSD covariance; zero matrices are allowed.
Matrix chol(const Matrix& cov, const char* what) {
  if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw ArgumentError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

Vector gaussian_draw(const Vector& mean, const Matrix& lower, RandomStream& rng) {
  Vector z(mean.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
  return mean + lower * z;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.size();
  const auto cols = rows ? j.at(0).size() : 0;
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (j.at(r).size() != cols) throw ArgumentError("ragged matrix in parameters");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = j.at(k).get<double>();
  return v;
}

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const char* model) {
  if (!j.is_object()) throw ArgumentError(std::string(model) + " parameters must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ArgumentError(std::string("unknown ") + model + " parameter '" + key + "'");
  }
}

void require_spd(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || !m.isApprox(m.transpose(), 1e-12)) throw ArgumentError(std::string(what) + " must be symmetric");
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw ArgumentError(std::string(what) + " must be positive definite");
}

// Symmetric and either zero (a noiseless component) or positive definite.
void require_psd(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || !m.isApprox(m.transpose(), 1e-12)) throw ArgumentError(std::string(what) + " must be symmetric");
  if (m.isZero(0.0)) return;
  require_spd(m, what);
}

}  // namespace

// ---------------------------------------------------------------- growth

StateSpaceModel growth_model(const GrowthModelParams& p) {
  if (p.sigma_theta2 < 0.0 || p.sigma_x2 < 0.0 || !(p.sigma_y2 > 0.0)) {
    throw ArgumentError("growth model variances must be nonnegative and sigma_y2 positive");
  }
  const double st = sd_of(p.sigma_theta2);
  const double sx = sd_of(p.sigma_x2);
  const double sy = std::isinf(p.sigma_y2) ? 0.0 : std::sqrt(p.sigma_y2);
  const double inv2vy = std::isinf(p.sigma_y2) ? 0.0 : 0.5 / p.sigma_y2;

  StateSpaceModel m;
  m.name = "growth";
  m.horizon = p.horizon;
  m.params = to_json(p);
  FkModel& fk = m.fk;
  fk.state_dim = 1;
  fk.param_dim = 1;
  fk.obs_dim = 1;
  fk.init_param = [st](RandomStream& rng) { return Vector::Constant(1, st * rng.normal()); };
  fk.init_state = [sx](const Vector&, VectorRef x, RandomStream& rng) { x[0] = sx * rng.normal(); };
  fk.param_kernel = [st](int n, const Vector&, RandomStream& rng) {
    return Vector::Constant(1, growth_param_drift(n) + st * rng.normal());
  };
  fk.state_kernel = [sx](int, const Vector& theta, ConstVectorRef x, VectorRef out, RandomStream& rng) {
    out[0] = growth_state_drift(x[0]) + theta[0] + sx * rng.normal();
  };
  fk.log_potential = [inv2vy](int, const Vector&, ConstVectorRef x, const Vector& y) {
    const double r = y[0] - x[0];
    return -r * r * inv2vy;
  };
  m.observe = [sy](int, const Vector&, ConstVectorRef x, RandomStream& rng) {
    return Vector::Constant(1, x[0] + sy * rng.normal());
  };
  return m;
}

GrowthModelParams growth_params_from_json(const nlohmann::json& j) {
  GrowthModelParams p;
  reject_unknown(j, to_json(p), "growth");
  p.sigma_theta2 = j.value("sigma_theta2", p.sigma_theta2);
  p.sigma_x2 = j.value("sigma_x2", p.sigma_x2);
  p.sigma_y2 = j.value("sigma_y2", p.sigma_y2);
  p.horizon = j.value("horizon", p.horizon);
  return p;
}

nlohmann::json to_json(const GrowthModelParams& p) {
  return {{"sigma_theta2", p.sigma_theta2}, {"sigma_x2", p.sigma_x2}, {"sigma_y2", p.sigma_y2}, {"horizon", p.horizon}};
}

// ---------------------------------------------------------------- mobile

StateSpaceModel mobile_model(const MobileModelParams& p) {
  if (!(p.dt > 0.0)) throw ArgumentError("dt must be positive");
  require_psd(p.sigma_theta, "sigma_theta");
  require_psd(p.sigma_x, "sigma_x");
  require_spd(p.sigma_y, "sigma_y");
  require_psd(p.sigma_x0, "sigma_x0");
  require_psd(p.sigma_theta0, "sigma_theta0");
  if (p.sigma_y.rows() != 3 || p.sigma_x.rows() != 2 || p.sigma_theta.rows() != 2) {
    throw ArgumentError("mobile model covariances have wrong dimensions");
  }
  if (p.poisson_rate < 0.0 || p.jump_var < 0.0 || p.sigma_v0 < 0.0) throw ArgumentError("negative rate or variance");

  const Matrix l_theta = chol(p.sigma_theta, "sigma_theta");
  const Matrix l_x = chol(p.sigma_x, "sigma_x");
  const Matrix l_y = chol(p.sigma_y, "sigma_y");
  const Matrix l_x0 = chol(p.sigma_x0, "sigma_x0");
  const Matrix l_theta0 = chol(p.sigma_theta0, "sigma_theta0");
  const Matrix y_precision = p.sigma_y.inverse();
  const double heading_x = std::cos(p.alpha) * p.dt;
  const double heading_y = std::sin(p.alpha) * p.dt;
  const double jump_prob = p.jump_probability();
  const double jump_sd = std::sqrt(p.jump_var);
  const double dt = p.dt;

  StateSpaceModel m;
  m.name = "mobile";
  m.horizon = p.horizon;
  m.params = to_json(p);
  FkModel& fk = m.fk;
  fk.state_dim = 3;
  fk.param_dim = 2;
  fk.obs_dim = 3;
  fk.init_param = [mean = p.m_theta0, l_theta0](RandomStream& rng) { return gaussian_draw(mean, l_theta0, rng); };
  fk.init_state = [mx = p.m_x0, l_x0, mv = p.m_v0, sv = std::sqrt(p.sigma_v0)](const Vector&, VectorRef x,
                                                                                RandomStream& rng) {
    x.head<2>() = gaussian_draw(mx, l_x0, rng);
    x[2] = mv + sv * rng.normal();
  };
  fk.param_kernel = [l_theta](int, const Vector& theta, RandomStream& rng) {
    Vector drift(2);
    drift << std::cos(theta[0]), std::sin(theta[1]);
    return gaussian_draw(drift, l_theta, rng);
  };
  fk.state_kernel = [=](int, const Vector& theta, ConstVectorRef x, VectorRef out, RandomStream& rng) {
    const double z0 = rng.normal();
    const double z1 = rng.normal();
    const double e0 = l_x(0, 0) * z0;
    const double e1 = l_x(1, 0) * z0 + l_x(1, 1) * z1;
    const double v = x[2];
    out[0] = x[0] + v * heading_x + theta[0] * dt + e0;
    out[1] = x[1] + v * heading_y + theta[1] * dt + e1;
    const bool jump = rng.uniform() < jump_prob;
    const double height = rng.normal();
    out[2] = v + (jump ? jump_sd * height : 0.0);
  };
  fk.log_potential = [y_precision](int, const Vector&, ConstVectorRef x, const Vector& y) {
    const Eigen::Vector3d r(y[0] - x[0], y[1] - x[1], y[2] - x[2]);
    return -0.5 * r.dot(y_precision * r);
  };
  m.observe = [l_y](int, const Vector&, ConstVectorRef x, RandomStream& rng) {
    return Vector(gaussian_draw(x, l_y, rng));
  };

  // Kalman description: the speed jumps are replaced by a Gaussian of equal variance.
  LinearGaussianSpec lin;
  lin.state_dim = 3;
  lin.obs_dim = 3;
  LinearGaussianStep base;
  base.A = Matrix::Identity(3, 3);
  base.A(0, 2) = heading_x;
  base.A(1, 2) = heading_y;
  base.B = Matrix::Identity(3, 3);
  base.sigma_x = Matrix::Zero(3, 3);
  base.sigma_x.topLeftCorner<2, 2>() = p.sigma_x;
  base.sigma_x(2, 2) = jump_prob * p.jump_var;
  base.C = Matrix::Identity(3, 3);
  base.c = Vector::Zero(3);
  base.D = Matrix::Identity(3, 3);
  base.sigma_y = p.sigma_y;
  lin.at = [base, dt](const Vector& theta, int) {
    LinearGaussianStep s = base;
    s.a = Vector::Zero(3);
    s.a.head<2>() = theta * dt;
    return s;
  };
  lin.initial = [mx = p.m_x0, sx0 = p.sigma_x0, mv = p.m_v0, sv = p.sigma_v0](const Vector&) {
    GaussianBelief b;
    b.mean = Vector(3);
    b.mean << mx[0], mx[1], mv;
    b.cov = Matrix::Zero(3, 3);
    b.cov.topLeftCorner<2, 2>() = sx0;
    b.cov(2, 2) = sv;
    return b;
  };
  m.linear = lin;
  return m;
}

Matrix mobile_position_jacobian(const MobileModelParams& p) {
  Matrix j = Matrix::Zero(2, 5);
  j(0, 0) = 1.0;
  j(1, 1) = 1.0;
  j(0, 2) = std::cos(p.alpha) * p.dt;
  j(1, 2) = std::sin(p.alpha) * p.dt;
  j(0, 3) = p.dt;
  j(1, 4) = p.dt;
  return j;
}

MobileModelParams mobile_params_from_json(const nlohmann::json& j) {
  MobileModelParams p;
  reject_unknown(j, to_json(p), "mobile");
  p.dt = j.value("dt", p.dt);
  p.alpha = j.value("alpha", p.alpha);
  if (j.contains("sigma_theta")) p.sigma_theta = matrix_from_json(j["sigma_theta"]);
  if (j.contains("sigma_x")) p.sigma_x = matrix_from_json(j["sigma_x"]);
  if (j.contains("sigma_y")) p.sigma_y = matrix_from_json(j["sigma_y"]);
  p.poisson_rate = j.value("poisson_rate", p.poisson_rate);
  p.jump_var = j.value("jump_var", p.jump_var);
  if (j.contains("m_x0")) p.m_x0 = vector_from_json(j["m_x0"]);
  if (j.contains("sigma_x0")) p.sigma_x0 = matrix_from_json(j["sigma_x0"]);
  p.m_v0 = j.value("m_v0", p.m_v0);
  p.sigma_v0 = j.value("sigma_v0", p.sigma_v0);
  if (j.contains("m_theta0")) p.m_theta0 = vector_from_json(j["m_theta0"]);
  if (j.contains("sigma_theta0")) p.sigma_theta0 = matrix_from_json(j["sigma_theta0"]);
  p.horizon = j.value("horizon", p.horizon);
  return p;
}

nlohmann::json to_json(const MobileModelParams& p) {
  return {{"dt", p.dt},
          {"alpha", p.alpha},
          {"sigma_theta", matrix_to_json(p.sigma_theta)},
          {"sigma_x", matrix_to_json(p.sigma_x)},
          {"sigma_y", matrix_to_json(p.sigma_y)},
          {"poisson_rate", p.poisson_rate},
          {"jump_var", p.jump_var},
          {"m_x0", vector_to_json(p.m_x0)},
          {"sigma_x0", matrix_to_json(p.sigma_x0)},
          {"m_v0", p.m_v0},
          {"sigma_v0", p.sigma_v0},
          {"m_theta0", vector_to_json(p.m_theta0)},
          {"sigma_theta0", matrix_to_json(p.sigma_theta0)},
          {"horizon", p.horizon}};
}

// ---------------------------------------------------------------- linear

StateSpaceModel linear_model(const LinearModelParams& p) {
  if (p.q_theta < 0.0 || p.q_x < 0.0 || !(p.r > 0.0) || p.theta0_var < 0.0 || p.x0_var < 0.0) {
    throw ArgumentError("linear model variances must be nonnegative and r positive");
  }
  StateSpaceModel m;
  m.name = "custom-linear";
  m.horizon = p.horizon;
  m.params = to_json(p);
  FkModel& fk = m.fk;
  fk.init_param = [mu = p.theta0_mean, s = sd_of(p.theta0_var)](RandomStream& rng) {
    return Vector::Constant(1, mu + s * rng.normal());
  };
  fk.init_state = [mu = p.x0_mean, s = sd_of(p.x0_var)](const Vector&, VectorRef x, RandomStream& rng) {
    x[0] = mu + s * rng.normal();
  };
  fk.param_kernel = [rho = p.rho, s = sd_of(p.q_theta)](int, const Vector& theta, RandomStream& rng) {
    return Vector::Constant(1, rho * theta[0] + s * rng.normal());
  };
  fk.state_kernel = [a = p.a, s = sd_of(p.q_x)](int, const Vector& theta, ConstVectorRef x, VectorRef out,
                                                 RandomStream& rng) { out[0] = a * x[0] + theta[0] + s * rng.normal(); };
  fk.log_potential = [r = p.r](int, const Vector&, ConstVectorRef x, const Vector& y) {
    const double d = y[0] - x[0];
    return -0.5 * d * d / r;
  };
  m.observe = [s = std::sqrt(p.r)](int, const Vector&, ConstVectorRef x, RandomStream& rng) {
    return Vector::Constant(1, x[0] + s * rng.normal());
  };

  LinearGaussianSpec lin;
  lin.at = [p](const Vector& theta, int) {
    LinearGaussianStep s;
    s.A = Matrix::Constant(1, 1, p.a);
    s.a = Vector::Constant(1, theta[0]);
    s.B = Matrix::Identity(1, 1);
    s.sigma_x = Matrix::Constant(1, 1, p.q_x);
    s.C = Matrix::Identity(1, 1);
    s.c = Vector::Zero(1);
    s.D = Matrix::Identity(1, 1);
    s.sigma_y = Matrix::Constant(1, 1, p.r);
    return s;
  };
  lin.initial = [p](const Vector&) {
    return GaussianBelief{Vector::Constant(1, p.x0_mean), Matrix::Constant(1, 1, p.x0_var)};
  };
  m.linear = lin;
  return m;
}

LinearModelParams linear_params_from_json(const nlohmann::json& j) {
  LinearModelParams p;
  reject_unknown(j, to_json(p), "custom-linear");
  p.a = j.value("a", p.a);
  p.rho = j.value("rho", p.rho);
  p.q_theta = j.value("q_theta", p.q_theta);
  p.q_x = j.value("q_x", p.q_x);
  p.r = j.value("r", p.r);
  p.theta0_mean = j.value("theta0_mean", p.theta0_mean);
  p.theta0_var = j.value("theta0_var", p.theta0_var);
  p.x0_mean = j.value("x0_mean", p.x0_mean);
  p.x0_var = j.value("x0_var", p.x0_var);
  p.horizon = j.value("horizon", p.horizon);
  return p;
}

nlohmann::json to_json(const LinearModelParams& p) {
  return {{"a", p.a},         {"rho", p.rho},
          {"q_theta", p.q_theta}, {"q_x", p.q_x},
          {"r", p.r},         {"theta0_mean", p.theta0_mean},
          {"theta0_var", p.theta0_var}, {"x0_mean", p.x0_mean},
          {"x0_var", p.x0_var}, {"horizon", p.horizon}};
}

// ---------------------------------------------------------------- simulation

Trajectory simulate(const StateSpaceModel& model, int horizon, const RandomStream& rng) {
  if (horizon < 1) throw ArgumentError("horizon must be at least 1");
  const FkModel& fk = model.fk;
  Trajectory t;
  t.seed = rng.seed();
  t.param_hash = param_hash(model);
  t.theta.reserve(static_cast<std::size_t>(horizon) + 1);
  t.x.reserve(static_cast<std::size_t>(horizon) + 1);
  t.y.reserve(static_cast<std::size_t>(horizon) + 1);
  for (int n = 0; n <= horizon; ++n) {
    RandomStream s = rng.derive(static_cast<std::uint64_t>(n));
    Vector x(fk.state_dim);
    if (n == 0) {
      t.theta.push_back(fk.init_param(s));
      fk.init_state(t.theta.back(), x, s);
    } else {
      t.theta.push_back(fk.param_kernel(n, t.theta.back(), s));
      fk.state_kernel(n, t.theta.back(), t.x.back(), x, s);
    }
    t.x.push_back(x);
    t.y.push_back(model.observe(n, t.theta.back(), x, s));
  }
  return t;
}

std::string param_hash(const StateSpaceModel& model) {
  return io::git_blob_hash(nlohmann::json{{"model", model.name}, {"params", model.params}}.dump());
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  if (traj.x.empty()) throw ArgumentError("empty trajectory");
  os << "# seed=" << traj.seed << ",param_hash=" << traj.param_hash << "\r\n";
  std::vector<std::string> header{"step"};
  for (Eigen::Index k = 0; k < traj.theta[0].size(); ++k) header.push_back("theta_" + std::to_string(k));
  for (Eigen::Index k = 0; k < traj.x[0].size(); ++k) header.push_back("x_" + std::to_string(k));
  for (Eigen::Index k = 0; k < traj.y[0].size(); ++k) header.push_back("y_" + std::to_string(k));
  io::write_csv_row(os, header);
  for (std::size_t n = 0; n < traj.x.size(); ++n) {
    std::vector<std::string> row{std::to_string(n)};
    for (const Vector* v : {&traj.theta[n], &traj.x[n], &traj.y[n]}) {
      for (Eigen::Index k = 0; k < v->size(); ++k) row.push_back(io::format_double((*v)[k]));
    }
    io::write_csv_row(os, row);
  }
}

Trajectory read_trajectory_csv(std::istream& is) {
  Trajectory t;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#", 0) == 0) {
      for (const auto& field : io::parse_csv_row(line.substr(1))) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        std::string key = field.substr(0, eq);
        key.erase(0, key.find_first_not_of(' '));
        const std::string value = field.substr(eq + 1);
        if (key == "seed") t.seed = std::stoull(value);
        if (key == "param_hash") t.param_hash = value;
      }
      continue;
    }
    if (header.empty()) {
      header = io::parse_csv_row(line);
      continue;
    }
    const auto fields = io::parse_csv_row(line);
    if (fields.size() != header.size()) throw ArgumentError("trajectory row has wrong field count");
    std::vector<double> th, xs, ys;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const double v = std::stod(fields[k]);
      if (header[k].rfind("theta_", 0) == 0) th.push_back(v);
      else if (header[k].rfind("x_", 0) == 0) xs.push_back(v);
      else if (header[k].rfind("y_", 0) == 0) ys.push_back(v);
      else throw ArgumentError("unknown trajectory column '" + header[k] + "'");
    }
    t.theta.emplace_back(Eigen::Map<Vector>(th.data(), static_cast<Eigen::Index>(th.size())));
    t.x.emplace_back(Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size())));
    t.y.emplace_back(Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size())));
  }
  if (t.x.empty()) throw ArgumentError("trajectory file has no rows");
  return t;
}

}  // namespace islandsmc
