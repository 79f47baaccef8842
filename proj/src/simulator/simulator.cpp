#include "fsd/simulator/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace fsd::sim {

ForwardConfig ForwardConfig::with_injector(const Grid& grid, double rate) {
  grid.validate();
  ForwardConfig c;
  c.grid = grid;
  c.source = Tensor(grid.field_shape());
  const double cell_area = (grid.lx / grid.nx) * (grid.ly / grid.ny);
  c.source[(grid.ny / 2) * grid.nx + 1] = rate / cell_area;
  return c;
}

void ForwardConfig::validate() const {
  grid.validate();
  if (source.shape() != grid.field_shape()) throw tg::ShapeError("forward config: source shape");
  if (max_abs(source) == 0.0) throw std::invalid_argument("forward config: source is identically zero");
  if (!(cg_tol > 0.0)) throw std::invalid_argument("forward config: cg_tol must be positive");
  if (!(kappa_clip > 0.0)) throw std::invalid_argument("forward config: kappa_clip must be positive");
  if (cg_max_iter == 0) throw std::invalid_argument("forward config: cg_max_iter must be positive");
}

std::string ForwardConfig::canonical_json() const {
  nlohmann::json j;
  j["grid"] = {{"nx", grid.nx}, {"ny", grid.ny}, {"lx", grid.lx}, {"ly", grid.ly}};
  j["kappa_clip"] = kappa_clip;
  j["front_gain"] = front_gain;
  j["front_level"] = front_level;
  j["cg_tol"] = cg_tol;
  j["cg_max_iter"] = cg_max_iter;
  std::vector<double> src(source.values().begin(), source.values().end());
  j["source"] = src;
  return j.dump();
}

EllipticOperator::EllipticOperator(const Grid& grid, const Tensor& kappa)
    : grid_(grid), kappa_(kappa) {
  if (kappa.shape() != grid.field_shape()) throw tg::ShapeError("elliptic operator: kappa shape");
  const double hx = grid.lx / grid.nx, hz = grid.ly / grid.ny;
  wx_ = 1.0 / (hx * hx);
  wz_ = 1.0 / (hz * hz);
}

namespace {

// Harmonic-mean face transmissibility and its partial derivative in the first argument.
inline double face_t(double a, double b, double w) { return 2.0 * w * a * b / (a + b); }
inline double face_dt(double a, double b, double w) { return 2.0 * w * b * b / ((a + b) * (a + b)); }

}  // namespace

void EllipticOperator::apply(const double* x, double* y) const {
  const std::size_t nx = grid_.nx, ny = grid_.ny;
  const double* k = kappa_.data();
  for (std::size_t r = 0; r < ny; ++r)
    for (std::size_t c = 0; c < nx; ++c) {
      const std::size_t i = r * nx + c;
      double acc = 0.0;
      const double ki = k[i], xi = x[i];
      if (c > 0) acc += face_t(ki, k[i - 1], wx_) * (xi - x[i - 1]);
      else acc += 2.0 * wx_ * ki * xi;
      if (c + 1 < nx) acc += face_t(ki, k[i + 1], wx_) * (xi - x[i + 1]);
      else acc += 2.0 * wx_ * ki * xi;
      if (r > 0) acc += face_t(ki, k[i - nx], wz_) * (xi - x[i - nx]);
      else acc += 2.0 * wz_ * ki * xi;
      if (r + 1 < ny) acc += face_t(ki, k[i + nx], wz_) * (xi - x[i + nx]);
      else acc += 2.0 * wz_ * ki * xi;
      y[i] = acc;
    }
}

Tensor EllipticOperator::apply(const Tensor& x) const {
  Tensor y(x.shape());
  apply(x.data(), y.data());
  return y;
}

Tensor EllipticOperator::solve(const Tensor& rhs, double tol, std::size_t max_iter,
                               SolveStats* stats) const {
  if (rhs.shape() != grid_.field_shape()) throw tg::ShapeError("elliptic solve: rhs shape");
  const std::size_t n = rhs.size();
  Tensor x(rhs.shape());
  const double bnorm = norm2(rhs);
  if (stats) *stats = {0, 0.0};
  if (bnorm == 0.0) return x;

  // Jacobi preconditioner: inverse diagonal, obtained by applying A to unit vectors' row sums.
  Tensor diag(rhs.shape());
  {
    const std::size_t nx = grid_.nx, ny = grid_.ny;
    const double* k = kappa_.data();
    for (std::size_t r = 0; r < ny; ++r)
      for (std::size_t c = 0; c < nx; ++c) {
        const std::size_t i = r * nx + c;
        double d = 0.0;
        d += c > 0 ? face_t(k[i], k[i - 1], wx_) : 2.0 * wx_ * k[i];
        d += c + 1 < nx ? face_t(k[i], k[i + 1], wx_) : 2.0 * wx_ * k[i];
        d += r > 0 ? face_t(k[i], k[i - nx], wz_) : 2.0 * wz_ * k[i];
        d += r + 1 < ny ? face_t(k[i], k[i + nx], wz_) : 2.0 * wz_ * k[i];
        diag[i] = 1.0 / d;
      }
  }

  Tensor r = rhs, z(rhs.shape()), p(rhs.shape()), ap(rhs.shape());
  auto precondition = [&] {
    for (std::size_t i = 0; i < n; ++i) z[i] = diag[i] * r[i];
  };
  precondition();
  p = z;
  double rz = dot(r, z);
  std::size_t it = 0;
  double true_rel = 1.0;
  while (it < max_iter) {
    apply(p.data(), ap.data());
    const double alpha = rz / dot(p, ap);
    x.axpy(alpha, p);
    r.axpy(-alpha, ap);
    ++it;
    if (norm2(r) <= tol * bnorm) {
      // Confirm against the true residual; restart from it if recursion drifted.
      apply(x.data(), ap.data());
      for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - ap[i];
      true_rel = norm2(r) / bnorm;
      if (true_rel <= tol) break;
      precondition();
      p = z;
      rz = dot(r, z);
      continue;
    }
    precondition();
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  if (true_rel > tol) {
    apply(x.data(), ap.data());
    Tensor res = rhs - ap;
    true_rel = norm2(res) / bnorm;
  }
  if (stats) *stats = {it, true_rel};
  if (!(true_rel <= tol))
    throw SolverError("CG did not converge: relative residual " + std::to_string(true_rel) +
                      " after " + std::to_string(it) + " iterations");
  return x;
}

Tensor EllipticOperator::bilinear_kappa_gradient(const Tensor& lambda, const Tensor& p) const {
  const std::size_t nx = grid_.nx, ny = grid_.ny;
  const double* k = kappa_.data();
  Tensor g(kappa_.shape());
  auto face = [&](std::size_t i, std::size_t j, double w) {
    const double prod = (lambda[i] - lambda[j]) * (p[i] - p[j]);
    g[i] += face_dt(k[i], k[j], w) * prod;
    g[j] += face_dt(k[j], k[i], w) * prod;
  };
  for (std::size_t r = 0; r < ny; ++r)
    for (std::size_t c = 0; c < nx; ++c) {
      const std::size_t i = r * nx + c;
      if (c + 1 < nx) face(i, i + 1, wx_);
      if (r + 1 < ny) face(i, i + nx, wz_);
      const int boundary_x = (c == 0) + (c + 1 == nx);
      const int boundary_z = (r == 0) + (r + 1 == ny);
      g[i] += (2.0 * wx_ * boundary_x + 2.0 * wz_ * boundary_z) * lambda[i] * p[i];
    }
  return g;
}

Tensor EllipticOperator::directional_apply(const Tensor& dkappa, const Tensor& p) const {
  const std::size_t nx = grid_.nx, ny = grid_.ny;
  const double* k = kappa_.data();
  Tensor y(p.shape());
  auto face = [&](std::size_t i, std::size_t j, double w) {
    const double dt = face_dt(k[i], k[j], w) * dkappa[i] + face_dt(k[j], k[i], w) * dkappa[j];
    const double flux = dt * (p[i] - p[j]);
    y[i] += flux;
    y[j] -= flux;
  };
  for (std::size_t r = 0; r < ny; ++r)
    for (std::size_t c = 0; c < nx; ++c) {
      const std::size_t i = r * nx + c;
      if (c + 1 < nx) face(i, i + 1, wx_);
      if (r + 1 < ny) face(i, i + nx, wz_);
      const int boundary_x = (c == 0) + (c + 1 == nx);
      const int boundary_z = (r == 0) + (r + 1 == ny);
      y[i] += (2.0 * wx_ * boundary_x + 2.0 * wz_ * boundary_z) * dkappa[i] * p[i];
    }
  return y;
}

std::vector<double> EllipticOperator::dense() const {
  const std::size_t n = grid_.cells();
  std::vector<double> a(n * n);
  Tensor e(grid_.field_shape()), col(grid_.field_shape());
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    apply(e.data(), col.data());
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) a[i * n + j] = col[i];
  }
  return a;
}

Tensor coefficient(const ForwardConfig& config, const Tensor& m) {
  if (m.shape() != config.grid.field_shape())
    throw tg::ShapeError("forward: m shape " + tg::to_string(m.shape()));
  if (!m.all_finite()) throw tg::NumericalError("forward: non-finite geomodel");
  Tensor kappa(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i)
    kappa[i] = std::exp(std::clamp(m[i], -config.kappa_clip, config.kappa_clip));
  return kappa;
}

namespace {

// Derivative of clamp(m) wrt m: 1 strictly inside the clip, else 0.
Tensor kappa_chain(const ForwardConfig& config, const Tensor& m, const Tensor& kappa) {
  Tensor d(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i)
    d[i] = std::abs(m[i]) < config.kappa_clip ? kappa[i] : 0.0;
  return d;
}

}  // namespace

Tensor pressure(const ForwardConfig& config, const Tensor& m, SolveStats* stats) {
  const EllipticOperator op(config.grid, coefficient(config, m));
  return op.solve(config.source, config.cg_tol, config.cg_max_iter, stats);
}

Tensor front(const ForwardConfig& config, const Tensor& p) {
  Tensor s(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = std::clamp(config.front_gain * (p[i] - config.front_level), 0.0, 1.0);
    s[i] = t * t * (3.0 - 2.0 * t);
  }
  return s;
}

Tensor front_derivative(const ForwardConfig& config, const Tensor& p) {
  Tensor d(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = std::clamp(config.front_gain * (p[i] - config.front_level), 0.0, 1.0);
    d[i] = config.front_gain * 6.0 * t * (1.0 - t);
  }
  return d;
}

Tensor solve_forward(const ForwardConfig& config, const Tensor& m, SolveStats* stats) {
  return front(config, pressure(config, m, stats));
}

Tensor vjp_forward(const ForwardConfig& config, const Tensor& m, const Tensor& cotangent) {
  if (cotangent.shape() != config.grid.field_shape()) throw tg::ShapeError("vjp_forward: cotangent shape");
  const Tensor kappa = coefficient(config, m);
  const EllipticOperator op(config.grid, kappa);
  const Tensor p = op.solve(config.source, config.cg_tol, config.cg_max_iter);
  Tensor g = front_derivative(config, p);
  g *= cotangent;
  const Tensor lambda = op.solve(g, config.cg_tol, config.cg_max_iter);
  Tensor grad = op.bilinear_kappa_gradient(lambda, p);
  grad *= kappa_chain(config, m, kappa);
  grad *= -1.0;
  return grad;
}

Tensor pressure_jvp(const ForwardConfig& config, const Tensor& m, const Tensor& dm) {
  const Tensor kappa = coefficient(config, m);
  const EllipticOperator op(config.grid, kappa);
  const Tensor p = op.solve(config.source, config.cg_tol, config.cg_max_iter);
  Tensor dkappa = kappa_chain(config, m, kappa);
  dkappa *= dm;
  Tensor rhs = op.directional_apply(dkappa, p);
  rhs *= -1.0;
  return op.solve(rhs, config.cg_tol, config.cg_max_iter);
}

Tensor pressure_vjp(const ForwardConfig& config, const Tensor& m, const Tensor& v) {
  const Tensor kappa = coefficient(config, m);
  const EllipticOperator op(config.grid, kappa);
  const Tensor p = op.solve(config.source, config.cg_tol, config.cg_max_iter);
  const Tensor lambda = op.solve(v, config.cg_tol, config.cg_max_iter);
  Tensor grad = op.bilinear_kappa_gradient(lambda, p);
  grad *= kappa_chain(config, m, kappa);
  grad *= -1.0;
  return grad;
}

std::size_t Observation::count() const {
  std::size_t n = 0;
  for (double v : mask.values()) n += v != 0.0;
  return n;
}

Tensor random_mask(const Grid& grid, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("random_mask: fraction must be in (0, 1]");
  Tensor mask(grid.field_shape());
  for (double& v : mask.values()) v = rng.uniform() < fraction ? 1.0 : 0.0;
  return mask;
}

Tensor column_mask(const Grid& grid, const std::vector<std::size_t>& columns) {
  Tensor mask(grid.field_shape());
  for (std::size_t c : columns) {
    if (c >= grid.nx) throw std::out_of_range("column_mask: column " + std::to_string(c));
    for (std::size_t r = 0; r < grid.ny; ++r) mask[r * grid.nx + c] = 1.0;
  }
  return mask;
}

std::vector<std::size_t> default_well_columns(const Grid& grid) {
  return {1, (3 * grid.nx) / 4};
}

Observation observe(const Tensor& field, const Tensor& mask, double noise_std, Rng& rng,
                    ObservationTarget target) {
  tg::require_same_shape(field, mask, "observe");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("observe: noise_std must be >= 0");
  Observation obs{mask, Tensor(field.shape()), noise_std, target};
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) throw std::invalid_argument("observe: mask must be 0/1");
    const double eta = noise_std * rng.normal();
    if (mask[i] == 1.0) obs.values[i] = field[i] + eta;
  }
  return obs;
}

}  // namespace fsd::sim
