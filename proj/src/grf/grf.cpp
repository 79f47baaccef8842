#include "fsd/grf/grf.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "fsd/tensorgrad/fft.hpp"

namespace fsd::grf {

namespace fft = tg::fft;
using cplx = std::complex<double>;

void Grid::validate() const {
  if (nx < 4 || ny < 4 || nx % 2 != 0 || ny % 2 != 0)
    throw std::invalid_argument("grid extents must be even and >= 4, got " +
                                std::to_string(ny) + "x" + std::to_string(nx));
  if (!(lx > 0.0) || !(ly > 0.0)) throw std::invalid_argument("grid lengths must be positive");
}

double Grid::kx(std::size_t col) const {
  return 2.0 * std::numbers::pi * static_cast<double>(col) / lx;
}

double Grid::kz(std::size_t row) const {
  return 2.0 * std::numbers::pi * static_cast<double>(fft::signed_frequency(row, ny)) / ly;
}

double CovarianceSpectrum::max_eigenvalue() const { return max_abs(eigenvalues); }

double CovarianceSpectrum::pointwise_variance() const {
  const std::size_t hw = grid.half_nx();
  double total = 0.0;
  for (std::size_t r = 0; r < grid.ny; ++r)
    for (std::size_t q = 0; q < hw; ++q)
      total += fft::column_weight(q, grid.nx) * eigenvalues[r * hw + q];
  return total / grid.area();
}

CovarianceSpectrum matern_spectrum(const Grid& grid, double amplitude, double tau,
                                   double gamma, double length_x, double length_y) {
  grid.validate();
  if (!(gamma > 1.0)) throw std::invalid_argument("matern: gamma must exceed 1 (trace class)");
  if (!(amplitude >= 0.0)) throw std::invalid_argument("matern: amplitude must be >= 0");
  if (!(tau > 0.0) || !(length_x > 0.0) || !(length_y > 0.0))
    throw std::invalid_argument("matern: tau and lengths must be positive");
  CovarianceSpectrum s{grid, Tensor(grid.spectrum_shape()), amplitude, tau, gamma, length_x,
                       length_y};
  const std::size_t hw = grid.half_nx();
  const double tau2 = tau * tau;
  for (std::size_t r = 0; r < grid.ny; ++r) {
    const double az = length_y * grid.kz(r);
    for (std::size_t q = 0; q < hw; ++q) {
      const double ax = length_x * grid.kx(q);
      s.eigenvalues[r * hw + q] = amplitude * std::pow((tau2 + ax * ax + az * az) / tau2, -gamma);
    }
  }
  return s;
}

CovarianceSpectrum with_pointwise_variance(CovarianceSpectrum spectrum, double variance) {
  const double current = spectrum.pointwise_variance();
  if (!(current > 0.0)) throw std::invalid_argument("spectrum has zero variance");
  const double factor = variance / current;
  spectrum.amplitude *= factor;
  spectrum.eigenvalues *= factor;
  return spectrum;
}

namespace {

void require_field(const Grid& grid, const Tensor& field) {
  if (field.shape() != grid.field_shape())
    throw tg::ShapeError("field shape " + tg::to_string(field.shape()) + " does not match grid " +
                         tg::to_string(grid.field_shape()));
}

std::vector<cplx> half_spectrum(const Grid& grid, const Tensor& field) {
  std::vector<cplx> spec(grid.ny * grid.half_nx());
  fft::rfft2(field.data(), grid.ny, grid.nx, spec.data());
  return spec;
}

Tensor raw_inverse(const Grid& grid, const std::vector<cplx>& spec, double factor) {
  Tensor out(grid.field_shape());
  fft::irfft2_raw(spec.data(), grid.ny, grid.nx, out.data());
  out *= factor;
  return out;
}

}  // namespace

Tensor mode_coefficients(const Grid& grid, const Tensor& field) {
  require_field(grid, field);
  const double factor = std::sqrt(grid.area()) / static_cast<double>(grid.cells());
  std::vector<cplx> spec = half_spectrum(grid, field);
  Tensor out({grid.ny, grid.half_nx(), 2});
  for (std::size_t i = 0; i < spec.size(); ++i) {
    out[2 * i] = spec[i].real() * factor;
    out[2 * i + 1] = spec[i].imag() * factor;
  }
  return out;
}

Tensor mode_power(const Grid& grid, const Tensor& field) {
  Tensor c = mode_coefficients(grid, field);
  Tensor out(grid.spectrum_shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c[2 * i] * c[2 * i] + c[2 * i + 1] * c[2 * i + 1];
  return out;
}

Tensor field_from_coefficients(const Grid& grid, const Tensor& coefficients) {
  if (coefficients.shape() != tg::Shape{grid.ny, grid.half_nx(), 2})
    throw tg::ShapeError("coefficient shape " + tg::to_string(coefficients.shape()));
  std::vector<cplx> spec(grid.ny * grid.half_nx());
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = {coefficients[2 * i], coefficients[2 * i + 1]};
  return raw_inverse(grid, spec, 1.0 / std::sqrt(grid.area()));
}

Tensor spectral_multiply(const Tensor& field, const Tensor& multipliers) {
  if (field.rank() < 2) throw tg::ShapeError("spectral_multiply: field rank < 2");
  const std::size_t h = field.dim(field.rank() - 2), w = field.dim(field.rank() - 1);
  const std::size_t hw = fft::half_width(w);
  if (multipliers.shape() != tg::Shape{h, hw})
    throw tg::ShapeError("spectral_multiply: multiplier shape " + tg::to_string(multipliers.shape()));
  const std::size_t channels = field.size() / (h * w);
  Tensor out(field.shape());
  std::vector<cplx> spec(h * hw);
  for (std::size_t c = 0; c < channels; ++c) {
    fft::rfft2(field.data() + c * h * w, h, w, spec.data());
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= multipliers[i];
    fft::irfft2(spec.data(), h, w, out.data() + c * h * w);
  }
  return out;
}

Tensor sample_grf(const CovarianceSpectrum& spectrum, Rng& rng) {
  const Grid& g = spectrum.grid;
  const std::size_t hw = g.half_nx();
  std::vector<cplx> spec(g.ny * hw);
  auto lambda = [&](std::size_t r, std::size_t q) { return spectrum.eigenvalues[r * hw + q]; };
  for (std::size_t q = 0; q < hw; ++q) {
    const bool self_conjugate_column = fft::column_weight(q, g.nx) == 1.0;
    for (std::size_t r = 0; r < g.ny; ++r) {
      const std::size_t mirror = (g.ny - r) % g.ny;
      if (self_conjugate_column) {
        if (mirror == r) {
          spec[r * hw + q] = std::sqrt(lambda(r, q)) * rng.normal();
        } else if (r < mirror) {
          const double s = std::sqrt(0.5 * lambda(r, q));
          const double re = rng.normal(), im = rng.normal();
          spec[r * hw + q] = s * cplx(re, im);
          spec[mirror * hw + q] = s * cplx(re, -im);
        }
      } else {
        const double s = std::sqrt(0.5 * lambda(r, q));
        const double re = rng.normal(), im = rng.normal();
        spec[r * hw + q] = s * cplx(re, im);
      }
    }
  }
  return raw_inverse(g, spec, 1.0 / std::sqrt(g.area()));
}

Tensor whiten(const CovarianceSpectrum& spectrum, const Tensor& field) {
  const Grid& g = spectrum.grid;
  Tensor c = mode_coefficients(g, field);
  const double energy = dot(c, c);
  for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i) {
    const double lambda = spectrum.eigenvalues[i];
    if (lambda > 0.0) {
      const double inv = 1.0 / std::sqrt(lambda);
      c[2 * i] *= inv;
      c[2 * i + 1] *= inv;
    } else {
      const double mode_energy = c[2 * i] * c[2 * i] + c[2 * i + 1] * c[2 * i + 1];
      if (mode_energy > 1e-24 * energy)
        throw std::domain_error("whiten: zero-eigenvalue mode carries energy");
      c[2 * i] = c[2 * i + 1] = 0.0;
    }
  }
  return field_from_coefficients(g, c);
}

Tensor color(const CovarianceSpectrum& spectrum, const Tensor& field) {
  require_field(spectrum.grid, field);
  Tensor mult = spectrum.eigenvalues;
  for (double& v : mult.values()) v = std::sqrt(v);
  return spectral_multiply(field, mult);
}

GeoPriorBox GeoPriorBox::for_grid(const Grid& grid) {
  GeoPriorBox box;
  box.corr_x = {0.1 * grid.lx, 1.0 * grid.lx};
  box.corr_z = {0.05 * grid.ly, 0.5 * grid.ly};
  return box;
}

void GeoPriorBox::validate() const {
  auto check = [](const Range& r, const char* name, bool positive) {
    if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string("prior box: empty range for ") + name);
    if (positive && !(r.lo > 0.0))
      throw std::invalid_argument(std::string("prior box: ") + name + " must be positive");
  };
  check(mu, "mu", false);
  check(sigma, "sigma", true);
  check(corr_x, "corr_x", true);
  check(corr_z, "corr_z", true);
  if (!(gamma > 1.0)) throw std::invalid_argument("prior box: gamma must exceed 1");
}

std::pair<Tensor, GeoHyperparams> sample_geomodel(const GeoPriorBox& box, const Grid& grid,
                                                  Rng& rng) {
  box.validate();
  GeoHyperparams hp;
  hp.mu = rng.uniform(box.mu.lo, box.mu.hi);
  hp.sigma = rng.uniform(box.sigma.lo, box.sigma.hi);
  hp.corr_x = rng.uniform(box.corr_x.lo, box.corr_x.hi);
  hp.corr_z = rng.uniform(box.corr_z.lo, box.corr_z.hi);
  const CovarianceSpectrum spec = matern_spectrum(grid, 1.0, 1.0, box.gamma, hp.corr_x, hp.corr_z);
  Tensor g = sample_grf(spec, rng);
  double mean = 0.0;
  for (double v : g.values()) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(g.size()));
  if (!(sd > 0.0)) throw tg::NumericalError("sample_geomodel: degenerate field");
  for (double& v : g.values()) v = hp.mu + hp.sigma * (v - mean) / sd;
  return {std::move(g), hp};
}

}  // namespace fsd::grf
