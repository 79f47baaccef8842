#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>

#include "fsd/core/rng.hpp"
#include "fsd/tensorgrad/tensor.hpp"

// Gaussian random fields on a periodic rectangular grid.
//
// A Field is a tensor of shape [ny, nx]: rows run along z (height), columns
// along x (width). Spectral quantities live on the real-FFT half spectrum
// [ny, nx/2 + 1]. Mode coefficients are normalized so that for a field drawn
// from a spectrum with eigenvalues lambda, E|c_k|^2 = lambda_k.
namespace fsd::grf {

using tg::Tensor;

struct Grid {
  std::size_t nx = 32;
  std::size_t ny = 32;
  double lx = 1.0;
  double ly = 1.0;

  /// Throws std::invalid_argument unless extents are even and >= 4 and lengths positive.
  void validate() const;
  std::size_t cells() const { return nx * ny; }
  std::size_t half_nx() const { return nx / 2 + 1; }
  double area() const { return lx * ly; }
  tg::Shape field_shape() const { return {ny, nx}; }
  tg::Shape spectrum_shape() const { return {ny, half_nx()}; }
  /// Angular wavenumbers of half-spectrum entry (row, col).
  double kx(std::size_t col) const;
  double kz(std::size_t row) const;
  bool operator==(const Grid&) const = default;
};

struct CovarianceSpectrum {
  Grid grid;
  Tensor eigenvalues;  // [ny, nx/2+1]
  double amplitude = 1.0;
  double tau = 1.0;
  double gamma = 2.0;
  double length_x = 0.1;
  double length_y = 0.1;

  double max_eigenvalue() const;
  /// Pointwise variance of a sample: sum over the full spectrum / area.
  double pointwise_variance() const;
};

/// amplitude * ((tau^2 + (length_x kx)^2 + (length_y kz)^2) / tau^2)^(-gamma).
/// Requires gamma > 1, positive lengths and tau, amplitude >= 0.
CovarianceSpectrum matern_spectrum(const Grid& grid, double amplitude, double tau,
                                   double gamma, double length_x, double length_y);

/// Same spectrum with amplitude rescaled so pointwise variance equals `variance`.
CovarianceSpectrum with_pointwise_variance(CovarianceSpectrum spectrum, double variance);

/// Normalized half-spectrum coefficients [ny, nx/2+1, 2] of a field.
Tensor mode_coefficients(const Grid& grid, const Tensor& field);
/// |c_k|^2 of mode_coefficients.
Tensor mode_power(const Grid& grid, const Tensor& field);
/// Inverse of mode_coefficients (Hermitian projection on self-conjugate columns).
Tensor field_from_coefficients(const Grid& grid, const Tensor& coefficients);

/// Multiplies each Fourier mode of `field` by a real factor [ny, nx/2+1].
Tensor spectral_multiply(const Tensor& field, const Tensor& multipliers);

Tensor sample_grf(const CovarianceSpectrum& spectrum, Rng& rng);

/// Divides modes by sqrt(eigenvalue). Zero-eigenvalue modes must carry no
/// energy (relative to the field) or std::domain_error is thrown.
Tensor whiten(const CovarianceSpectrum& spectrum, const Tensor& field);
Tensor color(const CovarianceSpectrum& spectrum, const Tensor& field);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct GeoHyperparams {
  double mu = 0.0;
  double sigma = 1.0;
  double corr_x = 0.1;
  double corr_z = 0.1;
};

struct GeoPriorBox {
  Range mu{-1.0, 1.0};
  Range sigma{0.2, 1.0};
  Range corr_x{0.1, 1.0};   // absolute lengths
  Range corr_z{0.05, 0.5};
  double gamma = 2.0;       // smoothness of the standardized field

  /// Box scaled to a grid: correlation ranges are fractions of lx, ly.
  static GeoPriorBox for_grid(const Grid& grid);
  void validate() const;
};

/// Draws hyperparameters uniformly from the box, then returns
/// mu + sigma * (g - mean(g)) / std(g) for a Matérn sample g with lengths
/// (corr_x, corr_z). Spatial mean and std of the result are exactly mu, sigma.
std::pair<Tensor, GeoHyperparams> sample_geomodel(const GeoPriorBox& box, const Grid& grid,
                                                  Rng& rng);

}  // namespace fsd::grf
