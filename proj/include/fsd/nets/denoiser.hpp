#pragma once

#include <utility>
#include <vector>

#include "fsd/grf/grf.hpp"
#include "fsd/nets/params.hpp"

namespace fsd::nets {

/// Per-channel affine map between the denoiser's working units and physical
/// units: physical = working * scale + shift.
struct ChannelStandardization {
  std::vector<double> shift, scale;

  static ChannelStandardization identity(std::size_t channels);
  std::size_t channels() const { return shift.size(); }
  Tensor to_physical(const Tensor& x) const;
  Tensor to_working(const Tensor& x) const;
  Var to_physical(Tape& tape, Var x) const;
};

/// Maps a noisy state z [C, ny, nx] at noise level sigma to an estimate of
/// the clean state. Evaluation records onto a tape so guidance can
/// differentiate through it.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::size_t channels() const = 0;
  virtual const grf::Grid& grid() const = 0;
  /// Valid sigma range; sampling clamps its final evaluation to sigma_min().
  virtual double sigma_min() const = 0;
  virtual double sigma_max() const = 0;
  virtual Var denoise(Tape& tape, Var z, double sigma) const = 0;
  virtual ChannelStandardization standardization() const {
    return ChannelStandardization::identity(channels());
  }

  Tensor denoise(const Tensor& z, double sigma) const;

 protected:
  void check_input(const Shape& shape, double sigma) const;
};

/// Exact posterior mean for a zero-mean Gaussian prior under Gaussian noise
/// with covariance sigma^2 * noise: per-mode shrinkage p / (p + sigma^2 g).
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  AnalyticGaussianDenoiser(grf::CovarianceSpectrum prior, grf::CovarianceSpectrum noise);

  std::size_t channels() const override { return 1; }
  const grf::Grid& grid() const override { return prior_.grid; }
  double sigma_min() const override { return 0.0; }
  double sigma_max() const override;
  Var denoise(Tape& tape, Var z, double sigma) const override;
  using Denoiser::denoise;

  /// Per-mode multiplier [ny, nx/2+1] at sigma.
  Tensor shrinkage(double sigma) const;
  const grf::CovarianceSpectrum& prior() const { return prior_; }
  const grf::CovarianceSpectrum& noise() const { return noise_; }

 private:
  grf::CovarianceSpectrum prior_;
  grf::CovarianceSpectrum noise_;
};

struct EdmScaling {
  double skip, out, in, noise;
};
/// Standard EDM preconditioning for data standard deviation sigma_data.
EdmScaling edm_scaling(double sigma, double sigma_data);
/// EDM loss weight (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.
double edm_weight(double sigma, double sigma_data);

/// Sinusoidal features of log-sigma noise conditioning (EDM c_noise = ln(sigma)/4).
std::vector<double> sigma_features(double sigma, std::size_t dim);

struct DenoiserSpec {
  grf::Grid grid;
  std::size_t channels = 1;
  std::size_t levels = 3;
  std::size_t base_width = 32;
  std::vector<std::size_t> multipliers{1, 2, 2};
  double mode_fraction = 0.5;  // retained frequencies per direction / level resolution
  std::size_t embed_dim = 64;
  std::size_t groups = 4;
  double sigma_data = 0.5;
  double sigma_min = 0.002;
  double sigma_max = 80.0;

  void validate() const;
  std::size_t width(std::size_t level) const { return base_width * multipliers.at(level); }
  /// Retained frequency half-extents (rows, columns) of the spectral weights at a level.
  std::pair<std::size_t, std::size_t> modes(std::size_t level) const;
  Json to_json() const;
  static DenoiserSpec from_json(const Json& j);
};

/// Reduced-capacity U-shaped neural operator: per level a residual block of
/// group-norm, sigma-conditioned scale/shift, SiLU, and spectral + pointwise
/// convolution; average-pool down, nearest upsample with skip concatenation.
class UnoDenoiser final : public Denoiser {
 public:
  UnoDenoiser(DenoiserSpec spec, ParamSet params);

  static ParamSet init_params(const DenoiserSpec& spec, Rng& rng);

  std::size_t channels() const override { return spec_.channels; }
  const grf::Grid& grid() const override { return spec_.grid; }
  double sigma_min() const override { return spec_.sigma_min; }
  double sigma_max() const override { return spec_.sigma_max; }
  Var denoise(Tape& tape, Var z, double sigma) const override;
  using Denoiser::denoise;
  /// Stored in the "norm.shift" / "norm.scale" buffers.
  ChannelStandardization standardization() const override;
  static void set_standardization(ParamSet& params, const ChannelStandardization& s);

  /// Preconditioned forward with explicitly bound parameters (training path).
  Var forward(Tape& tape, Var z, double sigma, const ParamVars& p) const;
  /// sigma-embedding MLP output, exposed for tests.
  Var embedding(Tape& tape, double sigma, const ParamVars& p) const;

  const DenoiserSpec& spec() const { return spec_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

 private:
  Var block(Tape& tape, Var x, Var emb, const std::string& name, const ParamVars& p) const;

  DenoiserSpec spec_;
  ParamSet params_;
};

}  // namespace fsd::nets
