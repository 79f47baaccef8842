#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fsd/nets/denoiser.hpp"
#include "fsd/simulator/simulator.hpp"

namespace fsd::sampler {

using tg::Tape;
using tg::Tensor;
using tg::Var;

/// Descending noise levels ending in exactly 0. `size()` is the schedule
/// length N; a run takes N - 1 steps.
struct NoiseSchedule {
  std::vector<double> sigmas;

  std::size_t size() const { return sigmas.size(); }
  std::size_t steps() const { return sigmas.empty() ? 0 : sigmas.size() - 1; }
  void validate() const;
};

/// N entries: a rho-warped ramp of N - 1 levels from sigma_max down to
/// sigma_min, then 0. N = 2 gives {sigma_max, 0}.
NoiseSchedule karras_schedule(std::size_t n, double sigma_min, double sigma_max, double rho = 7.0);

enum class Mode { Unconditional, Ddps, Dps };
std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

/// Differentiable map from a physical geomodel [ny, nx] to a dynamics field.
using ForwardOp = std::function<Var(Tape&, Var)>;

struct GuidanceSpec {
  Mode mode = Mode::Unconditional;
  std::optional<sim::Observation> geo;
  double zeta_geo = 0.0;
  std::optional<sim::Observation> dyn;
  double zeta_dyn = 0.0;
  ForwardOp surrogate;  // required for ddps with a dynamics observation
  /// A sample diverges when its final state is non-finite or exceeds this
  /// magnitude in standardized units.
  double divergence_threshold = 8.0;

  bool active() const { return mode != Mode::Unconditional && (geo || dyn); }
  /// Throws std::invalid_argument on an inconsistent combination.
  void validate(const nets::Denoiser& denoiser) const;
};

struct StepDiagnostics {
  std::size_t step = 0;
  double sigma = 0.0;
  double d_norm = 0.0;
  double guidance_norm = 0.0;
  double misfit = 0.0;
};

struct GuidanceResult {
  Tensor update;  // sum of zeta * gradient over active terms; subtracted from the state
  double misfit = 0.0;  // sum of squared masked residuals over active terms
};

/// Re-denoises z at sigma on a fresh tape, applies H_obs in physical units,
/// and differentiates the weighted squared misfit with respect to z.
GuidanceResult guidance_gradient(const nets::Denoiser& denoiser, const Tensor& z, double sigma,
                                 const GuidanceSpec& guidance);

struct SampleResult {
  Tensor state;    // physical units [C, ny, nx]
  Tensor working;  // standardized units
  bool diverged = false;
  std::string failure;
  std::vector<StepDiagnostics> diagnostics;
  std::size_t denoiser_evals = 0;
  std::size_t forward_evals = 0;
};

/// Heun probability-flow sampler with optional guidance after each step.
/// Numerical failures are reported in the result, not thrown.
SampleResult posterior_sample(const nets::Denoiser& denoiser, const NoiseSchedule& schedule,
                              const GuidanceSpec& guidance, const grf::CovarianceSpectrum& noise, Rng& rng);

SampleResult sample_unconditional(const nets::Denoiser& denoiser, const NoiseSchedule& schedule,
                                  const grf::CovarianceSpectrum& noise, Rng& rng);

struct SampleEnsemble {
  std::vector<SampleResult> members;
  std::size_t nominal_evaluations = 0;  // count * schedule length
  std::size_t denoiser_evals = 0;
  std::size_t forward_evals = 0;
  std::size_t diverged = 0;
};

/// Member k draws from Rng::stream(seed, "sample", k), so the result does not
/// depend on `threads`. `progress` receives the number of finished members.
SampleEnsemble sample_ensemble(std::size_t count, const nets::Denoiser& denoiser, const NoiseSchedule& schedule,
                               const GuidanceSpec& guidance, const grf::CovarianceSpectrum& noise,
                               std::uint64_t seed, bool keep_diagnostics = false,
                               const std::function<void(std::size_t)>& progress = {}, std::size_t threads = 1);

}  // namespace fsd::sampler
