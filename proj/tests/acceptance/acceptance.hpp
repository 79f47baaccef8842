#pragma once

#include <chrono>
#include <filesystem>
#include <ostream>
#include <string>

#include "fsd/core/io.hpp"
#include "fsd/grf/grf.hpp"

namespace fsd::acceptance {

namespace fs = std::filesystem;
using tg::Tensor;

/// Fixed before any criterion was run; never tuned.
inline constexpr std::uint64_t kSeed = 20251;

struct Context {
  fs::path work;        // cache of datasets, checkpoints, and run directories
  bool fresh = false;   // ignore cached artifacts
  std::size_t threads = 1;
  std::ostream* log = nullptr;

  std::ostream& out() const { return *log; }
};

struct Outcome {
  bool pass = false;
  std::string measured;   // one-line summary of the measured quantities
  std::string threshold;  // the pinned tolerance
  double budget_seconds = 0.0;
  double seconds = 0.0;   // wall time including cached upstream stages
  Json details = Json::object();
};

Outcome criterion_gradients(const Context& ctx);
Outcome criterion_grf_spectrum(const Context& ctx);
Outcome criterion_analytic_denoiser(const Context& ctx);
Outcome criterion_probability_flow(const Context& ctx);
Outcome criterion_linear_posterior(const Context& ctx);
Outcome criterion_rejection_toy(const Context& ctx);
Outcome criterion_forward_robustness(const Context& ctx);
Outcome criterion_inverse_pipeline(const Context& ctx);
Outcome criterion_replay(const Context& ctx);

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string sci(double v, int digits = 3);

/// Matérn prior used by the linear-Gaussian criteria, unit pointwise variance.
grf::CovarianceSpectrum gaussian_prior(const grf::Grid& grid);

}  // namespace fsd::acceptance
