#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>

#include "fsd/nets/denoiser.hpp"
#include "fsd/nets/surrogate.hpp"
#include "fsd/simulator/simulator.hpp"

namespace fsd::train {

using nets::ParamSet;
using tg::Tensor;

struct TrainConfig {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  std::size_t batch = 32;
  std::size_t epochs = 60;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool cosine = false;  // cosine decay to zero over all steps instead of constant lr
  std::size_t val_count = 128;
  std::uint64_t seed = 0;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::filesystem::path checkpoint;

  /// Columns: epoch, train_loss, val_loss, seconds.
  void write_csv(const std::filesystem::path& path) const;
};

/// Adam with decoupled weight decay:
/// p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg);
  void step(ParamSet& params, const std::map<std::string, Tensor>& grads, double lr);
  std::size_t steps() const { return steps_; }
  void save(std::map<std::string, Tensor>& extra) const;
  void load(const std::map<std::string, Tensor>& extra);

 private:
  double wd_, b1_, b2_, eps_;
  std::size_t steps_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

/// exp(U(ln lo, ln hi)).
double sample_sigma(Rng& rng, double lo, double hi);

struct RunOptions {
  /// When set, "last.fsdc" there is rewritten after every epoch.
  std::filesystem::path checkpoint_dir;
  /// Continue from a checkpoint written by an earlier run with the same spec.
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainedDenoiser {
  nets::DenoiserSpec spec;
  ParamSet params;
  TrainReport report;
};

struct TrainedSurrogate {
  nets::SurrogateSpec spec;
  ParamSet params;
  TrainReport report;
};

/// Denoising score matching on states [C, ny, nx] in physical units. States
/// are standardized per channel by the training-set mean/std (stored in the
/// model buffers); noise is sigma * GRF(noise) per channel with sigma
/// log-uniform; per-sample loss is edm_weight(sigma) * mean squared error.
TrainedDenoiser train_denoiser(const std::vector<Tensor>& train, const std::vector<Tensor>& val,
                               const nets::DenoiserSpec& spec, const grf::CovarianceSpectrum& noise,
                               const TrainConfig& cfg, const RunOptions& opts = {});

/// Geomodel-only prior: reads only `m` of the datasets.
TrainedDenoiser train_prior(const sim::Dataset& train, const sim::Dataset& val, nets::DenoiserSpec spec,
                            const grf::CovarianceSpectrum& noise, const TrainConfig& cfg,
                            const RunOptions& opts = {});

/// Joint (m, s) prior on 2-channel states; throws if dynamics fields are missing.
TrainedDenoiser train_joint(const sim::Dataset& train, const sim::Dataset& val, nets::DenoiserSpec spec,
                            const grf::CovarianceSpectrum& noise, const TrainConfig& cfg,
                            const RunOptions& opts = {});

/// Minimizes the mean relative L2 error of surrogate(m) against s. The input
/// shift/scale buffers are set from the training geomodels.
TrainedSurrogate train_surrogate(const sim::Dataset& train, const sim::Dataset& val,
                                 const nets::SurrogateSpec& spec, const TrainConfig& cfg,
                                 const RunOptions& opts = {});

/// Stacks m (and s when `joint`) into [C, ny, nx] states.
std::vector<Tensor> stack_states(const sim::Dataset& data, bool joint);

/// Noise covariance used by the diffusion models: Matérn with unit pointwise
/// variance and a short correlation length, rougher than any geomodel prior.
grf::CovarianceSpectrum default_noise_spectrum(const grf::Grid& grid);

}  // namespace fsd::train
