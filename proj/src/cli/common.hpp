#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "fsd/cli/commands.hpp"
#include "fsd/nets/denoiser.hpp"
#include "fsd/nets/surrogate.hpp"
#include "fsd/simulator/simulator.hpp"
#include "fsd/training/training.hpp"

namespace fsd::cli::detail {

namespace fs = std::filesystem;
using tg::Tensor;

struct Context {
  const Config& cfg;
  const CommandOptions& opt;
  std::uint64_t seed;

  std::ostream& log() const;
};

grf::Grid grid_from(const Config& cfg);
sim::ForwardConfig forward_from(const Config& cfg, const grf::Grid& grid);
grf::GeoPriorBox box_from(const Config& cfg, const grf::Grid& grid);
nets::DenoiserSpec denoiser_spec_from(const Config& cfg, const grf::Grid& grid, std::size_t channels);
nets::SurrogateSpec surrogate_spec_from(const Config& cfg, const grf::Grid& grid);
train::TrainConfig train_config_from(const Config& cfg, std::uint64_t seed);

/// Path-valued key; throws ConfigError when absent and MissingArtifact when
/// the path does not exist.
fs::path artifact(const Config& cfg, const std::string& key);

std::unique_ptr<nets::UnoDenoiser> load_denoiser(const fs::path& path);
std::unique_ptr<nets::Surrogate> load_surrogate(const fs::path& path);

/// One observed truth: a test-split pair (or a prior draw) with its mask.
struct ObsCase {
  std::string tag;
  double coverage = 1.0;  // fraction for random masks, mask density for columns
  std::size_t fraction_index = 0;
  std::size_t case_index = 0;
  Tensor truth_m, truth_s;
  sim::Observation obs;
  std::uint64_t ensemble_seed = 0;
};

/// Cases from the [observation] table; empty when the table is absent.
std::vector<ObsCase> build_cases(const Context& ctx, const grf::Grid& grid, const sim::ForwardConfig& forward,
                                 RunManifest* manifest);

std::string fmt(double v);
void write_csv(const fs::path& path, const std::string& header, const std::vector<std::string>& rows);
/// Rows of a CSV written by write_csv, split on commas, header skipped.
std::vector<std::vector<std::string>> read_csv(const fs::path& path);

CommandResult run_gen_data(const Context& ctx);
CommandResult run_train(const Context& ctx);
CommandResult run_sampling(const Context& ctx, bool invert);
CommandResult run_rs(const Context& ctx);
CommandResult run_eval(const Context& ctx);
CommandResult run_plot(const Context& ctx);

}  // namespace fsd::cli::detail
