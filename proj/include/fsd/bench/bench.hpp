#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "fsd/grf/grf.hpp"
#include "fsd/simulator/simulator.hpp"

namespace fsd::bench {

using tg::Tensor;

struct Summary {
  double mean = 0.0;
  double std = 0.0;
};

/// Spatial mean and (population) spatial standard deviation.
Summary summary_stats(const Tensor& field);

/// Shared-edge uniform histogram with masses normalized to 1.
struct Histogram {
  std::vector<double> edges;
  std::vector<double> mass;
  std::size_t count = 0;

  /// Values outside [lo, hi] are clamped into the end bins.
  static Histogram build(const std::vector<double>& values, double lo, double hi, std::size_t bins);
  /// Columns: edge_lo, edge_hi, mass.
  std::string to_csv() const;
};

/// Natural-log Jensen-Shannon divergence, in [0, ln 2]. Throws
/// std::invalid_argument when the bin edges differ.
double js_divergence(const Histogram& p, const Histogram& q);

/// 50 bins, or 25 when either side has fewer than 500 samples.
std::size_t default_bins(std::size_t n_a, std::size_t n_b);

struct ScalarComparison {
  double js = 0.0;
  Histogram a, b;
};

/// Histograms over the pooled min-max range of both sides.
ScalarComparison compare_values(const std::vector<double>& a, const std::vector<double>& b,
                                std::optional<std::size_t> bins = std::nullopt);

struct PosteriorComparison {
  ScalarComparison mean, std;
  double average = 0.0;
  std::size_t bins = 0;
};

/// JS per summary statistic plus their average. Throws std::invalid_argument
/// when either ensemble is empty.
PosteriorComparison compare_posteriors(const std::vector<Summary>& a, const std::vector<Summary>& b,
                                       std::optional<std::size_t> bins = std::nullopt);

/// exp(-sum(mask * (pred - values)^2) / (2 sigma_obs^2 |mask|)), in (0, 1].
double likelihood(const Tensor& prediction, const sim::Observation& obs, double sigma_obs);

struct PriorDraw {
  Tensor field;
  grf::GeoHyperparams hyper;
};
using PriorSampler = std::function<PriorDraw(Rng&)>;
using ForwardEvaluator = std::function<Tensor(const Tensor&)>;

struct Accepted {
  std::size_t index = 0;
  Summary summary;
  grf::GeoHyperparams hyper;
  double likelihood = 0.0;
  double u = 0.0;
};

struct RejectionPlan {
  std::size_t pool_size = 200000;
  std::size_t block_size = 10000;
  std::uint64_t seed = 0;
  double sigma_obs = 0.04;
};

struct RejectionRun {
  RejectionPlan plan;
  std::size_t mask_count = 0;
  std::size_t evaluated = 0;  // pool draws processed so far (a block boundary)
  std::size_t errors = 0;     // forward failures, counted as rejections
  std::vector<Accepted> accepted;

  double acceptance_rate() const;
  bool complete() const { return evaluated >= plan.pool_size; }
};

/// Draw i uses Rng::stream(seed, "rs", i) for the prior sample and then
/// u ~ U(0, 1). Processes whole blocks, continuing from `resume` when given,
/// and stops after `max_blocks` blocks (0 = until the pool is exhausted).
/// Draws within a block run on up to `threads` workers; the accepted set is
/// merged in index order and does not depend on the thread count.
RejectionRun rejection_sample(const RejectionPlan& plan, const PriorSampler& prior, const ForwardEvaluator& forward,
                              const sim::Observation& obs, const RejectionRun* resume = nullptr,
                              std::size_t max_blocks = 0, std::size_t threads = 1);

/// manifest.json plus accepted.csv (index, mean, std, likelihood, u, mu, sigma, corr_x, corr_z).
void write_rejection_run(const std::filesystem::path& dir, const RejectionRun& run);
RejectionRun read_rejection_run(const std::filesystem::path& dir);

}  // namespace fsd::bench
