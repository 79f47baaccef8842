#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "fsd/tensorgrad/tensor.hpp"

// Evaluation metrics over fields of shape [ny, nx] (or any [..., ny, nx],
// in which case the trailing two axes are the spatial ones).
namespace fsd::stats {

using tg::Tensor;
using Ensemble = std::vector<Tensor>;

enum class Direction { Horizontal, Vertical };
std::string_view direction_name(Direction d);

struct LagProfile {
  Direction direction = Direction::Horizontal;
  std::vector<std::size_t> lags;
  std::vector<double> values;
  std::vector<double> p5;   // per-member envelope, empty for single-field input
  std::vector<double> p95;
};

/// ||truth - pred|| / ||truth||. Throws std::domain_error for zero truth.
double rel_l2(const Tensor& truth, const Tensor& pred);

/// Half the pooled variance of increments m(u) - m(u+h) over positions and
/// members, for h = 1..max_lag. Increments do not wrap around.
LagProfile variogram(const Ensemble& fields, Direction direction, std::size_t max_lag);

/// Smallest lag where the profile reaches `fraction` of its final value.
std::size_t profile_range(const LagProfile& profile, double fraction = 0.95);

/// Fraction of point pairs at lag h with both values above `threshold`.
LagProfile two_point_connectivity(const Ensemble& fields, double threshold, Direction direction,
                                  std::size_t max_lag);
/// Fraction of points above `threshold` (the lag-0 connectivity).
double exceedance_fraction(const Ensemble& fields, double threshold);

struct Cdf {
  std::vector<double> values;       // sorted ascending
  std::vector<double> probabilities; // (rank + 1) / n
  double operator()(double x) const;
};

Cdf empirical_cdf(std::vector<double> values);
/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(const Cdf& a, const Cdf& b);

struct FilterResult {
  Ensemble kept;
  std::vector<std::size_t> removed;  // indices into the input
  double fraction = 0.0;             // removed / total
};

/// Drops members with any non-finite value or max |value| above `threshold`.
FilterResult filter_diverged(const Ensemble& fields, double threshold);

/// Linear-interpolation quantile of unsorted data, q in [0, 1].
double quantile(std::vector<double> data, double q);

}  // namespace fsd::stats
