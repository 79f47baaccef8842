#include "fsd/stats/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fsd::stats {

std::string_view direction_name(Direction d) {
  return d == Direction::Horizontal ? "horizontal" : "vertical";
}

double rel_l2(const Tensor& truth, const Tensor& pred) {
  tg::require_same_shape(truth, pred, "rel_l2");
  const double denom = norm2(truth);
  if (!(denom > 0.0)) throw std::domain_error("rel_l2: truth has zero norm");
  return norm2(truth - pred) / denom;
}

namespace {

struct Extents {
  std::size_t planes, h, w;
};

Extents spatial_extents(const Tensor& t) {
  if (t.rank() < 2) throw tg::ShapeError("stats: field rank < 2");
  const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  return {t.size() / (h * w), h, w};
}

void check_ensemble(const Ensemble& fields, Direction direction, std::size_t max_lag,
                    std::size_t min_members) {
  if (fields.size() < min_members)
    throw std::invalid_argument("stats: ensemble needs at least " + std::to_string(min_members) +
                                " members");
  const Extents e = spatial_extents(fields.front());
  for (const Tensor& f : fields)
    if (f.shape() != fields.front().shape()) throw tg::ShapeError("stats: ensemble shape mismatch");
  const std::size_t extent = direction == Direction::Horizontal ? e.w : e.h;
  if (max_lag < 1 || max_lag >= extent)
    throw std::out_of_range("stats: max_lag " + std::to_string(max_lag) + " out of range for extent " +
                            std::to_string(extent));
}

// Calls visit(a, b) for every pair of values separated by `lag`.
template <class Visit>
void for_each_pair(const Tensor& f, Direction direction, std::size_t lag, Visit&& visit) {
  const Extents e = spatial_extents(f);
  const std::size_t dr = direction == Direction::Vertical ? lag : 0;
  const std::size_t dc = direction == Direction::Horizontal ? lag : 0;
  for (std::size_t p = 0; p < e.planes; ++p) {
    const double* base = f.data() + p * e.h * e.w;
    for (std::size_t r = 0; r + dr < e.h; ++r)
      for (std::size_t c = 0; c + dc < e.w; ++c)
        visit(base[r * e.w + c], base[(r + dr) * e.w + c + dc]);
  }
}

struct Moments {
  double n = 0, sum = 0, sum_sq = 0;
  void add(double d) {
    n += 1;
    sum += d;
    sum_sq += d * d;
  }
  void merge(const Moments& o) {
    n += o.n;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
  double variance() const {
    if (n == 0) return 0.0;
    const double m = sum / n;
    return std::max(0.0, sum_sq / n - m * m);
  }
};

}  // namespace

double quantile(std::vector<double> data, double q) {
  if (data.empty()) throw std::invalid_argument("quantile: empty data");
  std::sort(data.begin(), data.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(data.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, data.size() - 1);
  return data[lo] + (pos - static_cast<double>(lo)) * (data[hi] - data[lo]);
}

LagProfile variogram(const Ensemble& fields, Direction direction, std::size_t max_lag) {
  check_ensemble(fields, direction, max_lag, 2);
  LagProfile out{direction, {}, {}, {}, {}};
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    Moments pooled;
    std::vector<double> member_gamma;
    member_gamma.reserve(fields.size());
    for (const Tensor& f : fields) {
      Moments m;
      for_each_pair(f, direction, lag, [&](double a, double b) { m.add(a - b); });
      member_gamma.push_back(0.5 * m.variance());
      pooled.merge(m);
    }
    out.lags.push_back(lag);
    out.values.push_back(0.5 * pooled.variance());
    out.p5.push_back(quantile(member_gamma, 0.05));
    out.p95.push_back(quantile(member_gamma, 0.95));
  }
  return out;
}

std::size_t profile_range(const LagProfile& profile, double fraction) {
  if (profile.values.empty()) throw std::invalid_argument("profile_range: empty profile");
  const double target = fraction * profile.values.back();
  for (std::size_t i = 0; i < profile.values.size(); ++i)
    if (profile.values[i] >= target) return profile.lags[i];
  return profile.lags.back();
}

LagProfile two_point_connectivity(const Ensemble& fields, double threshold, Direction direction,
                                  std::size_t max_lag) {
  check_ensemble(fields, direction, max_lag, 1);
  LagProfile out{direction, {}, {}, {}, {}};
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    double pooled_hits = 0, pooled_pairs = 0;
    std::vector<double> member;
    member.reserve(fields.size());
    for (const Tensor& f : fields) {
      double hits = 0, pairs = 0;
      for_each_pair(f, direction, lag, [&](double a, double b) {
        pairs += 1;
        if (a > threshold && b > threshold) hits += 1;
      });
      member.push_back(hits / pairs);
      pooled_hits += hits;
      pooled_pairs += pairs;
    }
    out.lags.push_back(lag);
    out.values.push_back(pooled_hits / pooled_pairs);
    out.p5.push_back(quantile(member, 0.05));
    out.p95.push_back(quantile(member, 0.95));
  }
  return out;
}

double exceedance_fraction(const Ensemble& fields, double threshold) {
  double hits = 0, total = 0;
  for (const Tensor& f : fields)
    for (double v : f.values()) {
      total += 1;
      if (v > threshold) hits += 1;
    }
  if (total == 0) throw std::invalid_argument("exceedance_fraction: empty ensemble");
  return hits / total;
}

double Cdf::operator()(double x) const {
  const auto it = std::upper_bound(values.begin(), values.end(), x);
  return static_cast<double>(it - values.begin()) / static_cast<double>(values.size());
}

Cdf empirical_cdf(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("empirical_cdf: no values");
  std::sort(values.begin(), values.end());
  Cdf cdf;
  cdf.probabilities.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    cdf.probabilities[i] = static_cast<double>(i + 1) / static_cast<double>(values.size());
  cdf.values = std::move(values);
  return cdf;
}

double ks_statistic(const Cdf& a, const Cdf& b) {
  double gap = 0.0;
  for (const Cdf* c : {&a, &b})
    for (double x : c->values) gap = std::max(gap, std::abs(a(x) - b(x)));
  return gap;
}

FilterResult filter_diverged(const Ensemble& fields, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("filter_diverged: threshold must be positive");
  FilterResult out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const Tensor& f = fields[i];
    if (!f.all_finite() || max_abs(f) > threshold)
      out.removed.push_back(i);
    else
      out.kept.push_back(f);
  }
  if (!fields.empty())
    out.fraction = static_cast<double>(out.removed.size()) / static_cast<double>(fields.size());
  return out;
}

}  // namespace fsd::stats
