#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fsd/core/rng.hpp"
#include "fsd/stats/stats.hpp"

using namespace fsd::stats;
using fsd::Rng;

namespace {

Tensor white_noise(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({h, w});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace

TEST(RelL2, TrivialCases) {
  Rng rng(1);
  const Tensor t = white_noise(8, 8, rng);
  EXPECT_EQ(rel_l2(t, t), 0.0);
  EXPECT_DOUBLE_EQ(rel_l2(t, Tensor(t.shape())), 1.0);
  EXPECT_DOUBLE_EQ(rel_l2(t, 2.0 * t), 1.0);
  EXPECT_THROW(rel_l2(Tensor({8, 8}), t), std::domain_error);
}

TEST(RelL2, TriangleCompatibleBound) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Tensor t = white_noise(6, 6, rng), a = white_noise(6, 6, rng), b = white_noise(6, 6, rng);
    EXPECT_LE(rel_l2(t, a), rel_l2(t, b) + norm2(b - a) / norm2(t) + 1e-12);
  }
}

TEST(Variogram, ConstantFieldsAreZero) {
  Ensemble e(3, Tensor({8, 8}, 2.5));
  for (double v : variogram(e, Direction::Vertical, 5).values) EXPECT_EQ(v, 0.0);
}

TEST(Variogram, WhiteNoiseIsOne) {
  Rng rng(3);
  Ensemble e;
  for (int i = 0; i < 200; ++i) e.push_back(white_noise(32, 32, rng));
  for (Direction d : {Direction::Horizontal, Direction::Vertical}) {
    const LagProfile p = variogram(e, d, 10);
    ASSERT_EQ(p.lags.size(), 10u);
    // ~200k pairs per lag: standard error of the semivariance is ~0.003.
    for (double v : p.values) EXPECT_NEAR(v, 1.0, 0.02);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      EXPECT_LE(p.p5[i], p.values[i]);
      EXPECT_GE(p.p95[i], p.values[i]);
    }
  }
}

TEST(Variogram, RejectsBadLagAndSmallEnsembles) {
  Ensemble e(2, Tensor({8, 8}));
  EXPECT_THROW(variogram(e, Direction::Horizontal, 8), std::out_of_range);
  EXPECT_THROW(variogram(e, Direction::Horizontal, 0), std::out_of_range);
  EXPECT_THROW(variogram(Ensemble(1, Tensor({8, 8})), Direction::Horizontal, 2),
               std::invalid_argument);
}

TEST(Variogram, NonNegativeOnRandomEnsembles) {
  Rng rng(4);
  Ensemble e;
  for (int i = 0; i < 5; ++i) {
    Tensor t = white_noise(8, 8, rng);
    for (double& v : t.values()) v = v * v * rng.uniform();
    e.push_back(t);
  }
  for (double v : variogram(e, Direction::Horizontal, 7).values) EXPECT_GE(v, 0.0);
}

TEST(Connectivity, ExtremeThresholds) {
  Rng rng(5);
  Ensemble e{white_noise(8, 8, rng), white_noise(8, 8, rng)};
  for (double v : two_point_connectivity(e, -1e9, Direction::Horizontal, 6).values) EXPECT_EQ(v, 1.0);
  for (double v : two_point_connectivity(e, 1e9, Direction::Vertical, 6).values) EXPECT_EQ(v, 0.0);
}

TEST(Connectivity, BoundedByMarginalAndSquaredUnderIndependence) {
  Rng rng(6);
  Ensemble e;
  for (int i = 0; i < 100; ++i) e.push_back(white_noise(32, 32, rng));
  const double p = exceedance_fraction(e, 0.0);
  const LagProfile c = two_point_connectivity(e, 0.0, Direction::Horizontal, 8);
  for (double v : c.values) {
    EXPECT_LE(v, p);
    EXPECT_GE(v, 0.0);
    // ~100k pairs per lag, Bernoulli(1/4) standard error ~0.0014.
    EXPECT_NEAR(v, p * p, 0.01);
  }
}

TEST(Connectivity, NeverExceedsMarginalOnCorrelatedFields) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Ensemble e;
    for (int i = 0; i < 4; ++i) {
      Tensor t = white_noise(16, 16, rng);
      // Smooth by a running sum along x to induce correlation.
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 1; c < 16; ++c) t[r * 16 + c] += 0.8 * t[r * 16 + c - 1];
      e.push_back(t);
    }
    const double thr = rng.normal();
    const double p = exceedance_fraction(e, thr);
    // Pair-probability bound up to the finite-sample edge effect of pairs near the boundary.
    for (double v : two_point_connectivity(e, thr, Direction::Horizontal, 8).values)
      EXPECT_LE(v, p + 0.1);
  }
}

TEST(Cdf, SingleValueJumps) {
  const Cdf c = empirical_cdf({3.0});
  EXPECT_EQ(c(2.999), 0.0);
  EXPECT_EQ(c(3.0), 1.0);
}

TEST(Cdf, MonotoneInUnitRange) {
  Rng rng(8);
  std::vector<double> v(500);
  for (double& x : v) x = rng.normal();
  const Cdf c = empirical_cdf(v);
  for (std::size_t i = 1; i < c.values.size(); ++i) {
    EXPECT_LE(c.values[i - 1], c.values[i]);
    EXPECT_LT(c.probabilities[i - 1], c.probabilities[i]);
  }
  EXPECT_EQ(c.probabilities.back(), 1.0);
  EXPECT_GT(c.probabilities.front(), 0.0);
}

TEST(Cdf, KsSelfConsistency) {
  Rng a(9), b(10);
  std::vector<double> va(2000), vb(2000);
  for (double& x : va) x = a.normal();
  for (double& x : vb) x = b.normal();
  // Critical value at alpha = 0.001 for n = m = 2000 is ~0.062; 0.05 is ~alpha 0.01.
  EXPECT_LT(ks_statistic(empirical_cdf(va), empirical_cdf(vb)), 0.05);
  EXPECT_EQ(ks_statistic(empirical_cdf(va), empirical_cdf(va)), 0.0);
}

TEST(Filter, InfiniteThresholdKeepsEverything) {
  Rng rng(11);
  Ensemble e{white_noise(4, 4, rng), white_noise(4, 4, rng)};
  const FilterResult r = filter_diverged(e, std::numeric_limits<double>::infinity());
  EXPECT_EQ(r.fraction, 0.0);
  EXPECT_EQ(r.kept.size(), 2u);
}

TEST(Filter, OneInjectedOutlierInHundred) {
  Rng rng(12);
  Ensemble e;
  for (int i = 0; i < 99; ++i) e.push_back(white_noise(4, 4, rng));
  e.insert(e.begin() + 40, Tensor({4, 4}, 1e9));
  const FilterResult r = filter_diverged(e, 8.0);
  EXPECT_DOUBLE_EQ(r.fraction, 0.01);
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0], 40u);
  EXPECT_THROW(filter_diverged(e, 0.0), std::invalid_argument);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
}
