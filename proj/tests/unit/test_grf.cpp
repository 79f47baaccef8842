#include <gtest/gtest.h>

#include <cmath>

#include "fsd/grf/grf.hpp"
#include "fsd/stats/stats.hpp"
#include "fsd/tensorgrad/fft.hpp"

using namespace fsd::grf;
using fsd::Rng;

namespace {

const Grid kGrid32{32, 32, 1.0, 1.0};
// Per-mode tolerances of 5% are ~3 standard errors at 4096 samples, too tight
// for a maximum over ~500 modes; the unit checks use 4x that sample count.
constexpr std::size_t kModeSamples = 16384;

Tensor empirical_mode_variance(const CovarianceSpectrum& spec, std::size_t samples, Rng& rng,
                               bool whitened = false) {
  Tensor acc(spec.grid.spectrum_shape());
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor f = sample_grf(spec, rng);
    if (whitened) f = whiten(spec, f);
    acc += mode_power(spec.grid, f);
  }
  acc *= 1.0 / static_cast<double>(samples);
  return acc;
}

}  // namespace

TEST(Grid, RejectsOddOrTinyExtents) {
  EXPECT_THROW((Grid{5, 8, 1, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((Grid{2, 8, 1, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((Grid{8, 8, 0, 1}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((Grid{8, 6, 1, 2}.validate()));
}

TEST(Matern, DcEqualsAmplitudeAndFormulaHolds) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 2.5, 1.0, 2.0, 0.1, 0.2);
  EXPECT_DOUBLE_EQ(s.eigenvalues[0], 2.5);
  // Row 3 (kz = 6 pi), column 5 (kx = 10 pi), evaluated independently.
  const double kx = 10.0 * M_PI, kz = 6.0 * M_PI;
  const double expected = 2.5 * std::pow(1.0 + 0.01 * kx * kx + 0.04 * kz * kz, -2.0);
  EXPECT_NEAR(s.eigenvalues[3 * 17 + 5], expected, 1e-15);
  // Negative frequency rows mirror positive ones.
  EXPECT_DOUBLE_EQ(s.eigenvalues[3 * 17 + 5], s.eigenvalues[29 * 17 + 5]);
}

TEST(Matern, ZeroAmplitudeGivesZeroSpectrumAndZeroField) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 0.0, 1.0, 2.0, 0.1, 0.1);
  EXPECT_EQ(max_abs(s.eigenvalues), 0.0);
  Rng rng(3);
  EXPECT_EQ(max_abs(sample_grf(s, rng)), 0.0);
}

TEST(Matern, LargeSmoothnessKeepsOnlyDc) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 200.0, 1.0, 1.0);
  EXPECT_EQ(s.eigenvalues[0], 1.0);
  for (std::size_t i = 1; i < s.eigenvalues.size(); ++i) EXPECT_LT(s.eigenvalues[i], 1e-300);
}

TEST(Matern, RejectsNonTraceClass) {
  EXPECT_THROW(matern_spectrum(kGrid32, 1.0, 1.0, 1.0, 0.1, 0.1), std::invalid_argument);
  EXPECT_THROW(matern_spectrum(kGrid32, 1.0, 1.0, 0.5, 0.1, 0.1), std::invalid_argument);
}

TEST(Matern, RefinementLeavesSharedModesUnchanged) {
  const Grid coarse{16, 16, 1.0, 1.0};
  const CovarianceSpectrum a = matern_spectrum(coarse, 1.3, 1.0, 2.5, 0.15, 0.07);
  const CovarianceSpectrum b = matern_spectrum(kGrid32, 1.3, 1.0, 2.5, 0.15, 0.07);
  for (long fz = -7; fz <= 7; ++fz)
    for (std::size_t q = 0; q <= 8; ++q) {
      const std::size_t ra = static_cast<std::size_t>((fz + 16) % 16);
      const std::size_t rb = static_cast<std::size_t>((fz + 32) % 32);
      EXPECT_NEAR(a.eigenvalues[ra * 9 + q], b.eigenvalues[rb * 17 + q], 1e-12);
    }
}

TEST(Sampling, SameSeedIsBitIdentical) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng a(42), b(42);
  EXPECT_EQ(sample_grf(s, a), sample_grf(s, b));
}

TEST(Sampling, ModeCoefficientsRoundTrip) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng rng(4);
  const Tensor f = sample_grf(s, rng);
  const Tensor back = field_from_coefficients(kGrid32, mode_coefficients(kGrid32, f));
  EXPECT_LE(norm2(back - f) / norm2(f), 1e-12);
}

TEST(Sampling, PerModeVarianceMatchesEigenvalues) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng rng(1);
  const Tensor emp = empirical_mode_variance(s, kModeSamples, rng);
  const double cutoff = 1e-6 * s.max_eigenvalue();
  double worst = 0.0;
  for (std::size_t i = 0; i < emp.size(); ++i)
    if (s.eigenvalues[i] > cutoff)
      worst = std::max(worst, std::abs(emp[i] / s.eigenvalues[i] - 1.0));
  EXPECT_LE(worst, 0.05);
}

TEST(Sampling, PointwiseVarianceMatchesSpectrumSum) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng rng(5);
  double acc = 0.0;
  const std::size_t n = 2000;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor f = sample_grf(s, rng);
    acc += dot(f, f) / static_cast<double>(f.size());
  }
  // Each sample averages ~ a few hundred effectively independent values.
  EXPECT_NEAR(acc / n, s.pointwise_variance(), 0.02 * s.pointwise_variance());
  const CovarianceSpectrum unit = with_pointwise_variance(s, 1.0);
  EXPECT_NEAR(unit.pointwise_variance(), 1.0, 1e-12);
}

TEST(Sampling, LowModesAgreeAcrossResolutions) {
  const Grid fine{64, 64, 1.0, 1.0};
  const CovarianceSpectrum a = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  const CovarianceSpectrum b = matern_spectrum(fine, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng ra(6), rb(7);
  const Tensor ea = empirical_mode_variance(a, 4096, ra);
  const Tensor eb = empirical_mode_variance(b, 4096, rb);
  for (long fz = -4; fz <= 4; ++fz)
    for (std::size_t q = 0; q <= 4; ++q) {
      if (fz * fz + long(q * q) > 16) continue;
      const double va = ea[((fz + 32) % 32) * 17 + q];
      const double vb = eb[((fz + 64) % 64) * 33 + q];
      EXPECT_NEAR(va / vb, 1.0, 0.10) << fz << "," << q;
    }
}

TEST(Whiten, ColorInvertsWhiten) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng rng(8);
  const Tensor f = sample_grf(s, rng);
  EXPECT_LE(norm2(color(s, whiten(s, f)) - f) / norm2(f), 1e-10);
  EXPECT_EQ(max_abs(whiten(s, Tensor(kGrid32.field_shape()))), 0.0);
}

TEST(Whiten, WhitenedSamplesHaveUnitModeVariance) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng rng(9);
  const Tensor emp = empirical_mode_variance(s, kModeSamples, rng, true);
  double worst = 0.0;
  for (double v : emp.values()) worst = std::max(worst, std::abs(v - 1.0));
  EXPECT_LE(worst, 0.05);
}

TEST(Whiten, ZeroEigenvalueModeWithEnergyIsRejected) {
  CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  s.eigenvalues[5] = 0.0;
  Rng rng(10);
  const Tensor f = sample_grf(matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1), rng);
  EXPECT_THROW(whiten(s, f), std::domain_error);
}

TEST(Geomodel, DegenerateBoxReturnsThePoint) {
  GeoPriorBox box;
  box.mu = {0.3, 0.3};
  box.sigma = {0.5, 0.5};
  box.corr_x = {0.2, 0.2};
  box.corr_z = {0.1, 0.1};
  Rng rng(11);
  const auto [field, hp] = sample_geomodel(box, kGrid32, rng);
  EXPECT_EQ(hp.mu, 0.3);
  EXPECT_EQ(hp.sigma, 0.5);
  EXPECT_EQ(hp.corr_x, 0.2);
  EXPECT_EQ(hp.corr_z, 0.1);
  double mean = 0, sq = 0;
  for (double v : field.values()) mean += v;
  mean /= field.size();
  for (double v : field.values()) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.3, 1e-12);
  EXPECT_NEAR(std::sqrt(sq / field.size()), 0.5, 1e-12);
}

TEST(Geomodel, EmptyRangeIsRejected) {
  GeoPriorBox box;
  box.sigma = {1.0, 0.5};
  Rng rng(12);
  EXPECT_THROW(sample_geomodel(box, kGrid32, rng), std::invalid_argument);
}

TEST(Geomodel, HyperparametersAreUniformOverTheBox) {
  const GeoPriorBox box = GeoPriorBox::for_grid(kGrid32);
  Rng rng(13);
  const int n = 1024;
  double mu_sum = 0;
  double corr_min = 1e9, corr_max = -1e9;
  for (int i = 0; i < n; ++i) {
    const auto [field, hp] = sample_geomodel(box, kGrid32, rng);
    mu_sum += hp.mu;
    corr_min = std::min(corr_min, hp.corr_x);
    corr_max = std::max(corr_max, hp.corr_x);
    ASSERT_GE(hp.sigma, 0.2);
    ASSERT_LE(hp.sigma, 1.0);
  }
  // Uniform on [-1, 1]: standard error of the mean is 1/sqrt(3n).
  EXPECT_NEAR(mu_sum / n, 0.0, 4.0 / std::sqrt(3.0 * n));
  EXPECT_LT(corr_min, 0.15);
  EXPECT_GT(corr_max, 0.95);
}

TEST(Geomodel, HorizontalRangeGrowsWithCorrelationLength) {
  auto range_for = [](double corr_x, std::uint64_t seed) {
    GeoPriorBox box;
    box.mu = {0.0, 0.0};
    box.sigma = {1.0, 1.0};
    box.corr_x = {corr_x, corr_x};
    box.corr_z = {0.1, 0.1};
    Rng rng(seed);
    fsd::stats::Ensemble ens;
    for (int i = 0; i < 256; ++i) ens.push_back(sample_geomodel(box, kGrid32, rng).first);
    return fsd::stats::profile_range(
        fsd::stats::variogram(ens, fsd::stats::Direction::Horizontal, 15));
  };
  EXPECT_LT(range_for(0.05, 14), range_for(0.4, 15));
}

TEST(Stationarity, VariogramIsTranslationInvariant) {
  const CovarianceSpectrum s = matern_spectrum(kGrid32, 1.0, 1.0, 2.0, 0.1, 0.1);
  Rng rng(16);
  fsd::stats::Ensemble top, bottom;
  for (int i = 0; i < 512; ++i) {
    const Tensor f = sample_grf(s, rng);
    Tensor a({16, 32}), b({16, 32});
    std::copy(f.data(), f.data() + 512, a.data());
    std::copy(f.data() + 512, f.data() + 1024, b.data());
    top.push_back(a);
    bottom.push_back(b);
  }
  const auto va = fsd::stats::variogram(top, fsd::stats::Direction::Horizontal, 8);
  const auto vb = fsd::stats::variogram(bottom, fsd::stats::Direction::Horizontal, 8);
  for (std::size_t i = 0; i < va.values.size(); ++i)
    EXPECT_NEAR(va.values[i] / vb.values[i], 1.0, 0.1) << "lag " << va.lags[i];
}
