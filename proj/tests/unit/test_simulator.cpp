#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "fsd/simulator/simulator.hpp"
#include "fsd/tensorgrad/fsdt.hpp"

using namespace fsd;
using namespace fsd::sim;

namespace {

Tensor random_field(const Grid& g, Rng& rng, double scale = 1.0) {
  Tensor t(g.field_shape());
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

Tensor smooth_field(const Grid& g, Rng& rng) {
  const auto spec = grf::matern_spectrum(g, 1.0, 1.0, 2.0, 0.2, 0.2);
  return grf::sample_grf(spec, rng);
}

ForwardConfig tight_config(const Grid& g) {
  ForwardConfig c = ForwardConfig::with_injector(g);
  c.cg_tol = 1e-13;
  return c;
}

}  // namespace

TEST(Forward, UnitCoefficientMatchesDenseLuSolve) {
  const Grid g{16, 16, 1.0, 1.0};
  ForwardConfig c = tight_config(g);
  const Tensor p = pressure(c, Tensor(g.field_shape()));
  // Independent assembly of the constant-coefficient 5-point system.
  const int n = 16, cells = n * n;
  const double w = 1.0 / ((1.0 / n) * (1.0 / n));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(cells, cells);
  for (int r = 0; r < n; ++r)
    for (int col = 0; col < n; ++col) {
      const int i = r * n + col;
      const int nbr[4][2] = {{r, col - 1}, {r, col + 1}, {r - 1, col}, {r + 1, col}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= n || q[1] < 0 || q[1] >= n) {
          a(i, i) += 2.0 * w;
        } else {
          a(i, i) += w;
          a(i, q[0] * n + q[1]) -= w;
        }
      }
    }
  Eigen::VectorXd b(cells);
  for (int i = 0; i < cells; ++i) b[i] = c.source[i];
  const Eigen::VectorXd x = a.partialPivLu().solve(b);
  double err = 0.0, scale = 0.0;
  for (int i = 0; i < cells; ++i) {
    err = std::max(err, std::abs(x[i] - p[i]));
    scale = std::max(scale, std::abs(x[i]));
  }
  EXPECT_LE(err, 1e-8 * scale);
}

TEST(Forward, ZeroSourceGivesZeroPressureAndConstantFront) {
  const Grid g{8, 8, 1.0, 1.0};
  ForwardConfig c = ForwardConfig::with_injector(g);
  c.source = Tensor(g.field_shape());
  EXPECT_THROW(c.validate(), std::invalid_argument);
  Rng rng(1);
  const Tensor m = random_field(g, rng);
  EXPECT_EQ(max_abs(pressure(c, m)), 0.0);
  const Tensor s = solve_forward(c, m);
  const double t = std::clamp(-c.front_gain * c.front_level, 0.0, 1.0);
  for (double v : s.values()) EXPECT_EQ(v, t * t * (3 - 2 * t));
}

TEST(Forward, UniformShiftScalesPressure) {
  const Grid g{16, 16, 1.0, 1.0};
  const ForwardConfig c = tight_config(g);
  Rng rng(2);
  const Tensor m = smooth_field(g, rng);
  Tensor m1 = m;
  for (double& v : m1.values()) v += 1.0;
  const Tensor p = pressure(c, m), p1 = pressure(c, m1);
  EXPECT_LE(norm2(std::exp(1.0) * p1 - p) / norm2(p), 1e-10);
}

TEST(Forward, OutputIsBoundedAndResidualMeetsTolerance) {
  const Grid g{32, 32, 1.0, 1.0};
  const ForwardConfig c = ForwardConfig::with_injector(g);
  const auto box = grf::GeoPriorBox::for_grid(g);
  for (int i = 0; i < 20; ++i) {
    Rng rng(100 + i);
    const Tensor m = grf::sample_geomodel(box, g, rng).first;
    SolveStats st;
    const Tensor s = solve_forward(c, m, &st);
    EXPECT_LE(st.relative_residual, c.cg_tol);
    // Independent residual check.
    const EllipticOperator op(g, coefficient(c, m));
    const Tensor p = pressure(c, m);
    EXPECT_LE(norm2(op.apply(p) - c.source) / norm2(c.source), c.cg_tol);
    for (double v : s.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Forward, CgNonConvergenceIsReported) {
  const Grid g{16, 16, 1.0, 1.0};
  ForwardConfig c = ForwardConfig::with_injector(g);
  c.cg_max_iter = 3;
  EXPECT_THROW(solve_forward(c, Tensor(g.field_shape())), SolverError);
}

TEST(Forward, MorePermeableNeverIncreasesEnergy) {
  const Grid g{16, 16, 1.0, 1.0};
  const ForwardConfig c = ForwardConfig::with_injector(g);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor m = smooth_field(g, rng);
    Tensor m2 = m;
    for (double& v : m2.values()) v += std::abs(rng.normal());
    // For A p = b the energy p^T A p equals b^T p.
    const double e1 = dot(c.source, pressure(c, m));
    const double e2 = dot(c.source, pressure(c, m2));
    EXPECT_LE(e2, e1 * (1 + 1e-8));
  }
}

TEST(Adjoint, ZeroCotangentGivesZeroGradient) {
  const Grid g{8, 8, 1.0, 1.0};
  Rng rng(4);
  EXPECT_EQ(max_abs(vjp_forward(ForwardConfig::with_injector(g), smooth_field(g, rng),
                                Tensor(g.field_shape()))),
            0.0);
}

TEST(Adjoint, MatchesCentralDifferences) {
  const Grid g{8, 8, 1.0, 1.0};
  const ForwardConfig c = tight_config(g);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    const Tensor m = smooth_field(g, rng);
    const Tensor cot = random_field(g, rng);
    const Tensor grad = vjp_forward(c, m, cot);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      Tensor mp = m, mm = m;
      mp[i] += h;
      mm[i] -= h;
      const double fd = (dot(cot, solve_forward(c, mp)) - dot(cot, solve_forward(c, mm))) / (2 * h);
      worst = std::max(worst, std::abs(grad[i] - fd) / (std::abs(fd) + 1e-12));
    }
    EXPECT_LE(worst, 1e-4) << "seed " << seed;
  }
}

TEST(Adjoint, LinearStageIsSelfConsistent) {
  const Grid g{8, 8, 1.0, 1.0};
  const ForwardConfig c = tight_config(g);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor m = smooth_field(g, rng);
    const Tensor u = random_field(g, rng), v = random_field(g, rng);
    const double lhs = dot(pressure_jvp(c, m, u), v);
    const double rhs = dot(u, pressure_vjp(c, m, v));
    EXPECT_LE(std::abs(lhs - rhs), 1e-8 * std::max(std::abs(lhs), 1e-12));
  }
}

TEST(Adjoint, ClippedCellsHaveZeroGradient) {
  const Grid g{8, 8, 1.0, 1.0};
  const ForwardConfig c = tight_config(g);
  Tensor m(g.field_shape());
  m[10] = 7.0;  // beyond kappa_clip
  Rng rng(6);
  const Tensor grad = vjp_forward(c, m, random_field(g, rng));
  EXPECT_EQ(grad[10], 0.0);
}

TEST(Masks, FullRandomMaskIsAllOnes) {
  const Grid g{32, 32, 1.0, 1.0};
  Rng rng(7);
  EXPECT_EQ(random_mask(g, 1.0, rng), Tensor(g.field_shape(), 1.0));
  EXPECT_THROW(random_mask(g, 0.0, rng), std::invalid_argument);
}

TEST(Masks, TwoColumnsGiveSixtyFourCells) {
  const Grid g{32, 32, 1.0, 1.0};
  Rng rng(8);
  const Observation obs = observe(Tensor(g.field_shape()), column_mask(g, {2, 24}), 0.0, rng);
  EXPECT_EQ(obs.count(), 64u);
  EXPECT_THROW(column_mask(g, {32}), std::out_of_range);
  EXPECT_EQ(default_well_columns(g), (std::vector<std::size_t>{1, 24}));
}

TEST(Masks, QuarterCoverageIsBinomial) {
  const Grid g{32, 32, 1.0, 1.0};
  Rng rng(9);
  const Tensor mask = random_mask(g, 0.25, rng);
  double ones = 0;
  for (double v : mask.values()) ones += v;
  EXPECT_NEAR(ones, 256.0, 4.0 * std::sqrt(1024 * 0.25 * 0.75));
}

TEST(Observe, NoiselessFullMaskCopiesField) {
  const Grid g{8, 8, 1.0, 1.0};
  Rng rng(10);
  const Tensor f = random_field(g, rng);
  EXPECT_EQ(observe(f, Tensor(g.field_shape(), 1.0), 0.0, rng).values, f);
  const Observation empty = observe(f, Tensor(g.field_shape()), 0.3, rng);
  EXPECT_EQ(max_abs(empty.values), 0.0);
  EXPECT_TRUE(empty.empty());
}

TEST(Observe, NoiseStdMatches) {
  const Grid g{32, 32, 1.0, 1.0};
  Rng rng(11);
  const Tensor f = random_field(g, rng);
  const Observation obs = observe(f, Tensor(g.field_shape(), 1.0), 0.04, rng);
  double ss = 0;
  for (std::size_t i = 0; i < f.size(); ++i) ss += (obs.values[i] - f[i]) * (obs.values[i] - f[i]);
  EXPECT_NEAR(std::sqrt(ss / f.size()), 0.04, 0.15 * 0.04);
}

TEST(Dataset, SingleSampleIsReproducible) {
  const Grid g{32, 32, 1.0, 1.0};
  DatasetSpec spec;
  spec.n_train = 1;
  spec.n_test = 0;
  spec.seed = 77;
  spec.box = grf::GeoPriorBox::for_grid(g);
  const ForwardConfig c = ForwardConfig::with_injector(g);
  const auto a = generate_dataset(spec, c), b = generate_dataset(spec, c);
  EXPECT_EQ(a.train.m[0], b.train.m[0]);
  EXPECT_EQ(a.train.s[0], b.train.s[0]);
  EXPECT_EQ(a.config_hash, b.config_hash);
}

TEST(Dataset, LargeDatasetStatistics) {
  const Grid g{32, 32, 1.0, 1.0};
  DatasetSpec spec;
  spec.n_train = 4000;
  spec.n_test = 0;
  spec.seed = 5;
  spec.box = grf::GeoPriorBox::for_grid(g);
  const auto data = generate_dataset(spec, ForwardConfig::with_injector(g));
  ASSERT_EQ(data.train.m.size() + data.skipped.size(), 4000u);
  double acc = 0;
  for (std::size_t i = 0; i < data.train.m.size(); ++i) {
    double mean = 0;
    for (double v : data.train.m[i].values()) mean += v;
    acc += mean / data.train.m[i].size();
    for (double v : data.train.s[i].values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
  // mu ~ U[-1, 1]: standard error 1/sqrt(3 n).
  const double n = static_cast<double>(data.train.m.size());
  EXPECT_NEAR(acc / n, 0.0, 4.0 / std::sqrt(3.0 * n));
}

TEST(Dataset, WriteReadRoundTripAndPartialLoads) {
  const Grid g{8, 8, 1.0, 1.0};
  DatasetSpec spec;
  spec.n_train = 3;
  spec.n_test = 2;
  spec.box = grf::GeoPriorBox::for_grid(g);
  const ForwardConfig c = ForwardConfig::with_injector(g);
  const auto data = generate_dataset(spec, c);
  const auto dir = std::filesystem::temp_directory_path() / "fsd_dataset_test";
  std::filesystem::remove_all(dir);
  write_dataset(dir, spec, c, data);
  const Dataset train = read_dataset(dir, "train", DatasetPart::Pairs);
  ASSERT_EQ(train.m.size(), 3u);
  EXPECT_EQ(train.m[2], data.train.m[2]);
  EXPECT_EQ(train.s[1], data.train.s[1]);
  EXPECT_EQ(train.hyper[0].mu, data.train.hyper[0].mu);
  std::filesystem::remove(dir / "fields" / "test" / "00001_s.fsdt");
  EXPECT_NO_THROW(read_dataset(dir, "test", DatasetPart::GeomodelOnly));
  EXPECT_THROW(read_dataset(dir, "test", DatasetPart::Pairs), std::runtime_error);
  std::filesystem::remove_all(dir);
}
