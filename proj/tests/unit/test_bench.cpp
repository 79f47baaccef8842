#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fsd/bench/bench.hpp"

using namespace fsd;
using namespace fsd::bench;

namespace {

Histogram from_mass(std::vector<double> mass) {
  Histogram h;
  h.mass = std::move(mass);
  for (std::size_t i = 0; i <= h.mass.size(); ++i) h.edges.push_back(static_cast<double>(i));
  h.count = 1;
  return h;
}

// Scalar "field" m with prior N(0, 1); the forward map is the identity and a
// single observed cell. The tempered likelihood has |M| = 1, so the posterior
// is N(y / (1 + s^2), s^2 / (1 + s^2)).
struct ScalarToy {
  grf::Grid grid{4, 4, 1.0, 1.0};
  sim::Observation obs;

  explicit ScalarToy(double y) {
    obs.mask = Tensor({4, 4});
    obs.values = Tensor({4, 4});
    obs.mask[0] = 1.0;
    obs.values[0] = y;
  }
  PriorSampler prior() const {
    return [](Rng& rng) {
      PriorDraw d{Tensor({4, 4}, rng.normal()), {}};
      d.hyper.mu = d.field[0];
      return d;
    };
  }
  static ForwardEvaluator identity() {
    return [](const Tensor& m) { return m; };
  }
};

}  // namespace

TEST(JsDivergence, IdenticalHistogramsGiveZero) {
  const Histogram p = from_mass({0.1, 0.2, 0.3, 0.4});
  EXPECT_DOUBLE_EQ(js_divergence(p, p), 0.0);
}

TEST(JsDivergence, DisjointSupportGivesLn2) {
  EXPECT_NEAR(js_divergence(from_mass({1, 0}), from_mass({0, 1})), std::log(2.0), 1e-15);
}

TEST(JsDivergence, MatchesDirectFormulaAndIsSymmetric) {
  const Histogram p = from_mass({0.5, 0.5}), q = from_mass({1.0, 0.0});
  const double expected = 0.5 * (0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25)) +
                          0.5 * (1.0 * std::log(1.0 / 0.75));
  EXPECT_NEAR(js_divergence(p, q), expected, 1e-15);
  EXPECT_DOUBLE_EQ(js_divergence(p, q), js_divergence(q, p));
}

TEST(JsDivergence, RejectsMismatchedEdges) {
  Histogram p = from_mass({0.5, 0.5}), q = from_mass({0.5, 0.5});
  q.edges[1] = 0.9;
  EXPECT_THROW(js_divergence(p, q), std::invalid_argument);
}

TEST(Histogram, ClampsAndNormalizes) {
  const Histogram h = Histogram::build({-5.0, 0.1, 0.6, 0.99, 7.0}, 0.0, 1.0, 2);
  ASSERT_EQ(h.mass.size(), 2u);
  EXPECT_DOUBLE_EQ(h.mass[0], 0.4);
  EXPECT_DOUBLE_EQ(h.mass[1], 0.6);
  EXPECT_EQ(h.count, 5u);
  EXPECT_EQ(h.to_csv().substr(0, 20), "edge_lo,edge_hi,mass");
}

TEST(Histogram, DegenerateRangeKeepsAllMass) {
  const ScalarComparison c = compare_values({2.0, 2.0}, {2.0}, 10);
  EXPECT_DOUBLE_EQ(c.js, 0.0);
  double total = 0;
  for (double m : c.a.mass) total += m;
  EXPECT_DOUBLE_EQ(total, 1.0);
}

TEST(Bins, DefaultDependsOnSmallerEnsemble) {
  EXPECT_EQ(default_bins(1000, 499), 25u);
  EXPECT_EQ(default_bins(500, 500), 50u);
}

TEST(Summary, ConstantFieldAndGeomodel) {
  const Summary c = summary_stats(Tensor({8, 8}, 1.5));
  EXPECT_DOUBLE_EQ(c.mean, 1.5);
  EXPECT_DOUBLE_EQ(c.std, 0.0);
  const grf::Grid grid{32, 32, 1.0, 1.0};
  Rng rng(3);
  const auto [m, hyper] = grf::sample_geomodel(grf::GeoPriorBox::for_grid(grid), grid, rng);
  const Summary s = summary_stats(m);
  EXPECT_NEAR(s.mean, hyper.mu, 1e-12);
  EXPECT_NEAR(s.std, hyper.sigma, 1e-12);
}

TEST(ComparePosteriors, SplitHalvesOfOneEnsembleAreClose) {
  Rng rng(11);
  std::vector<Summary> a, b;
  for (int i = 0; i < 4000; ++i) (i % 2 ? a : b).push_back({rng.normal(), 1.0 + 0.1 * rng.normal()});
  const PosteriorComparison c = compare_posteriors(a, b);
  EXPECT_EQ(c.bins, 50u);
  EXPECT_LT(c.average, 0.05);
  EXPECT_DOUBLE_EQ(c.average, 0.5 * (c.mean.js + c.std.js));
}

TEST(ComparePosteriors, EmptyEnsembleThrows) {
  EXPECT_THROW(compare_posteriors({}, {{0.0, 1.0}}), std::invalid_argument);
}

TEST(Likelihood, TemperedByObservationCount) {
  ScalarToy toy(0.0);
  toy.obs.mask[1] = 1.0;
  Tensor pred({4, 4});
  pred[0] = 0.1;
  pred[1] = 0.1;
  EXPECT_NEAR(likelihood(pred, toy.obs, 0.1), std::exp(-0.02 / (2 * 0.01 * 2)), 1e-15);
  EXPECT_DOUBLE_EQ(likelihood(toy.obs.values, toy.obs, 0.1), 1.0);
  EXPECT_THROW(likelihood(pred, toy.obs, 0.0), std::invalid_argument);
}

TEST(Rejection, ZeroResidualAcceptsEverything) {
  ScalarToy toy(0.0);
  RejectionPlan plan{100, 25, 5, 0.1};
  const RejectionRun run =
      rejection_sample(plan, [](Rng&) { return PriorDraw{Tensor({4, 4}), {}}; }, ScalarToy::identity(), toy.obs);
  EXPECT_TRUE(run.complete());
  EXPECT_EQ(run.accepted.size(), 100u);
  EXPECT_DOUBLE_EQ(run.acceptance_rate(), 1.0);
}

TEST(Rejection, GaussianToyPosteriorMoments) {
  const double y = 0.8, s = 0.5;
  ScalarToy toy(y);
  RejectionPlan plan{40000, 10000, 21, s};
  const RejectionRun run = rejection_sample(plan, toy.prior(), ScalarToy::identity(), toy.obs);
  const double post_mean = y / (1 + s * s), post_var = s * s / (1 + s * s);
  ASSERT_GT(run.accepted.size(), 1000u);
  double sum = 0, sq = 0;
  for (const Accepted& a : run.accepted) sum += a.summary.mean;
  const double n = static_cast<double>(run.accepted.size()), mean = sum / n;
  for (const Accepted& a : run.accepted) sq += (a.summary.mean - mean) * (a.summary.mean - mean);
  EXPECT_NEAR(mean, post_mean, 3.0 * std::sqrt(post_var / n));
  EXPECT_NEAR(sq / (n - 1), post_var, 4.0 * post_var * std::sqrt(2.0 / (n - 1)));
  // Acceptance probability of the tempered Gaussian: sqrt(s^2/(1+s^2)) exp(-y^2/(2(1+s^2))).
  const double rate = std::sqrt(post_var) * std::exp(-y * y / (2 * (1 + s * s)));
  EXPECT_NEAR(run.acceptance_rate(), rate, 4.0 * std::sqrt(rate * (1 - rate) / 40000));
}

TEST(Rejection, AcceptanceGrowsWithNoiseLevel) {
  ScalarToy toy(1.0);
  double previous = 0.0;
  for (double s : {0.05, 0.2, 1.0, 5.0}) {
    const RejectionRun run = rejection_sample({5000, 5000, 2, s}, toy.prior(), ScalarToy::identity(), toy.obs);
    EXPECT_GT(run.acceptance_rate(), previous) << "sigma_obs " << s;
    previous = run.acceptance_rate();
  }
}

TEST(Rejection, ForwardFailuresCountAsRejections) {
  ScalarToy toy(0.0);
  const RejectionRun run = rejection_sample({50, 10, 1, 0.1}, toy.prior(),
                                            [](const Tensor&) -> Tensor { throw std::runtime_error("solver"); },
                                            toy.obs);
  EXPECT_EQ(run.errors, 50u);
  EXPECT_TRUE(run.accepted.empty());
}

TEST(Rejection, BlockResumeThroughDiskMatchesStraightRun) {
  ScalarToy toy(0.3);
  const RejectionPlan plan{3000, 1000, 9, 0.3};
  const RejectionRun straight = rejection_sample(plan, toy.prior(), ScalarToy::identity(), toy.obs);
  const RejectionRun first = rejection_sample(plan, toy.prior(), ScalarToy::identity(), toy.obs, nullptr, 1);
  EXPECT_EQ(first.evaluated, 1000u);
  EXPECT_FALSE(first.complete());
  const auto dir = std::filesystem::temp_directory_path() / "fsd_bench_resume";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_rejection_run(dir, first);
  const RejectionRun loaded = read_rejection_run(dir);
  const RejectionRun resumed = rejection_sample(plan, toy.prior(), ScalarToy::identity(), toy.obs, &loaded);
  ASSERT_EQ(resumed.accepted.size(), straight.accepted.size());
  for (std::size_t i = 0; i < straight.accepted.size(); ++i) {
    EXPECT_EQ(resumed.accepted[i].index, straight.accepted[i].index);
    EXPECT_EQ(resumed.accepted[i].summary.mean, straight.accepted[i].summary.mean);
    EXPECT_EQ(resumed.accepted[i].u, straight.accepted[i].u);
  }
  EXPECT_THROW(rejection_sample({3000, 1000, 10, 0.3}, toy.prior(), ScalarToy::identity(), toy.obs, &loaded),
               std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST(Rejection, ThreadCountDoesNotChangeTheAcceptedSet) {
  ScalarToy toy(0.5);
  const RejectionPlan plan{2000, 500, 4, 0.4};
  const RejectionRun one = rejection_sample(plan, toy.prior(), ScalarToy::identity(), toy.obs);
  const RejectionRun four = rejection_sample(plan, toy.prior(), ScalarToy::identity(), toy.obs, nullptr, 0, 4);
  ASSERT_EQ(one.accepted.size(), four.accepted.size());
  for (std::size_t i = 0; i < one.accepted.size(); ++i) {
    EXPECT_EQ(one.accepted[i].index, four.accepted[i].index);
    EXPECT_EQ(one.accepted[i].u, four.accepted[i].u);
  }
}
