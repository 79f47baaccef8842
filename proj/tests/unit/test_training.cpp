#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fsd/tensorgrad/ops.hpp"
#include "fsd/training/training.hpp"

using namespace fsd;
using namespace fsd::train;
using grf::Grid;

namespace {

const Grid kGrid{8, 8, 1.0, 1.0};

sim::Dataset small_dataset(std::size_t n, std::uint64_t seed) {
  sim::DatasetSpec spec;
  spec.n_train = n;
  spec.n_test = 0;
  spec.seed = seed;
  spec.box = grf::GeoPriorBox::for_grid(kGrid);
  return sim::generate_dataset(spec, sim::ForwardConfig::with_injector(kGrid)).train;
}

nets::DenoiserSpec tiny_denoiser() {
  nets::DenoiserSpec s;
  s.grid = kGrid;
  s.levels = 2;
  s.base_width = 4;
  s.multipliers = {1, 2};
  s.embed_dim = 8;
  s.groups = 2;
  return s;
}

nets::SurrogateSpec tiny_surrogate() {
  nets::SurrogateSpec s;
  s.grid = kGrid;
  s.layers = 2;
  s.modes = 4;
  s.width = 6;
  return s;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch = 4;
  c.lr = 3e-3;
  c.val_count = 8;
  c.seed = 7;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fsd_test_training" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(AdamW, ZeroGradientAppliesOnlyDecoupledDecay) {
  TrainConfig cfg;
  cfg.weight_decay = 0.05;
  AdamW adam(cfg);
  nets::ParamSet p;
  p.add("w", Tensor({3}, std::vector<double>{1.5, -2.0, 0.25}));
  const Tensor before = p.at("w");
  const double lr = 0.01;
  adam.step(p, {{"w", Tensor({3})}}, lr);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.at("w")[i], before[i] * (1.0 - lr * 0.05));
}

TEST(AdamW, FirstStepMovesByLearningRateAgainstGradientSign) {
  TrainConfig cfg;
  AdamW adam(cfg);
  nets::ParamSet p;
  p.add("w", Tensor({2}, std::vector<double>{0.0, 0.0}));
  adam.step(p, {{"w", Tensor({2}, std::vector<double>{3.0, -0.5})}}, 0.1);
  EXPECT_NEAR(p.at("w")[0], -0.1, 1e-8);
  EXPECT_NEAR(p.at("w")[1], 0.1, 1e-7);
}

TEST(SigmaSampling, LogUniformQuartiles) {
  Rng rng(3);
  const double lo = std::log(0.002), hi = std::log(80.0);
  std::vector<double> logs(10000);
  for (double& v : logs) v = std::log(sample_sigma(rng, 0.002, 80.0));
  std::sort(logs.begin(), logs.end());
  for (double q : {0.25, 0.5, 0.75}) {
    const double expected = lo + q * (hi - lo);
    const double got = logs[static_cast<std::size_t>(q * logs.size())];
    EXPECT_NEAR(got, expected, 0.02 * (hi - lo)) << "quartile " << q;
  }
}

TEST(TrainConfig, RejectsInvalidValues) {
  TrainConfig c;
  c.sigma_min = 1.0;
  c.sigma_max = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(TrainConfig::from_json(TrainConfig{}.to_json()).to_json(), TrainConfig{}.to_json());
}

TEST(TrainPrior, ZeroEpochsReturnsInitialParameters) {
  const sim::Dataset data = small_dataset(8, 1);
  const auto noise = default_noise_spectrum(kGrid);
  const TrainConfig cfg = quick_config(0);
  const TrainedDenoiser out = train_prior(data, data, tiny_denoiser(), noise, cfg);
  Rng rng = Rng::stream(cfg.seed, "init");
  nets::ParamSet init = nets::UnoDenoiser::init_params(tiny_denoiser(), rng);
  for (const auto& [name, t] : init.tensors()) {
    if (!init.is_buffer(name)) {
      EXPECT_TRUE(out.params.at(name) == t) << name;
    }
  }
  EXPECT_TRUE(out.report.epochs.empty());
}

TEST(TrainPrior, LossDecreasesAndBeatsIdentityAtUnitSigma) {
  const sim::Dataset train = small_dataset(128, 2);
  const sim::Dataset val = small_dataset(32, 3);
  const auto noise = default_noise_spectrum(kGrid);
  TrainConfig cfg = quick_config(12);
  cfg.batch = 8;
  const TrainedDenoiser out = train_prior(train, val, tiny_denoiser(), noise, cfg);
  ASSERT_EQ(out.report.epochs.size(), 12u);
  EXPECT_LT(out.report.epochs.back().train_loss, out.report.epochs.front().train_loss);

  const nets::UnoDenoiser model(out.spec, out.params);
  const auto standard = model.standardization();
  double model_err = 0, identity_err = 0;
  for (std::size_t i = 0; i < val.m.size(); ++i) {
    Rng rng = Rng::stream(99, "eval", i);
    const Tensor x = standard.to_working(val.m[i].reshaped({1, 8, 8}));
    Tensor z = x;
    const Tensor g = grf::sample_grf(noise, rng);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += g[k];
    const Tensor d = model.denoise(z, 1.0);
    for (std::size_t k = 0; k < z.size(); ++k) {
      model_err += (d[k] - x[k]) * (d[k] - x[k]);
      identity_err += (z[k] - x[k]) * (z[k] - x[k]);
    }
  }
  EXPECT_LT(model_err, identity_err);
}

TEST(TrainPrior, ResumeEqualsStraightRun) {
  const sim::Dataset data = small_dataset(12, 4);
  const auto noise = default_noise_spectrum(kGrid);
  const auto dir = scratch("resume");
  const TrainedDenoiser straight = train_prior(data, data, tiny_denoiser(), noise, quick_config(20));

  RunOptions first;
  first.checkpoint_dir = dir / "a";
  train_prior(data, data, tiny_denoiser(), noise, quick_config(10), first);
  RunOptions second;
  second.checkpoint_dir = dir / "b";
  second.resume_from = dir / "a" / "last.fsdc";
  const TrainedDenoiser resumed = train_prior(data, data, tiny_denoiser(), noise, quick_config(20), second);

  EXPECT_TRUE(resumed.params == straight.params);
  ASSERT_EQ(resumed.report.epochs.size(), 20u);
  for (std::size_t e = 0; e < 20; ++e)
    EXPECT_EQ(resumed.report.epochs[e].train_loss, straight.report.epochs[e].train_loss) << e;
}

TEST(TrainPrior, RejectsGridMismatch) {
  const sim::Dataset data = small_dataset(4, 5);
  nets::DenoiserSpec spec = tiny_denoiser();
  spec.grid = {16, 16, 1.0, 1.0};
  EXPECT_THROW(train_prior(data, data, spec, default_noise_spectrum(spec.grid), quick_config(1)), tg::ShapeError);
}

TEST(TrainJoint, RefusesMissingDynamics) {
  sim::Dataset data = small_dataset(4, 6);
  data.s.clear();
  nets::DenoiserSpec spec = tiny_denoiser();
  EXPECT_THROW(train_joint(data, data, spec, default_noise_spectrum(kGrid), quick_config(1)), std::runtime_error);
}

TEST(TrainJoint, ProducesTwoChannelModel) {
  const sim::Dataset data = small_dataset(8, 7);
  const TrainedDenoiser out = train_joint(data, data, tiny_denoiser(), default_noise_spectrum(kGrid), quick_config(1));
  EXPECT_EQ(out.spec.channels, 2u);
  const nets::UnoDenoiser model(out.spec, out.params);
  EXPECT_EQ(model.standardization().channels(), 2u);
  EXPECT_EQ(out.report.epochs.size(), 1u);
}

TEST(TrainSurrogate, MemorizesRepeatedPair) {
  const sim::Dataset one = small_dataset(1, 8);
  sim::Dataset rep;
  for (int i = 0; i < 8; ++i) {
    rep.m.push_back(one.m[0]);
    rep.s.push_back(one.s[0]);
  }
  TrainConfig cfg = quick_config(150);
  cfg.lr = 1e-2;
  const TrainedSurrogate out = train_surrogate(rep, rep, tiny_surrogate(), cfg);
  EXPECT_LT(out.report.epochs.back().train_loss, 0.05);
  EXPECT_LT(out.report.epochs.back().train_loss, 0.2 * out.report.epochs.front().train_loss);
}

TEST(TrainSurrogate, SeedDeterminism) {
  const sim::Dataset data = small_dataset(8, 9);
  const TrainedSurrogate a = train_surrogate(data, data, tiny_surrogate(), quick_config(3));
  const TrainedSurrogate b = train_surrogate(data, data, tiny_surrogate(), quick_config(3));
  EXPECT_EQ(a.report.epochs.back().train_loss, b.report.epochs.back().train_loss);
  EXPECT_TRUE(a.params == b.params);
}

TEST(TrainReport, WritesCsvAndPerEpochCheckpoint) {
  const sim::Dataset data = small_dataset(4, 10);
  const auto dir = scratch("csv");
  RunOptions opts;
  opts.checkpoint_dir = dir;
  std::size_t seen = 0;
  opts.on_epoch = [&](const EpochRecord& r) { seen = r.epoch; };
  const TrainedSurrogate out = train_surrogate(data, data, tiny_surrogate(), quick_config(2), opts);
  EXPECT_EQ(seen, 2u);
  EXPECT_TRUE(std::filesystem::exists(out.report.checkpoint));
  const nets::Checkpoint ckpt = nets::load_checkpoint(out.report.checkpoint, tiny_surrogate().to_json());
  EXPECT_TRUE(ckpt.params == out.params);
  out.report.write_csv(dir / "report.csv");
  const std::string csv = read_text(dir / "report.csv");
  EXPECT_EQ(csv.rfind("epoch,train_loss,val_loss,seconds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
