#include "fsd/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "fsd/tensorgrad/ops.hpp"

namespace fsd::train {

using nets::ParamVars;
using tg::Tape;
using tg::Var;

void TrainConfig::validate() const {
  if (!(0.0 < sigma_min && sigma_min < sigma_max)) throw std::invalid_argument("train config: need 0 < sigma_min < sigma_max");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (!(lr > 0.0) || weight_decay < 0.0) throw std::invalid_argument("train config: invalid lr or weight decay");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
    throw std::invalid_argument("train config: invalid Adam constants");
}

Json TrainConfig::to_json() const {
  return {{"sigma_min", sigma_min}, {"sigma_max", sigma_max}, {"batch", batch},   {"epochs", epochs},
          {"lr", lr},               {"weight_decay", weight_decay}, {"beta1", beta1}, {"beta2", beta2},
          {"eps", eps},             {"cosine", cosine},       {"val_count", val_count}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.sigma_max = j.value("sigma_max", c.sigma_max);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.cosine = j.value("cosine", c.cosine);
  c.val_count = j.value("val_count", c.val_count);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,val_loss,seconds\n";
  for (const EpochRecord& e : epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.seconds << '\n';
  write_text(path, out.str());
}

AdamW::AdamW(const TrainConfig& cfg) : wd_(cfg.weight_decay), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps) {}

void AdamW::step(ParamSet& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(steps_));
  const double decay = 1.0 - lr * wd_;
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (g.shape() != p.shape()) throw tg::ShapeError("adamw: gradient shape mismatch for " + name);
    Tensor& m = m_.try_emplace(name, p.shape()).first->second;
    Tensor& v = v_.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      p[i] = p[i] * decay - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void AdamW::save(std::map<std::string, Tensor>& extra) const {
  extra["adam.steps"] = Tensor({1}, static_cast<double>(steps_));
  for (const auto& [name, t] : m_) extra["adam.m." + name] = t;
  for (const auto& [name, t] : v_) extra["adam.v." + name] = t;
}

void AdamW::load(const std::map<std::string, Tensor>& extra) {
  m_.clear();
  v_.clear();
  steps_ = static_cast<std::size_t>(extra.at("adam.steps")[0]);
  for (const auto& [key, t] : extra) {
    if (key.rfind("adam.m.", 0) == 0) m_.emplace(key.substr(7), t);
    if (key.rfind("adam.v.", 0) == 0) v_.emplace(key.substr(7), t);
  }
}

double sample_sigma(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

grf::CovarianceSpectrum default_noise_spectrum(const grf::Grid& grid) {
  const double len = 0.02 * std::min(grid.lx, grid.ly);
  return grf::with_pointwise_variance(grf::matern_spectrum(grid, 1.0, 1.0, 2.0, len, len), 1.0);
}

std::vector<Tensor> stack_states(const sim::Dataset& data, bool joint) {
  if (joint && data.s.size() != data.m.size())
    throw std::runtime_error("joint training needs dynamics fields for every geomodel");
  std::vector<Tensor> out;
  out.reserve(data.m.size());
  for (std::size_t i = 0; i < data.m.size(); ++i) {
    const Tensor& m = data.m[i];
    const std::size_t n = m.size();
    Tensor x({joint ? 2u : 1u, m.dim(0), m.dim(1)});
    std::copy(m.data(), m.data() + n, x.data());
    if (joint) {
      if (data.s[i].shape() != m.shape()) throw tg::ShapeError("joint training: m/s shape mismatch");
      std::copy(data.s[i].data(), data.s[i].data() + n, x.data() + n);
    }
    out.push_back(std::move(x));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Loop {
  // Per-sample training loss for the sample at dataset index `idx`.
  std::function<Var(Tape&, const ParamVars&, std::size_t idx, Rng& rng)> sample_loss;
  std::function<double(const ParamSet&)> val_loss;
};

Tensor history_tensor(const std::vector<EpochRecord>& h) {
  Tensor t({h.size(), 4});
  for (std::size_t i = 0; i < h.size(); ++i) {
    t[4 * i] = static_cast<double>(h[i].epoch);
    t[4 * i + 1] = h[i].train_loss;
    t[4 * i + 2] = h[i].val_loss;
    t[4 * i + 3] = h[i].seconds;
  }
  return t;
}

std::vector<EpochRecord> history_from(const Tensor& t) {
  std::vector<EpochRecord> h(t.rank() == 2 ? t.dim(0) : 0);
  for (std::size_t i = 0; i < h.size(); ++i)
    h[i] = {static_cast<std::size_t>(t[4 * i]), t[4 * i + 1], t[4 * i + 2], t[4 * i + 3]};
  return h;
}

TrainReport run_loop(ParamSet& params, const Json& spec, std::size_t n_train, const TrainConfig& cfg,
                     const RunOptions& opts, const Loop& loop) {
  AdamW adam(cfg);
  TrainReport report;
  std::size_t start = 0;
  if (opts.resume_from) {
    nets::Checkpoint ckpt = nets::load_checkpoint(*opts.resume_from, spec);
    params = std::move(ckpt.params);
    adam.load(ckpt.extra);
    start = static_cast<std::size_t>(ckpt.extra.at("train.epoch")[0]);
    report.epochs = history_from(ckpt.extra.at("train.history"));
  }
  const std::size_t batches = (n_train + cfg.batch - 1) / cfg.batch;
  const double total_steps = static_cast<double>(batches * std::max<std::size_t>(cfg.epochs, 1));
  std::vector<std::size_t> order(n_train);

  for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    Rng order_rng = Rng::stream(cfg.seed, "train/order", epoch);
    std::shuffle(order.begin(), order.end(), order_rng.engine());

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch, hi = std::min(n_train, lo + cfg.batch);
      std::map<std::string, Tensor> grads;
      for (std::size_t k = lo; k < hi; ++k) {
        Rng rng = Rng::stream(cfg.seed, "train/sample", (static_cast<std::uint64_t>(epoch) << 32) | k);
        Tape tape;
        const ParamVars vars(tape, params, true);
        Var loss = loop.sample_loss(tape, vars, order[k], rng);
        const double value = loss.value()[0];
        if (!std::isfinite(value))
          throw tg::NumericalError("training: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(b) + ", sample " + std::to_string(order[k]));
        epoch_loss += value;
        for (auto& [name, g] : nets::parameter_gradients(tape, loss, vars, params)) {
          auto it = grads.find(name);
          if (it == grads.end())
            grads.emplace(name, std::move(g));
          else
            it->second += g;
        }
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (auto& [name, g] : grads) g *= inv;
      const double lr = cfg.cosine
                            ? cfg.lr * 0.5 * (1.0 + std::cos(std::acos(-1.0) * static_cast<double>(adam.steps()) / total_steps))
                            : cfg.lr;
      adam.step(params, grads, lr);
    }
    EpochRecord rec{epoch + 1, epoch_loss / static_cast<double>(n_train), loop.val_loss(params),
                    std::chrono::duration<double>(Clock::now() - t0).count()};
    if (!std::isfinite(rec.val_loss)) throw tg::NumericalError("training: non-finite validation loss");
    report.epochs.push_back(rec);
    if (!opts.checkpoint_dir.empty()) {
      nets::Checkpoint ckpt{spec, params, {}};
      adam.save(ckpt.extra);
      ckpt.extra["train.epoch"] = Tensor({1}, static_cast<double>(epoch + 1));
      ckpt.extra["train.history"] = history_tensor(report.epochs);
      report.checkpoint = opts.checkpoint_dir / "last.fsdc";
      nets::save_checkpoint(report.checkpoint, ckpt);
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return report;
}

Tensor noise_state(const grf::CovarianceSpectrum& noise, std::size_t channels, double sigma, Rng& rng) {
  const std::size_t n = noise.grid.cells();
  Tensor out({channels, noise.grid.ny, noise.grid.nx});
  for (std::size_t c = 0; c < channels; ++c) {
    const Tensor g = grf::sample_grf(noise, rng);
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = sigma * g[i];
  }
  return out;
}

nets::ChannelStandardization fit_standardization(const std::vector<Tensor>& states, std::size_t channels) {
  nets::ChannelStandardization s = nets::ChannelStandardization::identity(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0, sq = 0;
    std::size_t count = 0;
    for (const Tensor& x : states) {
      const std::size_t n = x.size() / channels;
      for (std::size_t i = 0; i < n; ++i) {
        sum += x[c * n + i];
        sq += x[c * n + i] * x[c * n + i];
      }
      count += n;
    }
    const double mean = sum / count, var = sq / count - mean * mean;
    s.shift[c] = mean;
    s.scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void check_states(const std::vector<Tensor>& states, const tg::Shape& shape, const char* what) {
  for (const Tensor& x : states)
    if (x.shape() != shape)
      throw tg::ShapeError(std::string(what) + ": state shape " + tg::to_string(x.shape()) + " does not match model " +
                           tg::to_string(shape));
}

}  // namespace

TrainedDenoiser train_denoiser(const std::vector<Tensor>& train, const std::vector<Tensor>& val,
                               const nets::DenoiserSpec& spec, const grf::CovarianceSpectrum& noise,
                               const TrainConfig& cfg, const RunOptions& opts) {
  spec.validate();
  cfg.validate();
  if (train.empty() || val.empty()) throw std::invalid_argument("train_denoiser: empty train or validation set");
  if (!(noise.grid == spec.grid)) throw std::invalid_argument("train_denoiser: noise spectrum grid mismatch");
  const tg::Shape shape{spec.channels, spec.grid.ny, spec.grid.nx};
  check_states(train, shape, "train_denoiser");
  check_states(val, shape, "train_denoiser");

  Rng init_rng = Rng::stream(cfg.seed, "init");
  TrainedDenoiser out{spec, nets::UnoDenoiser::init_params(spec, init_rng), {}};
  const nets::ChannelStandardization standard = fit_standardization(train, spec.channels);
  nets::UnoDenoiser::set_standardization(out.params, standard);

  std::vector<Tensor> work, val_work;
  for (const Tensor& x : train) work.push_back(standard.to_working(x));
  for (std::size_t i = 0; i < std::min(cfg.val_count, val.size()); ++i) val_work.push_back(standard.to_working(val[i]));

  const nets::UnoDenoiser model(spec, out.params);
  const double inv_size = 1.0 / static_cast<double>(work.front().size());
  auto denoise_loss = [&](Tape& tape, const ParamVars& vars, const Tensor& x, Rng& rng) {
    const double sigma = sample_sigma(rng, cfg.sigma_min, cfg.sigma_max);
    const Tensor z = x + noise_state(noise, spec.channels, sigma, rng);
    Var d = model.forward(tape, tape.constant(z), sigma, vars);
    return tg::scale(tg::squared_error(d, x), nets::edm_weight(sigma, spec.sigma_data) * inv_size);
  };
  Loop loop;
  loop.sample_loss = [&](Tape& tape, const ParamVars& vars, std::size_t idx, Rng& rng) {
    return denoise_loss(tape, vars, work[idx], rng);
  };
  loop.val_loss = [&](const ParamSet& params) {
    double total = 0;
    for (std::size_t i = 0; i < val_work.size(); ++i) {
      Rng rng = Rng::stream(cfg.seed, "train/val", i);
      Tape tape;
      const ParamVars vars(tape, params, false);
      total += denoise_loss(tape, vars, val_work[i], rng).value()[0];
    }
    return total / static_cast<double>(val_work.size());
  };
  out.report = run_loop(out.params, spec.to_json(), work.size(), cfg, opts, loop);
  return out;
}

TrainedDenoiser train_prior(const sim::Dataset& train, const sim::Dataset& val, nets::DenoiserSpec spec,
                            const grf::CovarianceSpectrum& noise, const TrainConfig& cfg, const RunOptions& opts) {
  spec.channels = 1;
  return train_denoiser(stack_states(train, false), stack_states(val, false), spec, noise, cfg, opts);
}

TrainedDenoiser train_joint(const sim::Dataset& train, const sim::Dataset& val, nets::DenoiserSpec spec,
                            const grf::CovarianceSpectrum& noise, const TrainConfig& cfg, const RunOptions& opts) {
  spec.channels = 2;
  return train_denoiser(stack_states(train, true), stack_states(val, true), spec, noise, cfg, opts);
}

TrainedSurrogate train_surrogate(const sim::Dataset& train, const sim::Dataset& val, const nets::SurrogateSpec& spec,
                                 const TrainConfig& cfg, const RunOptions& opts) {
  spec.validate();
  cfg.validate();
  if (train.m.empty() || val.m.empty()) throw std::invalid_argument("train_surrogate: empty train or validation set");
  if (train.s.size() != train.m.size() || val.s.size() != val.m.size())
    throw std::runtime_error("train_surrogate: dynamics fields missing");
  const tg::Shape shape{spec.grid.ny, spec.grid.nx};
  check_states(train.m, shape, "train_surrogate");
  check_states(train.s, shape, "train_surrogate");
  check_states(val.m, shape, "train_surrogate");
  check_states(val.s, shape, "train_surrogate");

  Rng init_rng = Rng::stream(cfg.seed, "init");
  TrainedSurrogate out{spec, nets::Surrogate::init_params(spec, init_rng), {}};
  std::vector<Tensor> channels;
  for (const Tensor& m : train.m) channels.push_back(m.reshaped({1, m.dim(0), m.dim(1)}));
  const nets::ChannelStandardization standard = fit_standardization(channels, 1);
  nets::Surrogate::set_input_normalization(out.params, standard.shift[0], standard.scale[0]);

  const nets::Surrogate model(spec, out.params);
  auto rel_loss = [&](Tape& tape, const ParamVars& vars, const Tensor& m, const Tensor& s) {
    double norm2 = 0;
    for (double v : s.values()) norm2 += v * v;
    if (!(norm2 > 0.0)) throw std::domain_error("train_surrogate: zero dynamics field");
    Var pred = model.forward(tape, tape.constant(m), vars);
    return tg::scale(tg::sqrt(tg::squared_error(pred, s)), 1.0 / std::sqrt(norm2));
  };
  Loop loop;
  loop.sample_loss = [&](Tape& tape, const ParamVars& vars, std::size_t idx, Rng&) {
    return rel_loss(tape, vars, train.m[idx], train.s[idx]);
  };
  loop.val_loss = [&](const ParamSet& params) {
    const std::size_t n = std::min(cfg.val_count, val.m.size());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      Tape tape;
      const ParamVars vars(tape, params, false);
      total += rel_loss(tape, vars, val.m[i], val.s[i]).value()[0];
    }
    return total / static_cast<double>(n);
  };
  out.report = run_loop(out.params, spec.to_json(), train.m.size(), cfg, opts, loop);
  return out;
}

}  // namespace fsd::train
