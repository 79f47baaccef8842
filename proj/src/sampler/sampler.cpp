#include "fsd/sampler/sampler.hpp"

#include <atomic>
#include <cmath>
#include <mutex>

#include "fsd/core/parallel.hpp"

#include "fsd/tensorgrad/ops.hpp"

namespace fsd::sampler {

void NoiseSchedule::validate() const {
  if (sigmas.size() < 2) throw std::invalid_argument("schedule: need at least two levels");
  if (sigmas.back() != 0.0) throw std::invalid_argument("schedule: last level must be exactly 0");
  for (std::size_t i = 1; i < sigmas.size(); ++i)
    if (!(sigmas[i] < sigmas[i - 1])) throw std::invalid_argument("schedule: levels must strictly decrease");
}

NoiseSchedule karras_schedule(std::size_t n, double sigma_min, double sigma_max, double rho) {
  if (n < 2) throw std::invalid_argument("karras_schedule: n must be >= 2");
  if (!(0.0 < sigma_min && sigma_min < sigma_max) || !(rho > 0.0))
    throw std::invalid_argument("karras_schedule: need 0 < sigma_min < sigma_max and rho > 0");
  NoiseSchedule s;
  const double a = std::pow(sigma_max, 1.0 / rho), b = std::pow(sigma_min, 1.0 / rho);
  const std::size_t ramp = n - 1;
  for (std::size_t j = 0; j < ramp; ++j) {
    if (j == 0) {
      s.sigmas.push_back(sigma_max);
    } else if (j + 1 == ramp) {
      s.sigmas.push_back(sigma_min);
    } else {
      const double t = static_cast<double>(j) / static_cast<double>(ramp - 1);
      s.sigmas.push_back(std::pow(a + t * (b - a), rho));
    }
  }
  s.sigmas.push_back(0.0);
  s.validate();
  return s;
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::Unconditional: return "unconditional";
    case Mode::Ddps: return "ddps";
    case Mode::Dps: return "dps";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "unconditional") return Mode::Unconditional;
  if (name == "ddps") return Mode::Ddps;
  if (name == "dps") return Mode::Dps;
  throw std::invalid_argument("unknown sampling mode '" + name + "'");
}

void GuidanceSpec::validate(const nets::Denoiser& denoiser) const {
  if (zeta_geo < 0.0 || zeta_dyn < 0.0) throw std::invalid_argument("guidance: zeta must be >= 0");
  if (mode == Mode::Unconditional) return;
  const grf::Grid& g = denoiser.grid();
  auto check = [&](const std::optional<sim::Observation>& o, const char* what) {
    if (!o) return;
    if (o->mask.shape() != tg::Shape{g.ny, g.nx} || o->values.shape() != o->mask.shape())
      throw std::invalid_argument(std::string("guidance: ") + what + " observation not on the model grid");
  };
  check(geo, "geomodel");
  check(dyn, "dynamics");
  if (mode == Mode::Ddps) {
    if (denoiser.channels() != 1) throw std::invalid_argument("guidance: ddps needs a geomodel-only (1-channel) prior");
    if (dyn && !surrogate) throw std::invalid_argument("guidance: ddps with a dynamics observation needs a surrogate");
  }
  if (mode == Mode::Dps && denoiser.channels() != 2)
    throw std::invalid_argument("guidance: dps needs a joint (2-channel) prior");
}

namespace {

double norm(const Tensor& t) { return std::sqrt(tg::dot(t, t)); }

Var channel(Var phys, std::size_t c, const grf::Grid& g) { return tg::reshape(tg::slice(phys, c, 1), {g.ny, g.nx}); }

Tensor noise_state(const grf::CovarianceSpectrum& noise, std::size_t channels, double sigma, Rng& rng) {
  const std::size_t n = noise.grid.cells();
  Tensor out({channels, noise.grid.ny, noise.grid.nx});
  for (std::size_t c = 0; c < channels; ++c) {
    const Tensor g = grf::sample_grf(noise, rng);
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = sigma * g[i];
  }
  return out;
}

}  // namespace

GuidanceResult guidance_gradient(const nets::Denoiser& denoiser, const Tensor& z, double sigma,
                                 const GuidanceSpec& guidance) {
  GuidanceResult out{Tensor(z.shape()), 0.0};
  if (!guidance.active()) return out;
  const grf::Grid& g = denoiser.grid();
  Tape tape;
  Var zv = tape.variable(z);
  Var phys = denoiser.standardization().to_physical(tape, denoiser.denoise(tape, zv, sigma));
  std::vector<Var> terms;
  if (guidance.geo) {
    Var term = tg::squared_error(channel(phys, 0, g), guidance.geo->values, &guidance.geo->mask);
    out.misfit += term.value()[0];
    terms.push_back(tg::scale(term, guidance.zeta_geo));
  }
  if (guidance.dyn) {
    Var s = guidance.mode == Mode::Ddps ? guidance.surrogate(tape, channel(phys, 0, g)) : channel(phys, 1, g);
    Var term = tg::squared_error(s, guidance.dyn->values, &guidance.dyn->mask);
    out.misfit += term.value()[0];
    terms.push_back(tg::scale(term, guidance.zeta_dyn));
  }
  Var loss = terms.size() == 1 ? terms[0] : tg::add(terms[0], terms[1]);
  out.update = tape.gradient(loss, zv);
  return out;
}

SampleResult posterior_sample(const nets::Denoiser& denoiser, const NoiseSchedule& schedule,
                              const GuidanceSpec& guidance, const grf::CovarianceSpectrum& noise, Rng& rng) {
  schedule.validate();
  guidance.validate(denoiser);
  if (!(noise.grid == denoiser.grid())) throw std::invalid_argument("sampler: noise spectrum grid mismatch");
  const bool guided = guidance.active();
  const bool uses_forward = guided && guidance.dyn && guidance.mode == Mode::Ddps;
  const auto& sig = schedule.sigmas;

  SampleResult res;
  Tensor z = noise_state(noise, denoiser.channels(), sig.front(), rng);
  try {
    for (std::size_t k = 0; k + 1 < sig.size(); ++k) {
      const double s_cur = sig[k], s_next = sig[k + 1], h = s_next - s_cur;
      Tensor d = z - denoiser.denoise(z, s_cur);
      d *= 1.0 / s_cur;
      ++res.denoiser_evals;
      Tensor next = z;
      next.axpy(h, d);
      if (s_next > 0.0) {
        Tensor d2 = next - denoiser.denoise(next, s_next);
        d2 *= 1.0 / s_next;
        ++res.denoiser_evals;
        next = z;
        next.axpy(0.5 * h, d);
        next.axpy(0.5 * h, d2);
      }
      StepDiagnostics diag{k + 1, s_cur, norm(d), 0.0, 0.0};
      if (guided && s_next > 0.0) {
        const GuidanceResult gr = guidance_gradient(denoiser, next, s_next, guidance);
        ++res.denoiser_evals;
        if (uses_forward) ++res.forward_evals;
        next -= gr.update;
        diag.guidance_norm = norm(gr.update);
        diag.misfit = gr.misfit;
      }
      if (!next.all_finite()) throw tg::NumericalError("sampler: non-finite state at step " + std::to_string(k + 1));
      z = std::move(next);
      res.diagnostics.push_back(diag);
    }
    res.working = denoiser.denoise(z, denoiser.sigma_min());
    ++res.denoiser_evals;
  } catch (const tg::NumericalError& e) {
    res.diverged = true;
    res.failure = e.what();
    res.working = Tensor(z.shape(), std::numeric_limits<double>::quiet_NaN());
  }
  if (!res.diverged && tg::max_abs(res.working) > guidance.divergence_threshold) {
    res.diverged = true;
    res.failure = "final state exceeds divergence threshold";
  }
  res.state = denoiser.standardization().to_physical(res.working);
  return res;
}

SampleResult sample_unconditional(const nets::Denoiser& denoiser, const NoiseSchedule& schedule,
                                  const grf::CovarianceSpectrum& noise, Rng& rng) {
  GuidanceSpec none;
  none.divergence_threshold = std::numeric_limits<double>::infinity();
  return posterior_sample(denoiser, schedule, none, noise, rng);
}

SampleEnsemble sample_ensemble(std::size_t count, const nets::Denoiser& denoiser, const NoiseSchedule& schedule,
                               const GuidanceSpec& guidance, const grf::CovarianceSpectrum& noise, std::uint64_t seed,
                               bool keep_diagnostics, const std::function<void(std::size_t)>& progress,
                               std::size_t threads) {
  if (count < 1) throw std::invalid_argument("sample_ensemble: count must be >= 1");
  SampleEnsemble ens;
  ens.members.resize(count);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  parallel_for(count, threads, [&](std::size_t k) {
    Rng rng = Rng::stream(seed, "sample", k);
    SampleResult r = posterior_sample(denoiser, schedule, guidance, noise, rng);
    if (!keep_diagnostics) r.diagnostics.clear();
    ens.members[k] = std::move(r);
    const std::size_t finished = ++done;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(finished);
    }
  });
  for (const SampleResult& r : ens.members) {
    ens.denoiser_evals += r.denoiser_evals;
    ens.forward_evals += r.forward_evals;
    ens.diverged += r.diverged ? 1 : 0;
  }
  ens.nominal_evaluations = count * schedule.size();
  return ens;
}

}  // namespace fsd::sampler
