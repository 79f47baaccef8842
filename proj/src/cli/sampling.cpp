#include <algorithm>
#include <cmath>
#include <map>

#include "common.hpp"
#include "fsd/bench/bench.hpp"
#include "fsd/sampler/sampler.hpp"
#include "fsd/stats/stats.hpp"
#include "fsd/tensorgrad/fsdt.hpp"

namespace fsd::cli::detail {

namespace {

Tensor channel(const Tensor& state, std::size_t c, const grf::Grid& g) {
  const std::size_t n = g.cells();
  Tensor out(g.field_shape());
  std::copy(state.values().begin() + c * n, state.values().begin() + (c + 1) * n, out.values().begin());
  return out;
}

Tensor mean_of(const std::vector<Tensor>& fields) {
  Tensor acc(fields.front().shape());
  for (const Tensor& f : fields) acc += f;
  acc *= 1.0 / static_cast<double>(fields.size());
  return acc;
}

void save_observation(const fs::path& dir, const ObsCase& c) {
  tg::save_fsdt(dir / "truth_m.fsdt", c.truth_m);
  tg::save_fsdt(dir / "truth_s.fsdt", c.truth_s);
  tg::save_fsdt(dir / "mask.fsdt", c.obs.mask);
  tg::save_fsdt(dir / "observed.fsdt", c.obs.values);
}

}  // namespace

CommandResult run_sampling(const Context& ctx, bool invert) {
  const Config& cfg = ctx.cfg;
  const std::string command = invert ? "invert" : "sample";
  const grf::Grid grid = grid_from(cfg);
  const sim::ForwardConfig forward = forward_from(cfg, grid);
  if (invert && !cfg.has("observation")) throw ConfigError("invert needs an [observation] table");

  const fs::path prior_path = artifact(cfg, "sample.prior");
  const auto denoiser = load_denoiser(prior_path);
  if (!(denoiser->grid() == grid)) throw ConfigError("sample.prior was trained on a different grid");
  std::unique_ptr<nets::Surrogate> surrogate;
  if (cfg.has("sample.surrogate")) {
    surrogate = load_surrogate(artifact(cfg, "sample.surrogate"));
    if (!(surrogate->spec().grid == grid)) throw ConfigError("sample.surrogate was trained on a different grid");
  }

  RunManifest manifest(ctx.opt.run_dir, command, cfg);
  manifest.add_input("sample.prior", prior_path);
  if (surrogate) manifest.add_input("sample.surrogate", cfg.get<std::string>("sample.surrogate", ""));
  std::vector<ObsCase> cases = build_cases(ctx, grid, forward, &manifest);
  const bool observed = !cases.empty();
  if (!observed) {
    ObsCase c;
    c.tag = "uncond";
    c.ensemble_seed = Rng::derive(ctx.seed, "ensemble", 0);
    cases.push_back(std::move(c));
  }

  sampler::GuidanceSpec base;
  base.mode = sampler::parse_mode(cfg.get<std::string>("sample.mode", observed ? "ddps" : "unconditional"));
  base.divergence_threshold = cfg.get<double>("sample.threshold", 8.0);
  base.zeta_geo = cfg.get<double>("sample.zeta_geo", 0.0);
  base.zeta_dyn = cfg.get<double>("sample.zeta_dyn", 0.0);
  if (surrogate) {
    const nets::Surrogate* sp = surrogate.get();
    base.surrogate = [sp](tg::Tape& tape, tg::Var m) { return sp->apply(tape, m); };
  }
  const std::size_t count = cfg.get<std::size_t>("sample.count", 64);
  const std::size_t steps = cfg.get<std::size_t>("sample.steps", 64);
  const bool keep_diag = cfg.get<bool>("sample.keep_diagnostics", true);
  if (count < 1) throw ConfigError("sample.count must be >= 1");
  sampler::NoiseSchedule schedule;
  try {
    schedule = sampler::karras_schedule(steps, denoiser->sigma_min(), denoiser->sigma_max(),
                                        cfg.get<double>("sample.rho", 7.0));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[sample] ") + e.what());
  }
  // Validate the guidance combination once before any work.
  {
    sampler::GuidanceSpec probe = base;
    if (observed) (cases.front().obs.target == sim::ObservationTarget::Geomodel ? probe.geo : probe.dyn) = cases.front().obs;
    try {
      probe.validate(*denoiser);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("[sample] ") + e.what());
    }
  }
  const bool joint = denoiser->channels() == 2;

  if (ctx.opt.dry_run) {
    ctx.log() << command << ": " << cases.size() << " ensemble(s) of " << count << " with mode "
              << sampler::mode_name(base.mode) << ", schedule length " << schedule.size() << "\n";
    for (const ObsCase& c : cases) ctx.log() << "  " << c.tag << "\n";
    return {{}, {{"ensembles", cases.size()}, {"count", count}}};
  }

  manifest.begin();
  const grf::CovarianceSpectrum noise = train::default_noise_spectrum(grid);
  Json per_tag = Json::object();
  std::vector<std::string> sweep_rows;
  std::size_t nominal = 0, denoiser_evals = 0, forward_evals = 0, diverged_total = 0;
  bool any_all_diverged = false;

  for (const ObsCase& c : cases) {
    sampler::GuidanceSpec gs = base;
    if (observed) (c.obs.target == sim::ObservationTarget::Geomodel ? gs.geo : gs.dyn) = c.obs;
    ctx.log() << command << " " << c.tag << ": " << count << " members\n";
    std::size_t next_report = std::max<std::size_t>(1, count / 10);
    const sampler::SampleEnsemble ens = sampler::sample_ensemble(
        count, *denoiser, schedule, gs, noise, c.ensemble_seed, keep_diag,
        [&](std::size_t done) {
          if (done >= next_report || done == count) {
            ctx.log() << "  " << done << "/" << count << "\n";
            next_report += std::max<std::size_t>(1, count / 10);
          }
        },
        ctx.opt.threads);
    nominal += ens.nominal_evaluations;
    denoiser_evals += ens.denoiser_evals;
    forward_evals += ens.forward_evals;
    diverged_total += ens.diverged;

    const fs::path dir = ctx.opt.run_dir / "fields" / c.tag;
    std::vector<Tensor> states, working_m, predictions;
    for (const auto& r : ens.members) {
      states.push_back(r.state);
      working_m.push_back(channel(r.working, 0, grid));
    }
    tg::save_fsdt_all(dir / "samples.fsdt", states);
    if (observed) save_observation(dir, c);

    // Kept members: finite and within the standardized divergence threshold.
    std::vector<bool> kept(count, true);
    double filter_fraction = 0.0;
    if (invert) {
      const stats::FilterResult fr = stats::filter_diverged(working_m, base.divergence_threshold);
      for (std::size_t i : fr.removed) kept[i] = false;
      filter_fraction = fr.fraction;
    } else {
      for (std::size_t k = 0; k < count; ++k) kept[k] = !ens.members[k].diverged;
    }
    const bool have_predictions = joint || surrogate;
    if (have_predictions) {
      for (std::size_t k = 0; k < count; ++k) {
        const Tensor m = channel(states[k], 0, grid);
        if (!kept[k])
          predictions.push_back(Tensor(grid.field_shape(), std::numeric_limits<double>::quiet_NaN()));
        else
          predictions.push_back(joint ? channel(states[k], 1, grid) : surrogate->apply(m));
      }
      tg::save_fsdt_all(dir / "predictions.fsdt", predictions);
    }

    std::vector<std::string> rows, diag_rows;
    std::vector<Tensor> kept_m, kept_pred;
    for (std::size_t k = 0; k < count; ++k) {
      const Tensor m = channel(states[k], 0, grid);
      const bench::Summary s = kept[k] ? bench::summary_stats(m) : bench::Summary{NAN, NAN};
      double rel_m = NAN, rel_s = NAN;
      if (kept[k]) {
        kept_m.push_back(m);
        if (observed) rel_m = stats::rel_l2(c.truth_m, m);
        if (have_predictions) {
          kept_pred.push_back(predictions[k]);
          if (observed) rel_s = stats::rel_l2(c.truth_s, predictions[k]);
        }
      }
      rows.push_back(std::to_string(k) + "," + std::to_string(ens.members[k].diverged ? 1 : 0) + "," +
                     std::to_string(kept[k] ? 1 : 0) + "," + fmt(s.mean) + "," + fmt(s.std) + "," +
                     fmt(tg::max_abs(ens.members[k].working)) + "," + fmt(rel_m) + "," + fmt(rel_s));
      for (const auto& d : ens.members[k].diagnostics)
        diag_rows.push_back(std::to_string(k) + "," + std::to_string(d.step) + "," + fmt(d.sigma) + "," +
                            fmt(d.d_norm) + "," + fmt(d.guidance_norm) + "," + fmt(d.misfit));
    }
    write_csv(ctx.opt.run_dir / "csv" / (c.tag + "_members.csv"),
              "member,diverged,kept,mean,std,max_abs_working,rel_l2_m,rel_l2_s", rows);
    if (keep_diag)
      write_csv(ctx.opt.run_dir / "csv" / (c.tag + "_diagnostics.csv"), "member,step,sigma,d_norm,guidance_norm,misfit",
                diag_rows);

    Json info = {{"members", count},
                 {"diverged", ens.diverged},
                 {"kept", kept_m.size()},
                 {"filter_fraction", filter_fraction},
                 {"coverage", c.coverage},
                 {"case", c.case_index}};
    any_all_diverged = any_all_diverged || kept_m.empty();
    double rel_m = NAN, rel_s = NAN;
    if (!kept_m.empty()) {
      const Tensor mean_m = mean_of(kept_m);
      tg::save_fsdt(dir / "posterior_mean_m.fsdt", mean_m);
      if (observed) rel_m = stats::rel_l2(c.truth_m, mean_m);
      if (!kept_pred.empty()) {
        const Tensor mean_s = mean_of(kept_pred);
        tg::save_fsdt(dir / "prediction_mean_s.fsdt", mean_s);
        if (observed) rel_s = stats::rel_l2(c.truth_s, mean_s);
      }
    }
    if (observed) {
      info["rel_l2_m"] = rel_m;
      info["rel_l2_s"] = rel_s;
      sweep_rows.push_back(c.tag + "," + fmt(c.coverage) + "," + std::to_string(c.case_index) + "," +
                           std::to_string(count) + "," + std::to_string(ens.diverged) + "," + fmt(filter_fraction) +
                           "," + fmt(rel_m) + "," + fmt(rel_s));
    }
    per_tag[c.tag] = info;
  }
  if (observed)
    write_csv(ctx.opt.run_dir / "csv" / "rel_l2.csv",
              "tag,coverage,case,members,diverged,filter_fraction,rel_l2_m,rel_l2_s", sweep_rows);

  Json summary = {{"mode", sampler::mode_name(base.mode)},
                  {"ensembles", per_tag},
                  {"schedule_length", schedule.size()},
                  {"nominal_evaluations", nominal},
                  {"denoiser_evaluations", denoiser_evals},
                  {"surrogate_evaluations", forward_evals},
                  {"diverged", diverged_total}};
  if (any_all_diverged) {
    manifest.fail("every member of at least one ensemble diverged");
    throw DivergenceError(command + ": every member of at least one ensemble diverged");
  }
  manifest.finalize(summary);
  return {ctx.opt.run_dir, summary};
}

CommandResult run_rs(const Context& ctx) {
  const Config& cfg = ctx.cfg;
  const grf::Grid grid = grid_from(cfg);
  const sim::ForwardConfig forward = forward_from(cfg, grid);
  const grf::GeoPriorBox box = box_from(cfg, grid);
  if (!cfg.has("observation")) throw ConfigError("rs needs an [observation] table");
  bench::RejectionPlan plan;
  plan.pool_size = cfg.get<std::size_t>("rs.pool_size", plan.pool_size);
  plan.block_size = cfg.get<std::size_t>("rs.block_size", plan.block_size);
  plan.sigma_obs = cfg.get<double>("rs.sigma_obs", plan.sigma_obs);
  plan.seed = ctx.seed;
  const std::size_t max_blocks = cfg.get<std::size_t>("rs.max_blocks", 0);
  if (plan.block_size < 1 || !(plan.sigma_obs > 0)) throw ConfigError("rs: block_size >= 1 and sigma_obs > 0 required");
  const std::string evaluator = cfg.get<std::string>("rs.forward", "surrogate");
  if (evaluator != "surrogate" && evaluator != "simulator") throw ConfigError("rs.forward must be surrogate or simulator");

  RunManifest manifest(ctx.opt.run_dir, "rs", cfg);
  std::unique_ptr<nets::Surrogate> surrogate;
  if (evaluator == "surrogate") {
    surrogate = load_surrogate(artifact(cfg, "rs.surrogate"));
    manifest.add_input("rs.surrogate", cfg.get<std::string>("rs.surrogate", ""));
  }
  std::optional<bench::RejectionRun> resume;
  if (cfg.has("rs.resume")) {
    const fs::path prev = artifact(cfg, "rs.resume");
    resume = bench::read_rejection_run(prev / "rs");
    manifest.add_input("rs.resume", prev / "rs" / "accepted.csv");
  }
  const std::vector<ObsCase> cases = build_cases(ctx, grid, forward, &manifest);
  if (cases.size() != 1) throw ConfigError("rs needs exactly one observation case");
  const ObsCase& c = cases.front();

  if (ctx.opt.dry_run) {
    ctx.log() << "rs: pool " << plan.pool_size << " in blocks of " << plan.block_size << ", sigma_obs "
              << plan.sigma_obs << ", " << c.obs.count() << " observed cells, forward " << evaluator << "\n";
    return {{}, {{"pool_size", plan.pool_size}}};
  }
  manifest.begin();
  save_observation(ctx.opt.run_dir / "fields" / "observation", c);
  const bench::PriorSampler prior = [&](Rng& rng) {
    auto [m, hyper] = grf::sample_geomodel(box, grid, rng);
    return bench::PriorDraw{std::move(m), hyper};
  };
  const bench::ForwardEvaluator fwd = surrogate ? bench::ForwardEvaluator([&](const Tensor& m) {
    return surrogate->apply(m);
  })
                                                : bench::ForwardEvaluator([&](const Tensor& m) {
                                                    return sim::solve_forward(forward, m);
                                                  });
  bench::RejectionRun run = resume ? *resume : bench::RejectionRun{};
  std::size_t blocks = 0;
  while (!run.complete() && (max_blocks == 0 || blocks < max_blocks)) {
    run = bench::rejection_sample(plan, prior, fwd, c.obs, run.evaluated ? &run : nullptr, 1, ctx.opt.threads);
    ++blocks;
    ctx.log() << "rs: " << run.evaluated << "/" << plan.pool_size << " evaluated, " << run.accepted.size()
              << " accepted\n";
    bench::write_rejection_run(ctx.opt.run_dir / "rs", run);
  }
  bench::write_rejection_run(ctx.opt.run_dir / "rs", run);
  Json summary = {{"evaluated", run.evaluated},
                  {"accepted", run.accepted.size()},
                  {"acceptance_rate", run.acceptance_rate()},
                  {"errors", run.errors},
                  {"complete", run.complete()},
                  {"forward_evaluations", run.evaluated},
                  {"observed_cells", c.obs.count()},
                  {"forward", evaluator}};
  manifest.finalize(summary);
  return {ctx.opt.run_dir, summary};
}

}  // namespace fsd::cli::detail
