#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "common.hpp"
#include "fsd/core/hash.hpp"
#include "fsd/tensorgrad/fsdt.hpp"

namespace fsd::cli {

namespace detail {

std::ostream& Context::log() const {
  static std::ostream null(nullptr);
  return opt.log ? *opt.log : null;
}

grf::Grid grid_from(const Config& cfg) {
  grf::Grid g;
  g.nx = cfg.get<std::size_t>("grid.nx", 32);
  g.ny = cfg.get<std::size_t>("grid.ny", 32);
  g.lx = cfg.get<double>("grid.lx", 1.0);
  g.ly = cfg.get<double>("grid.ly", 1.0);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[grid] ") + e.what());
  }
  return g;
}

sim::ForwardConfig forward_from(const Config& cfg, const grf::Grid& grid) {
  sim::ForwardConfig f = sim::ForwardConfig::with_injector(grid, cfg.get<double>("forward.rate", 10.0));
  f.kappa_clip = cfg.get<double>("forward.kappa_clip", f.kappa_clip);
  f.front_gain = cfg.get<double>("forward.front_gain", f.front_gain);
  f.front_level = cfg.get<double>("forward.front_level", f.front_level);
  f.cg_tol = cfg.get<double>("forward.cg_tol", f.cg_tol);
  f.cg_max_iter = cfg.get<std::size_t>("forward.cg_max_iter", f.cg_max_iter);
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[forward] ") + e.what());
  }
  return f;
}

grf::GeoPriorBox box_from(const Config& cfg, const grf::Grid& grid) {
  grf::GeoPriorBox b = grf::GeoPriorBox::for_grid(grid);
  auto range = [&](const char* key, grf::Range& r) {
    const std::string k = std::string("prior_box.") + key;
    if (!cfg.has(k)) return;
    const auto v = cfg.get<std::vector<double>>(k, {});
    if (v.size() != 2) throw ConfigError("config key '" + k + "' must be [lo, hi]");
    r = {v[0], v[1]};
  };
  range("mu", b.mu);
  range("sigma", b.sigma);
  range("corr_x", b.corr_x);
  range("corr_z", b.corr_z);
  b.gamma = cfg.get<double>("prior_box.gamma", b.gamma);
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[prior_box] ") + e.what());
  }
  return b;
}

nets::DenoiserSpec denoiser_spec_from(const Config& cfg, const grf::Grid& grid, std::size_t channels) {
  nets::DenoiserSpec s;
  s.grid = grid;
  s.channels = channels;
  s.levels = cfg.get<std::size_t>("denoiser.levels", s.levels);
  s.base_width = cfg.get<std::size_t>("denoiser.base_width", s.base_width);
  s.multipliers = cfg.get<std::vector<std::size_t>>("denoiser.multipliers", s.multipliers);
  s.mode_fraction = cfg.get<double>("denoiser.mode_fraction", s.mode_fraction);
  s.embed_dim = cfg.get<std::size_t>("denoiser.embed_dim", s.embed_dim);
  s.groups = cfg.get<std::size_t>("denoiser.groups", s.groups);
  s.sigma_data = cfg.get<double>("denoiser.sigma_data", s.sigma_data);
  s.sigma_min = cfg.get<double>("train.sigma_min", s.sigma_min);
  s.sigma_max = cfg.get<double>("train.sigma_max", s.sigma_max);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[denoiser] ") + e.what());
  }
  return s;
}

nets::SurrogateSpec surrogate_spec_from(const Config& cfg, const grf::Grid& grid) {
  nets::SurrogateSpec s;
  s.grid = grid;
  s.layers = cfg.get<std::size_t>("surrogate.layers", s.layers);
  s.modes = cfg.get<std::size_t>("surrogate.modes", s.modes);
  s.width = cfg.get<std::size_t>("surrogate.width", s.width);
  s.kernel = cfg.get<std::size_t>("surrogate.kernel", s.kernel);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[surrogate] ") + e.what());
  }
  return s;
}

train::TrainConfig train_config_from(const Config& cfg, std::uint64_t seed) {
  train::TrainConfig t;
  t.sigma_min = cfg.get<double>("train.sigma_min", t.sigma_min);
  t.sigma_max = cfg.get<double>("train.sigma_max", t.sigma_max);
  t.batch = cfg.get<std::size_t>("train.batch", t.batch);
  t.epochs = cfg.get<std::size_t>("train.epochs", t.epochs);
  t.lr = cfg.get<double>("train.lr", t.lr);
  t.weight_decay = cfg.get<double>("train.weight_decay", t.weight_decay);
  t.cosine = cfg.get<bool>("train.cosine", t.cosine);
  t.val_count = cfg.get<std::size_t>("train.val_count", t.val_count);
  t.seed = seed;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[train] ") + e.what());
  }
  return t;
}

fs::path artifact(const Config& cfg, const std::string& key) {
  const fs::path p = cfg.require<std::string>(key);
  if (!fs::exists(p)) throw MissingArtifact("'" + key + "' points to a missing artifact: " + p.string());
  return p;
}

std::unique_ptr<nets::UnoDenoiser> load_denoiser(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact("missing denoiser checkpoint " + path.string());
  nets::Checkpoint c = nets::load_checkpoint(path);
  if (c.spec.value("model", "") != "uno")
    throw ConfigError(path.string() + " is not a denoiser checkpoint (model '" + c.spec.value("model", "") + "')");
  return std::make_unique<nets::UnoDenoiser>(nets::DenoiserSpec::from_json(c.spec), std::move(c.params));
}

std::unique_ptr<nets::Surrogate> load_surrogate(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact("missing surrogate checkpoint " + path.string());
  nets::Checkpoint c = nets::load_checkpoint(path);
  if (c.spec.value("model", "") != "surrogate")
    throw ConfigError(path.string() + " is not a surrogate checkpoint (model '" + c.spec.value("model", "") + "')");
  return std::make_unique<nets::Surrogate>(nets::SurrogateSpec::from_json(c.spec), std::move(c.params));
}

std::vector<ObsCase> build_cases(const Context& ctx, const grf::Grid& grid, const sim::ForwardConfig& forward,
                                 RunManifest* manifest) {
  const Config& cfg = ctx.cfg;
  std::vector<ObsCase> cases;
  if (!cfg.has("observation")) return cases;
  const std::uint64_t obs_seed = cfg.get<std::uint64_t>("observation.seed", ctx.seed);
  const std::string target = cfg.get<std::string>("observation.target", "dynamics");
  if (target != "dynamics" && target != "geomodel")
    throw ConfigError("observation.target must be 'dynamics' or 'geomodel'");
  const bool geo = target == "geomodel";
  const std::string kind = cfg.get<std::string>("observation.kind", "columns");
  if (kind != "columns" && kind != "random") throw ConfigError("observation.kind must be 'columns' or 'random'");
  const double noise_std = cfg.get<double>("observation.noise_std", geo ? 0.0 : 0.04);
  if (noise_std < 0) throw ConfigError("observation.noise_std must be >= 0");

  std::vector<double> fractions{1.0};
  if (kind == "random") {
    fractions = cfg.has("observation.fractions") ? cfg.get<std::vector<double>>("observation.fractions", {})
                                                 : std::vector<double>{cfg.get<double>("observation.fraction", 1.0)};
    for (double f : fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("observation fractions must lie in (0, 1]");
  }
  std::vector<std::size_t> columns = sim::default_well_columns(grid);
  if (cfg.has("observation.columns")) columns = cfg.get<std::vector<std::size_t>>("observation.columns", {});
  for (std::size_t c : columns)
    if (c >= grid.nx) throw ConfigError("observation column " + std::to_string(c) + " is outside the grid");

  const auto indices = cfg.get<std::vector<std::size_t>>("observation.cases", {0});
  if (indices.empty()) throw ConfigError("observation.cases must not be empty");
  sim::Dataset truths;
  if (cfg.has("observation.dataset")) {
    const fs::path dir = artifact(cfg, "observation.dataset");
    if (manifest) manifest->add_input("observation.dataset", dir);
    const sim::Dataset test = sim::read_dataset(dir, cfg.get<std::string>("observation.split", "test"),
                                                sim::DatasetPart::Pairs);
    for (std::size_t i : indices) {
      if (i >= test.m.size()) throw ConfigError("observation case " + std::to_string(i) + " is not in the dataset");
      truths.m.push_back(test.m[i]);
      truths.s.push_back(test.s[i]);
    }
  } else {
    const grf::GeoPriorBox box = box_from(cfg, grid);
    for (std::size_t i : indices) {
      Rng rng = Rng::stream(obs_seed, "obs/truth", i);
      auto [m, hyper] = grf::sample_geomodel(box, grid, rng);
      truths.s.push_back(sim::solve_forward(forward, m));
      truths.m.push_back(std::move(m));
    }
  }
  if (truths.m.front().shape() != grid.field_shape()) throw ConfigError("observation truths are not on [grid]");

  for (std::size_t f = 0; f < fractions.size(); ++f) {
    for (std::size_t k = 0; k < indices.size(); ++k) {
      ObsCase c;
      c.fraction_index = f;
      c.case_index = indices[k];
      const std::uint64_t key = (static_cast<std::uint64_t>(f) << 32) | indices[k];
      Rng mask_rng = Rng::stream(obs_seed, "obs/mask", key);
      const Tensor mask = kind == "random" ? sim::random_mask(grid, fractions[f], mask_rng)
                                           : sim::column_mask(grid, columns);
      c.truth_m = truths.m[k];
      c.truth_s = truths.s[k];
      Rng noise_rng = Rng::stream(obs_seed, "obs/noise", key);
      c.obs = sim::observe(geo ? c.truth_m : c.truth_s, mask, noise_std, noise_rng,
                           geo ? sim::ObservationTarget::Geomodel : sim::ObservationTarget::Dynamics);
      if (c.obs.empty()) throw ConfigError("observation mask for case " + std::to_string(indices[k]) + " is empty");
      c.coverage = kind == "random" ? fractions[f]
                                    : static_cast<double>(c.obs.count()) / static_cast<double>(grid.cells());
      char tag[64];
      if (kind == "random")
        std::snprintf(tag, sizeof tag, "cov%03d_case%05zu", static_cast<int>(std::lround(100 * fractions[f])),
                      indices[k]);
      else
        std::snprintf(tag, sizeof tag, "wells_case%05zu", indices[k]);
      c.tag = tag;
      c.ensemble_seed = Rng::derive(ctx.seed, "ensemble", key);
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

void write_csv(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  std::string text = header + "\n";
  for (const std::string& r : rows) text += r + "\n";
  write_text(path, text);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact("missing CSV " + path.string());
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

CommandResult run_gen_data(const Context& ctx) {
  const grf::Grid grid = grid_from(ctx.cfg);
  const sim::ForwardConfig forward = forward_from(ctx.cfg, grid);
  sim::DatasetSpec spec;
  spec.n_train = ctx.cfg.get<std::size_t>("data.n_train", spec.n_train);
  spec.n_test = ctx.cfg.get<std::size_t>("data.n_test", spec.n_test);
  spec.seed = ctx.seed;
  spec.box = box_from(ctx.cfg, grid);
  if (spec.n_train + spec.n_test == 0) throw ConfigError("data.n_train + data.n_test must be >= 1");
  if (ctx.opt.dry_run) {
    ctx.log() << "gen-data: " << spec.n_train << " train + " << spec.n_test << " test pairs on " << grid.ny << "x"
              << grid.nx << ", seed " << spec.seed << "\n";
    return {{}, {{"n_train", spec.n_train}, {"n_test", spec.n_test}}};
  }
  RunManifest manifest(ctx.opt.run_dir, "gen-data", ctx.cfg);
  manifest.begin();
  const sim::GeneratedDataset data = sim::generate_dataset(spec, forward);
  sim::write_dataset(ctx.opt.run_dir / "dataset", spec, forward, data);
  Json summary = {{"dataset", (ctx.opt.run_dir / "dataset").string()},
                  {"n_train", data.train.m.size()},
                  {"n_test", data.test.m.size()},
                  {"skipped", data.skipped},
                  {"config_hash", data.config_hash}};
  manifest.finalize(summary);
  return {ctx.opt.run_dir, summary};
}

CommandResult run_train(const Context& ctx) {
  const Config& cfg = ctx.cfg;
  const std::string kind = cfg.require<std::string>("train.kind");
  if (kind != "prior" && kind != "joint" && kind != "surrogate")
    throw ConfigError("train.kind must be prior, joint, or surrogate (got '" + kind + "')");
  const grf::Grid grid = grid_from(cfg);
  const train::TrainConfig tc = train_config_from(cfg, ctx.seed);
  const fs::path data_dir = artifact(cfg, "data.dir");
  const sim::DatasetPart part = kind == "prior" ? sim::DatasetPart::GeomodelOnly : sim::DatasetPart::Pairs;
  const std::optional<nets::DenoiserSpec> dspec =
      kind == "surrogate" ? std::nullopt : std::optional(denoiser_spec_from(cfg, grid, kind == "joint" ? 2 : 1));
  const std::optional<nets::SurrogateSpec> sspec =
      kind == "surrogate" ? std::optional(surrogate_spec_from(cfg, grid)) : std::nullopt;

  std::vector<fs::path> opened;
  sim::Dataset train, val;
  try {
    train = sim::read_dataset(data_dir, "train", part, &opened);
    val = sim::read_dataset(data_dir, "test", part, &opened);
  } catch (const tg::FormatError& e) {
    throw MissingArtifact(std::string("unreadable dataset: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw MissingArtifact(std::string("train ") + kind + ": " + e.what());
  }
  if (train.m.empty()) throw MissingArtifact("dataset " + data_dir.string() + " has no training pairs");
  if (train.m.front().shape() != grid.field_shape()) throw ConfigError("dataset fields are not on [grid]");

  if (ctx.opt.dry_run) {
    std::size_t m_files = 0, s_files = 0;
    for (const fs::path& p : opened) {
      ctx.log() << "open " << p.generic_string() << "\n";
      const std::string name = p.filename().string();
      m_files += name.ends_with("_m.fsdt");
      s_files += name.ends_with("_s.fsdt");
    }
    ctx.log() << "train " << kind << ": " << train.m.size() << " train / " << val.m.size() << " validation samples, "
              << tc.epochs << " epochs; opened " << m_files << " *_m.fsdt and " << s_files << " *_s.fsdt files\n";
    return {{}, {{"kind", kind}, {"m_files", m_files}, {"s_files", s_files}, {"opened", opened.size()}}};
  }

  RunManifest manifest(ctx.opt.run_dir, "train", cfg);
  manifest.add_input("data.dir", data_dir);
  train::RunOptions ro;
  ro.checkpoint_dir = ctx.opt.run_dir;
  if (cfg.has("train.resume")) {
    ro.resume_from = artifact(cfg, "train.resume");
    manifest.add_input("train.resume", *ro.resume_from);
  }
  ro.on_epoch = [&](const train::EpochRecord& r) {
    ctx.log() << "epoch " << r.epoch << "/" << tc.epochs << "  train " << r.train_loss << "  val " << r.val_loss
              << "  " << r.seconds << " s\n";
  };
  manifest.begin();

  nets::Checkpoint model;
  train::TrainReport report;
  std::size_t param_count = 0;
  if (kind == "surrogate") {
    train::TrainedSurrogate out = train::train_surrogate(train, val, *sspec, tc, ro);
    model = {sspec->to_json(), std::move(out.params), {}};
    report = std::move(out.report);
  } else {
    const grf::CovarianceSpectrum noise = train::default_noise_spectrum(grid);
    train::TrainedDenoiser out = kind == "prior" ? train::train_prior(train, val, *dspec, noise, tc, ro)
                                                 : train::train_joint(train, val, *dspec, noise, tc, ro);
    model = {dspec->to_json(), std::move(out.params), {}};
    report = std::move(out.report);
  }
  param_count = model.params.parameter_count();
  const fs::path ckpt = ctx.opt.run_dir / "model.fsdc";
  nets::save_checkpoint(ckpt, model);
  report.write_csv(ctx.opt.run_dir / "csv" / "train_report.csv");
  Json summary = {{"kind", kind},
                  {"checkpoint", ckpt.string()},
                  {"parameters", param_count},
                  {"epochs", report.epochs.size()},
                  {"train_samples", train.m.size()}};
  if (!report.epochs.empty()) {
    summary["first_train_loss"] = report.epochs.front().train_loss;
    summary["final_train_loss"] = report.epochs.back().train_loss;
    summary["final_val_loss"] = report.epochs.back().val_loss;
  }
  manifest.finalize(summary);
  return {ctx.opt.run_dir, summary};
}

}  // namespace detail

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train", "sample", "invert", "rs", "eval", "plot"};
  return names;
}

CommandResult run_command(const std::string& command, const Config& config, const CommandOptions& options) {
  if (!options.dry_run && options.run_dir.empty()) throw ConfigError("no run directory given");
  if (!options.dry_run && std::filesystem::exists(options.run_dir / "manifest.json"))
    throw ConfigError("run directory already holds a run: " + options.run_dir.string());
  const detail::Context ctx{config, options, config.get<std::uint64_t>("seed", 0)};
  auto guarded = [&](auto&& body) -> CommandResult {
    try {
      return body();
    } catch (const std::exception& e) {
      if (!options.dry_run && std::filesystem::exists(options.run_dir / "manifest.json")) {
        RunManifest m(options.run_dir, command, config);
        try {
          m.fail(e.what());
        } catch (...) {
        }
      }
      throw;
    }
  };
  if (command == "gen-data") return guarded([&] { return detail::run_gen_data(ctx); });
  if (command == "train") return guarded([&] { return detail::run_train(ctx); });
  if (command == "sample") return guarded([&] { return detail::run_sampling(ctx, false); });
  if (command == "invert") return guarded([&] { return detail::run_sampling(ctx, true); });
  if (command == "rs") return guarded([&] { return detail::run_rs(ctx); });
  if (command == "eval") return guarded([&] { return detail::run_eval(ctx); });
  if (command == "plot") return guarded([&] { return detail::run_plot(ctx); });
  throw ConfigError("unknown command '" + command + "'");
}

std::filesystem::path default_run_dir(const std::filesystem::path& root, const std::string& name) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  std::filesystem::path dir = root / (std::string(stamp) + "_" + name);
  for (int k = 2; std::filesystem::exists(dir); ++k) dir = root / (std::string(stamp) + "_" + name + "-" + std::to_string(k));
  return dir;
}

ReplayResult replay(const std::filesystem::path& manifest_path, const CommandOptions& options) {
  namespace fs = std::filesystem;
  const fs::path file = fs::is_directory(manifest_path) ? manifest_path / "manifest.json" : manifest_path;
  if (!fs::exists(file)) throw MissingArtifact("missing manifest " + file.string());
  const Json m = read_json(file);
  if (!m.value("finalized", false)) throw MissingArtifact("manifest " + file.string() + " is not finalized");
  for (const auto& [role, entry] : m.at("inputs").items()) {
    const fs::path p = entry.at("path").get<std::string>();
    if (artifact_hash(p) != entry.at("sha256").get<std::string>())
      throw MissingArtifact("input '" + role + "' changed since the run: " + p.string());
  }
  const Config cfg(m.at("config"));
  run_command(m.at("command").get<std::string>(), cfg, options);

  ReplayResult result{options.run_dir, {}, {}};
  const fs::path original = file.parent_path();
  for (const auto& [rel, sha] : m.at("outputs").items()) {
    const fs::path ext = fs::path(rel).extension();
    if (ext != ".fsdt" && ext != ".fsdc") continue;
    const fs::path fresh = options.run_dir / rel;
    bool same = fs::exists(fresh);
    if (same && ext == ".fsdt") {
      same = sha256_file(fresh) == sha.get<std::string>();
    } else if (same) {
      same = nets::load_checkpoint(fresh).params == nets::load_checkpoint(original / rel).params;
    }
    (same ? result.identical : result.mismatched).push_back(rel);
  }
  return result;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const MissingArtifact*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const tg::NumericalError*>(&e)) return 4;
  return 1;
}

}  // namespace fsd::cli
