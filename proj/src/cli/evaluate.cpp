#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "common.hpp"
#include "fsd/bench/bench.hpp"
#include "fsd/cli/image.hpp"
#include "fsd/stats/stats.hpp"
#include "fsd/tensorgrad/fsdt.hpp"

namespace fsd::cli::detail {

namespace {

/// One ensemble directory written by sample/invert.
struct EnsembleView {
  std::string tag;
  std::vector<Tensor> kept_m;       // physical geomodels of kept members
  std::vector<Tensor> kept_pred;    // forward predictions of kept members (may be empty)
  std::vector<bench::Summary> summaries;
  double filter_fraction = 0.0;
  std::size_t members = 0;
};

std::vector<std::string> tags_of(const fs::path& run) {
  std::vector<std::string> tags;
  if (!fs::exists(run / "fields")) throw MissingArtifact("not an ensemble run (no fields/): " + run.string());
  for (const auto& e : fs::directory_iterator(run / "fields"))
    if (e.is_directory() && fs::exists(e.path() / "samples.fsdt")) tags.push_back(e.path().filename().string());
  std::sort(tags.begin(), tags.end());
  if (tags.empty()) throw MissingArtifact("no ensembles under " + (run / "fields").string());
  return tags;
}

EnsembleView load_ensemble(const fs::path& run, const std::string& tag) {
  EnsembleView v;
  v.tag = tag;
  const auto states = tg::load_fsdt_all(run / "fields" / tag / "samples.fsdt");
  std::vector<Tensor> preds;
  if (fs::exists(run / "fields" / tag / "predictions.fsdt")) preds = tg::load_fsdt_all(run / "fields" / tag / "predictions.fsdt");
  const auto rows = read_csv(run / "csv" / (tag + "_members.csv"));
  if (rows.size() != states.size()) throw MissingArtifact("member table does not match samples in " + run.string());
  v.members = states.size();
  std::size_t removed = 0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (rows[k].at(2) != "1") {
      ++removed;
      continue;
    }
    const Tensor& s = states[k];
    const std::size_t ny = s.dim(s.rank() - 2), nx = s.dim(s.rank() - 1);
    Tensor m({ny, nx});
    std::copy(s.values().begin(), s.values().begin() + ny * nx, m.values().begin());
    v.summaries.push_back(bench::summary_stats(m));
    v.kept_m.push_back(std::move(m));
    if (!preds.empty()) v.kept_pred.push_back(preds[k]);
  }
  v.filter_fraction = static_cast<double>(removed) / static_cast<double>(states.size());
  return v;
}

EnsembleView single_ensemble(const fs::path& run) {
  const auto tags = tags_of(run);
  if (tags.size() != 1)
    throw ConfigError(run.string() + " holds " + std::to_string(tags.size()) + " ensembles; name a single-case run");
  return load_ensemble(run, tags.front());
}

struct Moments {
  double mean = NAN, std = NAN, median = NAN;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  double s = 0, sq = 0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  for (double x : v) sq += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(sq / static_cast<double>(v.size()));
  m.median = stats::quantile(v, 0.5);
  return m;
}

void write_histogram(const fs::path& path, const bench::Histogram& h) { write_text(path, h.to_csv()); }

std::string js_row(const std::string& a, const std::string& b, const bench::PosteriorComparison& c, std::size_t na,
                   std::size_t nb, double filter) {
  std::string rows;
  for (const auto& [stat, value] : {std::pair<std::string, double>{"mean", c.mean.js}, {"std", c.std.js},
                                    {"average", c.average}})
    rows += a + "," + b + "," + stat + "," + fmt(value) + "," + std::to_string(c.bins) + "," + std::to_string(na) +
            "," + std::to_string(nb) + "," + fmt(filter) + "\n";
  rows.pop_back();
  return rows;
}

void write_profiles(const fs::path& csv_dir, const std::string& name, const EnsembleView& v, double threshold,
                    std::size_t max_lag) {
  if (v.kept_m.size() >= 2) {
    const auto h = stats::variogram(v.kept_m, stats::Direction::Horizontal, max_lag);
    const auto z = stats::variogram(v.kept_m, stats::Direction::Vertical, max_lag);
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < h.lags.size(); ++i)
      rows.push_back(std::to_string(h.lags[i]) + "," + fmt(h.values[i]) + "," + fmt(h.p5[i]) + "," + fmt(h.p95[i]) +
                     "," + fmt(z.values[i]) + "," + fmt(z.p5[i]) + "," + fmt(z.p95[i]));
    write_csv(csv_dir / (name + "_variogram.csv"),
              "# ensemble " + name + "\nlag,horizontal,horizontal_p5,horizontal_p95,vertical,vertical_p5,vertical_p95",
              rows);
  }
  if (v.kept_pred.size() >= 2) {
    const auto h = stats::two_point_connectivity(v.kept_pred, threshold, stats::Direction::Horizontal, max_lag);
    const auto z = stats::two_point_connectivity(v.kept_pred, threshold, stats::Direction::Vertical, max_lag);
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < h.lags.size(); ++i)
      rows.push_back(std::to_string(h.lags[i]) + "," + fmt(h.values[i]) + "," + fmt(h.p5[i]) + "," + fmt(h.p95[i]) +
                     "," + fmt(z.values[i]) + "," + fmt(z.p5[i]) + "," + fmt(z.p95[i]));
    write_csv(csv_dir / (name + "_connectivity.csv"),
              "# ensemble " + name + ", threshold " + fmt(threshold) +
                  "\nlag,horizontal,horizontal_p5,horizontal_p95,vertical,vertical_p5,vertical_p95",
              rows);
  }
  if (!v.kept_m.empty()) {
    std::vector<double> values;
    for (const Tensor& m : v.kept_m) values.insert(values.end(), m.values().begin(), m.values().end());
    const stats::Cdf cdf = stats::empirical_cdf(std::move(values));
    std::vector<std::string> rows;
    const std::size_t n = cdf.values.size();
    for (std::size_t q = 0; q <= 200; ++q) {
      const std::size_t i = std::min(n - 1, (q * n) / 200);
      rows.push_back(fmt(cdf.values[i]) + "," + fmt(cdf.probabilities[i]));
    }
    write_csv(csv_dir / (name + "_cdf.csv"), "# ensemble " + name + "\nvalue,probability", rows);
  }
}

}  // namespace

CommandResult run_eval(const Context& ctx) {
  const Config& cfg = ctx.cfg;
  const auto bins_cfg = cfg.get<std::size_t>("eval.bins", 0);
  const std::optional<std::size_t> bins = bins_cfg ? std::optional(bins_cfg) : std::nullopt;
  const double threshold = cfg.get<double>("eval.connectivity_threshold", 0.05);

  RunManifest manifest(ctx.opt.run_dir, "eval", cfg);
  std::map<std::string, fs::path> sweeps, ensembles;
  for (const char* key : {"eval.sweeps", "eval.ensembles"}) {
    if (!cfg.has(key)) continue;
    const Json& table = cfg.json().at("eval").at(std::string(key).substr(5));
    if (!table.is_object()) throw ConfigError(std::string(key) + " must be a table of name = run directory");
    for (const auto& [name, dir] : table.items()) {
      const fs::path p = artifact(cfg, std::string(key) + "." + name);
      manifest.add_input(std::string(key) + "." + name, p);
      (std::string(key) == "eval.sweeps" ? sweeps : ensembles)[name] = p;
    }
  }
  std::optional<fs::path> rs_dir;
  if (cfg.has("eval.rs")) {
    rs_dir = artifact(cfg, "eval.rs");
    manifest.add_input("eval.rs", *rs_dir / "rs" / "accepted.csv");
  }
  std::vector<std::pair<fs::path, fs::path>> compares;
  if (cfg.has("eval.compare")) {
    for (const auto& pair : cfg.get<std::vector<std::vector<std::string>>>("eval.compare", {})) {
      if (pair.size() != 2) throw ConfigError("eval.compare entries must be [a, b]");
      for (const auto& p : pair)
        if (!fs::exists(p)) throw MissingArtifact("eval.compare: missing " + p);
      compares.emplace_back(pair[0], pair[1]);
    }
  }
  std::unique_ptr<nets::Surrogate> surrogate;
  if (cfg.has("eval.surrogate")) {
    surrogate = load_surrogate(artifact(cfg, "eval.surrogate"));
    manifest.add_input("eval.surrogate", cfg.get<std::string>("eval.surrogate", ""));
  }
  if (sweeps.empty() && ensembles.empty() && compares.empty())
    throw ConfigError("eval needs eval.sweeps, eval.ensembles, or eval.compare");

  if (ctx.opt.dry_run) {
    ctx.log() << "eval: " << sweeps.size() << " sweep(s), " << ensembles.size() << " ensemble(s), " << compares.size()
              << " comparison(s)" << (rs_dir ? ", with rejection reference" : "") << "\n";
    return {{}, Json::object()};
  }
  manifest.begin();
  const fs::path csv = ctx.opt.run_dir / "csv";
  Json summary = Json::object();

  // Table-2 analog: forward-prediction rel-L2 per coverage.
  if (!sweeps.empty()) {
    std::map<double, std::map<std::string, std::vector<double>>> by_cov;
    std::vector<std::string> case_rows;
    for (const auto& [name, dir] : sweeps) {
      for (const auto& row : read_csv(dir / "csv" / "rel_l2.csv")) {
        const double cov = std::stod(row.at(1)), rel = std::stod(row.at(7));
        by_cov[cov][name].push_back(rel);
        case_rows.push_back(name + "," + row.at(0) + "," + row.at(1) + "," + row.at(2) + "," + row.at(7));
      }
    }
    if (surrogate) {
      // Zero-fill baseline: the surrogate applied to the masked observation of m.
      const fs::path dir = sweeps.begin()->second;
      for (const auto& row : read_csv(dir / "csv" / "rel_l2.csv")) {
        const fs::path f = dir / "fields" / row.at(0);
        const Tensor truth_s = tg::load_fsdt(f / "truth_s.fsdt");
        const Tensor filled = tg::load_fsdt(f / "observed.fsdt");
        const double rel = stats::rel_l2(truth_s, surrogate->apply(filled));
        by_cov[std::stod(row.at(1))]["surrogate"].push_back(rel);
        case_rows.push_back("surrogate," + row.at(0) + "," + row.at(1) + "," + row.at(2) + "," + fmt(rel));
      }
    }
    std::vector<std::string> methods;
    for (const auto& [name, dir] : sweeps) methods.push_back(name);
    if (surrogate) methods.push_back("surrogate");
    std::string header = "coverage";
    for (const auto& m : methods) header += "," + m + "_mean," + m + "_std," + m + "_median";
    std::vector<std::string> rows;
    Json table = Json::array();
    for (auto it = by_cov.rbegin(); it != by_cov.rend(); ++it) {
      std::string r = fmt(it->first);
      Json entry = {{"coverage", it->first}};
      for (const auto& m : methods) {
        const Moments mo = moments(it->second[m]);
        r += "," + fmt(mo.mean) + "," + fmt(mo.std) + "," + fmt(mo.median);
        entry[m] = {{"mean", mo.mean}, {"std", mo.std}, {"median", mo.median}, {"cases", it->second[m].size()}};
      }
      rows.push_back(r);
      table.push_back(entry);
    }
    write_csv(csv / "table2.csv", header, rows);
    write_csv(csv / "table2_cases.csv", "method,tag,coverage,case,rel_l2_s", case_rows);
    summary["table2"] = table;
  }

  // Posterior marginals against the rejection reference.
  const std::string js_header = "# divergence: jensen-shannon, natural log (nats)\nensemble,reference,statistic,js,bins,n_ensemble,n_reference,filter_fraction";
  std::vector<std::string> js_rows;
  if (!ensembles.empty()) {
    std::optional<bench::RejectionRun> rs;
    std::vector<bench::Summary> rs_fields, rs_hyper;
    if (rs_dir) {
      rs = bench::read_rejection_run(*rs_dir / "rs");
      for (const auto& a : rs->accepted) {
        rs_fields.push_back(a.summary);
        rs_hyper.push_back({a.hyper.mu, a.hyper.sigma});
      }
    }
    Json js = Json::object();
    const std::size_t max_lag = cfg.get<std::size_t>("eval.max_lag", 0);
    for (const auto& [name, dir] : ensembles) {
      const EnsembleView v = single_ensemble(dir);
      if (!v.kept_m.empty()) write_profiles(csv, name, v, threshold, max_lag ? max_lag : v.kept_m.front().dim(1) / 2);
      Json e = {{"members", v.members}, {"kept", v.kept_m.size()}, {"filter_fraction", v.filter_fraction}};
      if (rs) {
        for (const auto& [ref, ref_summaries] : {std::pair{std::string("rs_fields"), &rs_fields},
                                                 std::pair{std::string("rs_hyper"), &rs_hyper}}) {
          if (v.summaries.empty() || ref_summaries->empty()) {
            // No kept members or no accepted draws: the divergence is undefined.
            js_rows.push_back(name + "," + ref + ",average,nan,0," + std::to_string(v.summaries.size()) + "," +
                              std::to_string(ref_summaries->size()) + "," + fmt(v.filter_fraction));
            e[ref] = {{"average", nullptr}};
            continue;
          }
          const bench::PosteriorComparison c = bench::compare_posteriors(v.summaries, *ref_summaries, bins);
          js_rows.push_back(js_row(name, ref, c, v.summaries.size(), ref_summaries->size(), v.filter_fraction));
          e[ref] = {{"mean", c.mean.js}, {"std", c.std.js}, {"average", c.average}, {"bins", c.bins}};
          if (ref == "rs_fields") {
            write_histogram(csv / ("hist_" + name + "_mean.csv"), c.mean.a);
            write_histogram(csv / ("hist_" + name + "_std.csv"), c.std.a);
            write_histogram(csv / ("hist_" + name + "_mean_rs.csv"), c.mean.b);
            write_histogram(csv / ("hist_" + name + "_std_rs.csv"), c.std.b);
          }
        }
      }
      js[name] = e;
    }
    if (rs) js["rs"] = {{"accepted", rs->accepted.size()}, {"evaluated", rs->evaluated}};
    summary["ensembles"] = js;
  }
  if (!compares.empty()) {
    Json cmp = Json::array();
    for (const auto& [a, b] : compares) {
      const EnsembleView va = single_ensemble(a), vb = single_ensemble(b);
      if (va.summaries.empty() || vb.summaries.empty())
        throw DivergenceError("eval.compare: no kept members in " + (va.summaries.empty() ? a : b).string());
      const bench::PosteriorComparison c = bench::compare_posteriors(va.summaries, vb.summaries, bins);
      js_rows.push_back(js_row(a.string(), b.string(), c, va.summaries.size(), vb.summaries.size(), va.filter_fraction));
      cmp.push_back({{"a", a.string()}, {"b", b.string()}, {"mean", c.mean.js}, {"std", c.std.js}, {"average", c.average}});
    }
    summary["compare"] = cmp;
  }
  if (!js_rows.empty()) write_csv(csv / "js.csv", js_header, js_rows);
  manifest.finalize(summary);
  return {ctx.opt.run_dir, summary};
}

CommandResult run_plot(const Context& ctx) {
  const Config& cfg = ctx.cfg;
  const auto fields = cfg.get<std::vector<std::string>>("plot.fields", {});
  const auto errors = cfg.get<std::vector<std::vector<std::string>>>("plot.errors", {});
  const auto lines = cfg.get<std::vector<std::string>>("plot.lines", {});
  const std::size_t scale = cfg.get<std::size_t>("plot.scale", 8);
  const std::size_t max_members = cfg.get<std::size_t>("plot.members", 4);
  std::optional<ColorRange> fixed;
  if (cfg.has("plot.range")) {
    const auto r = cfg.get<std::vector<double>>("plot.range", {});
    if (r.size() != 2 || !(r[0] <= r[1])) throw ConfigError("plot.range must be [lo, hi] with lo <= hi");
    fixed = ColorRange{r[0], r[1]};
  }
  if (fields.empty() && errors.empty() && lines.empty()) throw ConfigError("plot needs plot.fields, plot.errors, or plot.lines");
  if (scale < 1) throw ConfigError("plot.scale must be >= 1");
  RunManifest manifest(ctx.opt.run_dir, "plot", cfg);
  for (const auto& f : fields) manifest.add_input("plot.fields/" + f, f);
  for (const auto& pair : errors) {
    if (pair.size() != 2) throw ConfigError("plot.errors entries must be [truth, prediction]");
    for (const auto& f : pair) manifest.add_input("plot.errors/" + f, f);
  }
  for (const auto& f : lines) manifest.add_input("plot.lines/" + f, f);
  if (ctx.opt.dry_run) {
    ctx.log() << "plot: " << fields.size() << " field file(s), " << errors.size() << " error map(s), " << lines.size()
              << " line plot(s)\n";
    return {{}, Json::object()};
  }
  manifest.begin();
  const fs::path png = ctx.opt.run_dir / "png";
  std::vector<std::string> bars;
  std::set<std::string> used;
  auto unique_name = [&](std::string base) {
    std::string name = base;
    for (int k = 2; used.count(name); ++k) name = base + "-" + std::to_string(k);
    used.insert(name);
    return name;
  };
  auto emit = [&](const std::string& name, const Image& img) {
    write_png(png / (name + ".png"), img);
    write_ppm(png / (name + ".ppm"), img);
  };
  auto emit_field = [&](const std::string& name, const Tensor& f) {
    const ColorRange r = fixed ? *fixed : value_range(f);
    emit(name, heatmap(f, scale, r));
    bars.push_back(name + "," + fmt(r.lo) + "," + fmt(r.hi));
  };
  auto split_channels = [](const Tensor& t) {
    std::vector<Tensor> out;
    if (t.rank() == 2) return std::vector<Tensor>{t};
    const std::size_t ny = t.dim(t.rank() - 2), nx = t.dim(t.rank() - 1), c = t.size() / (ny * nx);
    for (std::size_t k = 0; k < c; ++k) {
      Tensor f({ny, nx});
      std::copy(t.values().begin() + k * ny * nx, t.values().begin() + (k + 1) * ny * nx, f.values().begin());
      out.push_back(std::move(f));
    }
    return out;
  };
  std::size_t images = 0;
  for (const auto& file : fields) {
    const auto stack = tg::load_fsdt_all(file);
    const std::string stem = fs::path(file).parent_path().filename().string() + "_" + fs::path(file).stem().string();
    for (std::size_t k = 0; k < std::min(max_members, stack.size()); ++k) {
      const auto chans = split_channels(stack[k]);
      for (std::size_t c = 0; c < chans.size(); ++c) {
        std::string name = stem;
        if (stack.size() > 1) name += "_" + std::to_string(k);
        if (chans.size() > 1) name += "_c" + std::to_string(c);
        emit_field(unique_name(name), chans[c]);
        ++images;
      }
    }
  }
  for (const auto& pair : errors) {
    const Tensor truth = tg::load_fsdt(pair[0]), pred = tg::load_fsdt(pair[1]);
    tg::require_same_shape(truth, pred, "plot.errors");
    Tensor err = truth - pred;
    for (double& v : err.values()) v = std::abs(v);
    emit_field(unique_name("error_" + fs::path(pair[1]).parent_path().filename().string() + "_" +
                           fs::path(pair[1]).stem().string()),
               err);
    ++images;
  }
  for (const auto& file : lines) {
    const auto rows = read_csv(file);
    if (rows.empty()) throw MissingArtifact("empty CSV " + file);
    std::vector<double> x;
    std::vector<std::vector<double>> series(rows.front().size() > 1 ? rows.front().size() - 1 : 0);
    for (const auto& r : rows) {
      auto num = [](const std::string& s) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        return end && *end == '\0' && !s.empty() ? v : NAN;
      };
      x.push_back(num(r.at(0)));
      for (std::size_t c = 0; c < series.size(); ++c) series[c].push_back(c + 1 < r.size() ? num(r[c + 1]) : NAN);
    }
    emit(unique_name("lines_" + fs::path(file).stem().string()), line_plot(x, series, 480, 320));
    ++images;
  }
  write_csv(ctx.opt.run_dir / "csv" / "colorbars.csv", "image,lo,hi", bars);
  Json summary = {{"images", images}};
  manifest.finalize(summary);
  return {ctx.opt.run_dir, summary};
}

}  // namespace fsd::cli::detail
