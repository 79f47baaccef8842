#include "fsd/bench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fsd/core/io.hpp"
#include "fsd/core/parallel.hpp"

namespace fsd::bench {

Summary summary_stats(const Tensor& field) {
  if (field.empty()) throw std::invalid_argument("summary_stats: empty field");
  double sum = 0;
  for (double v : field.values()) sum += v;
  const double mean = sum / static_cast<double>(field.size());
  double sq = 0;
  for (double v : field.values()) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(field.size()))};
}

Histogram Histogram::build(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("histogram: need at least one bin");
  if (!(hi > lo)) {
    // Degenerate range: widen symmetrically so every value lands in one bin.
    const double pad = std::max(1e-12, std::abs(lo) * 1e-9);
    lo -= pad;
    hi += pad;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  h.mass.assign(bins, 0.0);
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("histogram: non-finite value");
    const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
    const auto b = static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(bins - 1)));
    h.mass[b] += 1.0;
  }
  h.count = values.size();
  if (h.count > 0)
    for (double& m : h.mass) m /= static_cast<double>(h.count);
  return h;
}

std::string Histogram::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "edge_lo,edge_hi,mass\n";
  for (std::size_t i = 0; i < mass.size(); ++i) out << edges[i] << ',' << edges[i + 1] << ',' << mass[i] << '\n';
  return out.str();
}

double js_divergence(const Histogram& p, const Histogram& q) {
  if (p.edges != q.edges) throw std::invalid_argument("js_divergence: histograms have different bin edges");
  double js = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double a = p.mass[i], b = q.mass[i], m = 0.5 * (a + b);
    if (a > 0.0) js += 0.5 * a * std::log(a / m);
    if (b > 0.0) js += 0.5 * b * std::log(b / m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

std::size_t default_bins(std::size_t n_a, std::size_t n_b) { return std::min(n_a, n_b) < 500 ? 25 : 50; }

ScalarComparison compare_values(const std::vector<double>& a, const std::vector<double>& b,
                                std::optional<std::size_t> bins) {
  if (a.empty() || b.empty()) throw std::invalid_argument("compare_values: empty ensemble");
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*amin, *bmin), hi = std::max(*amax, *bmax);
  const std::size_t n = bins.value_or(default_bins(a.size(), b.size()));
  ScalarComparison c{0.0, Histogram::build(a, lo, hi, n), Histogram::build(b, lo, hi, n)};
  c.js = js_divergence(c.a, c.b);
  return c;
}

PosteriorComparison compare_posteriors(const std::vector<Summary>& a, const std::vector<Summary>& b,
                                       std::optional<std::size_t> bins) {
  if (a.empty() || b.empty()) throw std::invalid_argument("compare_posteriors: empty ensemble after filtering");
  std::vector<double> am, as, bm, bs;
  for (const Summary& s : a) {
    am.push_back(s.mean);
    as.push_back(s.std);
  }
  for (const Summary& s : b) {
    bm.push_back(s.mean);
    bs.push_back(s.std);
  }
  PosteriorComparison out;
  out.bins = bins.value_or(default_bins(a.size(), b.size()));
  out.mean = compare_values(am, bm, out.bins);
  out.std = compare_values(as, bs, out.bins);
  out.average = 0.5 * (out.mean.js + out.std.js);
  return out;
}

double likelihood(const Tensor& prediction, const sim::Observation& obs, double sigma_obs) {
  if (!(sigma_obs > 0.0)) throw std::invalid_argument("likelihood: sigma_obs must be positive");
  const std::size_t count = obs.count();
  if (count == 0) throw std::invalid_argument("likelihood: empty observation mask");
  tg::require_same_shape(prediction, obs.mask, "likelihood");
  double sq = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double r = obs.mask[i] * (prediction[i] - obs.values[i]);
    sq += r * r;
  }
  return std::exp(-sq / (2.0 * sigma_obs * sigma_obs * static_cast<double>(count)));
}

namespace {

struct Outcome {
  bool error = false;
  double likelihood = 0.0;
  std::optional<Accepted> accepted;
};

}  // namespace

double RejectionRun::acceptance_rate() const {
  return evaluated == 0 ? 0.0 : static_cast<double>(accepted.size()) / static_cast<double>(evaluated);
}

RejectionRun rejection_sample(const RejectionPlan& plan, const PriorSampler& prior, const ForwardEvaluator& forward,
                              const sim::Observation& obs, const RejectionRun* resume, std::size_t max_blocks,
                              std::size_t threads) {
  if (plan.block_size < 1) throw std::invalid_argument("rejection_sample: block size must be >= 1");
  if (!(plan.sigma_obs > 0.0)) throw std::invalid_argument("rejection_sample: sigma_obs must be positive");
  if (obs.count() == 0) throw std::invalid_argument("rejection_sample: empty observation mask");
  RejectionRun run;
  if (resume) {
    if (resume->plan.seed != plan.seed || resume->plan.block_size != plan.block_size ||
        resume->plan.sigma_obs != plan.sigma_obs)
      throw std::invalid_argument("rejection_sample: resume state was produced by a different plan");
    if (resume->evaluated % plan.block_size != 0 && resume->evaluated < plan.pool_size)
      throw std::invalid_argument("rejection_sample: resume state is not at a block boundary");
    run = *resume;
  }
  run.plan = plan;
  run.mask_count = obs.count();
  std::size_t blocks = 0;
  while (run.evaluated < plan.pool_size && (max_blocks == 0 || blocks < max_blocks)) {
    const std::size_t begin = run.evaluated, end = std::min(plan.pool_size, begin + plan.block_size);
    std::vector<Outcome> outcomes(end - begin);
    parallel_for(end - begin, threads, [&](std::size_t j) {
      const std::size_t i = begin + j;
      Rng rng = Rng::stream(plan.seed, "rs", i);
      const PriorDraw draw = prior(rng);
      const double u = rng.uniform();
      Outcome& o = outcomes[j];
      try {
        o.likelihood = likelihood(forward(draw.field), obs, plan.sigma_obs);
      } catch (const std::exception&) {
        o.error = true;
        return;
      }
      if (u < o.likelihood) o.accepted = Accepted{i, summary_stats(draw.field), draw.hyper, o.likelihood, u};
    });
    for (const Outcome& o : outcomes) {
      run.errors += o.error ? 1 : 0;
      if (o.accepted) run.accepted.push_back(*o.accepted);
    }
    run.evaluated = end;
    ++blocks;
  }
  return run;
}

void write_rejection_run(const std::filesystem::path& dir, const RejectionRun& run) {
  Json manifest = {{"pool_size", run.plan.pool_size},
                   {"block_size", run.plan.block_size},
                   {"seed", run.plan.seed},
                   {"sigma_obs", run.plan.sigma_obs},
                   {"mask_count", run.mask_count},
                   {"evaluated", run.evaluated},
                   {"errors", run.errors},
                   {"accepted", run.accepted.size()},
                   {"acceptance_rate", run.acceptance_rate()},
                   {"complete", run.complete()}};
  std::ostringstream csv;
  csv.precision(17);
  csv << "index,mean,std,likelihood,u,mu,sigma,corr_x,corr_z\n";
  for (const Accepted& a : run.accepted)
    csv << a.index << ',' << a.summary.mean << ',' << a.summary.std << ',' << a.likelihood << ',' << a.u << ','
        << a.hyper.mu << ',' << a.hyper.sigma << ',' << a.hyper.corr_x << ',' << a.hyper.corr_z << '\n';
  write_text(dir / "accepted.csv", csv.str());
  write_json(dir / "manifest.json", manifest);
}

RejectionRun read_rejection_run(const std::filesystem::path& dir) {
  const Json m = read_json(dir / "manifest.json");
  RejectionRun run;
  run.plan.pool_size = m.at("pool_size").get<std::size_t>();
  run.plan.block_size = m.at("block_size").get<std::size_t>();
  run.plan.seed = m.at("seed").get<std::uint64_t>();
  run.plan.sigma_obs = m.at("sigma_obs").get<double>();
  run.mask_count = m.at("mask_count").get<std::size_t>();
  run.evaluated = m.at("evaluated").get<std::size_t>();
  run.errors = m.at("errors").get<std::size_t>();
  std::istringstream in(read_text(dir / "accepted.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw std::runtime_error("accepted.csv: malformed row '" + line + "'");
    Accepted a;
    a.index = std::stoull(cells[0]);
    a.summary = {std::strtod(cells[1].c_str(), nullptr), std::strtod(cells[2].c_str(), nullptr)};
    a.likelihood = std::strtod(cells[3].c_str(), nullptr);
    a.u = std::strtod(cells[4].c_str(), nullptr);
    a.hyper = {std::strtod(cells[5].c_str(), nullptr), std::strtod(cells[6].c_str(), nullptr),
               std::strtod(cells[7].c_str(), nullptr), std::strtod(cells[8].c_str(), nullptr)};
    run.accepted.push_back(a);
  }
  if (run.accepted.size() != m.at("accepted").get<std::size_t>())
    throw std::runtime_error("rejection run: accepted.csv does not match manifest");
  return run;
}

}  // namespace fsd::bench
