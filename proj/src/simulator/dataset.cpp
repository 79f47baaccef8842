#include <cstdio>
#include <iostream>

#include "fsd/core/hash.hpp"
#include "fsd/core/io.hpp"
#include "fsd/simulator/simulator.hpp"
#include "fsd/tensorgrad/fsdt.hpp"

namespace fsd::sim {

namespace {

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

Json hyper_json(const grf::GeoHyperparams& h) {
  return {{"mu", h.mu}, {"sigma", h.sigma}, {"corr_x", h.corr_x}, {"corr_z", h.corr_z}};
}

Json box_json(const grf::GeoPriorBox& b) {
  auto range = [](const grf::Range& r) { return Json::array({r.lo, r.hi}); };
  return {{"mu", range(b.mu)},
          {"sigma", range(b.sigma)},
          {"corr_x", range(b.corr_x)},
          {"corr_z", range(b.corr_z)},
          {"gamma", b.gamma}};
}

struct SplitPlan {
  const char* name;
  std::size_t count;
  Dataset* out;
};

}  // namespace

GeneratedDataset generate_dataset(const DatasetSpec& spec, const ForwardConfig& config) {
  config.validate();
  spec.box.validate();
  if (spec.n_train + spec.n_test == 0) throw std::invalid_argument("generate_dataset: n must be >= 1");
  GeneratedDataset result;
  result.config_hash = sha256_hex(config.canonical_json() + box_json(spec.box).dump());
  for (const SplitPlan& plan : {SplitPlan{"train", spec.n_train, &result.train},
                                SplitPlan{"test", spec.n_test, &result.test}}) {
    for (std::size_t i = 0; i < plan.count; ++i) {
      Rng rng = Rng::stream(spec.seed, std::string("data/") + plan.name, i);
      auto [m, hp] = grf::sample_geomodel(spec.box, config.grid, rng);
      try {
        Tensor s = solve_forward(config, m);
        plan.out->m.push_back(std::move(m));
        plan.out->s.push_back(std::move(s));
        plan.out->hyper.push_back(hp);
      } catch (const SolverError& e) {
        result.skipped.push_back(std::string(plan.name) + "/" + std::to_string(i) + ": " + e.what());
        std::cerr << "generate_dataset: skipped " << result.skipped.back() << "\n";
      }
    }
  }
  return result;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                   const ForwardConfig& config, const GeneratedDataset& data) {
  Json manifest;
  manifest["kind"] = "dataset";
  manifest["seed"] = spec.seed;
  manifest["config_hash"] = data.config_hash;
  manifest["forward"] = Json::parse(config.canonical_json());
  manifest["prior_box"] = box_json(spec.box);
  manifest["n_train"] = spec.n_train;
  manifest["n_test"] = spec.n_test;
  manifest["skipped"] = data.skipped;
  Json files = Json::object();
  for (const auto& [name, set] : {std::pair<const char*, const Dataset*>{"train", &data.train},
                                  std::pair<const char*, const Dataset*>{"test", &data.test}}) {
    Json entries = Json::array();
    for (std::size_t i = 0; i < set->m.size(); ++i) {
      const std::string stem = index_name(i);
      const auto mp = dir / "fields" / name / (stem + "_m.fsdt");
      const auto sp = dir / "fields" / name / (stem + "_s.fsdt");
      tg::save_fsdt(mp, set->m[i]);
      tg::save_fsdt(sp, set->s[i]);
      files[std::filesystem::relative(mp, dir).generic_string()] = sha256_file(mp);
      files[std::filesystem::relative(sp, dir).generic_string()] = sha256_file(sp);
      Json e = hyper_json(set->hyper[i]);
      e["index"] = i;
      entries.push_back(std::move(e));
    }
    manifest["splits"][name] = std::move(entries);
  }
  manifest["files"] = std::move(files);
  write_json(dir / "manifest.json", manifest);
}

Dataset read_dataset(const std::filesystem::path& dir, const std::string& split, DatasetPart part,
                     std::vector<std::filesystem::path>* opened) {
  auto load = [&](const std::filesystem::path& p) {
    if (opened) opened->push_back(p);
    return tg::load_fsdt(p);
  };
  if (opened) opened->push_back(dir / "manifest.json");
  const Json manifest = read_json(dir / "manifest.json");
  if (!manifest.contains("splits") || !manifest["splits"].contains(split))
    throw std::runtime_error("dataset " + dir.string() + " has no split '" + split + "'");
  Dataset out;
  for (const Json& e : manifest["splits"][split]) {
    const std::string stem = index_name(e["index"].get<std::size_t>());
    const auto base = dir / "fields" / split;
    out.m.push_back(load(base / (stem + "_m.fsdt")));
    if (part == DatasetPart::Pairs) {
      const auto sp = base / (stem + "_s.fsdt");
      if (!std::filesystem::exists(sp))
        throw std::runtime_error("dataset is missing dynamics field " + sp.string());
      out.s.push_back(load(sp));
    }
    out.hyper.push_back({e["mu"].get<double>(), e["sigma"].get<double>(), e["corr_x"].get<double>(),
                         e["corr_z"].get<double>()});
  }
  return out;
}

}  // namespace fsd::sim
