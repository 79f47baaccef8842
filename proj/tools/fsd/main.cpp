// fsd: experiment runner. One subcommand per pipeline stage; every run lands
// in its own directory with a manifest, the resolved config, and its outputs.

#include <CLI11.hpp>
#include <iostream>

#include "fsd/cli/commands.hpp"

namespace {

namespace fs = std::filesystem;
using fsd::cli::Config;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string name;
  bool print_config = false;
  bool dry_run = false;
  std::size_t threads = 1;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("-c,--config", f.config, "TOML experiment file")->required();
  app->add_option("--seed", f.seed, "override the config seed");
  app->add_option("-o,--out", f.out, "run directory (default runs/<UTC stamp>_<name>)");
  app->add_option("--name", f.name, "run name for the default run directory");
  app->add_flag("--print-config", f.print_config, "print the resolved config and exit");
  app->add_flag("--dry-run", f.dry_run, "validate and report the plan without writing outputs");
  app->add_option("-j,--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
}

int run(const std::string& command, const Flags& f, const std::optional<std::string>& train_kind) {
  Config cfg = Config::load(f.config);
  if (f.seed) cfg.set("seed", *f.seed);
  if (train_kind) {
    if (cfg.has("train.kind") && cfg.get<std::string>("train.kind", "") != *train_kind)
      throw fsd::cli::ConfigError("train kind '" + *train_kind + "' contradicts train.kind in " + f.config);
    cfg.set("train.kind", *train_kind);
  }
  if (f.print_config) {
    std::cout << cfg.to_toml();
    return 0;
  }
  fsd::cli::CommandOptions opt;
  opt.threads = f.threads;
  opt.dry_run = f.dry_run;
  opt.log = &std::cerr;
  if (!f.dry_run) {
    const std::string name = !f.name.empty() ? f.name : cfg.get<std::string>("name", fs::path(f.config).stem().string());
    opt.run_dir = !f.out.empty() ? fs::path(f.out) : fsd::cli::default_run_dir("runs", name);
  }
  const fsd::cli::CommandResult r = fsd::cli::run_command(command, cfg, opt);
  if (!f.dry_run) std::cout << r.run_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"function-space diffusion experiment runner"};
  app.require_subcommand(1);

  Flags flags;
  std::string command;
  std::optional<std::string> train_kind;
  for (const std::string& name : fsd::cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    add_common(sub, flags);
    if (name == "train")
      sub->add_option("kind", train_kind, "prior, joint, or surrogate")
          ->check(CLI::IsMember({"prior", "joint", "surrogate"}));
    sub->callback([&command, name] { command = name; });
  }

  std::string manifest;
  std::string replay_out;
  std::size_t replay_threads = 1;
  CLI::App* rep = app.add_subcommand("replay", "re-run a finalized manifest and compare outputs");
  rep->add_option("manifest", manifest, "manifest.json or its run directory")->required();
  rep->add_option("-o,--out", replay_out, "run directory for the re-run (default runs/<UTC stamp>_replay)");
  rep->add_option("-j,--threads", replay_threads)->check(CLI::PositiveNumber);
  rep->callback([&command] { command = "replay"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (command != "replay") return run(command, flags, train_kind);
    fsd::cli::CommandOptions opt;
    opt.threads = replay_threads;
    opt.log = &std::cerr;
    opt.run_dir = !replay_out.empty() ? fs::path(replay_out) : fsd::cli::default_run_dir("runs", "replay");
    const fsd::cli::ReplayResult r = fsd::cli::replay(manifest, opt);
    for (const auto& f : r.identical) std::cout << "identical  " << f << "\n";
    for (const auto& f : r.mismatched) std::cout << "MISMATCH   " << f << "\n";
    std::cout << r.run_dir.string() << "\n";
    if (!r.ok()) {
      std::cerr << "fsd replay: " << (r.identical.empty() && r.mismatched.empty() ? "no comparable outputs" : "outputs differ")
                << "\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "fsd " << command << ": " << e.what() << "\n";
    return fsd::cli::exit_code(e);
  }
}
