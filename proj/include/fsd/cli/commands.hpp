#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fsd/cli/config.hpp"
#include "fsd/cli/manifest.hpp"

// Subcommands of the `fsd` experiment runner. Each one resolves its
// configuration, writes a running manifest into its run directory, does its
// work, and finalizes the manifest with the output inventory.
namespace fsd::cli {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::filesystem::path run_dir;
  std::size_t threads = 1;
  /// Validate the configuration and inputs, report the plan, write nothing.
  bool dry_run = false;
  std::ostream* log = nullptr;
};

struct CommandResult {
  std::filesystem::path run_dir;
  Json summary;
};

/// gen-data, train, sample, invert, rs, eval, plot.
const std::vector<std::string>& command_names();

/// Throws ConfigError (exit 2), MissingArtifact (exit 3), DivergenceError or
/// tg::NumericalError (exit 4).
CommandResult run_command(const std::string& command, const Config& config, const CommandOptions& options);

/// <root>/<UTC timestamp>_<name>, with a numeric suffix if it already exists.
std::filesystem::path default_run_dir(const std::filesystem::path& root, const std::string& name);

struct ReplayResult {
  std::filesystem::path run_dir;
  std::vector<std::string> identical;   // compared outputs that match
  std::vector<std::string> mismatched;  // compared outputs that differ or are missing
  bool ok() const { return mismatched.empty() && !identical.empty(); }
};

/// Re-runs the command recorded in a finalized manifest (file or run
/// directory) into options.run_dir after checking that every recorded input
/// still has its recorded hash. Field files (.fsdt) must match byte for byte
/// and checkpoints (.fsdc) must hold identical parameters.
ReplayResult replay(const std::filesystem::path& manifest, const CommandOptions& options);

/// 0 success, 2 configuration, 3 missing artifact, 4 numerical divergence, 1 other.
int exit_code(const std::exception& e);

}  // namespace fsd::cli
