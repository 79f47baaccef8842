#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "fsd/cli/config.hpp"

namespace fsd::cli {

/// manifest.json of a run directory. Written with status "running" before any
/// work starts and rewritten with the output inventory when the run ends; a
/// manifest without `finalized: true` marks an incomplete run.
class RunManifest {
 public:
  RunManifest(std::filesystem::path run_dir, std::string command, const Config& config);

  /// Records the content hash of an input artifact (file, or a directory's
  /// manifest.json). Throws MissingArtifact when it does not exist.
  void add_input(const std::string& role, const std::filesystem::path& path);
  const std::map<std::string, std::pair<std::string, std::string>>& inputs() const { return inputs_; }

  void begin();
  /// Hashes every file under the run directory except manifest.json.
  void finalize(const Json& summary);
  void fail(const std::string& reason);

  const std::filesystem::path& run_dir() const { return dir_; }

 private:
  Json base() const;
  std::filesystem::path dir_;
  std::string command_;
  Config config_;
  std::string started_;
  std::map<std::string, std::pair<std::string, std::string>> inputs_;  // role -> (path, sha256)
};

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hash identifying an input: a file's SHA-256, or for a directory the
/// SHA-256 of its manifest.json.
std::string artifact_hash(const std::filesystem::path& path);

/// Relative path -> SHA-256 for every regular file under `dir`, excluding
/// the top-level manifest.json.
std::map<std::string, std::string> inventory(const std::filesystem::path& dir);

std::string utc_timestamp();

}  // namespace fsd::cli
