#include "fsd/cli/manifest.hpp"

#include <chrono>
#include <ctime>

#include "fsd/core/hash.hpp"

namespace fsd::cli {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string artifact_hash(const fs::path& path) {
  if (fs::is_directory(path)) {
    const fs::path m = path / "manifest.json";
    if (!fs::exists(m)) throw MissingArtifact("artifact directory has no manifest.json: " + path.string());
    return sha256_file(m);
  }
  if (!fs::exists(path)) throw MissingArtifact("missing artifact: " + path.string());
  return sha256_file(path);
}

std::map<std::string, std::string> inventory(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out[rel] = sha256_file(entry.path());
  }
  return out;
}

RunManifest::RunManifest(fs::path run_dir, std::string command, const Config& config)
    : dir_(std::move(run_dir)), command_(std::move(command)), config_(config) {}

void RunManifest::add_input(const std::string& role, const fs::path& path) {
  inputs_[role] = {path.string(), artifact_hash(path)};
}

Json RunManifest::base() const {
  Json inputs = Json::object();
  for (const auto& [role, entry] : inputs_) inputs[role] = {{"path", entry.first}, {"sha256", entry.second}};
  return {{"command", command_},
          {"config", config_.json()},
          {"config_sha256", config_.hash()},
          {"seed", config_.get<std::uint64_t>("seed", 0)},
          {"inputs", inputs},
          {"started", started_}};
}

void RunManifest::begin() {
  started_ = utc_timestamp();
  fs::create_directories(dir_);
  write_text(dir_ / "config.resolved", config_.to_toml());
  Json m = base();
  m["status"] = "running";
  m["finalized"] = false;
  write_json(dir_ / "manifest.json", m);
}

void RunManifest::finalize(const Json& summary) {
  Json m = base();
  m["summary"] = summary;
  m["outputs"] = inventory(dir_);
  m["ended"] = utc_timestamp();
  m["status"] = "complete";
  m["finalized"] = true;
  write_json(dir_ / "manifest.json", m);
}

void RunManifest::fail(const std::string& reason) {
  Json m = base();
  m["status"] = "failed";
  m["failure"] = reason;
  m["ended"] = utc_timestamp();
  m["finalized"] = false;
  write_json(dir_ / "manifest.json", m);
}

}  // namespace fsd::cli
