#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fsd/core/io.hpp"

// Run configuration: one TOML file per experiment. A top-level `include`
// (string or array of strings, relative to the including file) names base
// files whose keys the including file overrides, table by table. The
// resolved form has no includes and re-parses to the same configuration.
namespace fsd::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  Config() : root_(Json::object()) {}
  explicit Config(Json root);

  /// Throws ConfigError on parse failures, include cycles, or missing includes.
  static Config load(const std::filesystem::path& file);
  static Config parse(std::string_view toml_text, const std::filesystem::path& base_dir = ".");

  const Json& json() const { return root_; }
  /// Resolved TOML text; parse(to_toml()) == *this.
  std::string to_toml() const;
  /// SHA-256 of the canonical JSON dump.
  std::string hash() const;

  bool has(std::string_view dotted) const;
  /// Value at a dotted key, or `fallback` when absent. A present value of the
  /// wrong type throws ConfigError naming the key.
  template <class T>
  T get(std::string_view dotted, T fallback) const;
  /// Throws ConfigError when absent.
  template <class T>
  T require(std::string_view dotted) const;
  void set(std::string_view dotted, Json value);

  bool operator==(const Config& other) const { return root_ == other.root_; }

 private:
  const Json* find(std::string_view dotted) const;
  Json root_;
};

/// Deep merge: tables merge key by key, any other value in `over` replaces `base`.
Json merge(Json base, const Json& over);

template <class T>
T Config::get(std::string_view dotted, T fallback) const {
  const Json* v = find(dotted);
  if (!v) return fallback;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v->is_number_integer() || (std::is_unsigned_v<T> && v->get<long long>() < 0)) throw ConfigError("");
    }
    return v->get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(dotted) + "' has the wrong type: " + v->dump());
  }
}

template <class T>
T Config::require(std::string_view dotted) const {
  if (!find(dotted)) throw ConfigError("config key '" + std::string(dotted) + "' is required");
  return get<T>(dotted, T{});
}

}  // namespace fsd::cli
