#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace fsd {

using Json = nlohmann::json;

/// Creates parent directories as needed.
void write_text(const std::filesystem::path& path, const std::string& text);
/// Throws std::runtime_error if the file cannot be read.
std::string read_text(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

}  // namespace fsd
