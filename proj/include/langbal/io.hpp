#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace langbal {

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
std::string read_text(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
// FNV-1a of the file bytes as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);
std::string hex_digest(const std::string& bytes);

}  // namespace langbal
