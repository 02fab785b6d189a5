#pragma once

#include <filesystem>

#include <json.hpp>

namespace goi {

/// Parse errors become FormatError{Malformed} naming the file.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Pretty-printed with two-space indent and a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

} // namespace goi
