#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace causalmon {

using json = nlohmann::json;

/// Serializes `value` like nlohmann::json::dump, except that floating point
/// numbers are written with 17 significant digits so that every double
/// survives a text round trip bit for bit.
std::string dump_json(const json& value, int indent = -1);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value, int indent = 2);

}  // namespace causalmon
