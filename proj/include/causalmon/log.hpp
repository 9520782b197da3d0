#pragma once

#include <string_view>

namespace causalmon {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes a diagnostic line to stderr when the level allows it.
void log_warn(std::string_view message);
void log_info(std::string_view message);

}  // namespace causalmon
