#include "causalmon/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace causalmon {
namespace {

std::atomic<LogLevel> g_level{LogLevel::kWarn};
std::mutex g_mutex;

void emit(std::string_view tag, std::string_view message) {
    std::lock_guard lock(g_mutex);
    std::cerr << "[causalmon] " << tag << ": " << message << '\n';
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }

LogLevel log_level() { return g_level.load(); }

void log_warn(std::string_view message) {
    if (g_level.load() >= LogLevel::kWarn) emit("warning", message);
}

void log_info(std::string_view message) {
    if (g_level.load() >= LogLevel::kInfo) emit("info", message);
}

}  // namespace causalmon
