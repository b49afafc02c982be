#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "sigmus/common.hpp"

namespace sigmus::detail {

inline Timestamp now_seconds() {
    return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
}

// Logs go to stderr; SIGMUS_LOG=quiet silences info lines.
inline bool log_quiet() {
    static const bool quiet = [] {
        const char* v = std::getenv("SIGMUS_LOG");
        return v && std::string(v) == "quiet";
    }();
    return quiet;
}

inline void log_line(const char* level, const std::string& msg) {
    std::fprintf(stderr, "%s %s %s\n", format_timestamp(now_seconds()).c_str(), level, msg.c_str());
}

inline void log_info(const std::string& msg) {
    if (!log_quiet()) log_line("INFO", msg);
}
inline void log_warn(const std::string& msg) { log_line("WARN", msg); }

}  // namespace sigmus::detail
