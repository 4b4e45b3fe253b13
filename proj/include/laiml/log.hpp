#pragma once

#include <iostream>
#include <mutex>
#include <string_view>

namespace laiml::log {

inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

inline void warn(std::string_view message) {
    std::lock_guard lock(sink_mutex());
    std::clog << "[laiml] WARN " << message << '\n';
}

inline void info(std::string_view message) {
    std::lock_guard lock(sink_mutex());
    std::clog << "[laiml] " << message << '\n';
}

}  // namespace laiml::log
