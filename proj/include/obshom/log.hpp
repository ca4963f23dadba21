#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

namespace obshom::log {

// 0 = errors only, 1 = warnings, 2 = info, 3 = debug
inline std::atomic<int> verbosity{1};

inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

inline void emit(int level, const char* tag, const std::string& msg) {
    if (verbosity.load() < level) return;
    std::lock_guard lock(sink_mutex());
    std::cerr << "[" << tag << "] " << msg << '\n';
}

inline void warn(const std::string& msg) { emit(1, "warn", msg); }
inline void info(const std::string& msg) { emit(2, "info", msg); }
inline void debug(const std::string& msg) { emit(3, "debug", msg); }

} // namespace obshom::log
