#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

// Minimal stderr logger. Verbosity comes from the BCBF_LOG_LEVEL environment
// variable (error, warn, info, debug); default is warn.
namespace bcbf::logging {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level level_from_string(std::string_view s) {
  if (s == "error") return Level::error;
  if (s == "info") return Level::info;
  if (s == "debug") return Level::debug;
  return Level::warn;
}

inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("BCBF_LOG_LEVEL");
    return env ? level_from_string(env) : Level::warn;
  }();
  return level;
}

inline void set_level(Level level) { threshold() = level; }

inline void write(Level level, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  const std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[bcbf " << tag << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::error, "error", msg); }
inline void warn(std::string_view msg) { write(Level::warn, "warn", msg); }
inline void info(std::string_view msg) { write(Level::info, "info", msg); }
inline void debug(std::string_view msg) { write(Level::debug, "debug", msg); }

}  // namespace bcbf::logging
