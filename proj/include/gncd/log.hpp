#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace gncd::log {

enum class Level { kQuiet = 0, kWarn = 1, kInfo = 2 };

inline std::atomic<Level>& level() {
  static std::atomic<Level> lvl{Level::kWarn};
  return lvl;
}

// Number of warnings emitted since start (or last reset); tests use this to
// check that a warning path was taken.
inline std::atomic<long>& warning_count() {
  static std::atomic<long> n{0};
  return n;
}

inline void warn(std::string_view msg) {
  ++warning_count();
  if (level() >= Level::kWarn) std::cerr << "warning: " << msg << '\n';
}

inline void info(std::string_view msg) {
  if (level() >= Level::kInfo) std::cerr << msg << '\n';
}

}  // namespace gncd::log
