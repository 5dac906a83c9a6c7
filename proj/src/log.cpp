#include "casher/log.hpp"

#include <atomic>
#include <cstdio>

namespace casher {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kQuiet)};
}

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_message(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > g_level.load()) return;
  std::fprintf(stderr, "[casher] %s\n", message.c_str());
}

}  // namespace casher
