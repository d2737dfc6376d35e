// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/common/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace sdflow::log {
namespace {

std::atomic<int> g_level{static_cast<int>(Level::kInfo)};
std::atomic<long> g_warnings{0};
std::mutex g_mutex;

void emit(Level lvl, const char* tag, const std::string& msg) {
  if (static_cast<int>(lvl) < g_level.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fprintf(stderr, "[sdflow %s] %s\n", tag, msg.c_str());
}

}  // namespace

void set_level(Level level) { g_level.store(static_cast<int>(level)); }
Level level() { return static_cast<Level>(g_level.load()); }

void debug(const std::string& msg) { emit(Level::kDebug, "debug", msg); }
void info(const std::string& msg) { emit(Level::kInfo, "info", msg); }
void warn(const std::string& msg) {
  ++g_warnings;
  emit(Level::kWarn, "warn", msg);
}
void error(const std::string& msg) { emit(Level::kError, "error", msg); }

long warning_count() { return g_warnings.load(); }

}  // namespace sdflow::log
