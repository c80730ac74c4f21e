#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace sedr::log {

using Sink = std::function<void(const std::string&)>;

inline Sink& warning_sink() {
  static Sink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

/// Serialized, so worker threads may warn.
inline void warn(const std::string& msg) {
  std::lock_guard lock(sink_mutex());
  warning_sink()(msg);
}

/// Replaces the warning sink for the lifetime of the guard (used by tests to capture output).
class ScopedSink {
 public:
  explicit ScopedSink(Sink sink) : previous_(std::exchange(warning_sink(), std::move(sink))) {}
  ~ScopedSink() { warning_sink() = std::move(previous_); }
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink previous_;
};

}  // namespace sedr::log
