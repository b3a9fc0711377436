#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace stocktime {

using WarningHandler = std::function<void(const std::string&)>;

namespace detail {
struct WarningState {
  std::mutex mu;
  WarningHandler handler;
};
inline WarningState& warning_state() {
  static WarningState s;
  return s;
}
}  // namespace detail

/// Replaces the process-wide warning sink; returns the previous one.
/// An empty handler restores the stderr default.
inline WarningHandler set_warning_handler(WarningHandler h) {
  auto& s = detail::warning_state();
  std::lock_guard lock(s.mu);
  return std::exchange(s.handler, std::move(h));
}

inline void warn(const std::string& msg) {
  auto& s = detail::warning_state();
  std::lock_guard lock(s.mu);
  if (s.handler) {
    s.handler(msg);
  } else {
    std::cerr << "warning: " << msg << '\n';
  }
}

/// Collects warnings for the lifetime of the object (tests, CLI summaries).
class WarningCapture {
 public:
  WarningCapture() {
    prev_ = set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_handler(std::move(prev_)); }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  std::vector<std::string> messages;

 private:
  WarningHandler prev_;
};

}  // namespace stocktime
