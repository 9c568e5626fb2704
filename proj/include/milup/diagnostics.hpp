#pragma once

#include <functional>
#include <string_view>

namespace milup {

// Non-fatal conditions (stratification fallback, dropped batches, duplicate
// grid values ...) are reported through a process-wide handler. The default
// handler prints to stderr.
using WarningHandler = std::function<void(std::string_view)>;

void warn(std::string_view message);

// Installs `handler` and returns the previous one. Passing an empty function
// restores the stderr default.
WarningHandler set_warning_handler(WarningHandler handler);

// RAII capture of warnings, mostly for tests.
class ScopedWarningCapture {
 public:
  explicit ScopedWarningCapture(WarningHandler handler)
      : previous_(set_warning_handler(std::move(handler))) {}
  ~ScopedWarningCapture() { set_warning_handler(std::move(previous_)); }
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

 private:
  WarningHandler previous_;
};

}  // namespace milup
