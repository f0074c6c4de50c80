// Shared error types and small utilities.
#pragma once

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace synthpi {

// Error taxonomy. The CLI maps these onto exit codes, so new failure
// modes should reuse one of the existing categories where possible.
struct schema_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct range_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline bool& warnings_enabled() {
  static bool enabled = std::getenv("SYNTHPI_QUIET") == nullptr;
  return enabled;
}

// Warnings go to stderr so that file/stdout outputs stay byte-stable.
inline void warn(const std::string& msg) {
  if (!warnings_enabled()) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "synthpi: warning: " << msg << "\n";
}

}  // namespace detail

inline constexpr const char* version_string = "0.1.0";

}  // namespace synthpi
