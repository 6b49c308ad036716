#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace blindsr {

// Runtime contract check. Throws instead of aborting so the CLI can turn
// violations into clean diagnostics and exit codes.
#define BSR_CHECK(cond, msg)                                              \
  do {                                                                    \
    if (!(cond)) {                                                        \
      std::ostringstream bsr_oss_;                                        \
      bsr_oss_ << "check failed: " << msg << " (" << __FILE__ << ":"      \
               << __LINE__ << ")";                                        \
      throw std::runtime_error(bsr_oss_.str());                           \
    }                                                                     \
  } while (0)

inline bool deterministic_mode() {
  const char* v = std::getenv("BD_DETERMINISTIC");
  return v != nullptr && v[0] == '1';
}

// When enabled, every tensor op verifies its output is finite and names the
// op that produced a NaN/Inf. On by default in debug builds; can be forced
// with BD_CHECK_FINITE=1.
bool finite_checks_enabled();

}  // namespace blindsr
