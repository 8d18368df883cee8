#pragma once

#include <cstdio>
#include <optional>
#include <string>

namespace cmoe {

// Round-trip exact decimal form used in every CSV artifact.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_double(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace cmoe
