#pragma once

#include <charconv>
#include <string>

namespace clalign {

/// Shortest round-trip decimal form; stable across runs for byte-identical CSVs.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, result.ptr);
}

}  // namespace clalign
