#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace pmn {

/// Shape or width disagreement between an operation and its operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid value, configuration, or protocol violation.
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A child at a level >= its parent, or any other module-graph violation.
struct LevelViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Corrupt or mismatched serialized state.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

}  // namespace pmn
