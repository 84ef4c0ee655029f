#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssc {

using Shape = std::vector<int64_t>;

// Base error type for the library. The C API maps subclasses onto status
// codes; everything user-facing should carry a readable message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/geometry violations (mismatched extents, invalid axes, ...).
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed or unreadable files (SSDT, PPM, JSON annotations, ...).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

// Worker-thread cap shared by all parallel op internals. Reads SSD_THREADS
// once; values < 1 fall back to the hardware count.
int worker_threads();

}  // namespace ssc
