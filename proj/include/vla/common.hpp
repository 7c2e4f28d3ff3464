#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace vla {

struct Vec2 {
  double x{0.0};
  double y{0.0};
};

inline double dist(const Vec2& a, const Vec2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Pixel-space axis-aligned box, end-exclusive: covers columns [x1, x2) and
// rows [y1, y2).
struct PixBox {
  int x1{0};
  int y1{0};
  int x2{0};
  int y2{0};
  bool operator==(const PixBox&) const = default;
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleLayoutError : Error {
  int attempts{0};
  explicit InfeasibleLayoutError(const std::string& msg, int n = 0)
      : Error(msg), attempts(n) {}
};

struct UnknownEntityError : Error {
  using Error::Error;
};

struct MalformedPayloadError : Error {
  using Error::Error;
};

struct BudgetExhaustedError : Error {
  using Error::Error;
};

struct UnverifiedTrajectoryError : Error {
  using Error::Error;
};

struct ShapeMismatchError : Error {
  using Error::Error;
};

struct ContextOverflowError : Error {
  using Error::Error;
};

struct UnsupportedStyleError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

// FNV-1a, used for config/data hashes in manifests and reports.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace vla
