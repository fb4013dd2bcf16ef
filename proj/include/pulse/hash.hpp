#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace pulse {

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// 16 lowercase hex digits.
inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Hash of a canonical serialization (callers pass sorted-key JSON).
inline std::string content_hash(std::string_view canonical) { return hex64(fnv1a64(canonical)); }

}  // namespace pulse
