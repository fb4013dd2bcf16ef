#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace pulse {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the i-th draw is a pure function of (key, i), and
/// split() derives independent child streams from a label. All randomness in
/// the lab flows from one root key through split(), so results never depend on
/// the order in which independent streams are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(splitmix64(key ^ 0x5DEECE66DULL)) {}

  Rng split(std::uint64_t label) const {
    Rng child;
    child.key_ = splitmix64(key_ ^ splitmix64(label + 0x632BE59BD9B4E019ULL));
    return child;
  }

  Rng split(std::string_view label) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return split(h);
  }

  std::uint64_t next_u64() { return splitmix64(key_ + splitmix64(counter_++)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Uniform integer in [lo, hi].
  long long integer(long long lo, long long hi) {
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; both variates are used.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates shuffle driven by an Rng.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace pulse
