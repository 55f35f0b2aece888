#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ssmlab {

/// Splittable counter-based generator. A stream is (key, counter); output i is
/// a strong 64-bit mix of key + i, so streams can be forked by name or lane
/// without consuming from the parent. Reordering one consumer's draws cannot
/// perturb another consumer's stream.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  /// Independent substream identified by name ("init", "dropout", "data", "split", ...).
  Rng split(std::string_view name) const {
    Rng child;
    child.key_ = mix(key_ ^ fnv1a(name));
    return child;
  }

  /// Independent substream identified by lane index (epoch, batch, example, ...).
  Rng split(std::uint64_t lane) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(lane + 0x6a09e667f3bcc909ull));
    return child;
  }

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ull;
    return mix(key_ ^ counter_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire multiply-shift; n must be positive.
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>((static_cast<unsigned __int128>(next_u64()) *
                                      static_cast<unsigned __int128>(n)) >>
                                     64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (cosine branch only).
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace ssmlab
