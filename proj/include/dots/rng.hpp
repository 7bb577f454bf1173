#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dots/common.hpp"

namespace dots {

// Deterministic RNG with a documented derivation tree: every consumer derives
// its own stream from the run seed plus a path tag ("stage/node/variant"), so
// serial and parallel execution draw identical numbers.
//
// All distributions are implemented on top of raw mt19937_64 output (the
// engine is fully specified by the standard); std::shuffle and the std
// distributions are implementation-defined and are not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng child(const std::string& tag) const {
    return Rng(mix(seed_ ^ fnv1a64(tag)));
  }

  std::uint64_t next() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n) by rejection; exact and portable.
  std::uint64_t below(std::uint64_t n) {
    check(n > 0, "Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  // Standard normal via Box-Muller; caches the spare draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double stddev) { return stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << spare_ << ' ' << gen_;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    std::istringstream is(text);
    std::uint64_t seed = 0;
    int has_spare = 0;
    double spare = 0.0;
    is >> seed >> has_spare >> spare;
    Rng r(seed);
    r.has_spare_ = has_spare != 0;
    r.spare_ = spare;
    is >> r.gen_;
    check(!is.fail(), "Rng::deserialize: malformed state string");
    return r;
  }

 private:
  // splitmix64 finalizer; spreads low-entropy seeds before keying the engine.
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dots
