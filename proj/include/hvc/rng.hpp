#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>

namespace hvc {

// Counter-based generator: a splitmix64-style finalizer applied to
// (key, counter). Streams are addressed by deriving keys along a path such
// as (seed, epoch, image index, op index), so any draw can be reproduced
// in isolation and results do not depend on thread count or replay order.
inline std::uint64_t mix_u64(std::uint64_t key, std::uint64_t data) {
  std::uint64_t z = key + 0x9e3779b97f4a7c15ull * (data + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_key(std::uint64_t key, std::uint64_t id) {
  return mix_u64(key, id);
}

class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t key) : key_(key) {}

  // Key chained along a path, e.g. stream(seed, {epoch, index, op}).
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t k = mix_u64(0x8f1bbcdcbfa53e0bull, seed);
    for (std::uint64_t id : path) k = derive_key(k, id);
    return Rng(k);
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return mix_u64(key_, counter_++); }

  // Uniform in [0, 1), 53-bit mantissa.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform in [0, n) without modulo bias (fixed-point multiply).
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) return 0;
    unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) return lo;
    return lo + static_cast<std::int64_t>(
                    next_below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool next_coin(double p = 0.5) { return next_double() < p; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

template <typename T>
void fill_uniform(std::span<T> out, Rng& rng, T lo, T hi) {
  for (T& v : out) v = static_cast<T>(rng.next_uniform(lo, hi));
}

}  // namespace hvc
