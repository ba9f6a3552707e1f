#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace saem {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Independent generator derived from the master seed, a purpose label
/// ("saem", "is", "replicate", ...) and up to two indices. Streams are a pure
/// function of their inputs, so work can be split over threads without
/// changing any draw.
inline Rng make_stream(std::uint64_t seed, std::string_view purpose,
                       std::uint64_t a = 0, std::uint64_t b = 0) {
  const std::uint64_t words[4] = {detail::splitmix64(seed),
                                  detail::splitmix64(detail::fnv1a(purpose)),
                                  detail::splitmix64(a ^ 0x5bd1e995ULL),
                                  detail::splitmix64(b + 0x27d4eb2fULL)};
  std::seed_seq seq{static_cast<std::uint32_t>(words[0]), static_cast<std::uint32_t>(words[0] >> 32),
                    static_cast<std::uint32_t>(words[1]), static_cast<std::uint32_t>(words[1] >> 32),
                    static_cast<std::uint32_t>(words[2]), static_cast<std::uint32_t>(words[2] >> 32),
                    static_cast<std::uint32_t>(words[3]), static_cast<std::uint32_t>(words[3] >> 32)};
  return Rng(seq);
}

/// Derives a child seed (for nested fits such as bootstrap replicates).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
  return detail::splitmix64(detail::splitmix64(seed) ^ detail::fnv1a(purpose) ^
                            detail::splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Generator plus the distribution objects that carry state between draws.
struct Stream {
  Rng engine;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::uniform_real_distribution<double> uniform{0.0, 1.0};

  Stream() = default;
  explicit Stream(Rng eng) : engine(std::move(eng)) {}

  double gauss() { return normal(engine); }
  double unif() { return uniform(engine); }
  /// Uniform on the open interval (0,1).
  double unif_open() {
    double u;
    do {
      u = uniform(engine);
    } while (u <= 0.0);
    return u;
  }
};

}  // namespace saem
