#pragma once

#include <cmath>
#include <cstdint>

namespace shadowtree::rng {

// Counter-based deterministic streams: each draw is a pure hash of
// (seed, stream tag, path, step), so parallel generation stays reproducible
// and differently tagged streams are independent by construction.

inline constexpr std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t stream_tag(const char* name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (; *name; ++name)
    h = (h ^ static_cast<unsigned char>(*name)) * 1099511628211ull;
  return h;
}

inline constexpr std::uint64_t key(std::uint64_t seed, std::uint64_t tag,
                                   std::uint64_t path, std::uint64_t step) {
  std::uint64_t h = splitmix(seed ^ tag);
  h = splitmix(h ^ splitmix(path + 0x632BE59BD9B4E019ull));
  h = splitmix(h ^ splitmix(step + 0x9E3779B97F4A7C15ull));
  return h;
}

// Uniform on the open interval (0,1).
inline double uniform(std::uint64_t k) {
  return (static_cast<double>(k >> 11) + 0.5) * 0x1p-53;
}

// Standard normal via Box-Muller on two sub-draws of the key.
inline double normal(std::uint64_t k) {
  std::uint64_t k1 = splitmix(k ^ 0xA5A5A5A5A5A5A5A5ull);
  std::uint64_t k2 = splitmix(k ^ 0x3C3C3C3C3C3C3C3Cull);
  double u1 = (static_cast<double>(k1 >> 12) + 1.0) * 0x1p-52;  // (0,1]
  double u2 = uniform(k2);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476925286766559 * u2);
}

// Portable uniforms on top of any 64-bit generator (for fixtures and
// randomized checks; distribution code avoids std:: distributions so the
// draws are identical across standard libraries).
template <class Gen>
double uniform01(Gen& gen) {
  return static_cast<double>(gen() >> 11) * 0x1p-53;
}

template <class Gen>
double uniform_in(Gen& gen, double lo, double hi) {
  return lo + (hi - lo) * uniform01(gen);
}

}  // namespace shadowtree::rng
