#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lagr/error.hpp"
#include "lagr/tensor.hpp"

namespace lagr {

/// splitmix64 finalizer; derives independent stream seeds from a base seed
/// and trial coordinates.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = base ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct PlaneWave {
  double fx = 0.0, fy = 0.0, phase = 0.0, amp = 0.0;
};

/// Band-limited random texture defined at every real position: per plane a
/// sum of plane waves with random orientation, frequency below `max_freq`
/// cycles/pixel, phase and amplitude.
struct SmoothTexture {
  std::vector<std::vector<PlaneWave>> planes;

  static SmoothTexture random(std::size_t n_planes, std::uint64_t seed, int waves = 6, double max_freq = 0.08) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;
    SmoothTexture t;
    t.planes.resize(n_planes);
    for (auto& plane : t.planes)
      for (int k = 0; k < waves; ++k) {
        const double ang = two_pi * unit(rng), f = max_freq * (0.2 + 0.8 * unit(rng));
        const double ph = two_pi * unit(rng), amp = 0.5 + unit(rng);
        plane.push_back({f * std::cos(ang), f * std::sin(ang), ph, amp});
      }
    return t;
  }

  double operator()(std::size_t plane, double x, double y) const {
    double v = 0.0;
    for (const PlaneWave& w : planes[plane])
      v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
    return v;
  }

  /// Samples plane b * C + c at the integer grid of shape s.
  Tensor render(Shape s) const {
    if (planes.size() != s.b * s.c) throw DimensionError("texture has " + std::to_string(planes.size()) + " planes");
    Tensor t(s);
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t y = 0; y < s.h; ++y)
          for (std::size_t x = 0; x < s.w; ++x)
            t(b, c, y, x) = (*this)(b * s.c + c, static_cast<double>(x), static_cast<double>(y));
    return t;
  }
};

inline Tensor random_smooth_field(Shape s, std::uint64_t seed, int waves = 6, double max_freq = 0.08) {
  return SmoothTexture::random(s.b * s.c, seed, waves, max_freq).render(s);
}

} // namespace lagr
