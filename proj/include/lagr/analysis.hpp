#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lagr/error.hpp"
#include "lagr/io.hpp"
#include "lagr/parallel.hpp"
#include "lagr/synth.hpp"
#include "lagr/tensor.hpp"

namespace lagr {

using Complex = std::complex<double>;

/// H x W complex array, row-major. When `shifted`, the zero frequency sits at
/// (H/2, W/2).
struct Spectrum {
  std::size_t h = 0, w = 0;
  std::vector<Complex> data;
  bool shifted = false;

  Complex& at(std::size_t y, std::size_t x) { return data[y * w + x]; }
  const Complex& at(std::size_t y, std::size_t x) const { return data[y * w + x]; }
};

inline constexpr std::size_t kDirectDftMax = 64;
inline constexpr double kLpsdEps = 1e-8;

namespace detail {

inline std::vector<double> single_plane(const Tensor& f) {
  const Shape s = f.shape();
  if (f.empty()) throw DimensionError("dft2: empty field");
  if (s.b != 1 || s.c != 1) throw DimensionError("dft2 expects a single-channel field, got " + s.str());
  return {f.data().begin(), f.data().end()};
}

/// Direct 1D transform of n samples spaced `stride` apart, in place; sign -1
/// forward, +1 inverse (unnormalized).
inline void dft_line(Complex* x, std::size_t n, std::size_t stride, const std::vector<Complex>& tw,
                     std::vector<Complex>& scratch) {
  scratch.assign(n, Complex{});
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc{};
    for (std::size_t j = 0; j < n; ++j) acc += x[j * stride] * tw[(k * j) % n];
    scratch[k] = acc;
  }
  for (std::size_t k = 0; k < n; ++k) x[k * stride] = scratch[k];
}

inline std::vector<Complex> twiddles(std::size_t n, int sign) {
  std::vector<Complex> tw(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    tw[k] = {std::cos(a), std::sin(a)};
  }
  return tw;
}

inline void direct_2d(std::vector<Complex>& a, std::size_t h, std::size_t w, int sign) {
  std::vector<Complex> scratch;
  const auto tw_w = twiddles(w, sign), tw_h = twiddles(h, sign);
  for (std::size_t y = 0; y < h; ++y) dft_line(a.data() + y * w, w, 1, tw_w, scratch);
  for (std::size_t x = 0; x < w; ++x) dft_line(a.data() + x, h, w, tw_h, scratch);
}

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline void fftw_2d(std::vector<Complex>& a, std::size_t h, std::size_t w, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(a.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD,
                            FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

} // namespace detail

/// S(u, v) = sum_{y, x} F(y, x) e^{-i 2 pi (u y / H + v x / W)} by the
/// definition, separably.
inline Spectrum dft2_direct(const Tensor& f) {
  const auto vals = detail::single_plane(f);
  Spectrum s{f.shape().h, f.shape().w, {vals.begin(), vals.end()}, false};
  detail::direct_2d(s.data, s.h, s.w, -1);
  return s;
}

inline Spectrum dft2_fast(const Tensor& f) {
  const auto vals = detail::single_plane(f);
  Spectrum s{f.shape().h, f.shape().w, {vals.begin(), vals.end()}, false};
  detail::fftw_2d(s.data, s.h, s.w, -1);
  return s;
}

/// Direct evaluation when both dims are at most 64, FFTW above.
inline Spectrum dft2(const Tensor& f, bool shift = false);

/// Moves the zero frequency to (H/2, W/2); inverse of itself only for even dims.
inline Spectrum fftshift(const Spectrum& s) {
  Spectrum out{s.h, s.w, std::vector<Complex>(s.data.size()), true};
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) out.at((y + s.h / 2) % s.h, (x + s.w / 2) % s.w) = s.at(y, x);
  return out;
}

inline Spectrum dft2(const Tensor& f, bool shift) {
  const Spectrum s =
      (f.shape().h <= kDirectDftMax && f.shape().w <= kDirectDftMax) ? dft2_direct(f) : dft2_fast(f);
  return shift ? fftshift(s) : s;
}

/// Real part of the inverse transform of an unshifted spectrum.
inline Tensor idft2_real(const Spectrum& s) {
  if (s.shifted) throw ContractError("idft2_real expects an unshifted spectrum");
  std::vector<Complex> a = s.data;
  if (s.h <= kDirectDftMax && s.w <= kDirectDftMax)
    detail::direct_2d(a, s.h, s.w, +1);
  else
    detail::fftw_2d(a, s.h, s.w, +1);
  Tensor out({1, 1, s.h, s.w});
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i].real() * inv;
  return out;
}

/// log(|S|^2 + 1e-8) per bin, laid out as a 1 x 1 x H x W field.
inline Tensor lpsd(const Spectrum& s) {
  if (!s.shifted) throw ContractError("lpsd expects a center-shifted spectrum");
  Tensor out({1, 1, s.h, s.w});
  for (std::size_t i = 0; i < s.data.size(); ++i) out[i] = std::log(std::norm(s.data[i]) + kLpsdEps);
  return out;
}

struct RadialProfile {
  std::vector<std::size_t> radii;
  std::vector<double> values;
  std::vector<std::size_t> counts;

  std::string csv() const {
    io::CsvWriter w({"r", "mean_lpsd", "count"});
    for (std::size_t i = 0; i < radii.size(); ++i)
      w.row({std::to_string(radii[i]), io::fmt(values[i]), std::to_string(counts[i])});
    return w.str();
  }
};

/// Ring means of a center-shifted LPSD field; bin r holds distances from the
/// zero frequency (H/2, W/2) in [r - 0.5, r + 0.5).
inline RadialProfile aas(const Tensor& l) {
  const Shape s = l.shape();
  if (s.b != 1 || s.c != 1 || l.empty()) throw DimensionError("aas expects a single-channel field, got " + s.str());
  const double cy = static_cast<double>(s.h / 2), cx = static_cast<double>(s.w / 2);
  std::vector<double> sum;
  std::vector<std::size_t> cnt;
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
      const auto r = static_cast<std::size_t>(std::floor(d + 0.5));
      if (r >= sum.size()) {
        sum.resize(r + 1, 0.0);
        cnt.resize(r + 1, 0);
      }
      sum[r] += l(0, 0, y, x);
      ++cnt[r];
    }
  RadialProfile p;
  for (std::size_t r = 0; r < sum.size(); ++r) {
    if (cnt[r] == 0) continue;
    p.radii.push_back(r);
    p.values.push_back(sum[r] / static_cast<double>(cnt[r]));
    p.counts.push_back(cnt[r]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Kernels and moments

struct Vec2 {
  double x = 0.0, y = 0.0;
};

struct KernelMoments {
  double m0 = 0.0;
  Vec2 m1;
};

/// M0 = sum w[n], M1 = sum n w[n] with n measured from the kernel center,
/// x along columns, y along rows.
inline KernelMoments kernel_moments(const Tensor& k) {
  const Shape s = k.shape();
  if (s.b != 1 || s.c != 1) throw DimensionError("kernel must be 1 x 1 x k x k");
  const double cy = (static_cast<double>(s.h) - 1) / 2, cx = (static_cast<double>(s.w) - 1) / 2;
  KernelMoments m;
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double v = k(0, 0, y, x);
      m.m0 += v;
      m.m1.x += (static_cast<double>(x) - cx) * v;
      m.m1.y += (static_cast<double>(y) - cy) * v;
    }
  return m;
}

inline Tensor identity_kernel(std::size_t k) {
  if (k % 2 == 0) throw ConfigError("identity_kernel: size must be odd");
  Tensor t({1, 1, k, k});
  t(0, 0, k / 2, k / 2) = 1.0;
  return t;
}

namespace detail {
/// Two-tap linear interpolation weights on offsets -r..r with mean d.
inline std::vector<double> two_tap(double d, std::size_t k) {
  const long r = static_cast<long>(k / 2);
  std::vector<double> w(k, 0.0);
  const double lo = std::floor(d), f = d - lo;
  const long i0 = static_cast<long>(lo);
  w[static_cast<std::size_t>(i0 + r)] += 1.0 - f;
  if (f > 0.0) w[static_cast<std::size_t>(i0 + 1 + r)] += f;
  return w;
}
} // namespace detail

inline constexpr double kMomentTol = 1e-12;

/// Separable two-tap kernel with M0 = 1 and M1 = delta.
inline Tensor moment_match_kernel(Vec2 delta, std::size_t k) {
  if (k % 2 == 0 || k == 0) throw ConfigError("moment_match_kernel: size must be odd");
  const double lim = (static_cast<double>(k) - 1) / 2;
  if (!(std::abs(delta.x) <= lim && std::abs(delta.y) <= lim))
    throw RangeError("moment_match_kernel: delta (" + io::fmt(delta.x) + ", " + io::fmt(delta.y) +
                     ") outside +-" + io::fmt(lim));
  const auto wx = detail::two_tap(delta.x, k), wy = detail::two_tap(delta.y, k);
  Tensor t({1, 1, k, k});
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t x = 0; x < k; ++x) t(0, 0, y, x) = wy[y] * wx[x];
  const KernelMoments m = kernel_moments(t);
  if (std::abs(m.m0 - 1.0) > kMomentTol || std::abs(m.m1.x - delta.x) > kMomentTol ||
      std::abs(m.m1.y - delta.y) > kMomentTol)
    throw InvariantError("moment_match_kernel: moments missed the target");
  return t;
}

/// w^(omega) = sum_n w[n] e^{-i <omega, n>}, n centered.
inline Complex kernel_response(const Tensor& k, Vec2 omega) {
  const Shape s = k.shape();
  const double cy = (static_cast<double>(s.h) - 1) / 2, cx = (static_cast<double>(s.w) - 1) / 2;
  Complex acc{};
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double ph = omega.x * (static_cast<double>(x) - cx) + omega.y * (static_cast<double>(y) - cy);
      acc += k(0, 0, y, x) * Complex(std::cos(ph), -std::sin(ph));
    }
  return acc;
}

/// |w^(omega) - e^{-i <omega, delta>}|.
inline double alignment_error(const Tensor& k, Vec2 delta, Vec2 omega) {
  const double ph = omega.x * delta.x + omega.y * delta.y;
  return std::abs(kernel_response(k, omega) - Complex(std::cos(ph), -std::sin(ph)));
}

/// 25 magnitudes log-spaced over [1e-3, 1e-1].
inline std::vector<double> default_omega_grid(std::size_t n = 25) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::pow(10.0, -3.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> omega, error;
};

/// Least-squares slope of log E(omega) against log |omega| with omega along
/// delta / |delta| (along x when delta = 0).
inline SlopeFit spectral_error_slope(const Tensor& k, Vec2 delta, const std::vector<double>& omega_grid) {
  if (omega_grid.size() < 2) throw ConfigError("spectral_error_slope: need at least two frequencies");
  for (double w : omega_grid)
    if (!(w >= 1e-3 - 1e-15 && w <= 1e-1 + 1e-15))
      throw RangeError("spectral_error_slope: |omega| = " + io::fmt(w) + " outside [1e-3, 1e-1]");
  const double norm = std::hypot(delta.x, delta.y);
  const Vec2 dir = norm > 0 ? Vec2{delta.x / norm, delta.y / norm} : Vec2{1.0, 0.0};
  SlopeFit fit;
  for (double w : omega_grid) {
    fit.omega.push_back(w);
    fit.error.push_back(alignment_error(k, delta, {w * dir.x, w * dir.y}));
  }
  if (std::all_of(fit.error.begin(), fit.error.end(), [](double e) { return e == 0.0; }))
    throw UndefinedSlope("spectral_error_slope: error is identically zero");
  if (std::any_of(fit.error.begin(), fit.error.end(), [](double e) { return e == 0.0; }))
    throw UndefinedSlope("spectral_error_slope: error vanishes at some grid frequency");
  const double n = static_cast<double>(omega_grid.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < fit.omega.size(); ++i) {
    const double x = std::log(fit.omega[i]), y = std::log(fit.error[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

// ---------------------------------------------------------------------------
// Fusion-spectrum experiment

/// out(p) = sum_n w[n] f(p + n), indices wrapped.
inline Tensor circular_correlate(const Tensor& f, const Tensor& k) {
  const Shape s = f.shape(), ks = k.shape();
  const long ry = static_cast<long>(ks.h / 2), rx = static_cast<long>(ks.w / 2);
  const long h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  Tensor out(s);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
          double acc = 0.0;
          for (long j = 0; j < static_cast<long>(ks.h); ++j)
            for (long i = 0; i < static_cast<long>(ks.w); ++i) {
              const double kv = k(0, 0, static_cast<std::size_t>(j), static_cast<std::size_t>(i));
              if (kv == 0.0) continue;
              const long yy = ((y + j - ry) % h + h) % h, xx = ((x + i - rx) % w + w) % w;
              acc += kv * f(b, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
          out(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
        }
  return out;
}

namespace detail {
/// Per-axis phase factor of a shift by d at frequency index k of n; the
/// Nyquist bin of an even axis gets the real average cos(pi d) of its two
/// aliases so the result stays real.
inline Complex shift_factor(std::size_t k, std::size_t n, double d) {
  if (n % 2 == 0 && k == n / 2) return std::cos(std::numbers::pi * d);
  const double kk = k < n / 2 + 1 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
  const double ph = -2.0 * std::numbers::pi * kk * d / static_cast<double>(n);
  return {std::cos(ph), std::sin(ph)};
}
} // namespace detail

/// g(p) = f(p - delta) by a Fourier phase ramp (band-limited circular shift).
inline Tensor fourier_shift(const Tensor& f, Vec2 delta) {
  Spectrum s = dft2(f);
  for (std::size_t y = 0; y < s.h; ++y) {
    const Complex fy = detail::shift_factor(y, s.h, delta.y);
    for (std::size_t x = 0; x < s.w; ++x) s.at(y, x) *= fy * detail::shift_factor(x, s.w, delta.x);
  }
  return idft2_real(s);
}

inline double field_variance(const Tensor& f) {
  const double n = static_cast<double>(f.size());
  const double m = std::accumulate(f.data().begin(), f.data().end(), 0.0) / n;
  double v = 0.0;
  for (double x : f.data()) v += (x - m) * (x - m);
  return v / n;
}

enum class Texture { WhiteNoise, Constant };

struct FusionConfig {
  std::size_t size = 64;
  std::size_t trials = 100;
  std::size_t kernel = 5;
  double min_shift = 0.5, max_shift = 2.0;
  Texture texture = Texture::WhiteNoise;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double required_rate = 0.9;
};

struct FusionTrial {
  Vec2 delta;
  bool degenerate = false;  // zero-variance texture, excluded from the tally
  bool matched_wins = false;
  double upper_gain = 0.0;  // mean over upper-half radii of AAS_matched - AAS_identity
  RadialProfile identity, matched;
};

/// Radii in [R/2, R] with R = min(H, W) / 2.
inline std::pair<std::size_t, std::size_t> upper_half_radii(std::size_t h, std::size_t w) {
  const std::size_t r = std::min(h, w) / 2;
  return {r / 2, r};
}

inline FusionTrial fusion_trial(const FusionConfig& cfg, std::size_t i) {
  std::mt19937_64 rng(derive_seed(cfg.seed, i, 31));
  std::uniform_real_distribution<double> mag(cfg.min_shift, cfg.max_shift);
  std::bernoulli_distribution sign(0.5);
  FusionTrial t;
  t.delta.x = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  t.delta.y = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  Tensor f({1, 1, cfg.size, cfg.size});
  if (cfg.texture == Texture::WhiteNoise) {
    std::normal_distribution<double> nd;
    for (double& v : f.data()) v = nd(rng);
  } else {
    f.fill(0.5);
  }
  if (field_variance(f) == 0.0) {
    t.degenerate = true;
    return t;
  }
  const Tensor b = fourier_shift(f, t.delta);
  const Tensor id = f + b;
  const Tensor matched = f + circular_correlate(b, moment_match_kernel(t.delta, cfg.kernel));
  t.identity = aas(lpsd(dft2(id, true)));
  t.matched = aas(lpsd(dft2(matched, true)));
  const auto [lo, hi] = upper_half_radii(cfg.size, cfg.size);
  double gain = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < t.identity.radii.size(); ++k) {
    const std::size_t r = t.identity.radii[k];
    if (r < lo || r > hi) continue;
    gain += t.matched.values[k] - t.identity.values[k];
    ++n;
  }
  t.upper_gain = gain / static_cast<double>(n);
  t.matched_wins = t.upper_gain > 0.0;
  return t;
}

struct FusionResult {
  std::vector<FusionTrial> trials;
  std::size_t wins = 0, counted = 0, degenerate = 0;
  RadialProfile mean_identity, mean_matched;

  double win_rate() const { return counted ? static_cast<double>(wins) / static_cast<double>(counted) : 0.0; }
};

inline FusionResult run_fusion_experiment(const FusionConfig& cfg) {
  if (cfg.trials == 0) throw ConfigError("fusion experiment: trials must be positive");
  if (cfg.size < 8) throw ConfigError("fusion experiment: size must be at least 8");
  FusionResult res;
  res.trials.resize(cfg.trials);
  parallel_for(cfg.trials, cfg.jobs, [&](std::size_t i) { res.trials[i] = fusion_trial(cfg, i); });
  for (const auto& t : res.trials) {
    if (t.degenerate) {
      ++res.degenerate;
      continue;
    }
    ++res.counted;
    res.wins += t.matched_wins ? 1 : 0;
    if (res.mean_identity.radii.empty()) {
      res.mean_identity = t.identity;
      res.mean_matched = t.matched;
      std::fill(res.mean_identity.values.begin(), res.mean_identity.values.end(), 0.0);
      std::fill(res.mean_matched.values.begin(), res.mean_matched.values.end(), 0.0);
    }
    for (std::size_t k = 0; k < t.identity.values.size(); ++k) {
      res.mean_identity.values[k] += t.identity.values[k];
      res.mean_matched.values[k] += t.matched.values[k];
    }
  }
  for (std::size_t k = 0; k < res.mean_identity.values.size(); ++k) {
    res.mean_identity.values[k] /= static_cast<double>(res.counted);
    res.mean_matched.values[k] /= static_cast<double>(res.counted);
  }
  return res;
}

inline std::string fusion_aas_csv(const FusionResult& res) {
  io::CsvWriter w({"r", "mean_lpsd_identity", "mean_lpsd_matched", "count"});
  for (std::size_t k = 0; k < res.mean_identity.radii.size(); ++k)
    w.row({std::to_string(res.mean_identity.radii[k]), io::fmt(res.mean_identity.values[k]),
           io::fmt(res.mean_matched.values[k]), std::to_string(res.mean_identity.counts[k])});
  return w.str();
}

inline std::string fusion_trials_csv(const FusionResult& res) {
  io::CsvWriter w({"trial", "delta_x", "delta_y", "degenerate", "upper_gain", "matched_wins"});
  for (std::size_t i = 0; i < res.trials.size(); ++i) {
    const auto& t = res.trials[i];
    w.row({std::to_string(i), io::fmt(t.delta.x), io::fmt(t.delta.y), t.degenerate ? "1" : "0",
           io::fmt(t.upper_gain), t.matched_wins ? "1" : "0"});
  }
  return w.str();
}

} // namespace lagr
