#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lagr/analysis.hpp"
#include "test_util.hpp"

using namespace lagr;
using lagr::testing::random_tensor;

namespace {

double max_spectrum_diff(const Spectrum& a, const Spectrum& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

/// O(H^2 W^2) oracle straight from the definition.
Spectrum naive_dft(const Tensor& f) {
  const std::size_t h = f.shape().h, w = f.shape().w;
  Spectrum s{h, w, std::vector<Complex>(h * w), false};
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      Complex acc{};
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double a = -2.0 * std::numbers::pi * (static_cast<double>(u * y) / h + static_cast<double>(v * x) / w);
          acc += f(0, 0, y, x) * Complex(std::cos(a), std::sin(a));
        }
      s.at(u, v) = acc;
    }
  return s;
}

}  // namespace

TEST(Dft2, Examples) {
  Tensor c({1, 1, 4, 4});
  c.fill(2.5);
  const Spectrum sc = dft2(c);
  EXPECT_NEAR(sc.at(0, 0).real(), 40.0, 1e-12);
  for (std::size_t i = 1; i < 16; ++i) EXPECT_LT(std::abs(sc.data[i]), 1e-12);

  Tensor imp({1, 1, 5, 6});
  imp(0, 0, 0, 0) = 1.0;
  for (const Complex& z : dft2(imp).data) EXPECT_NEAR(std::abs(z - Complex(1.0, 0.0)), 0.0, 1e-14);

  const std::size_t h = 8, w = 16;
  Tensor cosx({1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) cosx(0, 0, y, x) = std::cos(2.0 * std::numbers::pi * x / w);
  const Spectrum s = dft2(cosx);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      const double expect = (u == 0 && (v == 1 || v == w - 1)) ? h * w / 2.0 : 0.0;
      EXPECT_NEAR(std::abs(s.at(u, v)), expect, 1e-10);
    }
}

TEST(Dft2, MatchesDefinition) {
  const Tensor f = random_tensor({1, 1, 7, 10}, 1);
  EXPECT_LT(max_spectrum_diff(dft2_direct(f), naive_dft(f)), 1e-10);
}

TEST(Dft2, DirectAndFastAgree) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {33, 20}, {64, 64}, {96, 72}}) {
    const Tensor f = random_tensor({1, 1, h, w}, h + w);
    EXPECT_LT(max_spectrum_diff(dft2_direct(f), dft2_fast(f)), 1e-9) << h << "x" << w;
  }
}

TEST(Dft2, Parseval) {
  for (auto n : {12u, 64u, 80u}) {
    const Tensor f = random_tensor({1, 1, n, n}, n, -3, 3);
    const Spectrum s = dft2(f);
    double sp = 0.0, fr = 0.0;
    for (double v : f.data()) sp += v * v;
    for (const Complex& z : s.data) fr += std::norm(z);
    EXPECT_NEAR(sp, fr / (n * n), 1e-6 * sp);
  }
}

TEST(Dft2, Linearity) {
  const Tensor a = random_tensor({1, 1, 9, 11}, 2), b = random_tensor({1, 1, 9, 11}, 3);
  const Spectrum sa = dft2(a), sb = dft2(b), sab = dft2(a * 2.0 + b * -0.5);
  double d = 0.0;
  for (std::size_t i = 0; i < sa.data.size(); ++i) d = std::max(d, std::abs(2.0 * sa.data[i] - 0.5 * sb.data[i] - sab.data[i]));
  EXPECT_LT(d, 1e-9);
}

TEST(Dft2, InverseRoundTrip) {
  for (auto n : {10u, 70u}) {
    const Tensor f = random_tensor({1, 1, n, n + 2}, 4);
    EXPECT_LT(max_abs_diff(idft2_real(dft2(f)), f), 1e-12);
  }
}

TEST(Dft2, ShiftPlacesDcAtCenter) {
  Tensor c({1, 1, 6, 8});
  c.fill(1.0);
  const Spectrum s = dft2(c, true);
  EXPECT_TRUE(s.shifted);
  EXPECT_NEAR(s.at(3, 4).real(), 48.0, 1e-12);
  EXPECT_THROW(lpsd(dft2(c)), ContractError);
}

TEST(Lpsd, Examples) {
  Spectrum s{1, 3, {Complex(0, 0), Complex(0, 1), Complex(3, 4)}, true};
  const Tensor l = lpsd(s);
  EXPECT_DOUBLE_EQ(l[0], std::log(1e-8));
  EXPECT_NEAR(l[1], 0.0, 1e-7);
  EXPECT_NEAR(l[2], std::log(25.0 + 1e-8), 1e-15);
  Spectrum big = s;
  for (auto& z : big.data) z *= 10.0;
  EXPECT_NEAR(lpsd(big)[2] - l[2], 2.0 * std::log(10.0), 1e-9);
}

TEST(Aas, ConstantFieldAndCounts) {
  Tensor l({1, 1, 16, 12});
  l.fill(-3.25);
  const RadialProfile p = aas(l);
  std::size_t total = 0;
  for (std::size_t k = 0; k < p.radii.size(); ++k) {
    EXPECT_DOUBLE_EQ(p.values[k], -3.25);
    total += p.counts[k];
  }
  EXPECT_EQ(total, 16u * 12u);
  EXPECT_EQ(p.radii.front(), 0u);
  EXPECT_EQ(p.counts.front(), 1u);
  EXPECT_EQ(p.counts[1], 8u);
  EXPECT_EQ(p.csv().substr(0, 17), "r,mean_lpsd,count");
}

TEST(Aas, WhiteNoiseIsFlat) {
  const std::size_t n = 32, trials = 200;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  std::vector<double> acc;
  for (std::size_t t = 0; t < trials; ++t) {
    Tensor f({1, 1, n, n});
    for (double& v : f.data()) v = nd(rng);
    const RadialProfile p = aas(lpsd(dft2(f, true)));
    acc.resize(p.values.size(), 0.0);
    for (std::size_t k = 0; k < p.values.size(); ++k) acc[k] += p.values[k] / trials;
  }
  double mean = 0.0;
  for (std::size_t r = 1; r < n / 2; ++r) mean += acc[r] / (n / 2 - 1);
  for (std::size_t r = 1; r < n / 2; ++r) EXPECT_NEAR(acc[r], mean, 0.1) << "r=" << r;
}

TEST(Aas, SinusoidPeaksAtItsRing) {
  const std::size_t n = 32, r0 = 5;
  Tensor f({1, 1, n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      f(0, 0, y, x) = std::cos(2.0 * std::numbers::pi * r0 * x / n) + std::cos(2.0 * std::numbers::pi * r0 * y / n);
  const RadialProfile p = aas(lpsd(dft2(f, true)));
  EXPECT_GT(p.values[r0] - p.values[r0 - 1], 3.0);
  EXPECT_GT(p.values[r0] - p.values[r0 + 1], 3.0);
}

TEST(MomentMatch, Examples) {
  EXPECT_EQ(max_abs_diff(moment_match_kernel({0, 0}, 3), identity_kernel(3)), 0.0);
  const Tensor k = moment_match_kernel({0.5, 0}, 3);
  EXPECT_DOUBLE_EQ(k(0, 0, 1, 1), 0.5);
  EXPECT_DOUBLE_EQ(k(0, 0, 1, 2), 0.5);
  EXPECT_DOUBLE_EQ(k(0, 0, 1, 0) + k(0, 0, 0, 1) + k(0, 0, 2, 1), 0.0);
  const KernelMoments m = kernel_moments(k);
  EXPECT_DOUBLE_EQ(m.m0, 1.0);
  EXPECT_DOUBLE_EQ(m.m1.x, 0.5);
  EXPECT_DOUBLE_EQ(m.m1.y, 0.0);
  EXPECT_THROW(moment_match_kernel({1.2, 0}, 3), RangeError);
  EXPECT_THROW(moment_match_kernel({0, -2.5}, 5), RangeError);
  EXPECT_NO_THROW(moment_match_kernel({-1.0, 1.0}, 3));
  EXPECT_THROW(moment_match_kernel({0, 0}, 4), ConfigError);
}

TEST(MomentMatch, RandomDeltasHitMoments) {
  std::mt19937_64 rng(5);
  for (std::size_t k : {3u, 5u, 7u}) {
    const double lim = (static_cast<double>(k) - 1) / 2;
    std::uniform_real_distribution<double> u(-lim, lim);
    for (int t = 0; t < 100; ++t) {
      const Vec2 d{u(rng), u(rng)};
      const KernelMoments m = kernel_moments(moment_match_kernel(d, k));
      EXPECT_NEAR(m.m0, 1.0, 1e-12);
      EXPECT_NEAR(m.m1.x, d.x, 1e-12);
      EXPECT_NEAR(m.m1.y, d.y, 1e-12);
    }
  }
}

TEST(SpectralSlope, Examples) {
  const Vec2 d{0.4, 0.0};
  const auto grid = default_omega_grid();
  EXPECT_NEAR(spectral_error_slope(identity_kernel(3), d, grid).slope, 1.0, 0.1);
  EXPECT_NEAR(spectral_error_slope(moment_match_kernel(d, 3), d, grid).slope, 2.0, 0.2);
  EXPECT_THROW(spectral_error_slope(identity_kernel(3), {0, 0}, grid), UndefinedSlope);
  EXPECT_THROW(spectral_error_slope(identity_kernel(3), d, {1e-3, 0.5}), RangeError);
}

TEST(SpectralSlope, MatchedBeatsIdentityOnGrid) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    const Vec2 d{u(rng), u(rng)};
    if (std::hypot(d.x, d.y) < 1e-3) continue;
    const Tensor mk = moment_match_kernel(d, 5), ik = identity_kernel(5);
    const double n = std::hypot(d.x, d.y);
    for (double w : default_omega_grid(40)) {
      const Vec2 om{w * d.x / n, w * d.y / n};
      EXPECT_LT(alignment_error(mk, d, om), alignment_error(ik, d, om));
    }
    for (double w : {0.01, 0.05, 0.1}) {
      const Vec2 om{w * 0.6, -w * 0.8};
      EXPECT_LT(alignment_error(mk, d, om), alignment_error(ik, d, om));
    }
  }
}

TEST(FourierShift, IntegerShiftIsCircularRoll) {
  const Tensor f = random_tensor({1, 1, 8, 10}, 7);
  const Tensor g = fourier_shift(f, {3.0, -2.0});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 10; ++x) EXPECT_NEAR(g(0, 0, y, x), f(0, 0, (y + 2) % 8, (x + 7) % 10), 1e-12);
}

TEST(CircularCorrelate, MatchesHandSum) {
  const Tensor f = random_tensor({1, 1, 5, 6}, 8), k = random_tensor({1, 1, 3, 3}, 9);
  const Tensor out = circular_correlate(f, k);
  double expect = 0.0;
  for (int j = -1; j <= 1; ++j)
    for (int i = -1; i <= 1; ++i) expect += k(0, 0, j + 1, i + 1) * f(0, 0, (0 + j + 5) % 5, (0 + i + 6) % 6);
  EXPECT_NEAR(out(0, 0, 0, 0), expect, 1e-14);
}

TEST(Fusion, MatchedRetainsHighFrequencies) {
  FusionConfig cfg;
  cfg.seed = 3;
  const FusionResult r = run_fusion_experiment(cfg);
  EXPECT_EQ(r.counted, 100u);
  EXPECT_GE(r.wins, 90u);
  const auto [lo, hi] = upper_half_radii(64, 64);
  for (std::size_t k = 0; k < r.mean_identity.radii.size(); ++k) {
    if (r.mean_identity.radii[k] >= lo && r.mean_identity.radii[k] <= hi) {
      EXPECT_GT(r.mean_matched.values[k], r.mean_identity.values[k]);
    }
  }
}

TEST(Fusion, DeterministicAndDegenerateGuard) {
  FusionConfig cfg;
  cfg.trials = 3;
  cfg.seed = 1;
  const auto a = run_fusion_experiment(cfg);
  cfg.jobs = 3;
  const auto b = run_fusion_experiment(cfg);
  EXPECT_EQ(fusion_aas_csv(a), fusion_aas_csv(b));
  EXPECT_EQ(fusion_trials_csv(a), fusion_trials_csv(b));

  cfg.texture = Texture::Constant;
  const auto c = run_fusion_experiment(cfg);
  EXPECT_EQ(c.degenerate, 3u);
  EXPECT_EQ(c.counted, 0u);
  EXPECT_EQ(c.win_rate(), 0.0);
  EXPECT_THROW(run_fusion_experiment(FusionConfig{.trials = 0}), ConfigError);
}
