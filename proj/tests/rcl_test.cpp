#include <gtest/gtest.h>

#include <filesystem>

#include "lagr/rcl.hpp"
#include "test_util.hpp"

using namespace lagr;
using lagr::testing::random_tensor;

namespace {

ScalePyramid random_pyramid(std::size_t levels, std::size_t c, std::size_t h0, std::uint64_t seed) {
  ScalePyramid p;
  for (std::size_t d = 0; d < levels; ++d) p.levels.push_back(random_tensor({2, c, h0 >> d, h0 >> d}, seed + d));
  return p;
}

}  // namespace

TEST(BuildMasks, Examples) {
  const auto m = build_masks(8, 3);
  ASSERT_EQ(m.size(), 4u);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(m[l][c], (c / 2 == l) ? 1.0 : 0.0);
  const auto r = build_masks(7, 2);
  EXPECT_EQ(r[0], (std::vector<double>{1, 1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(r[1], (std::vector<double>{0, 0, 1, 1, 0, 0, 0}));
  EXPECT_EQ(r[2], (std::vector<double>{0, 0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(build_masks(5, 0), (std::vector<std::vector<double>>{{1, 1, 1, 1, 1}}));
  EXPECT_THROW(build_masks(2, 2), ConfigError);
}

TEST(BuildMasks, DisjointAndCovering) {
  for (std::size_t c = 1; c <= 20; ++c)
    for (std::size_t d = 0; d + 1 <= c && d <= 6; ++d) {
      const auto m = build_masks(c, d);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double total = 0;
        for (const auto& mk : m) total += mk[ch];
        EXPECT_EQ(total, 1.0);
      }
    }
}

TEST(Grading, MaskedKernelsAreOrthogonal) {
  const Tensor w = random_tensor({9, 3, 3, 3}, 1);
  const auto masks = build_masks(9, 3);
  Tensor total(w.shape());
  for (std::size_t l = 0; l < masks.size(); ++l) {
    const Tensor wl = masked_kernel(w, masks[l]);
    total += wl;
    for (std::size_t l2 = 0; l2 < masks.size(); ++l2) {
      if (l2 == l) continue;
      const Tensor wl2 = masked_kernel(w, masks[l2]);
      for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(wl[i] * wl2[i], 0.0);
    }
  }
  EXPECT_EQ(max_abs_diff(total, w), 0.0);
}

TEST(Grading, DegreeProvenance) {
  const ScalePyramid pyr = random_pyramid(3, 4, 8, 2);
  GradedKernelBank bank = GradedKernelBank::init(6, 4, 3, 2, {4, 4, 4}, 3);
  for (std::size_t l = 0; l <= 2; ++l) {
    const Tensor src = project_to_degree(pyr, bank, 0);
    const Tensor full = conv2d(src, masked_kernel(bank.w, bank.masks[l]));
    const Tensor zeroed_outside = masked_kernel(bank.w, bank.masks[l]);
    const Tensor again = conv2d(src, masked_kernel(zeroed_outside, bank.masks[l]));
    EXPECT_LT(max_abs_diff(full, again), 1e-12);
    // Block l of the unmasked convolution equals block l of the summand.
    const Tensor unmasked = conv2d(src, bank.w);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 6; ++c)
        if (bank.masks[l][c] > 0) {
          for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(unmasked.plane(b, c)[i], full.plane(b, c)[i], 1e-12);
        }
  }
}

TEST(Grading, CauchySumMembership) {
  for (std::size_t dmax = 0; dmax <= 3; ++dmax) {
    std::vector<std::size_t> chans(dmax + 1, 3);
    GradedKernelBank bank = GradedKernelBank::init(2 * (dmax + 1), 3, 3, dmax, chans, 10 + dmax);
    const ScalePyramid pyr = random_pyramid(dmax + 1, 3, 16, 20);
    for (std::size_t d = 0; d <= dmax; ++d) {
      const Tensor base = rcl_pre_activation(pyr, bank, d);
      for (std::size_t dp = 0; dp <= dmax; ++dp) {
        ScalePyramid probe = pyr;
        probe.levels[dp] += random_tensor(probe.levels[dp].shape(), 99, 0.5, 1.0);
        const double change = max_abs_diff(rcl_pre_activation(probe, bank, d), base);
        if (dp <= d) {
          EXPECT_GT(change, 1e-6) << "d=" << d << " d'=" << dp;
        } else {
          EXPECT_EQ(change, 0.0) << "d=" << d << " d'=" << dp;
        }
      }
    }
  }
}

TEST(Grading, PreActivationIsLinear) {
  GradedKernelBank bank = GradedKernelBank::init(6, 3, 3, 2, {3, 3, 3}, 4);
  const ScalePyramid a = random_pyramid(3, 3, 8, 30), b = random_pyramid(3, 3, 8, 40);
  ScalePyramid mix;
  for (std::size_t d = 0; d < 3; ++d) mix.levels.push_back(a.levels[d] * 1.5 + b.levels[d] * -0.25);
  for (std::size_t d = 0; d < 3; ++d) {
    const Tensor lhs = rcl_pre_activation(mix, bank, d);
    const Tensor rhs = rcl_pre_activation(a, bank, d) * 1.5 + rcl_pre_activation(b, bank, d) * -0.25;
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(RclDegree, DegreeZeroReducesToConvBnRelu) {
  GradedKernelBank bank = GradedKernelBank::init(4, 2, 3, 0, {2}, 5);
  const ScalePyramid pyr = random_pyramid(1, 2, 6, 50);
  NormStats st = NormStats::identity(4);
  Tensor expect = batch_norm(conv2d(pyr.levels[0], bank.w), st, BnMode::train);
  for (double& v : expect.data()) v = std::max(v, 0.0);
  EXPECT_LT(max_abs_diff(rcl_degree(pyr, bank, 0, BnMode::train), expect), 1e-12);
}

TEST(RclDegree, ZeroPyramidEval) {
  GradedKernelBank bank = GradedKernelBank::init(4, 2, 3, 1, {2, 2}, 6);
  ScalePyramid pyr;
  pyr.levels = {Tensor({1, 2, 4, 4}), Tensor({1, 2, 2, 2})};
  for (std::size_t d = 0; d < 2; ++d) EXPECT_EQ(l2_norm(rcl_degree(pyr, bank, d, BnMode::eval)), 0.0);
  EXPECT_THROW(rcl_degree(pyr, bank, 2, BnMode::eval), RangeError);
}

TEST(RclDegree, TwoTermHandOracle) {
  GradedKernelBank bank = GradedKernelBank::init(2, 2, 1, 1, {2, 2}, 7);
  bank.w = Tensor({2, 2, 1, 1}, {0.5, -1.25, 2.0, 0.75});
  ScalePyramid pyr;
  pyr.levels = {Tensor({1, 2, 2, 2}, {1, 2, 3, 4, -1, 0.5, 2, 3}), Tensor({1, 2, 1, 1}, {0.3, -0.7})};
  const Tensor pre = rcl_pre_activation(pyr, bank, 1);
  ASSERT_EQ(pre.shape(), (Shape{1, 2, 1, 1}));
  // l = 0: mask {ch0} on level 1; l = 1: mask {ch1} on level 0, resized 2x2 -> 1x1 (corner sample).
  EXPECT_NEAR(pre[0], 0.5 * 0.3 + -1.25 * -0.7, 1e-12);
  EXPECT_NEAR(pre[1], 2.0 * 1 + 0.75 * -1, 1e-12);
}

TEST(ProjectToDegree, Examples) {
  GradedKernelBank bank = GradedKernelBank::init(4, 3, 3, 1, {3, 2}, 8);
  const ScalePyramid pyr{{random_tensor({1, 3, 4, 4}, 1), random_tensor({1, 2, 2, 2}, 2)}};
  EXPECT_EQ(max_abs_diff(project_to_degree(pyr, bank, 0), pyr.levels[0]), 0.0);
  bank.adapters[1] = Tensor({3, 2, 1, 1}, {1, 2, -1, 0.5, 0, 3});
  const Tensor p = project_to_degree(pyr, bank, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    const double a = pyr.levels[1].plane(0, 0)[i], b = pyr.levels[1].plane(0, 1)[i];
    EXPECT_NEAR(p.plane(0, 0)[i], 1 * a + 2 * b, 1e-15);
    EXPECT_NEAR(p.plane(0, 1)[i], -1 * a + 0.5 * b, 1e-15);
    EXPECT_NEAR(p.plane(0, 2)[i], 0 * a + 3 * b, 1e-15);
  }
  const ScalePyramid zero{{Tensor({1, 3, 4, 4}), Tensor({1, 2, 2, 2})}};
  EXPECT_EQ(l2_norm(project_to_degree(zero, bank, 1)), 0.0);
  EXPECT_THROW(project_to_degree(pyr, bank, 2), RangeError);
}

TEST(RclFuse, Examples) {
  GradedKernelBank bank = GradedKernelBank::init(2, 2, 1, 1, {2, 2}, 9);
  const std::vector<Tensor> outs{Tensor({1, 2, 4, 4}, 1.0), Tensor({1, 2, 2, 2}, 3.0)};
  bank.fuse = Tensor({1, 2, 1, 1}, {0.5, 0.5});
  const Tensor fused = rcl_fuse(outs, bank, 8, 8);
  for (double v : fused.data()) EXPECT_DOUBLE_EQ(v, 2.0);
  bank.fuse = Tensor({1, 2, 1, 1}, {0, 0});
  EXPECT_EQ(l2_norm(rcl_fuse(outs, bank, 8, 8)), 0.0);
  const std::vector<Tensor> r{random_tensor({1, 2, 4, 4}, 3), random_tensor({1, 2, 2, 2}, 4)};
  bank.fuse = Tensor({1, 2, 1, 1}, {0, 1});
  EXPECT_EQ(max_abs_diff(rcl_fuse(r, bank, 8, 8), resize_bilinear(r[1], 8, 8)), 0.0);
  EXPECT_THROW(rcl_fuse({r[0]}, bank, 8, 8), RangeError);
}

TEST(RclDiff, MatchesPlainPath) {
  GradedKernelBank bank = GradedKernelBank::init(6, 3, 3, 2, {3, 4, 5}, 10);
  ScalePyramid pyr{{random_tensor({2, 3, 8, 8}, 1), random_tensor({2, 4, 4, 4}, 2), random_tensor({2, 5, 2, 2}, 3)}};
  GradedKernelBank copy = bank;
  diff::Tape t;
  const RclVars v = RclVars::bind(t, copy);
  std::vector<diff::Var> levels;
  for (const Tensor& l : pyr.levels) levels.push_back(t.constant(l));
  std::vector<diff::Var> outs;
  std::vector<Tensor> plain;
  for (std::size_t d = 0; d <= 2; ++d) {
    outs.push_back(rcl_degree(levels, v, copy, d, BnMode::train));
    plain.push_back(rcl_degree(pyr, bank, d, BnMode::train));
    EXPECT_LT(max_abs_diff(outs.back().value(), plain.back()), 1e-12);
  }
  EXPECT_LT(max_abs_diff(rcl_fuse(outs, v, 8, 8).value(), rcl_fuse(plain, bank, 8, 8)), 1e-12);
}

TEST(BankIo, RoundTrip) {
  GradedKernelBank bank = GradedKernelBank::init(7, 3, 3, 2, {3, 3, 3}, 11);
  bank.fuse = Tensor({1, 3, 1, 1}, {0.1, 0.2, 0.7});
  const auto stem = std::filesystem::temp_directory_path() / "lagr_bank_test";
  save_bank(stem, bank);
  const GradedKernelBank back = load_bank(stem);
  EXPECT_EQ(back.w.shape(), bank.w.shape());
  EXPECT_EQ(max_abs_diff(back.w, bank.w), 0.0);
  EXPECT_EQ(back.masks, bank.masks);
  EXPECT_EQ(max_abs_diff(back.fuse, bank.fuse), 0.0);
  std::filesystem::remove(stem.string() + ".lagt");
  std::filesystem::remove(stem.string() + ".txt");
}
