#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lagr/diff/gradcheck.hpp"
#include "lagr/losses.hpp"
#include "lagr/synth.hpp"
#include "test_util.hpp"

using namespace lagr;
using lagr::testing::random_tensor;
using lagr::testing::smooth_field;

namespace {

Tensor constant(Shape s, double c) {
  Tensor t(s);
  t.fill(c);
  return t;
}

SceneSample identity_scene(const Tensor& image) {
  const Shape s = image.shape();
  SceneSample sc;
  sc.reference = image;
  sc.sources.push_back({image, ProjectiveTransform::identity(), 0.0, 0.0});
  sc.mask = constant({1, 1, s.h, s.w}, 1.0);
  return sc;
}

double value(const diff::Var& v) { return v.value()[0]; }

}  // namespace

TEST(LossWeights, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.lambda_pho, 1.0);
  EXPECT_EQ(w.lambda_grp, 0.5);
  EXPECT_EQ(w.lambda_sheaf, 0.1);
  EXPECT_EQ(w.lambda_sm, 0.01);
  LossWeights bad;
  bad.lambda_grp = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.lambda_grp = std::nan("");
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Photometric, Examples) {
  const Tensor img = smooth_field({1, 3, 12, 12});
  diff::Tape t;
  const diff::Var d = t.leaf(constant({1, 1, 12, 12}, 2.0));
  EXPECT_EQ(value(diff::photometric_loss(identity_scene(img), d)), 0.0);

  const diff::Var ref = t.constant(img);
  const diff::Var shifted = t.constant(img + constant(img.shape(), -0.3));
  const Tensor m = constant({1, 1, 12, 12}, 1.0);
  EXPECT_NEAR(value(diff::photometric_loss(ref, {shifted}, {m})), 0.3, 1e-14);

  const diff::Var other = t.constant(img + constant(img.shape(), 0.7));
  EXPECT_NEAR(value(diff::photometric_loss(ref, {shifted, other}, {m, m})), 0.5, 1e-14);

  EXPECT_THROW(diff::photometric_loss(ref, {shifted}, {Tensor({1, 1, 12, 12})}), EmptyOverlap);
  EXPECT_THROW(diff::photometric_loss(ref, {}, {}), ConfigError);
}

TEST(Photometric, TranslationParallaxMatchesShiftedSource) {
  // Source = reference shifted by 3 px in x; depth 2 with t = (6, 0) reproduces it.
  const std::size_t n = 16;
  Tensor ref = smooth_field({1, 2, n, n}), src({1, 2, n, n});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 3; x < n; ++x) src(0, c, y, x) = ref(0, c, y, x - 3);
  SceneSample sc = identity_scene(ref);
  sc.sources[0] = {src, ProjectiveTransform::identity(), 6.0, 0.0};
  diff::Tape t;
  EXPECT_NEAR(value(diff::photometric_loss(sc, t.leaf(constant({1, 1, n, n}, 2.0)))), 0.0, 1e-14);
  EXPECT_GT(value(diff::photometric_loss(sc, t.leaf(constant({1, 1, n, n}, 3.0)))), 1e-3);
}

TEST(GroupConsistency, Examples) {
  const Shape s{1, 1, 16, 16};
  const Tensor d = smooth_field(s) + constant(s, 3.0);
  diff::Tape t;
  const diff::Var dv = t.leaf(d);

  const auto tr = ProjectiveTransform::translation(2.0, -1.0);
  const WarpResult moved = warp_field(tr, d);
  EXPECT_LT(value(diff::group_consistency_loss(dv, t.constant(moved.field), tr, moved.valid_mask)), 1e-12);

  const diff::Var plus = t.constant(d + constant(s, 0.25));
  EXPECT_NEAR(value(diff::group_consistency_loss(dv, plus, ProjectiveTransform::identity())), 0.25, 1e-14);

  Mat3 sh = kIdentity3;
  sh[1] = 0.03;
  const auto shear = ProjectiveTransform::canonicalize(sh);
  Tensor smooth = random_smooth_field({1, 1, 32, 32}, 6, 4, 0.05);
  const double peak = std::max(std::abs(*std::min_element(smooth.data().begin(), smooth.data().end())),
                               *std::max_element(smooth.data().begin(), smooth.data().end()));
  for (double& v : smooth.data()) v = 3.0 * (1.0 + 0.15 * v / peak);
  const WarpResult sheared = warp_field(shear, smooth);
  EXPECT_LT(value(diff::group_consistency_loss(t.leaf(smooth), t.constant(sheared.field), shear, sheared.valid_mask)),
            1e-2);
}

TEST(Smoothness, Examples) {
  const Shape s{1, 1, 8, 10};
  diff::Tape t;
  EXPECT_EQ(value(diff::smoothness_loss(t.leaf(constant(s, 4.0)), random_tensor({1, 3, 8, 10}, 1))), 0.0);

  Tensor ramp(s), stripes({1, 3, 8, 10});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 10; ++x) {
      ramp(0, 0, y, x) = 0.4 * static_cast<double>(x);
      for (std::size_t c = 0; c < 3; ++c) stripes(0, c, y, x) = static_cast<double>(x);
    }
  EXPECT_NEAR(value(diff::smoothness_loss(t.leaf(ramp), constant({1, 3, 8, 10}, 0.5))), 0.4, 1e-14);
  EXPECT_NEAR(value(diff::smoothness_loss(t.leaf(ramp), stripes, 1.0)), 0.4 * std::exp(-1.0), 1e-14);
  EXPECT_THROW(diff::smoothness_loss(t.leaf(ramp), Tensor({1, 3, 8, 9})), DimensionError);
}

TEST(Smoothness, ShiftInvariant) {
  const Tensor d = random_tensor({2, 1, 9, 7}, 4, 1, 3), img = random_tensor({2, 3, 9, 7}, 5);
  diff::Tape t;
  EXPECT_NEAR(value(diff::smoothness_loss(t.leaf(d), img)),
              value(diff::smoothness_loss(t.leaf(d + constant(d.shape(), 17.0)), img)), 1e-12);
}

TEST(TotalLoss, Examples) {
  const LossWeights w;
  EXPECT_EQ(total_loss(0, 0, 0, 0, w), 0.0);
  EXPECT_NEAR(total_loss(1, 1, 1, 1, w), 1.61, 1e-15);
  EXPECT_EQ(total_loss(3, -2, 5, 7, LossWeights{0, 0, 0, 0}), 0.0);
  EXPECT_THROW(total_loss(std::nan(""), 0, 0, 0, w), DataError);

  diff::Tape t;
  const diff::LossTerms terms{t.scalar(1), t.scalar(1), t.scalar(1), t.scalar(1)};
  EXPECT_NEAR(value(diff::total_loss(terms, w)), 1.61, 1e-15);
}

TEST(TotalLoss, LinearInEachComponent) {
  const LossWeights w{0.7, 0.2, 1.3, 0.05};
  const double base[4] = {0.3, 1.1, 0.8, 2.0};
  const double lam[4] = {w.lambda_pho, w.lambda_grp, w.lambda_sheaf, w.lambda_sm};
  for (int k = 0; k < 4; ++k) {
    double c[4] = {base[0], base[1], base[2], base[3]};
    const double f0 = total_loss(c[0], c[1], c[2], c[3], w);
    c[k] += 2.5;
    EXPECT_NEAR(total_loss(c[0], c[1], c[2], c[3], w) - f0, 2.5 * lam[k], 1e-12);
  }
}

TEST(MeanRelDepthError, Examples) {
  const Shape s{1, 1, 6, 6};
  const Tensor gt = random_tensor(s, 2, 1, 5), m = constant(s, 1.0);
  EXPECT_EQ(mean_rel_depth_error(gt, gt, m), 0.0);
  EXPECT_NEAR(mean_rel_depth_error(gt * 1.1, gt, m), 0.1, 1e-12);
  EXPECT_NEAR(mean_rel_depth_error(constant(s, 5.0), constant(s, 4.0), m), 0.25, 1e-15);
  Tensor bad = gt;
  bad[7] = 0.0;
  EXPECT_THROW(mean_rel_depth_error(gt, bad, m), DataError);
  Tensor partial = m;
  partial[7] = 0.0;
  EXPECT_NO_THROW(mean_rel_depth_error(gt, bad, partial));
  EXPECT_THROW(mean_rel_depth_error(gt, gt, Tensor(s)), EmptyOverlap);
}

TEST(Losses, NonNegative) {
  for (std::uint64_t k = 0; k < 10; ++k) {
    diff::Tape t;
    const Tensor a = random_tensor({1, 1, 10, 10}, k, 1, 2), b = random_tensor({1, 1, 10, 10}, k + 50, 1, 2);
    EXPECT_GE(value(diff::smoothness_loss(t.leaf(a), random_tensor({1, 3, 10, 10}, k))), 0.0);
    EXPECT_GE(value(diff::group_consistency_loss(t.leaf(a), t.leaf(b), random_perturbation(0.05, k))), 0.0);
    EXPECT_GE(mean_rel_depth_error(a, b, constant({1, 1, 10, 10}, 1.0)), 0.0);
  }
}

TEST(LossGradients, AllFour) {
  const std::size_t n = 12;
  const Tensor img = smooth_field({1, 3, n, n});
  SceneSample sc = identity_scene(img);
  sc.sources[0] = {smooth_field({1, 3, n, n}, 0.4), ProjectiveTransform::translation(0.3, -0.2), 0.8, 0.5};
  const auto pho = diff::check_gradient(
      [&](diff::Tape&, const diff::Var& d) { return diff::photometric_loss(sc, d); },
      random_tensor({1, 1, n, n}, 7, 1.5, 3.0));
  EXPECT_LT(pho.max_rel_err, 1e-4);

  const auto g = random_perturbation(0.05, 3);
  const Tensor other = random_tensor({1, 1, n, n}, 9);
  const auto grp = diff::check_gradient(
      [&](diff::Tape& t, const diff::Var& d) { return diff::group_consistency_loss(d, t.constant(other), g); },
      random_tensor({1, 1, n, n}, 8));
  EXPECT_LT(grp.max_rel_err, 1e-4);
  const auto grp2 = diff::check_gradient(
      [&](diff::Tape& t, const diff::Var& d) { return diff::group_consistency_loss(t.constant(other), d, g); },
      random_tensor({1, 1, n, n}, 10));
  EXPECT_LT(grp2.max_rel_err, 1e-4);

  const auto sm = diff::check_gradient(
      [&](diff::Tape&, const diff::Var& d) { return diff::smoothness_loss(d, img); }, random_tensor({2, 1, n, n}, 11));
  EXPECT_LT(sm.max_rel_err, 1e-4);

  const auto tot = diff::check_gradient(
      [&](diff::Tape&, const std::vector<diff::Var>& v) {
        return diff::total_loss({diff::entry(v[0], 0), diff::entry(v[0], 1), diff::entry(v[0], 2), diff::entry(v[0], 3)},
                                LossWeights{});
      },
      {random_tensor({1, 4, 1, 1}, 12)});
  EXPECT_LT(tot.max_rel_err, 1e-4);
}

TEST(LossLog, Csv) {
  const std::string csv = loss_log_csv({{0, 1, 2, 3, 4, 5}, {1, 0.5, 0.25, 0, 0, 0.625}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,pho,grp,sheaf,sm,total");
  EXPECT_NE(csv.find("\n1,0.5,0.25,0,0,0.625\n"), std::string::npos);
}
