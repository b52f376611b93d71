#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "lagr/field_ops.hpp"
#include "lagr/io.hpp"
#include "test_util.hpp"

using namespace lagr;
using lagr::testing::random_tensor;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({1, 1, 2, 2}, std::vector<double>(3)), DimensionError);
  Tensor t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  t(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
}

TEST(BilinearSample, IntegerPointReturnsStoredValue) {
  const Tensor f = random_tensor({1, 2, 5, 6}, 1);
  const GridPoint p{2, 3};
  const auto r = bilinear_sample(f, std::span(&p, 1));
  EXPECT_EQ(r.values(0, 0, 0, 0), f(0, 0, 3, 2));
  EXPECT_EQ(r.values(0, 1, 0, 0), f(0, 1, 3, 2));
  EXPECT_EQ(r.valid[0], 1);
}

TEST(BilinearSample, ExactOnRamp) {
  Tensor f({1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) f(0, 0, y, x) = static_cast<double>(x);
  const GridPoint p{1.5, 0};
  EXPECT_DOUBLE_EQ(bilinear_sample(f, std::span(&p, 1)).values[0], 1.5);
}

TEST(BilinearSample, TwoByTwoCentre) {
  const Tensor f({1, 1, 2, 2}, {0, 1, 2, 3});
  const GridPoint p{0.5, 0.5};
  EXPECT_DOUBLE_EQ(bilinear_sample(f, std::span(&p, 1)).values[0], 1.5);
}

TEST(BilinearSample, OutsideIsZeroAndInvalid) {
  const Tensor f({1, 1, 3, 3}, 1.0);
  const std::vector<GridPoint> pts{{-0.5, 1}, {5, 5}, {2, 2}};
  const auto r = bilinear_sample(f, pts);
  EXPECT_EQ(r.valid[0], 0);
  EXPECT_DOUBLE_EQ(r.values[0], 0.5);
  EXPECT_EQ(r.valid[1], 0);
  EXPECT_EQ(r.values[1], 0.0);
  EXPECT_EQ(r.valid[2], 1);
  EXPECT_THROW(bilinear_sample(Tensor(), pts), DimensionError);
}

TEST(BilinearSample, AffineFieldsExactInInterior) {
  Tensor f({1, 1, 8, 9});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 9; ++x) f(0, 0, y, x) = 0.3 * x - 1.7 * y + 2.0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 8), v(0, 7);
  for (int i = 0; i < 200; ++i) {
    const GridPoint p{u(rng), v(rng)};
    EXPECT_NEAR(bilinear_sample(f, std::span(&p, 1)).values[0], 0.3 * p.u - 1.7 * p.v + 2.0, 1e-12);
  }
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  const Tensor x = random_tensor({2, 1, 5, 5}, 2);
  Tensor k({1, 1, 3, 3});
  k(0, 0, 1, 1) = 1.0;
  EXPECT_EQ(max_abs_diff(conv2d(x, k), x), 0.0);
  EXPECT_EQ(l2_norm(conv2d(x, Tensor({1, 1, 3, 3}))), 0.0);
}

TEST(Conv2d, AveragingOnSinglePixel) {
  const Tensor x({1, 1, 1, 1}, 4.5);
  const Tensor k({1, 1, 3, 3}, 1.0 / 9.0);
  EXPECT_DOUBLE_EQ(conv2d(x, k)[0], 4.5 / 9.0);
}

TEST(Conv2d, ChannelMismatchAndEvenKernel) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3})), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 1, 4, 4}), Tensor({1, 1, 2, 2})), DimensionError);
}

TEST(Conv2d, Linear) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_tensor({2, 3, 6, 5}, 10 + s), y = random_tensor({2, 3, 6, 5}, 20 + s);
    const Tensor k = random_tensor({4, 3, 3, 3}, 30 + s);
    const double a = 0.7, b = -1.3;
    const Tensor lhs = conv2d(x * a + y * b, k);
    const Tensor rhs = conv2d(x, k) * a + conv2d(y, k) * b;
    EXPECT_LT(max_abs_diff(lhs, rhs) / l2_norm(rhs), 1e-12);
  }
}

TEST(Conv2d, AdjointsMatchInnerProducts) {
  const Tensor x = random_tensor({2, 3, 5, 6}, 4), k = random_tensor({2, 3, 3, 3}, 5);
  const Tensor g = random_tensor({2, 2, 5, 6}, 6);
  double lhs = 0.0;
  const Tensor y = conv2d(x, k);
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
  const Tensor gx = conv2d_grad_input(g, k, x.shape());
  const Tensor gk = conv2d_grad_kernel(x, g, k.shape());
  double rx = 0.0, rk = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) rx += x[i] * gx[i];
  for (std::size_t i = 0; i < k.size(); ++i) rk += k[i] * gk[i];
  EXPECT_NEAR(lhs, rx, 1e-12 * std::abs(lhs) + 1e-12);
  EXPECT_NEAR(lhs, rk, 1e-12 * std::abs(lhs) + 1e-12);
}

TEST(Resize, ConstantAndIdentity) {
  const Tensor c({1, 2, 3, 4}, 2.5);
  const Tensor r = resize_bilinear(c, 7, 5);
  for (double v : r.data()) EXPECT_DOUBLE_EQ(v, 2.5);
  const Tensor x = random_tensor({1, 2, 3, 4}, 7);
  EXPECT_EQ(max_abs_diff(resize_bilinear(x, 3, 4), x), 0.0);
  EXPECT_THROW(resize_bilinear(x, 0, 4), DimensionError);
}

TEST(Resize, AlignCornersWidthTwoToThree) {
  const Tensor x({1, 1, 1, 2}, {0, 2});
  const Tensor r = resize_bilinear(x, 1, 3);
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], 1.0);
  EXPECT_DOUBLE_EQ(r[2], 2.0);
}

TEST(Resize, AdjointMatchesInnerProduct) {
  const Tensor x = random_tensor({1, 2, 4, 5}, 8), g = random_tensor({1, 2, 7, 3}, 9);
  const Tensor y = resize_bilinear(x, 7, 3), gx = resize_bilinear_adjoint(g, 4, 5);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) a += y[i] * g[i];
  for (std::size_t i = 0; i < x.size(); ++i) b += x[i] * gx[i];
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(BatchNorm, EvalZeroInput) {
  NormStats st = NormStats::identity(2);
  const Tensor out = batch_norm(Tensor({1, 2, 3, 3}), st, BnMode::eval);
  EXPECT_EQ(l2_norm(out), 0.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  NormStats st = NormStats::identity(2);
  st.gamma = {0, 0};
  st.beta = {0.5, -1};
  const Tensor out = batch_norm(random_tensor({2, 2, 3, 3}, 11), st, BnMode::train);
  for (std::size_t b = 0; b < 2; ++b) {
    for (double v : out.plane(b, 0)) EXPECT_EQ(v, 0.5);
    for (double v : out.plane(b, 1)) EXPECT_EQ(v, -1.0);
  }
}

TEST(BatchNorm, TwoValueChannel) {
  NormStats st = NormStats::identity(1);
  const Tensor out = batch_norm(Tensor({1, 1, 1, 2}, {1, 3}), st, BnMode::train);
  const double expect = 1.0 / std::sqrt(1.0 + kBnEps);
  EXPECT_NEAR(out[0], -expect, 1e-15);
  EXPECT_NEAR(out[1], expect, 1e-15);
  EXPECT_NEAR(st.mean[0], 0.2, 1e-15);
  EXPECT_NEAR(st.var[0], 0.9 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
  NormStats st = NormStats::identity(3);
  const Tensor out = batch_norm(random_tensor({4, 3, 5, 5}, 12, -3, 7), st, BnMode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, q = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (double v : out.plane(b, c)) m += v;
    m /= 100.0;
    for (std::size_t b = 0; b < 4; ++b)
      for (double v : out.plane(b, c)) q += (v - m) * (v - m);
    q /= 100.0;
    EXPECT_LT(std::abs(m), 1e-9);
    EXPECT_LT(std::abs(q - 1.0), 1e-3);
  }
}

TEST(BatchNorm, RejectsNegativeVariance) {
  NormStats st = NormStats::identity(1);
  st.var[0] = -0.1;
  EXPECT_THROW(batch_norm(Tensor({1, 1, 2, 2}), st, BnMode::eval), InvariantError);
  NormStats wrong = NormStats::identity(2);
  EXPECT_THROW(batch_norm(Tensor({1, 1, 2, 2}), wrong, BnMode::eval), DimensionError);
}

TEST(Lagt1, RoundTripIsBitwise) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor t = random_tensor({1 + s % 2, 1 + s % 3, 2 + s % 4, 3}, s, -1e6, 1e6);
    std::stringstream ss;
    io::write_lagt1(ss, t);
    const Tensor r = io::read_lagt1(ss);
    ASSERT_EQ(r.shape(), t.shape());
    EXPECT_EQ(std::memcmp(r.data().data(), t.data().data(), t.size() * sizeof(double)), 0);
  }
}

TEST(Lagt1, HeaderLayout) {
  std::stringstream ss;
  io::write_lagt1(ss, Tensor({1, 2, 3, 4}, 1.0));
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 5u + 16u + 24u * 8u);
  EXPECT_EQ(bytes.substr(0, 5), "LAGT1");
  EXPECT_EQ(bytes[9], 2);
  EXPECT_EQ(bytes[13], 3);
  std::stringstream bad("LAGT2xxxx");
  EXPECT_THROW(io::read_lagt1(bad), FormatError);
  std::stringstream trunc(bytes.substr(0, 30));
  EXPECT_THROW(io::read_lagt1(trunc), FormatError);
}

TEST(Pgm, RoundTripOnQuantizedValues) {
  Tensor img({1, 1, 3, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i * 20) / 255.0;
  std::stringstream ss;
  io::write_pgm(ss, img);
  const Tensor r = io::read_pgm(ss);
  ASSERT_EQ(r.shape(), img.shape());
  EXPECT_LT(max_abs_diff(r, img), 1e-12);
  EXPECT_THROW(io::write_pgm(ss, Tensor({1, 2, 2, 2})), DimensionError);
}
