#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lagr/tensor.hpp"

namespace lagr {

// Spatial primitives on FeatureFields: bilinear sampling with zero-padded
// borders, same-padding cross-correlation, align-corners resize and batch
// normalization, plus the adjoints the differentiation layer needs.

inline constexpr double kBorderTol = 1e-9;
inline constexpr double kSnapTol = 1e-10;
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

/// The (up to) four in-domain neighbours of a real sample position with their
/// bilinear weights and the weights' derivatives along u and v.
struct BilinearTaps {
  std::array<std::size_t, 4> offset{};  // h * W + w within a plane
  std::array<double, 4> weight{};
  std::array<double, 4> dweight_du{};
  std::array<double, 4> dweight_dv{};
  int count = 0;
  bool valid = false;  // sample position inside Omega
};

inline BilinearTaps bilinear_taps(double u, double v, std::size_t h, std::size_t w) {
  BilinearTaps t;
  const double wmax = static_cast<double>(w) - 1.0;
  const double hmax = static_cast<double>(h) - 1.0;
  if (!(u > -2.0 && u < wmax + 2.0 && v > -2.0 && v < hmax + 2.0)) return t;
  if (std::abs(u - std::round(u)) < kSnapTol) u = std::round(u);
  if (std::abs(v - std::round(v)) < kSnapTol) v = std::round(v);
  t.valid = u >= -kBorderTol && u <= wmax + kBorderTol && v >= -kBorderTol && v <= hmax + kBorderTol;

  const double x0f = std::floor(u), y0f = std::floor(v);
  const double fx = u - x0f, fy = v - y0f;
  const long x0 = static_cast<long>(x0f), y0 = static_cast<long>(y0f);
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const double du[4] = {-(1 - fy), (1 - fy), -fy, fy};
  const double dv[4] = {-(1 - fx), -fx, (1 - fx), fx};
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || ys[k] < 0 || xs[k] >= static_cast<long>(w) || ys[k] >= static_cast<long>(h))
      continue;
    t.offset[t.count] = static_cast<std::size_t>(ys[k]) * w + static_cast<std::size_t>(xs[k]);
    t.weight[t.count] = ws[k];
    t.dweight_du[t.count] = du[k];
    t.dweight_dv[t.count] = dv[k];
    ++t.count;
  }
  return t;
}

/// Per-point channel vectors from bilinear_sample. values has shape
/// B x C x 1 x N; valid[n] marks points inside Omega. Points outside read the
/// zero-padded field.
struct SampleResult {
  Tensor values;
  std::vector<std::uint8_t> valid;
};

inline SampleResult bilinear_sample(const Tensor& field, std::span<const GridPoint> pts) {
  const Shape s = field.shape();
  if (field.empty()) throw DimensionError("bilinear_sample: empty field");
  SampleResult r{Tensor({s.b, s.c, 1, pts.size()}), std::vector<std::uint8_t>(pts.size(), 0)};
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const BilinearTaps t = bilinear_taps(pts[n].u, pts[n].v, s.h, s.w);
    r.valid[n] = t.valid ? 1 : 0;
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t c = 0; c < s.c; ++c) {
        const auto p = field.plane(b, c);
        double acc = 0.0;
        for (int k = 0; k < t.count; ++k) acc += p[t.offset[k]] * t.weight[k];
        r.values(b, c, 0, n) = acc;
      }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero "same" padding, stride 1)

inline void check_conv_shapes(const Shape& in, const Shape& k) {
  if (k.h != k.w || k.h % 2 == 0)
    throw DimensionError("conv2d: kernel must be square with odd size, got " + k.str());
  if (k.c != in.c)
    throw DimensionError("conv2d: kernel expects " + std::to_string(k.c) + " input channels, input has " +
                         std::to_string(in.c));
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel) {
  const Shape s = input.shape(), ks = kernel.shape();
  check_conv_shapes(s, ks);
  const long pad = static_cast<long>(ks.h / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  Tensor out({s.b, ks.b, s.h, s.w});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t o = 0; o < ks.b; ++o) {
      auto op = out.plane(b, o);
      for (std::size_t i = 0; i < s.c; ++i) {
        const auto ip = input.plane(b, i);
        for (long dy = 0; dy < static_cast<long>(ks.h); ++dy)
          for (long dx = 0; dx < static_cast<long>(ks.w); ++dx) {
            const double kv = kernel(o, i, dy, dx);
            if (kv == 0.0) continue;
            const long oy = dy - pad, ox = dx - pad;
            const long y0 = std::max(0L, -oy), y1 = std::min(H, H - oy);
            const long x0 = std::max(0L, -ox), x1 = std::min(W, W - ox);
            for (long y = y0; y < y1; ++y) {
              double* dst = op.data() + y * W;
              const double* src = ip.data() + (y + oy) * W + ox;
              for (long x = x0; x < x1; ++x) dst[x] += kv * src[x];
            }
          }
      }
    }
  return out;
}

/// Adjoint of conv2d with respect to its input.
inline Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& in_shape) {
  const Shape ks = kernel.shape();
  const long pad = static_cast<long>(ks.h / 2);
  const long H = static_cast<long>(in_shape.h), W = static_cast<long>(in_shape.w);
  Tensor gin(in_shape);
  for (std::size_t b = 0; b < in_shape.b; ++b)
    for (std::size_t o = 0; o < ks.b; ++o) {
      const auto gp = grad_out.plane(b, o);
      for (std::size_t i = 0; i < in_shape.c; ++i) {
        auto ip = gin.plane(b, i);
        for (long dy = 0; dy < static_cast<long>(ks.h); ++dy)
          for (long dx = 0; dx < static_cast<long>(ks.w); ++dx) {
            const double kv = kernel(o, i, dy, dx);
            if (kv == 0.0) continue;
            const long oy = dy - pad, ox = dx - pad;
            const long y0 = std::max(0L, -oy), y1 = std::min(H, H - oy);
            const long x0 = std::max(0L, -ox), x1 = std::min(W, W - ox);
            for (long y = y0; y < y1; ++y) {
              const double* g = gp.data() + y * W;
              double* dst = ip.data() + (y + oy) * W + ox;
              for (long x = x0; x < x1; ++x) dst[x] += kv * g[x];
            }
          }
      }
    }
  return gin;
}

/// Adjoint of conv2d with respect to its kernel.
inline Tensor conv2d_grad_kernel(const Tensor& input, const Tensor& grad_out, const Shape& k_shape) {
  const Shape s = input.shape();
  const long pad = static_cast<long>(k_shape.h / 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  Tensor gk(k_shape);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t o = 0; o < k_shape.b; ++o) {
      const auto gp = grad_out.plane(b, o);
      for (std::size_t i = 0; i < s.c; ++i) {
        const auto ip = input.plane(b, i);
        for (long dy = 0; dy < static_cast<long>(k_shape.h); ++dy)
          for (long dx = 0; dx < static_cast<long>(k_shape.w); ++dx) {
            const long oy = dy - pad, ox = dx - pad;
            const long y0 = std::max(0L, -oy), y1 = std::min(H, H - oy);
            const long x0 = std::max(0L, -ox), x1 = std::min(W, W - ox);
            double acc = 0.0;
            for (long y = y0; y < y1; ++y) {
              const double* g = gp.data() + y * W;
              const double* src = ip.data() + (y + oy) * W + ox;
              for (long x = x0; x < x1; ++x) acc += g[x] * src[x];
            }
            gk(o, i, dy, dx) += acc;
          }
      }
    }
  return gk;
}

// ---------------------------------------------------------------------------
// Align-corners bilinear resize: src = dst * (S - 1) / (T - 1).

namespace detail {
struct AxisTap {
  std::size_t i0, i1;
  double f;
};

inline std::vector<AxisTap> resize_axis(std::size_t src, std::size_t dst) {
  std::vector<AxisTap> taps(dst);
  for (std::size_t d = 0; d < dst; ++d) {
    const double pos = dst == 1 ? 0.0
                                : static_cast<double>(d) * static_cast<double>(src - 1) /
                                      static_cast<double>(dst - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 >= src - 1) i0 = src - 1;
    const double f = pos - static_cast<double>(i0);
    taps[d] = {i0, std::min(i0 + 1, src - 1), f};
  }
  return taps;
}
} // namespace detail

inline Tensor resize_bilinear(const Tensor& input, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw DimensionError("resize_bilinear: zero target size");
  const Shape s = input.shape();
  if (s.h == 0 || s.w == 0) throw DimensionError("resize_bilinear: empty input");
  if (s.h == target_h && s.w == target_w) return input;
  const auto ty = detail::resize_axis(s.h, target_h);
  const auto tx = detail::resize_axis(s.w, target_w);
  Tensor out({s.b, s.c, target_h, target_w});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto ip = input.plane(b, c);
      auto op = out.plane(b, c);
      for (std::size_t y = 0; y < target_h; ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < target_w; ++x) {
          const auto& e = tx[x];
          const double top = ip[a.i0 * s.w + e.i0] * (1 - e.f) + ip[a.i0 * s.w + e.i1] * e.f;
          const double bot = ip[a.i1 * s.w + e.i0] * (1 - e.f) + ip[a.i1 * s.w + e.i1] * e.f;
          op[y * target_w + x] = top * (1 - a.f) + bot * a.f;
        }
      }
    }
  return out;
}

/// Adjoint of resize_bilinear: scatters an output gradient back to the source grid.
inline Tensor resize_bilinear_adjoint(const Tensor& grad_out, std::size_t src_h, std::size_t src_w) {
  const Shape g = grad_out.shape();
  if (g.h == src_h && g.w == src_w) return grad_out;
  const auto ty = detail::resize_axis(src_h, g.h);
  const auto tx = detail::resize_axis(src_w, g.w);
  Tensor gin({g.b, g.c, src_h, src_w});
  for (std::size_t b = 0; b < g.b; ++b)
    for (std::size_t c = 0; c < g.c; ++c) {
      const auto gp = grad_out.plane(b, c);
      auto ip = gin.plane(b, c);
      for (std::size_t y = 0; y < g.h; ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < g.w; ++x) {
          const auto& e = tx[x];
          const double v = gp[y * g.w + x];
          ip[a.i0 * src_w + e.i0] += v * (1 - a.f) * (1 - e.f);
          ip[a.i0 * src_w + e.i1] += v * (1 - a.f) * e.f;
          ip[a.i1 * src_w + e.i0] += v * a.f * (1 - e.f);
          ip[a.i1 * src_w + e.i1] += v * a.f * e.f;
        }
      }
    }
  return gin;
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode { train, eval };

/// Per-channel affine parameters and running statistics.
struct NormStats {
  std::vector<double> gamma, beta, mean, var;

  static NormStats identity(std::size_t channels) {
    return {std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0),
            std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
  std::size_t channels() const { return gamma.size(); }

  void validate(std::size_t channels) const {
    if (gamma.size() != channels || beta.size() != channels || mean.size() != channels ||
        var.size() != channels)
      throw DimensionError("batch_norm: stats have " + std::to_string(gamma.size()) +
                           " channels, input has " + std::to_string(channels));
    for (double v : var)
      if (!(v >= 0.0)) throw InvariantError("batch_norm: negative running variance");
  }
};

/// Normalized activations and the per-channel inverse standard deviation used
/// to produce them; shared by the plain and differentiable paths.
struct BnNormalized {
  Tensor xhat;
  std::vector<double> inv_std;
};

/// Normalizes with batch statistics (train) or running statistics (eval) and,
/// in train mode, folds the batch statistics into the running ones.
inline BnNormalized bn_normalize(const Tensor& x, NormStats& stats, BnMode mode,
                                 double momentum = kBnMomentum) {
  const Shape s = x.shape();
  stats.validate(s.c);
  BnNormalized r{Tensor(s), std::vector<double>(s.c)};
  const double n = static_cast<double>(s.b * s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = stats.mean[c], var = stats.var[c];
    if (mode == BnMode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < s.b; ++b)
        for (double v : x.plane(b, c)) sum += v;
      mean = sum / n;
      double sq = 0.0;
      for (std::size_t b = 0; b < s.b; ++b)
        for (double v : x.plane(b, c)) sq += (v - mean) * (v - mean);
      var = sq / n;
      const double unbiased = n > 1 ? sq / (n - 1) : var;
      stats.mean[c] = (1 - momentum) * stats.mean[c] + momentum * mean;
      stats.var[c] = (1 - momentum) * stats.var[c] + momentum * unbiased;
    }
    const double inv = 1.0 / std::sqrt(var + kBnEps);
    r.inv_std[c] = inv;
    for (std::size_t b = 0; b < s.b; ++b) {
      const auto ip = x.plane(b, c);
      auto op = r.xhat.plane(b, c);
      for (std::size_t i = 0; i < ip.size(); ++i) op[i] = (ip[i] - mean) * inv;
    }
  }
  return r;
}

inline Tensor batch_norm(const Tensor& input, NormStats& stats, BnMode mode) {
  BnNormalized n = bn_normalize(input, stats, mode);
  const Shape s = input.shape();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (double& v : n.xhat.plane(b, c)) v = stats.gamma[c] * v + stats.beta[c];
  return std::move(n.xhat);
}

} // namespace lagr
