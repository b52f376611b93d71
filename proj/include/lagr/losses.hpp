#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lagr/diff/ops.hpp"
#include "lagr/diff/warp.hpp"
#include "lagr/io.hpp"
#include "lagr/projective.hpp"

namespace lagr {

struct LossWeights {
  double lambda_pho = 1.0;
  double lambda_grp = 0.5;
  double lambda_sheaf = 0.1;
  double lambda_sm = 0.01;

  void validate() const {
    for (double v : {lambda_pho, lambda_grp, lambda_sheaf, lambda_sm})
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
};

inline constexpr double kSmoothnessGamma = 1.0;

/// Source view under the plane-plus-parallax model: the reference pixel p
/// appears in the source at q(p) = pi(H iota(p)) + t / D(p).
struct SourceView {
  Tensor image;  // 1 x C x H x W
  ProjectiveTransform homography;
  double tu = 0.0, tv = 0.0;
};

struct SceneSample {
  Tensor reference;  // 1 x C x H x W
  std::vector<SourceView> sources;
  Tensor mask;      // 1 x 1 x H x W, {0,1}
  Tensor depth_gt;  // 1 x 1 x H x W

  void validate() const {
    const Shape s = reference.shape();
    if (s.b != 1 || reference.empty()) throw DimensionError("scene reference must be 1 x C x H x W");
    if (sources.empty()) throw ConfigError("scene needs at least one source view");
    for (const auto& v : sources)
      if (v.image.shape() != s) throw DimensionError("source image " + v.image.shape().str() + " vs " + s.str());
    if (mask.shape() != Shape{1, 1, s.h, s.w}) throw DimensionError("scene mask shape " + mask.shape().str());
    for (double m : mask.data())
      if (m != 0.0 && m != 1.0) throw DataError("scene mask must be binary");
    if (!depth_gt.empty() && depth_gt.shape() != Shape{1, 1, s.h, s.w})
      throw DimensionError("scene depth shape " + depth_gt.shape().str());
  }
};

/// {0,1} mask of grid positions inside Omega (B x 1 x H x W for a B x 2 x H x W grid).
inline Tensor grid_valid_mask(const Tensor& grid) {
  const Shape s = grid.shape();
  Tensor m({s.b, 1, s.h, s.w});
  for (std::size_t b = 0; b < s.b; ++b) {
    const auto u = grid.plane(b, 0), v = grid.plane(b, 1);
    auto mp = m.plane(b, 0);
    for (std::size_t n = 0; n < u.size(); ++n) mp[n] = bilinear_taps(u[n], v[n], s.h, s.w).valid ? 1.0 : 0.0;
  }
  return m;
}

inline Tensor mask_and(const Tensor& a, const Tensor& b) {
  a.require_same(b, "mask_and");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (a[i] > 0.5 && b[i] > 0.5) ? 1.0 : 0.0;
  return out;
}

namespace diff {

/// Dense source-sampling grid q(p) = pi(H iota(p)) + t / D(p) for a depth map
/// D of shape 1 x 1 x H x W; differentiable in D.
inline Var source_grid(const SourceView& view, const Var& depth) {
  const Shape s = depth.shape();
  if (s.b != 1 || s.c != 1) throw DimensionError("source_grid: depth must be 1 x 1 x H x W, got " + s.str());
  Tensor base({1, 2, s.h, s.w}), tr({1, 2, s.h, s.w});
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const GridPoint q = apply_point(view.homography, {static_cast<double>(x), static_cast<double>(y)});
      base(0, 0, y, x) = q.u;
      base(0, 1, y, x) = q.v;
      tr(0, 0, y, x) = view.tu;
      tr(0, 1, y, x) = view.tv;
    }
  Tape& t = depth.tape();
  return add(t.constant(std::move(base)), mul(t.constant(std::move(tr)), repeat_channels(reciprocal(depth), 2)));
}

/// Mean over views of the masked L1 between the reference and each warped
/// source; masks are 1 x 1 x H x W.
inline Var photometric_loss(const Var& reference, const std::vector<Var>& warped_sources,
                            const std::vector<Tensor>& masks) {
  if (warped_sources.empty()) throw ConfigError("photometric_loss: no source views");
  if (masks.size() != warped_sources.size()) throw DimensionError("photometric_loss: one mask per source required");
  Var acc = masked_mean_abs(sub(reference, warped_sources[0]), masks[0]);
  for (std::size_t s = 1; s < warped_sources.size(); ++s)
    acc = add(acc, masked_mean_abs(sub(reference, warped_sources[s]), masks[s]));
  return scale(acc, 1.0 / static_cast<double>(warped_sources.size()));
}

/// Photometric loss of a scene under a predicted depth (1 x 1 x H x W): each
/// source is resampled at q(p) and compared on Omega intersected with the
/// in-domain positions of q.
inline Var photometric_loss(const SceneSample& scene, const Var& depth) {
  scene.validate();
  Tape& t = depth.tape();
  std::vector<Var> warped;
  std::vector<Tensor> masks;
  for (const auto& view : scene.sources) {
    const Var grid = source_grid(view, depth);
    masks.push_back(mask_and(scene.mask, grid_valid_mask(grid.value())));
    warped.push_back(grid_sample(t.constant(view.image), grid));
  }
  return photometric_loss(t.constant(scene.reference), warped, masks);
}

/// Masked L1 between D and rho(g^-1) D' on the region where that warp reads
/// only valid pixels of D'. `prime_mask` (1 x 1 x H x W) marks where D' is
/// defined; empty means everywhere.
inline Var group_consistency_loss(const Var& d_pred, const Var& d_pred_prime, const ProjectiveTransform& g,
                                  const Tensor& prime_mask = {}) {
  d_pred.value().require_same(d_pred_prime.value(), "group_consistency_loss");
  const Shape s = d_pred.shape();
  Tensor valid = prime_mask;
  if (valid.empty()) {
    valid = Tensor({1, 1, s.h, s.w});
    valid.fill(1.0);
  } else if (valid.shape() != Shape{1, 1, s.h, s.w}) {
    throw DimensionError("group_consistency_loss: mask " + valid.shape().str());
  }
  const ProjectiveTransform inv = g.inverse();
  return masked_mean_abs(sub(d_pred, warp_field(inv, d_pred_prime)), warp_mask(inv, valid));
}

/// Edge-aware smoothness: per axis, the mean over forward differences of
/// |dD| exp(-gamma |dI|), with |dI| averaged over image channels.
inline Var smoothness_loss(const Var& depth, const Tensor& image, double gamma = kSmoothnessGamma) {
  const Shape ds = depth.shape(), is = image.shape();
  if (ds.c != 1 || is.h != ds.h || is.w != ds.w || (is.b != ds.b && is.b != 1))
    throw DimensionError("smoothness_loss: depth " + ds.str() + " vs image " + is.str());
  Tensor wx({ds.b, 1, ds.h, ds.w - 1}), wy({ds.b, 1, ds.h - 1, ds.w});
  for (std::size_t b = 0; b < ds.b; ++b) {
    const std::size_t ib = is.b == 1 ? 0 : b;
    for (std::size_t y = 0; y < ds.h; ++y)
      for (std::size_t x = 0; x < ds.w; ++x) {
        double gx = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < is.c; ++c) {
          if (x + 1 < ds.w) gx += std::abs(image(ib, c, y, x + 1) - image(ib, c, y, x));
          if (y + 1 < ds.h) gy += std::abs(image(ib, c, y + 1, x) - image(ib, c, y, x));
        }
        const double inv_c = 1.0 / static_cast<double>(is.c);
        if (x + 1 < ds.w) wx(b, 0, y, x) = std::exp(-gamma * gx * inv_c);
        if (y + 1 < ds.h) wy(b, 0, y, x) = std::exp(-gamma * gy * inv_c);
      }
  }
  Tape& t = depth.tape();
  return add(mean(mul(abs(diff_x(depth)), t.constant(std::move(wx)))),
             mean(mul(abs(diff_y(depth)), t.constant(std::move(wy)))));
}

struct LossTerms {
  Var pho, grp, sheaf, sm;
};

inline Var total_loss(const LossTerms& c, const LossWeights& w) {
  w.validate();
  return add(add(scale(c.pho, w.lambda_pho), scale(c.grp, w.lambda_grp)),
             add(scale(c.sheaf, w.lambda_sheaf), scale(c.sm, w.lambda_sm)));
}

} // namespace diff

inline double total_loss(double pho, double grp, double sheaf, double sm, const LossWeights& w) {
  w.validate();
  for (double v : {pho, grp, sheaf, sm})
    if (!std::isfinite(v)) throw DataError("total_loss: non-finite component");
  return w.lambda_pho * pho + w.lambda_grp * grp + w.lambda_sheaf * sheaf + w.lambda_sm * sm;
}

/// AbsRel: mean over masked pixels of |D_pred - D_gt| / D_gt.
inline double mean_rel_depth_error(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  pred.require_same(gt, "mean_rel_depth_error");
  const Shape s = gt.shape(), ms = mask.shape();
  if (s.c != 1 || ms.c != 1 || ms.h != s.h || ms.w != s.w || (ms.b != 1 && ms.b != s.b))
    throw DimensionError("mean_rel_depth_error: mask " + ms.str() + " vs depth " + s.str());
  double acc = 0.0, count = 0.0;
  for (std::size_t b = 0; b < s.b; ++b) {
    const auto mp = mask.plane(ms.b == 1 ? 0 : b, 0);
    const auto pp = pred.plane(b, 0), gp = gt.plane(b, 0);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (mp[i] <= 0.5) continue;
      if (!(gp[i] > 0.0)) throw DataError("mean_rel_depth_error: non-positive ground truth at pixel " + std::to_string(i));
      acc += std::abs(pp[i] - gp[i]) / gp[i];
      count += 1.0;
    }
  }
  if (count == 0.0) throw EmptyOverlap("mean_rel_depth_error: empty mask");
  return acc / count;
}

struct LossRecord {
  std::size_t step = 0;
  double pho = 0.0, grp = 0.0, sheaf = 0.0, sm = 0.0, total = 0.0;
};

inline std::string loss_log_csv(const std::vector<LossRecord>& log) {
  io::CsvWriter w({"step", "pho", "grp", "sheaf", "sm", "total"});
  for (const auto& r : log)
    w.row({std::to_string(r.step), io::fmt(r.pho), io::fmt(r.grp), io::fmt(r.sheaf), io::fmt(r.sm), io::fmt(r.total)});
  return w.str();
}

} // namespace lagr
