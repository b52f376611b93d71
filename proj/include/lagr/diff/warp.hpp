#pragma once

#include <string>
#include <vector>

#include "lagr/diff/ops.hpp"
#include "lagr/projective.hpp"

namespace lagr::diff {

// Differentiable homography warping. Gradients reach the sampled field and,
// through the sampling grid, the entries of the generating matrices.

/// Canonicalizes every consecutive group of nine channels of a B x 9K x 1 x 1
/// tensor as a 3x3 matrix: m / (||m||_F + eps), dominant entry positive.
inline Var canonicalize_mats(const Var& raw) {
  const Shape s = raw.shape();
  if (s.h != 1 || s.w != 1 || s.c % 9 != 0) throw DimensionError("canonicalize_mats: expects B x 9K x 1 x 1");
  const std::size_t k = s.c / 9;
  Tensor out(s);
  std::vector<double> signs(s.b * k);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t j = 0; j < k; ++j) {
      Mat3 m{};
      for (int i = 0; i < 9; ++i) m[i] = raw.value()(b, 9 * j + i, 0, 0);
      Mat3 c;
      try {
        c = ProjectiveTransform::canonical_form(m);
      } catch (const DegenerateTransform& e) {
        throw DegenerateTransform(std::string(e.what()) + " (batch " + std::to_string(b) + ", sample " +
                                  std::to_string(j) + ")");
      }
      const int dom = dominant_entry(m);
      signs[b * k + j] = c[dom] * m[dom] >= 0 ? 1.0 : -1.0;
      for (int i = 0; i < 9; ++i) out(b, 9 * j + i, 0, 0) = c[i];
    }
  return raw.tape().record(std::move(out), {raw}, [raw, signs, k](Tape& t, const Tensor& g) {
    Tensor* gr = t.grad_buffer(raw);
    if (!gr) return;
    const Shape s = raw.shape();
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t j = 0; j < k; ++j) {
        double m[9], go[9], nn = 0.0, dot = 0.0;
        for (int i = 0; i < 9; ++i) {
          m[i] = raw.value()(b, 9 * j + i, 0, 0);
          go[i] = g(b, 9 * j + i, 0, 0);
          nn += m[i] * m[i];
          dot += go[i] * m[i];
        }
        const double n = std::sqrt(nn), d = n + kCanonEps, sg = signs[b * k + j];
        for (int i = 0; i < 9; ++i) (*gr)(b, 9 * j + i, 0, 0) += sg * (go[i] / d - m[i] * dot / (n * d * d));
      }
  });
}

/// Sampling grid (B x 2 x H x W; channel 0 = u, 1 = v) of the warp rho(theta_j):
/// grid(p) = pi(theta_j^-1 iota(p)) with theta_j read from channels [9j, 9j+9)
/// of `mats`. Pixels mapping to the horizon get an out-of-domain position and
/// no gradient.
inline Var homography_grid(const Var& mats, std::size_t j, std::size_t h, std::size_t w) {
  const Shape s = mats.shape();
  if (s.h != 1 || s.w != 1 || 9 * (j + 1) > s.c) throw DimensionError("homography_grid: bad matrix tensor");
  Tensor out({s.b, 2, h, w});
  std::vector<Mat3> invs(s.b);
  for (std::size_t b = 0; b < s.b; ++b) {
    Mat3 m{};
    for (int i = 0; i < 9; ++i) m[i] = mats.value()(b, 9 * j + i, 0, 0);
    invs[b] = inverse3(m);
    const auto grid = lagr::homography_grid(invs[b], h, w);
    for (std::size_t n = 0; n < grid.size(); ++n) {
      out.plane(b, 0)[n] = grid[n].u;
      out.plane(b, 1)[n] = grid[n].v;
    }
  }
  return mats.tape().record(std::move(out), {mats}, [mats, invs, j, h, w](Tape& t, const Tensor& g) {
    Tensor* gm = t.grad_buffer(mats);
    if (!gm) return;
    for (std::size_t b = 0; b < invs.size(); ++b) {
      const Mat3& inv = invs[b];
      // dL/dinv = sum_p a(p) iota(p)^T with a = dL/dx for x = inv * iota(p).
      Mat3 ginv{};
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double u = static_cast<double>(x), v = static_cast<double>(y);
          const double x1 = inv[0] * u + inv[1] * v + inv[2];
          const double x2 = inv[3] * u + inv[4] * v + inv[5];
          const double x3 = inv[6] * u + inv[7] * v + inv[8];
          if (std::abs(x3) < kHorizonTol) continue;
          const double gu = g.plane(b, 0)[y * w + x], gv = g.plane(b, 1)[y * w + x];
          const double a1 = gu / x3, a2 = gv / x3, a3 = -(gu * x1 + gv * x2) / (x3 * x3);
          const double io[3] = {u, v, 1.0};
          for (int c = 0; c < 3; ++c) {
            ginv[c] += a1 * io[c];
            ginv[3 + c] += a2 * io[c];
            ginv[6 + c] += a3 * io[c];
          }
        }
      // d(inv) = -inv dM inv  =>  dL/dM = -inv^T (dL/dinv) inv^T.
      Mat3 invT{inv[0], inv[3], inv[6], inv[1], inv[4], inv[7], inv[2], inv[5], inv[8]};
      const Mat3 gmat = matmul(matmul(invT, ginv), invT);
      for (int i = 0; i < 9; ++i) (*gm)(b, 9 * j + i, 0, 0) -= gmat[i];
    }
  });
}

/// Bilinear resampling of `field` (B x C x Hs x Ws) at the positions of
/// `grid` (B x 2 x H x W, or 1 x 2 x H x W shared across the batch), zero
/// padded outside Omega. Differentiable in both the field and the grid.
inline Var grid_sample(const Var& field, const Var& grid) {
  detail::same_tape(field, grid);
  const Shape fs = field.shape(), gs = grid.shape();
  if (gs.c != 2 || (gs.b != fs.b && gs.b != 1)) throw DimensionError("grid_sample: grid shape " + gs.str());
  Tensor out({fs.b, fs.c, gs.h, gs.w});
  const std::size_t n_pts = gs.h * gs.w;
  if (grid.requires_grad()) {
    // Bilinear weights are piecewise linear in position with breaks at integers.
    Tensor frac(gs);
    for (std::size_t i = 0; i < frac.size(); ++i) frac[i] = grid.value()[i] - std::round(grid.value()[i]);
    detail::note_kinks(frac);
  }
  for (std::size_t b = 0; b < fs.b; ++b) {
    const std::size_t gb = gs.b == 1 ? 0 : b;
    const auto gu = grid.value().plane(gb, 0), gv = grid.value().plane(gb, 1);
    for (std::size_t n = 0; n < n_pts; ++n) {
      const BilinearTaps tp = bilinear_taps(gu[n], gv[n], fs.h, fs.w);
      for (std::size_t c = 0; c < fs.c; ++c) {
        const auto ip = field.value().plane(b, c);
        double acc = 0.0;
        for (int k = 0; k < tp.count; ++k) acc += ip[tp.offset[k]] * tp.weight[k];
        out.plane(b, c)[n] = acc;
      }
    }
  }
  return field.tape().record(std::move(out), {field, grid}, [field, grid](Tape& t, const Tensor& g) {
    Tensor* gf = t.grad_buffer(field);
    Tensor* gg = t.grad_buffer(grid);
    if (!gf && !gg) return;
    const Shape fs = field.shape(), gs = grid.shape();
    const std::size_t n_pts = gs.h * gs.w;
    for (std::size_t b = 0; b < fs.b; ++b) {
      const std::size_t gb = gs.b == 1 ? 0 : b;
      const auto gu = grid.value().plane(gb, 0), gv = grid.value().plane(gb, 1);
      for (std::size_t n = 0; n < n_pts; ++n) {
        const BilinearTaps tp = bilinear_taps(gu[n], gv[n], fs.h, fs.w);
        double du = 0.0, dv = 0.0;
        for (std::size_t c = 0; c < fs.c; ++c) {
          const double go = g.plane(b, c)[n];
          if (go == 0.0) continue;
          const auto ip = field.value().plane(b, c);
          for (int k = 0; k < tp.count; ++k) {
            if (gf) gf->plane(b, c)[tp.offset[k]] += go * tp.weight[k];
            du += go * ip[tp.offset[k]] * tp.dweight_du[k];
            dv += go * ip[tp.offset[k]] * tp.dweight_dv[k];
          }
        }
        if (gg) {
          gg->plane(gb, 0)[n] += du;
          gg->plane(gb, 1)[n] += dv;
        }
      }
    }
  });
}

/// rho(T)F with gradients flowing into the field values only.
inline Var warp_field(const ProjectiveTransform& t, const Var& field) {
  const Shape s = field.shape();
  const auto pts = lagr::homography_grid(inverse3(t.matrix()), s.h, s.w);
  Tensor grid({1, 2, s.h, s.w});
  for (std::size_t n = 0; n < pts.size(); ++n) {
    grid.plane(0, 0)[n] = pts[n].u;
    grid.plane(0, 1)[n] = pts[n].v;
  }
  return grid_sample(field, field.tape().constant(std::move(grid)));
}

} // namespace lagr::diff
