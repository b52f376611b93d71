#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lagr/field_ops.hpp"
#include "lagr/io.hpp"
#include "lagr/tensor.hpp"

namespace lagr {

/// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;

inline constexpr double kCanonEps = 1e-8;
inline constexpr double kDetTol = 1e-6;
inline constexpr double kHorizonTol = 1e-6;
inline constexpr double kNormTol = 1e-9;

inline constexpr Mat3 kIdentity3 = {1, 0, 0, 0, 1, 0, 0, 0, 1};

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  return r;
}

inline double det3(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

inline Mat3 adjugate3(const Mat3& m) {
  return {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
          m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
          m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
}

/// Closed-form inverse via adjugate / determinant.
inline Mat3 inverse3(const Mat3& m) {
  const double d = det3(m);
  if (!(std::abs(d) > 0.0) || !std::isfinite(d)) throw DegenerateTransform("singular 3x3 matrix");
  Mat3 a = adjugate3(m);
  for (double& v : a) v /= d;
  return a;
}

inline double frobenius(const Mat3& m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return std::sqrt(s);
}

/// Index of the entry with the largest magnitude (first on ties); its sign
/// fixes the canonical representative.
inline int dominant_entry(const Mat3& m) {
  int best = 0;
  for (int i = 1; i < 9; ++i)
    if (std::abs(m[i]) > std::abs(m[best])) best = i;
  return best;
}

/// A PGL(3) element stored as its canonical representative: unit Frobenius
/// norm (up to the stabilizing epsilon) with the dominant entry positive.
class ProjectiveTransform {
 public:
  ProjectiveTransform() : m_(canonical_form(kIdentity3)) {}

  /// m / (||m||_F + eps), sign-normalized. Throws DegenerateTransform for
  /// vanishing norm or |det| below kDetTol after scaling.
  static ProjectiveTransform canonicalize(const Mat3& m) {
    ProjectiveTransform t;
    t.m_ = canonical_form(m);
    return t;
  }

  /// Adopts an already-canonical matrix as is (e.g. one read back from text),
  /// canonicalizing only when it is not.
  static ProjectiveTransform adopt(const Mat3& m) {
    const double n = frobenius(m);
    if (std::abs(n - 1.0) > 1e-7 || m[dominant_entry(m)] < 0 || std::abs(det3(m)) < kDetTol)
      return canonicalize(m);
    ProjectiveTransform t;
    t.m_ = m;
    return t;
  }

  static ProjectiveTransform identity() { return {}; }
  static ProjectiveTransform translation(double du, double dv) {
    return canonicalize({1, 0, du, 0, 1, dv, 0, 0, 1});
  }
  static ProjectiveTransform scaling(double su, double sv) {
    return canonicalize({su, 0, 0, 0, sv, 0, 0, 0, 1});
  }

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_[r * 3 + c]; }

  ProjectiveTransform inverse() const { return canonicalize(inverse3(m_)); }
  /// this * other (apply other first).
  ProjectiveTransform compose(const ProjectiveTransform& other) const {
    return canonicalize(matmul(m_, other.m_));
  }

  /// Largest entrywise difference between the canonical representatives.
  double distance(const ProjectiveTransform& o) const {
    double d = 0.0;
    for (int i = 0; i < 9; ++i) d = std::max(d, std::abs(m_[i] - o.m_[i]));
    return d;
  }

  /// Entrywise distance after rescaling both representatives to exactly unit
  /// norm: compares projective classes independently of the epsilon scaling.
  double projective_distance(const ProjectiveTransform& o) const {
    const double na = frobenius(m_), nb = frobenius(o.m_);
    double d = 0.0;
    for (int i = 0; i < 9; ++i) d = std::max(d, std::abs(m_[i] / na - o.m_[i] / nb));
    return d;
  }

  static Mat3 canonical_form(const Mat3& m) {
    for (double v : m)
      if (!std::isfinite(v)) throw DegenerateTransform("non-finite matrix entry");
    const double n = frobenius(m);
    if (n < kNormTol) throw DegenerateTransform("matrix norm below tolerance");
    Mat3 r = m;
    const double scale = 1.0 / (n + kCanonEps);
    for (double& v : r) v *= scale;
    if (std::abs(det3(r)) < kDetTol) throw DegenerateTransform("determinant below tolerance");
    if (r[dominant_entry(r)] < 0)
      for (double& v : r) v = -v;
    return r;
  }

 private:
  Mat3 m_;
};

/// pi(m * iota(p)) for a raw (not necessarily canonical) matrix.
inline GridPoint apply_point(const Mat3& m, GridPoint p) {
  const double x1 = m[0] * p.u + m[1] * p.v + m[2];
  const double x2 = m[3] * p.u + m[4] * p.v + m[5];
  const double x3 = m[6] * p.u + m[7] * p.v + m[8];
  if (std::abs(x3) < kHorizonTol) throw PointAtInfinity("point maps to the line at infinity");
  return {x1 / x3, x2 / x3};
}

inline GridPoint apply_point(const ProjectiveTransform& t, GridPoint p) {
  return apply_point(t.matrix(), p);
}

/// Source sampling positions pi(inv * iota(p)) for every target pixel of an
/// h x w grid, row-major. Positions at the horizon are sent far outside Omega.
inline std::vector<GridPoint> homography_grid(const Mat3& inv, std::size_t h, std::size_t w) {
  std::vector<GridPoint> grid(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = static_cast<double>(x), v = static_cast<double>(y);
      const double x1 = inv[0] * u + inv[1] * v + inv[2];
      const double x2 = inv[3] * u + inv[4] * v + inv[5];
      const double x3 = inv[6] * u + inv[7] * v + inv[8];
      grid[y * w + x] = std::abs(x3) < kHorizonTol ? GridPoint{-1e9, -1e9} : GridPoint{x1 / x3, x2 / x3};
    }
  return grid;
}

/// rho(T)F together with the mask of target pixels whose source fell in Omega.
struct WarpResult {
  Tensor field;
  Tensor valid_mask;  // 1 x 1 x H x W of {0,1}
};

/// Resamples a grid of positions from every (b, c) plane of F.
inline Tensor sample_grid(const Tensor& f, const std::vector<GridPoint>& grid, std::size_t h,
                          std::size_t w, Tensor* mask = nullptr) {
  const Shape s = f.shape();
  Tensor out({s.b, s.c, h, w});
  if (mask) *mask = Tensor({1, 1, h, w});
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const BilinearTaps t = bilinear_taps(grid[n].u, grid[n].v, s.h, s.w);
    if (mask) (*mask)[n] = t.valid ? 1.0 : 0.0;
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t c = 0; c < s.c; ++c) {
        const auto ip = f.plane(b, c);
        double acc = 0.0;
        for (int k = 0; k < t.count; ++k) acc += ip[t.offset[k]] * t.weight[k];
        out.plane(b, c)[n] = acc;
      }
  }
  return out;
}

/// output(p) = F(pi(T^-1 iota(p))) with zero padding outside Omega.
inline WarpResult warp_field(const ProjectiveTransform& t, const Tensor& f) {
  if (f.empty()) throw DimensionError("warp_field: empty field");
  const Shape s = f.shape();
  const Mat3 inv = inverse3(t.matrix());
  WarpResult r;
  r.field = sample_grid(f, homography_grid(inv, s.h, s.w), s.h, s.w, &r.valid_mask);
  return r;
}

/// Warps a {0,1} validity mask and keeps only pixels whose every contributing
/// source neighbour was valid; composes validity through chains of warps.
inline Tensor warp_mask(const ProjectiveTransform& t, const Tensor& mask) {
  const WarpResult r = warp_field(t, mask);
  Tensor out(r.valid_mask.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (r.valid_mask[i] > 0.5 && r.field[i] >= 1.0 - 1e-9) ? 1.0 : 0.0;
  return out;
}

/// canonicalize(g * theta * g^-1).
inline ProjectiveTransform conjugate(const ProjectiveTransform& g, const ProjectiveTransform& theta) {
  return ProjectiveTransform::canonicalize(matmul(matmul(g.matrix(), theta.matrix()), inverse3(g.matrix())));
}

/// Raw draw of I + N, N_ij ~ U(-sigma, sigma), with entry (3,3) reset to 1.
inline Mat3 raw_perturbation(double sigma, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> noise(-sigma, sigma);
  Mat3 m = kIdentity3;
  for (double& v : m) v += sigma > 0 ? noise(rng) : 0.0;
  m[8] = 1.0;
  return m;
}

inline constexpr int kPerturbationRetries = 64;

/// Controlled perturbation of the identity, g(sigma) = I + N with g33 = 1,
/// canonicalized. Deterministic under the seed; near-singular draws are
/// redrawn from the same stream.
inline ProjectiveTransform random_perturbation(double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0 && sigma < 1.0)) throw RangeError("random_perturbation: sigma must lie in [0,1)");
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kPerturbationRetries; ++attempt) {
    try {
      return ProjectiveTransform::canonicalize(raw_perturbation(sigma, rng));
    } catch (const DegenerateTransform&) {
    }
  }
  throw DegenerateTransform("random_perturbation: no invertible draw after retries");
}

/// Pixel <- normalized [-1,1]^2 frame change for an h x w grid.
inline Mat3 normalized_to_pixel(std::size_t h, std::size_t w) {
  const double sx = (static_cast<double>(w) - 1.0) / 2.0, sy = (static_cast<double>(h) - 1.0) / 2.0;
  return {sx, 0, sx, 0, sy, sy, 0, 0, 1};
}

/// Expresses a transform defined on normalized [-1,1]^2 coordinates in pixel
/// coordinates of an h x w grid (N^-1 g N).
inline ProjectiveTransform to_pixel_frame(const Mat3& g, std::size_t h, std::size_t w) {
  const Mat3 to_pix = normalized_to_pixel(h, w);
  return ProjectiveTransform::canonicalize(matmul(matmul(to_pix, g), inverse3(to_pix)));
}

/// g(sigma) drawn in normalized coordinates and expressed in pixel
/// coordinates, so sigma measures distortion relative to the image extent.
inline ProjectiveTransform random_pixel_perturbation(double sigma, std::uint64_t seed, std::size_t h,
                                                     std::size_t w) {
  if (!(sigma >= 0.0 && sigma < 1.0)) throw RangeError("random_pixel_perturbation: sigma must lie in [0,1)");
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kPerturbationRetries; ++attempt) {
    try {
      return to_pixel_frame(ProjectiveTransform::canonicalize(raw_perturbation(sigma, rng)).matrix(), h, w);
    } catch (const DegenerateTransform&) {
    }
  }
  throw DegenerateTransform("random_pixel_perturbation: no invertible draw after retries");
}

// Text form: nine whitespace-separated reals, row-major.

inline std::string to_text(const ProjectiveTransform& t) {
  std::string s;
  for (int i = 0; i < 9; ++i) {
    s += io::fmt(t.matrix()[i], 17);
    s += (i % 3 == 2) ? '\n' : ' ';
  }
  return s;
}

inline ProjectiveTransform transform_from_text(const std::string& text) {
  std::istringstream is(text);
  Mat3 m{};
  for (double& v : m)
    if (!(is >> v)) throw FormatError("transform text: expected 9 reals");
  std::string extra;
  if (is >> extra) throw FormatError("transform text: trailing content");
  return ProjectiveTransform::adopt(m);
}

inline void save_transform(const std::filesystem::path& path, const ProjectiveTransform& t) {
  io::write_text(path, to_text(t));
}

inline ProjectiveTransform load_transform(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return transform_from_text(ss.str());
}

} // namespace lagr
