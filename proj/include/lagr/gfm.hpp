#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lagr/diff/warp.hpp"
#include "lagr/io.hpp"
#include "lagr/parallel.hpp"
#include "lagr/projective.hpp"
#include "lagr/synth.hpp"

namespace lagr {

/// Group-defined feature manifold parameters. Layouts:
///   w1 1x1xHidxC, b1 1xHidx1x1   generator hidden layer
///   w2 1x1x9KxHid, b2 1x9Kx1x1   generator output, one 3x3 matrix per sample
///   attn_w 1x1xKxC, attn_b 1xKx1x1
///   w_proj CoutxCx1x1            channel-only projection
struct GfmParams {
  std::size_t k = 4;
  Tensor w1, b1, w2, b2, attn_w, attn_b, w_proj;

  std::size_t channels() const { return w1.shape().w; }
  std::size_t hidden() const { return w1.shape().h; }
  std::size_t out_channels() const { return w_proj.shape().b; }

  /// Generator starts at the identity orbit: b2 holds K identity matrices and
  /// W2 is small; attention starts near uniform; W_proj starts as identity
  /// when Cout = C.
  static GfmParams init(std::size_t channels, std::size_t k, std::size_t hidden, std::uint64_t seed,
                        std::size_t out_channels = 0) {
    if (out_channels == 0) out_channels = channels;
    if (channels == 0 || k == 0 || hidden == 0) throw ConfigError("GfmParams: dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GfmParams p;
    p.k = k;
    p.w1 = Tensor({1, 1, hidden, channels});
    for (double& v : p.w1.data()) v = u(rng) / std::sqrt(static_cast<double>(channels));
    p.b1 = Tensor({1, hidden, 1, 1}, 0.1);
    p.w2 = Tensor({1, 1, 9 * k, hidden});
    for (double& v : p.w2.data()) v = 1e-3 * u(rng);
    p.b2 = Tensor({1, 9 * k, 1, 1});
    for (std::size_t j = 0; j < k; ++j)
      for (int i = 0; i < 9; ++i) p.b2[9 * j + i] = kIdentity3[i];
    p.attn_w = Tensor({1, 1, k, channels});
    for (double& v : p.attn_w.data()) v = 0.1 * u(rng);
    p.attn_b = Tensor({1, k, 1, 1});
    p.w_proj = Tensor({out_channels, channels, 1, 1});
    for (std::size_t o = 0; o < out_channels; ++o)
      for (std::size_t c = 0; c < channels; ++c)
        p.w_proj(o, c, 0, 0) = out_channels == channels ? (o == c ? 1.0 : 0.0) : u(rng) / std::sqrt(double(channels));
    return p;
  }

  void validate(std::size_t input_channels) const {
    const std::size_t c = channels(), h = hidden();
    if (c != input_channels)
      throw DimensionError("GFM expects " + std::to_string(c) + " channels, got " + std::to_string(input_channels));
    if (b1.size() != h || w2.shape().h != 9 * k || w2.shape().w != h || b2.size() != 9 * k ||
        attn_w.shape().h != k || attn_w.shape().w != c || attn_b.size() != k || w_proj.shape().c != c ||
        w_proj.shape().h != 1 || w_proj.shape().w != 1)
      throw DimensionError("GFM parameter shapes are inconsistent");
  }
};

/// GfmParams bound to a tape.
struct GfmVars {
  std::size_t k = 0;
  diff::Var w1, b1, w2, b2, attn_w, attn_b, w_proj;

  static GfmVars bind(diff::Tape& t, const GfmParams& p, bool requires_grad = true) {
    return {p.k,
            t.leaf(p.w1, requires_grad),
            t.leaf(p.b1, requires_grad),
            t.leaf(p.w2, requires_grad),
            t.leaf(p.b2, requires_grad),
            t.leaf(p.attn_w, requires_grad),
            t.leaf(p.attn_b, requires_grad),
            t.leaf(p.w_proj, requires_grad)};
  }
};

struct GfmTrace {
  diff::Var features;  // B x Cout x H x W
  diff::Var mats;      // B x 9K x 1 x 1 canonical matrices
  diff::Var alpha;     // B x K x 1 x 1 simplex weights
};

/// theta_{b,j} = Phi(W2 relu(W1 mu_b + b1) + b2), alpha_b = softmax(attn_w mu_b + attn_b),
/// F_GFM = W_proj (sum_j alpha_{b,j} rho(theta_{b,j}) F).
inline GfmTrace gfm_forward(const diff::Var& f, const GfmVars& p) {
  using namespace diff;
  const Shape s = f.shape();
  if (p.w1.shape().w != s.c) throw DimensionError("GFM: channel mismatch with input " + s.str());
  const Var mu = global_avg_pool(f);
  const Var hidden = relu(linear(mu, p.w1, p.b1));
  const Var mats = canonicalize_mats(linear(hidden, p.w2, p.b2));
  const Var alpha = softmax_channels(linear(mu, p.attn_w, p.attn_b));
  Var acc;
  for (std::size_t j = 0; j < p.k; ++j) {
    const Var eta = grid_sample(f, homography_grid(mats, j, s.h, s.w));
    const Var term = scale_by_entry(eta, alpha, j);
    acc = j == 0 ? term : add(acc, term);
  }
  return {conv2d(acc, p.w_proj), mats, alpha};
}

struct GfmOutput {
  Tensor features;
  std::vector<std::vector<ProjectiveTransform>> transforms;  // [batch][sample]
  std::vector<std::vector<double>> attention;                // [batch][sample]
};

inline GfmOutput gfm_forward(const Tensor& f, const GfmParams& params) {
  params.validate(f.shape().c);
  diff::Tape t;
  const GfmTrace tr = gfm_forward(t.constant(f), GfmVars::bind(t, params, false));
  GfmOutput out{tr.features.value(), {}, {}};
  for (std::size_t b = 0; b < f.shape().b; ++b) {
    out.transforms.emplace_back();
    out.attention.emplace_back();
    for (std::size_t j = 0; j < params.k; ++j) {
      Mat3 m;
      for (int i = 0; i < 9; ++i) m[i] = tr.mats.value()(b, 9 * j + i, 0, 0);
      out.transforms.back().push_back(ProjectiveTransform::adopt(m));
      out.attention.back().push_back(tr.alpha.value()(b, j, 0, 0));
    }
  }
  return out;
}

inline std::vector<std::vector<ProjectiveTransform>> generate_transforms(const Tensor& f, const GfmParams& params) {
  params.validate(f.shape().c);
  diff::Tape t;
  const GfmVars v = GfmVars::bind(t, params, false);
  const diff::Var mu = diff::global_avg_pool(t.constant(f));
  const diff::Var mats = diff::canonicalize_mats(diff::linear(diff::relu(diff::linear(mu, v.w1, v.b1)), v.w2, v.b2));
  std::vector<std::vector<ProjectiveTransform>> out(f.shape().b);
  for (std::size_t b = 0; b < out.size(); ++b)
    for (std::size_t j = 0; j < params.k; ++j) {
      Mat3 m;
      for (int i = 0; i < 9; ++i) m[i] = mats.value()(b, 9 * j + i, 0, 0);
      out[b].push_back(ProjectiveTransform::adopt(m));
    }
  return out;
}

/// softmax(attn_w mu + attn_b).
inline std::vector<double> attention_weights(const std::vector<double>& mu, const GfmParams& params) {
  if (mu.size() != params.attn_w.shape().w) throw DimensionError("attention_weights: mu length mismatch");
  std::vector<double> logits(params.k);
  for (std::size_t j = 0; j < params.k; ++j) {
    logits[j] = params.attn_b[j];
    for (std::size_t c = 0; c < mu.size(); ++c) logits[j] += params.attn_w(0, 0, j, c) * mu[c];
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  for (double& l : logits) l /= z;
  return logits;
}

inline std::vector<double> channel_means(const Tensor& f, std::size_t b = 0) {
  std::vector<double> mu(f.shape().c);
  for (std::size_t c = 0; c < mu.size(); ++c) {
    for (double v : f.plane(b, c)) mu[c] += v;
    mu[c] /= static_cast<double>(f.shape().plane());
  }
  return mu;
}

// ---------------------------------------------------------------------------
// Equivariance harness

/// A field with its 1 x 1 x H x W validity mask.
struct MaskedField {
  Tensor field;
  Tensor mask;

  static MaskedField whole(Tensor f) {
    const Shape s = f.shape();
    return {std::move(f), Tensor({1, 1, s.h, s.w}, 1.0)};
  }
};

/// A field-to-field map that also propagates validity.
using Extractor = std::function<MaskedField(const MaskedField&)>;

inline MaskedField warp_masked(const ProjectiveTransform& g, const MaskedField& in) {
  return {warp_field(g, in.field).field, warp_mask(g, in.mask)};
}

/// 1 x 1 channel mixing with a Cout x C x 1 x 1 kernel.
inline Extractor channel_mixer(Tensor w) {
  return [w = std::move(w)](const MaskedField& in) { return MaskedField{conv2d(in.field, w), in.mask}; };
}

/// Plain k x k convolution; validity shrinks by the kernel radius.
inline Extractor conv_extractor(Tensor kernel) {
  return [kernel = std::move(kernel)](const MaskedField& in) {
    const Shape s = in.mask.shape();
    const long r = static_cast<long>(kernel.shape().h / 2);
    Tensor mask(s);
    for (long y = 0; y < static_cast<long>(s.h); ++y)
      for (long x = 0; x < static_cast<long>(s.w); ++x) {
        bool ok = true;
        for (long dy = -r; dy <= r && ok; ++dy)
          for (long dx = -r; dx <= r && ok; ++dx) {
            const long yy = y + dy, xx = x + dx;
            ok = yy >= 0 && xx >= 0 && yy < long(s.h) && xx < long(s.w) && in.mask(0, 0, yy, xx) > 0.5;
          }
        mask(0, 0, y, x) = ok ? 1.0 : 0.0;
      }
    return MaskedField{conv2d(in.field, kernel), std::move(mask)};
  };
}

/// An explicit orbit configuration: fixed transforms, fixed attention and a
/// channel-only projection. Conjugating the transforms by g yields the
/// configuration that the equivariance relation prescribes for rho(g)F.
struct OrbitConfig {
  std::vector<ProjectiveTransform> thetas;
  std::vector<double> alpha;
  Tensor w_proj;  // Cout x C x 1 x 1

  MaskedField operator()(const MaskedField& in) const {
    const Shape s = in.field.shape();
    Tensor acc(s);
    Tensor mask = in.mask;
    for (std::size_t j = 0; j < thetas.size(); ++j) {
      acc += warp_field(thetas[j], in.field).field * alpha[j];
      const Tensor m = warp_mask(thetas[j], in.mask);
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = std::min(mask[i], m[i]);
    }
    return {conv2d(acc, w_proj), std::move(mask)};
  }

  OrbitConfig conjugated(const ProjectiveTransform& g) const {
    OrbitConfig c = *this;
    for (auto& t : c.thetas) t = conjugate(g, t);
    return c;
  }

  /// Transforms and attention produced by the GFM generator for batch item b.
  static OrbitConfig from_params(const Tensor& f, const GfmParams& params, std::size_t b = 0) {
    OrbitConfig c;
    c.thetas = generate_transforms(f, params).at(b);
    c.alpha = attention_weights(channel_means(f, b), params);
    c.w_proj = params.w_proj;
    return c;
  }

  /// K random pixel-frame perturbations of strength theta_sigma, Dirichlet-like
  /// random attention and a random channel mixer.
  static OrbitConfig random(std::size_t channels, std::size_t k, double theta_sigma, std::size_t h,
                            std::size_t w, std::uint64_t seed) {
    OrbitConfig c;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      c.thetas.push_back(random_pixel_perturbation(theta_sigma, derive_seed(seed, j, 1), h, w));
      c.alpha.push_back(0.1 + u(rng));
      z += c.alpha.back();
    }
    for (double& a : c.alpha) a /= z;
    c.w_proj = Tensor({channels, channels, 1, 1});
    for (double& v : c.w_proj.data()) v = (2.0 * u(rng) - 1.0) / std::sqrt(double(channels));
    return c;
  }
};

/// ceil(sigma * max(H, W) / 2) + 2 interior pixels removed on every side.
inline std::size_t default_margin(double sigma, std::size_t h, std::size_t w) {
  return static_cast<std::size_t>(std::ceil(sigma * static_cast<double>(std::max(h, w)) / 2.0)) + 2;
}

/// ||E'(rho(g)F) - rho(g)E(F)|| / ||rho(g)E(F)|| over the pixels valid on
/// both sides and at least `margin` pixels from the border. E' is the
/// extractor used for the transformed input; for a plain equivariance test
/// it is E itself.
inline double equivariance_error(const Extractor& on_original, const Extractor& on_transformed,
                                 const ProjectiveTransform& g, const Tensor& f, std::size_t margin) {
  if (l2_norm(f) == 0.0) throw DataError("equivariance_error: input field is zero");
  const MaskedField in = MaskedField::whole(f);
  const MaskedField lhs = on_transformed(warp_masked(g, in));
  const MaskedField rhs = warp_masked(g, on_original(in));
  lhs.field.require_same(rhs.field, "equivariance_error");
  const Shape s = lhs.field.shape();
  double num = 0.0, den = 0.0;
  std::size_t count = 0;
  for (std::size_t y = margin; y + margin < s.h; ++y)
    for (std::size_t x = margin; x + margin < s.w; ++x) {
      if (lhs.mask(0, 0, y, x) < 0.5 || rhs.mask(0, 0, y, x) < 0.5) continue;
      ++count;
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c) {
          const double d = lhs.field(b, c, y, x) - rhs.field(b, c, y, x);
          num += d * d;
          den += rhs.field(b, c, y, x) * rhs.field(b, c, y, x);
        }
    }
  if (count == 0) throw EmptyOverlap("equivariance_error: no jointly valid interior pixels");
  if (den == 0.0) throw DataError("equivariance_error: extractor output vanishes on the overlap");
  return std::sqrt(num / den);
}

inline double equivariance_error(const Extractor& e, const ProjectiveTransform& g, const Tensor& f,
                                 std::size_t margin) {
  return equivariance_error(e, e, g, f, margin);
}

/// EE of the constructive configuration: `cfg` on F, cfg conjugated by g on rho(g)F.
inline double orbit_equivariance_error(const OrbitConfig& cfg, const ProjectiveTransform& g, const Tensor& f,
                                       std::size_t margin) {
  const OrbitConfig moved = cfg.conjugated(g);
  return equivariance_error([&cfg](const MaskedField& m) { return cfg(m); },
                            [&moved](const MaskedField& m) { return moved(m); }, g, f, margin);
}

// ---------------------------------------------------------------------------
// Sigma sweep

struct EeSweepConfig {
  std::vector<double> sigmas{0.1, 0.2, 0.3, 0.4, 0.5};
  std::size_t seeds = 50;
  std::size_t size = 64;
  std::size_t channels = 4;
  std::size_t k = 4;
  double theta_sigma = 0.05;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct EeRow {
  double sigma = 0.0;
  std::size_t seed = 0;
  double ee_gfm = 0.0, ee_baseline = 0.0;
};

struct EeSweep {
  std::vector<EeRow> rows;
  std::vector<double> sigmas, mean_gfm, mean_baseline;

  bool monotone(const std::vector<double>& m) const {
    for (std::size_t i = 1; i < m.size(); ++i)
      if (m[i] < m[i - 1]) return false;
    return true;
  }
  bool gfm_monotone() const { return monotone(mean_gfm); }
  bool baseline_monotone() const { return monotone(mean_baseline); }
  bool gfm_below_baseline() const {
    for (std::size_t i = 0; i < sigmas.size(); ++i)
      if (!(mean_gfm[i] < mean_baseline[i])) return false;
    return true;
  }
  bool passed() const { return gfm_monotone() && baseline_monotone() && gfm_below_baseline(); }

  /// Long format: one row per (method, sigma, seed).
  std::string csv() const {
    io::CsvWriter w({"method", "sigma", "seed", "ee"});
    for (const EeRow& r : rows) w.row({"gfm", io::fmt(r.sigma, 6), std::to_string(r.seed), io::fmt(r.ee_gfm)});
    for (const EeRow& r : rows)
      w.row({"baseline", io::fmt(r.sigma, 6), std::to_string(r.seed), io::fmt(r.ee_baseline)});
    return w.str();
  }
};

/// One (sigma, seed) trial. A g whose jointly valid interior is empty is
/// redrawn from the next derived stream.
inline EeRow ee_trial(const EeSweepConfig& cfg, const Tensor& baseline_kernel, double sigma, std::size_t s) {
  const std::size_t n = cfg.size;
  const Tensor f = random_smooth_field({1, cfg.channels, n, n}, derive_seed(cfg.seed, s, 11));
  const OrbitConfig orbit = OrbitConfig::random(cfg.channels, cfg.k, cfg.theta_sigma, n, n, derive_seed(cfg.seed, s, 12));
  const Extractor baseline = conv_extractor(baseline_kernel);
  const std::size_t margin = default_margin(sigma, n, n);
  for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
    const ProjectiveTransform g =
        random_pixel_perturbation(sigma, derive_seed(cfg.seed, s, 1000 + attempt), n, n);
    try {
      return {sigma, s, orbit_equivariance_error(orbit, g, f, margin), equivariance_error(baseline, g, f, margin)};
    } catch (const EmptyOverlap&) {
    }
  }
  throw EmptyOverlap("ee_trial: no perturbation with a valid interior overlap");
}

inline Tensor baseline_kernel(std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor k({channels, channels, 3, 3});
  for (double& v : k.data()) v = u(rng) / std::sqrt(9.0 * double(channels));
  return k;
}

inline EeSweep run_ee_sweep(const EeSweepConfig& cfg) {
  if (cfg.seeds == 0) throw ConfigError("EE sweep needs at least one seed");
  if (cfg.sigmas.empty()) throw ConfigError("EE sweep needs a sigma grid");
  const Tensor kernel = baseline_kernel(cfg.channels, derive_seed(cfg.seed, 0, 13));
  EeSweep out;
  out.sigmas = cfg.sigmas;
  out.rows.resize(cfg.sigmas.size() * cfg.seeds);
  parallel_for(out.rows.size(), cfg.jobs, [&](std::size_t i) {
    out.rows[i] = ee_trial(cfg, kernel, cfg.sigmas[i / cfg.seeds], i % cfg.seeds);
  });
  for (std::size_t si = 0; si < cfg.sigmas.size(); ++si) {
    double a = 0.0, b = 0.0;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      a += out.rows[si * cfg.seeds + s].ee_gfm;
      b += out.rows[si * cfg.seeds + s].ee_baseline;
    }
    out.mean_gfm.push_back(a / double(cfg.seeds));
    out.mean_baseline.push_back(b / double(cfg.seeds));
  }
  return out;
}

} // namespace lagr
