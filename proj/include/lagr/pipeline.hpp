#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lagr/diff/ops.hpp"
#include "lagr/diff/warp.hpp"
#include "lagr/gfm.hpp"
#include "lagr/io.hpp"
#include "lagr/losses.hpp"
#include "lagr/rcl.hpp"
#include "lagr/sheaf.hpp"
#include "lagr/synth.hpp"

namespace lagr {

struct ModelConfig {
  std::array<std::size_t, 3> channels{8, 16, 32};
  std::size_t in_channels = 3;
  std::size_t k = 4;
  std::size_t gfm_hidden = 8;
  std::size_t degree = 2;
  std::size_t rcl_channels = 12;
  std::size_t rcl_kernel = 3;
  std::size_t sm_patch = 2, sm_stride = 1;
  std::size_t dec_channels = 8;
  double init_depth = 2.0;
  LossWeights weights;
  double lr = 0.05;
  std::size_t scenes = 2;
  std::size_t size = 64;
  double aug_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    for (std::size_t c : channels)
      if (c == 0) throw ConfigError("stage channel counts must be positive");
    if (in_channels == 0 || k == 0 || gfm_hidden == 0 || dec_channels == 0)
      throw ConfigError("model dimensions must be positive");
    if (degree > 2) throw ConfigError("the toy pyramid has three levels, so D <= 2");
    if (rcl_channels < degree + 1) throw ConfigError("rcl_channels must be at least D + 1");
    if (rcl_kernel % 2 == 0) throw ConfigError("rcl_kernel must be odd");
    if (sm_patch == 0 || sm_stride == 0 || sm_stride > sm_patch) throw ConfigError("need 1 <= sm_stride <= sm_patch");
    if (!(init_depth > 0.0) || !std::isfinite(init_depth)) throw ConfigError("init_depth must be positive");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
    if (scenes == 0) throw ConfigError("need at least one training scene");
    if (size == 0 || size % 16 != 0) throw ConfigError("scene size must be a positive multiple of 16");
    if (!(aug_sigma >= 0.0)) throw ConfigError("aug_sigma must be non-negative");
    weights.validate();
  }
};

inline void check_divisible(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0)
    throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 16");
}

struct ModelParams {
  std::array<Tensor, 3> enc_w, enc_b;  // stage kernels Ci x Ci-1 x 3 x 3, biases 1 x Ci x 1 x 1
  GfmParams gfm;
  GradedKernelBank rcl;
  Tensor sm_w1, sm_w2;                 // 1 x 1 x C x C
  Tensor dec_w0, dec_b0, dec_w1, dec_b1;

  static ModelParams init(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xC0FFEE));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto he = [&](Shape s) {
      Tensor t(s);
      const double a = std::sqrt(6.0 / static_cast<double>(s.c * s.h * s.w));
      for (double& v : t.data()) v = a * u(rng);
      return t;
    };
    ModelParams p;
    std::size_t prev = cfg.in_channels;
    for (std::size_t i = 0; i < 3; ++i) {
      p.enc_w[i] = he({cfg.channels[i], prev, 3, 3});
      p.enc_b[i] = Tensor({1, cfg.channels[i], 1, 1}, 0.01);
      prev = cfg.channels[i];
    }
    p.gfm = GfmParams::init(cfg.channels[0], cfg.k, cfg.gfm_hidden, derive_seed(cfg.seed, 1));
    p.rcl = GradedKernelBank::init(cfg.rcl_channels, cfg.rcl_channels, cfg.rcl_kernel, cfg.degree,
                                   {cfg.channels[0], cfg.channels[1], cfg.channels[2]}, derive_seed(cfg.seed, 2));
    const std::size_t c = cfg.rcl_channels;
    p.sm_w1 = Tensor({1, 1, c, c});
    p.sm_w2 = Tensor({1, 1, c, c});
    for (Tensor* w : {&p.sm_w1, &p.sm_w2})
      for (double& v : w->data()) v = u(rng) * std::sqrt(3.0 / static_cast<double>(c));
    p.dec_w0 = he({cfg.dec_channels, c, 3, 3});
    p.dec_b0 = Tensor({1, cfg.dec_channels, 1, 1}, 0.01);
    p.dec_w1 = he({1, cfg.dec_channels, 3, 3});
    for (double& v : p.dec_w1.data()) v *= 0.1;
    p.dec_b1 = Tensor({1, 1, 1, 1}, std::log(std::expm1(cfg.init_depth)));
    return p;
  }
};

/// Visits every trainable parameter as (name, values, shape) in a fixed order.
template <class F>
void for_each_param(ModelParams& p, F&& f) {
  for (std::size_t i = 0; i < 3; ++i) {
    f("enc.w" + std::to_string(i), p.enc_w[i].data(), p.enc_w[i].shape());
    f("enc.b" + std::to_string(i), p.enc_b[i].data(), p.enc_b[i].shape());
  }
  f("gfm.w1", p.gfm.w1.data(), p.gfm.w1.shape());
  f("gfm.b1", p.gfm.b1.data(), p.gfm.b1.shape());
  f("gfm.w2", p.gfm.w2.data(), p.gfm.w2.shape());
  f("gfm.b2", p.gfm.b2.data(), p.gfm.b2.shape());
  f("gfm.attn_w", p.gfm.attn_w.data(), p.gfm.attn_w.shape());
  f("gfm.attn_b", p.gfm.attn_b.data(), p.gfm.attn_b.shape());
  f("gfm.w_proj", p.gfm.w_proj.data(), p.gfm.w_proj.shape());
  f("rcl.w", p.rcl.w.data(), p.rcl.w.shape());
  f("rcl.fuse", p.rcl.fuse.data(), p.rcl.fuse.shape());
  for (std::size_t d = 0; d <= p.rcl.degree; ++d) {
    const Shape cs{1, p.rcl.c_out(), 1, 1};
    f("rcl.gamma" + std::to_string(d), std::span<double>(p.rcl.bn[d].gamma), cs);
    f("rcl.beta" + std::to_string(d), std::span<double>(p.rcl.bn[d].beta), cs);
    if (!p.rcl.adapters[d].empty())
      f("rcl.adapter" + std::to_string(d), p.rcl.adapters[d].data(), p.rcl.adapters[d].shape());
  }
  f("sm.w1", p.sm_w1.data(), p.sm_w1.shape());
  f("sm.w2", p.sm_w2.data(), p.sm_w2.shape());
  f("dec.w0", p.dec_w0.data(), p.dec_w0.shape());
  f("dec.b0", p.dec_b0.data(), p.dec_b0.shape());
  f("dec.w1", p.dec_w1.data(), p.dec_w1.shape());
  f("dec.b1", p.dec_b1.data(), p.dec_b1.shape());
}

/// Non-trainable state: batch-norm running statistics.
template <class F>
void for_each_buffer(ModelParams& p, F&& f) {
  for (std::size_t d = 0; d <= p.rcl.degree; ++d) {
    const Shape cs{1, p.rcl.c_out(), 1, 1};
    f("rcl.bn_mean" + std::to_string(d), std::span<double>(p.rcl.bn[d].mean), cs);
    f("rcl.bn_var" + std::to_string(d), std::span<double>(p.rcl.bn[d].var), cs);
  }
}

/// ModelParams bound to a tape; `leaves` follows the for_each_param order.
struct ModelVars {
  std::array<diff::Var, 3> enc_w, enc_b;
  GfmVars gfm;
  RclVars rcl;
  diff::Var sm_w1, sm_w2;
  diff::Var dec_w0, dec_b0, dec_w1, dec_b1;
  std::vector<diff::Var> leaves;

  static ModelVars bind(diff::Tape& t, ModelParams& p, bool requires_grad = true) {
    ModelVars v;
    for_each_param(p, [&](const std::string&, std::span<double> vals, Shape s) {
      v.leaves.push_back(t.leaf(Tensor(s, std::vector<double>(vals.begin(), vals.end())), requires_grad));
    });
    std::size_t i = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      v.enc_w[s] = v.leaves[i++];
      v.enc_b[s] = v.leaves[i++];
    }
    v.gfm.k = p.gfm.k;
    for (diff::Var* g : {&v.gfm.w1, &v.gfm.b1, &v.gfm.w2, &v.gfm.b2, &v.gfm.attn_w, &v.gfm.attn_b, &v.gfm.w_proj})
      *g = v.leaves[i++];
    v.rcl.w = v.leaves[i++];
    v.rcl.fuse = v.leaves[i++];
    for (std::size_t d = 0; d <= p.rcl.degree; ++d) {
      v.rcl.gamma.push_back(v.leaves[i++]);
      v.rcl.beta.push_back(v.leaves[i++]);
      v.rcl.adapters.push_back(p.rcl.adapters[d].empty() ? diff::Var{} : v.leaves[i++]);
      v.rcl.mask_tensors.push_back(mask_tensor(p.rcl.w.shape(), p.rcl.masks[d]));
    }
    v.sm_w1 = v.leaves[i++];
    v.sm_w2 = v.leaves[i++];
    v.dec_w0 = v.leaves[i++];
    v.dec_b0 = v.leaves[i++];
    v.dec_w1 = v.leaves[i++];
    v.dec_b1 = v.leaves[i++];
    return v;
  }
};

// ---------------------------------------------------------------------------
// Forward

struct ModelOutput {
  diff::Var depth;          // B x 1 x H x W, strictly positive
  diff::Var sheaf_energy;   // scalar
  std::vector<diff::Var> pyramid;    // encoder levels F0, F1, F2
  diff::Var gfm_features;
  std::vector<diff::Var> rcl_outputs;  // per degree, last one after sheaf refinement
  diff::Var cochain;                   // propagated patch features
  diff::Var fused;
};

/// Stage i: relu(conv3x3 + bias) followed by bilinear resampling to stride
/// 4, 8, 16 of the input.
inline std::vector<diff::Var> toy_encoder(const diff::Var& image, const ModelVars& v) {
  using namespace diff;
  const Shape s = image.shape();
  check_divisible(s.h, s.w);
  std::vector<Var> levels;
  Var x = image;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t stride = std::size_t{4} << i;
    x = resize_bilinear(relu(add_channel_bias(conv2d(x, v.enc_w[i]), v.enc_b[i])), s.h / stride, s.w / stride);
    levels.push_back(x);
  }
  return levels;
}

inline ModelOutput model_forward(const diff::Var& image, const ModelVars& v, ModelParams& p, const ModelConfig& cfg,
                                 BnMode mode) {
  using namespace diff;
  const Shape s = image.shape();
  ModelOutput out;
  out.pyramid = toy_encoder(image, v);
  out.gfm_features = gfm_forward(out.pyramid[0], v.gfm).features;
  const std::vector<Var> pyr{out.gfm_features, out.pyramid[1], out.pyramid[2]};
  for (std::size_t d = 0; d <= p.rcl.degree; ++d) out.rcl_outputs.push_back(rcl_degree(pyr, v.rcl, p.rcl, d, mode));

  Var& deepest = out.rcl_outputs.back();
  const PatchCover cover = build_cover(deepest.shape().h, deepest.shape().w, cfg.sm_patch, cfg.sm_stride);
  const PatchGraph graph = build_nerve(cover);
  out.cochain = gcn_forward(restrict_to_cover(deepest, cover), graph, v.sm_w1, v.sm_w2);
  out.sheaf_energy = diff::sheaf_energy(out.cochain, graph);
  deepest = add(deepest, extend_from_cover(out.cochain, cover));

  out.fused = rcl_fuse(out.rcl_outputs, v.rcl, s.h / 4, s.w / 4);
  Var x = resize_bilinear(out.fused, s.h / 2, s.w / 2);
  x = relu(add_channel_bias(conv2d(x, v.dec_w0), v.dec_b0));
  x = resize_bilinear(x, s.h, s.w);
  out.depth = softplus(add_channel_bias(conv2d(x, v.dec_w1), v.dec_b1));
  return out;
}

/// Evaluation-mode depth prediction without gradients.
inline Tensor predict_depth(const Tensor& image, ModelParams& p, const ModelConfig& cfg) {
  diff::Tape t;
  const ModelVars v = ModelVars::bind(t, p, false);
  return model_forward(t.constant(image), v, p, cfg, BnMode::eval).depth.value();
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneOptions {
  double sigma_min = 0.05, sigma_max = 0.15;  // source homography perturbation
  double parallax_min = 4.0, parallax_max = 6.0;  // |t| in pixel-depth units
  std::size_t sources = 2;
  std::size_t channels = 3;
  double depth_mean = 3.0;
  double depth_relief = 0.15;
};

namespace detail {

inline double texture_value(const SmoothTexture& t, std::size_t c, double x, double y) { return 0.25 * t(c, x, y); }

/// Depth model D(p) = mean (1 + relief * s(p) / max|s|), defined at real p.
struct DepthModel {
  SmoothTexture shape;
  double mean = 3.0, relief = 0.15, peak = 1.0;

  double operator()(double x, double y) const { return mean * (1.0 + relief * shape(0, x, y) / peak); }
};

} // namespace detail

/// Textured scene seen by the reference camera and `sources` source cameras.
/// A reference pixel p appears in source j at q = pi(G_j iota(p)) + t_j / D(p);
/// sources are rendered by solving q(p) = q for p with a fixed-point
/// iteration and reading the analytic texture there.
inline SceneSample make_synthetic_scene(std::uint64_t seed, std::size_t h, std::size_t w,
                                        const SceneOptions& opt = {}) {
  check_divisible(h, w);
  if (opt.sources == 0 || opt.channels == 0) throw ConfigError("scene needs sources and channels");
  const SmoothTexture tex = SmoothTexture::random(opt.channels, derive_seed(seed, 41), 6, 0.08);
  detail::DepthModel depth{SmoothTexture::random(1, derive_seed(seed, 42), 4, 0.03), opt.depth_mean, opt.depth_relief,
                           1.0};
  double peak = 0.0;
  for (const PlaneWave& pw : depth.shape.planes[0]) peak += pw.amp;
  depth.peak = peak;

  SceneSample sc;
  sc.reference = Tensor({1, opt.channels, h, w});
  sc.depth_gt = Tensor({1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      for (std::size_t c = 0; c < opt.channels; ++c) sc.reference(0, c, y, x) = detail::texture_value(tex, c, fx, fy);
      sc.depth_gt(0, 0, y, x) = depth(fx, fy);
    }
  sc.mask = Tensor({1, 1, h, w}, 1.0);

  std::mt19937_64 rng(derive_seed(seed, 43));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < opt.sources; ++j) {
    const double sigma = opt.sigma_min + (opt.sigma_max - opt.sigma_min) * unit(rng);
    const double ang = 2.0 * std::numbers::pi * (static_cast<double>(j) + unit(rng)) / static_cast<double>(opt.sources);
    const double mag = opt.parallax_min + (opt.parallax_max - opt.parallax_min) * unit(rng);
    SourceView view;
    view.homography = sigma > 0 ? random_pixel_perturbation(sigma, derive_seed(seed, 44, j), h, w)
                                : ProjectiveTransform::identity();
    view.tu = mag * std::cos(ang);
    view.tv = mag * std::sin(ang);
    Mat3 ginv = inverse3(view.homography.matrix());
    const double norm = ginv[8];
    for (double& e : ginv) e /= norm;
    view.image = Tensor({1, opt.channels, h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const GridPoint q{static_cast<double>(x), static_cast<double>(y)};
        GridPoint p = apply_point(ginv, q);
        for (int it = 0; it < 50; ++it) {
          const double d = depth(p.u, p.v);
          const GridPoint next = apply_point(ginv, {q.u - view.tu / d, q.v - view.tv / d});
          const bool done = std::abs(next.u - p.u) + std::abs(next.v - p.v) < 1e-13;
          p = next;
          if (done) break;
        }
        for (std::size_t c = 0; c < opt.channels; ++c) view.image(0, c, y, x) = detail::texture_value(tex, c, p.u, p.v);
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const GridPoint q = apply_point(view.homography, {static_cast<double>(x), static_cast<double>(y)});
        const double d = sc.depth_gt(0, 0, y, x);
        if (!bilinear_taps(q.u + view.tu / d, q.v + view.tv / d, h, w).valid) sc.mask(0, 0, y, x) = 0.0;
      }
    sc.sources.push_back(std::move(view));
  }
  sc.validate();
  return sc;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingScene {
  SceneSample scene;
  ProjectiveTransform g_aug;
  Tensor augmented;       // rho(g_aug) reference
  Tensor augmented_mask;  // where the augmented image is defined
};

inline std::vector<TrainingScene> make_training_scenes(const ModelConfig& cfg) {
  std::vector<TrainingScene> out;
  for (std::size_t i = 0; i < cfg.scenes; ++i) {
    TrainingScene ts;
    ts.scene = make_synthetic_scene(derive_seed(cfg.seed, 100, i), cfg.size, cfg.size);
    ts.g_aug = cfg.aug_sigma > 0 ? random_pixel_perturbation(cfg.aug_sigma, derive_seed(cfg.seed, 200, i), cfg.size, cfg.size)
                                 : ProjectiveTransform::identity();
    const WarpResult wr = warp_field(ts.g_aug, ts.scene.reference);
    ts.augmented = wr.field;
    ts.augmented_mask = wr.valid_mask;
    out.push_back(std::move(ts));
  }
  return out;
}

struct LossEval {
  LossRecord record;
  diff::Var total;
};

/// Batch = [references..., augmented references...] through one forward;
/// each loss term is averaged over scenes.
inline LossEval evaluate_loss(diff::Tape& t, const ModelVars& v, ModelParams& p, const ModelConfig& cfg,
                              const std::vector<TrainingScene>& scenes, BnMode mode) {
  using namespace diff;
  const std::size_t n = scenes.size();
  const Shape is = scenes[0].scene.reference.shape();
  Tensor batch({2 * n, is.c, is.h, is.w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < is.c; ++c) {
      const auto ref = scenes[i].scene.reference.plane(0, c), aug = scenes[i].augmented.plane(0, c);
      std::copy(ref.begin(), ref.end(), batch.plane(i, c).begin());
      std::copy(aug.begin(), aug.end(), batch.plane(n + i, c).begin());
    }
  const ModelOutput out = model_forward(t.constant(std::move(batch)), v, p, cfg, mode);
  Var pho, grp, sm;
  for (std::size_t i = 0; i < n; ++i) {
    const Var d = batch_item(out.depth, i), d_aug = batch_item(out.depth, n + i);
    const Var pi = photometric_loss(scenes[i].scene, d);
    const Var gi = group_consistency_loss(d, d_aug, scenes[i].g_aug, scenes[i].augmented_mask);
    const Var si = smoothness_loss(d, scenes[i].scene.reference);
    pho = i == 0 ? pi : add(pho, pi);
    grp = i == 0 ? gi : add(grp, gi);
    sm = i == 0 ? si : add(sm, si);
  }
  const double inv = 1.0 / static_cast<double>(n);
  const LossTerms terms{scale(pho, inv), scale(grp, inv), out.sheaf_energy, scale(sm, inv)};
  LossEval e;
  e.total = total_loss(terms, cfg.weights);
  e.record = {0, terms.pho.value()[0], terms.grp.value()[0], terms.sheaf.value()[0], terms.sm.value()[0],
              e.total.value()[0]};
  return e;
}

struct TrainState {
  ModelParams params;
  std::size_t step = 0;
  std::vector<LossRecord> history;  // loss at the parameters before each update
  LossRecord final_loss;            // loss after the last update
};

inline void check_finite(const LossRecord& r) {
  for (double v : {r.pho, r.grp, r.sheaf, r.sm, r.total})
    if (!std::isfinite(v))
      throw DataError("training aborted at step " + std::to_string(r.step) + ": non-finite loss (pho=" +
                      io::fmt(r.pho) + " grp=" + io::fmt(r.grp) + " sheaf=" + io::fmt(r.sheaf) + " sm=" +
                      io::fmt(r.sm) + ")");
}

namespace detail {

/// Runs a loss evaluation, reporting numerical breakdown as a training abort.
template <class F>
auto guarded(std::size_t step, F&& f) {
  try {
    return f();
  } catch (const DegenerateTransform& e) {
    throw DataError("training aborted at step " + std::to_string(step) + ": " + e.what());
  } catch (const PointAtInfinity& e) {
    throw DataError("training aborted at step " + std::to_string(step) + ": " + e.what());
  }
}

} // namespace detail

/// Plain gradient descent with a constant learning rate on fixed scenes.
inline TrainState train(const ModelConfig& cfg, std::size_t n_steps,
                        const std::function<void(const LossRecord&)>& on_step = {}) {
  cfg.validate();
  if (n_steps == 0) throw ConfigError("train: n_steps must be at least 1");
  const auto scenes = make_training_scenes(cfg);
  TrainState st;
  st.params = ModelParams::init(cfg);
  for (std::size_t s = 0; s < n_steps; ++s) {
    diff::Tape t;
    const ModelVars v = ModelVars::bind(t, st.params);
    LossEval e = detail::guarded(s, [&] { return evaluate_loss(t, v, st.params, cfg, scenes, BnMode::train); });
    e.record.step = s;
    check_finite(e.record);
    t.backward(e.total);
    std::size_t i = 0;
    for_each_param(st.params, [&](const std::string& name, std::span<double> vals, Shape) {
      const Tensor& g = v.leaves[i++].grad();
      if (g.empty()) return;
      for (std::size_t k = 0; k < vals.size(); ++k) {
        vals[k] -= cfg.lr * g[k];
        if (!std::isfinite(vals[k]))
          throw DataError("training aborted at step " + std::to_string(s) + ": parameter " + name + "[" +
                          std::to_string(k) + "] became non-finite");
      }
    });
    st.history.push_back(e.record);
    if (on_step) on_step(e.record);
    st.step = s + 1;
  }
  diff::Tape t;
  const ModelVars v = ModelVars::bind(t, st.params, false);
  ModelParams probe = st.params;  // keep running statistics untouched by the final evaluation
  st.final_loss = detail::guarded(n_steps, [&] { return evaluate_loss(t, v, probe, cfg, scenes, BnMode::train); }).record;
  st.final_loss.step = n_steps;
  check_finite(st.final_loss);
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoints: one LAGT1 file per tensor plus manifest.txt ("name file dims").

inline std::string dims_text(const Shape& s) {
  return std::to_string(s.b) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

inline void save_checkpoint(const std::filesystem::path& dir, ModelParams& p) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  auto write = [&](const std::string& name, std::span<double> vals, Shape s) {
    const std::string file = name + ".lagt";
    io::save_lagt1(dir / file, Tensor(s, std::vector<double>(vals.begin(), vals.end())));
    manifest << name << ' ' << file << ' ' << dims_text(s) << '\n';
  };
  for_each_param(p, write);
  for_each_buffer(p, write);
  io::write_text(dir / "manifest.txt", manifest.str());
}

/// Loads into parameters initialised from `cfg`; names and dims must match.
inline ModelParams load_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw FormatError("checkpoint: cannot open " + (dir / "manifest.txt").string());
  std::vector<std::array<std::string, 3>> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::array<std::string, 3> e;
    if (!(ls >> e[0] >> e[1] >> e[2])) throw FormatError("checkpoint manifest: malformed line '" + line + "'");
    entries.push_back(e);
  }
  ModelParams p = ModelParams::init(cfg);
  std::size_t idx = 0;
  auto read = [&](const std::string& name, std::span<double> vals, Shape s) {
    if (idx >= entries.size()) throw FormatError("checkpoint manifest: missing entry " + name);
    const auto& e = entries[idx++];
    if (e[0] != name) throw FormatError("checkpoint manifest: expected " + name + ", found " + e[0]);
    if (e[2] != dims_text(s)) throw FormatError("checkpoint: " + name + " has dims " + e[2] + ", model needs " + dims_text(s));
    const Tensor t = io::load_lagt1(dir / e[1]);
    if (t.shape() != s) throw FormatError("checkpoint: " + e[1] + " does not match its manifest dims");
    std::copy(t.data().begin(), t.data().end(), vals.begin());
  };
  for_each_param(p, read);
  for_each_buffer(p, read);
  if (idx != entries.size()) throw FormatError("checkpoint manifest: unexpected extra entries");
  return p;
}

} // namespace lagr
