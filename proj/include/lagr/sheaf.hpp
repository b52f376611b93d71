#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lagr/diff/ops.hpp"
#include "lagr/io.hpp"
#include "lagr/parallel.hpp"
#include "lagr/synth.hpp"

namespace lagr {

struct Patch {
  std::size_t row0 = 0, col0 = 0, height = 0, width = 0;
};

/// Sliding-window cover of an H x W grid, patches listed row-major over the lattice.
struct PatchCover {
  std::vector<Patch> patches;
  std::size_t rows = 0, cols = 0;
  std::size_t patch = 0, stride = 0;
  std::size_t h = 0, w = 0;

  std::size_t size() const { return patches.size(); }
};

namespace detail {
/// 0, stride, 2*stride, ... with the last window clamped to end at the edge.
inline std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, std::size_t stride) {
  std::vector<std::size_t> pos{0};
  while (pos.back() + patch < extent) pos.push_back(std::min(pos.back() + stride, extent - patch));
  return pos;
}
} // namespace detail

inline PatchCover build_cover(std::size_t h, std::size_t w, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0 || stride > patch)
    throw ConfigError("build_cover: need 1 <= stride <= patch");
  if (patch > std::min(h, w))
    throw ConfigError("build_cover: patch " + std::to_string(patch) + " exceeds field extent " +
                      std::to_string(std::min(h, w)));
  PatchCover c;
  c.patch = patch;
  c.stride = stride;
  c.h = h;
  c.w = w;
  const auto ys = detail::window_starts(h, patch, stride), xs = detail::window_starts(w, patch, stride);
  c.rows = ys.size();
  c.cols = xs.size();
  for (std::size_t y : ys)
    for (std::size_t x : xs) c.patches.push_back({y, x, patch, patch});
  return c;
}

/// Default cover: patch = H/4, stride = patch/2.
inline PatchCover default_cover(std::size_t h, std::size_t w) {
  const std::size_t patch = std::max<std::size_t>(1, h / 4);
  return build_cover(h, w, patch, std::max<std::size_t>(1, patch / 2));
}

/// 1-skeleton of the nerve restricted to 4-neighbours on the patch lattice.
struct PatchGraph {
  std::size_t n = 0;
  std::size_t edges = 0;
  Tensor adjacency;    // 1 x 1 x N x N
  Tensor laplacian;    // D - A
  Tensor renormalized; // D~^-1/2 (A + I) D~^-1/2
  std::vector<double> degree;
  std::vector<std::size_t> component;  // connected-component label per node

  double a(std::size_t i, std::size_t j) const { return adjacency(0, 0, i, j); }
};

inline PatchGraph graph_from_adjacency(const Tensor& adj) {
  const std::size_t n = adj.shape().h;
  if (adj.shape() != Shape{1, 1, n, n}) throw DimensionError("adjacency must be 1 x 1 x N x N");
  PatchGraph g;
  g.n = n;
  g.adjacency = adj;
  g.laplacian = Tensor({1, 1, n, n});
  g.renormalized = Tensor({1, 1, n, n});
  g.degree.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (adj(0, 0, i, i) != 0.0) throw InvariantError("adjacency must be hollow");
    for (std::size_t j = 0; j < n; ++j) {
      if (adj(0, 0, i, j) != adj(0, 0, j, i)) throw InvariantError("adjacency must be symmetric");
      g.degree[i] += adj(0, 0, i, j);
      if (j > i && adj(0, 0, i, j) != 0.0) ++g.edges;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      g.laplacian(0, 0, i, j) = (i == j ? g.degree[i] : 0.0) - adj(0, 0, i, j);
      const double aij = adj(0, 0, i, j) + (i == j ? 1.0 : 0.0);
      g.renormalized(0, 0, i, j) = aij / std::sqrt((g.degree[i] + 1.0) * (g.degree[j] + 1.0));
    }
  g.component.assign(n, n);
  std::size_t label = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (g.component[s] != n) continue;
    std::vector<std::size_t> stack{s};
    g.component[s] = label;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < n; ++j)
        if (adj(0, 0, i, j) != 0.0 && g.component[j] == n) {
          g.component[j] = label;
          stack.push_back(j);
        }
    }
    ++label;
  }
  return g;
}

inline PatchGraph build_nerve(const PatchCover& cover) {
  const std::size_t n = cover.size();
  Tensor adj({1, 1, n, n});
  for (std::size_t r = 0; r < cover.rows; ++r)
    for (std::size_t c = 0; c < cover.cols; ++c) {
      const std::size_t i = r * cover.cols + c;
      if (c + 1 < cover.cols) adj(0, 0, i, i + 1) = adj(0, 0, i + 1, i) = 1.0;
      if (r + 1 < cover.rows) adj(0, 0, i, i + cover.cols) = adj(0, 0, i + cover.cols, i) = 1.0;
    }
  return graph_from_adjacency(adj);
}

// Cochains are stored as B x 1 x N x C tensors: row i holds patch i's vector.

namespace detail {
inline void check_cover_fits(const Shape& s, const PatchCover& cover) {
  if (s.h != cover.h || s.w != cover.w)
    throw DimensionError("cover built for " + std::to_string(cover.h) + "x" + std::to_string(cover.w) +
                         " does not fit field " + s.str());
}
/// Number of patches covering each pixel.
inline std::vector<double> coverage(const PatchCover& cover) {
  std::vector<double> cnt(cover.h * cover.w, 0.0);
  for (const Patch& p : cover.patches)
    for (std::size_t y = p.row0; y < p.row0 + p.height; ++y)
      for (std::size_t x = p.col0; x < p.col0 + p.width; ++x) cnt[y * cover.w + x] += 1.0;
  return cnt;
}
} // namespace detail

/// V_i = mean of F over patch i, per channel.
inline Tensor restrict_to_cover(const Tensor& f, const PatchCover& cover) {
  const Shape s = f.shape();
  detail::check_cover_fits(s, cover);
  Tensor v({s.b, 1, cover.size(), s.c});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < cover.size(); ++i) {
      const Patch& p = cover.patches[i];
      const double inv = 1.0 / static_cast<double>(p.height * p.width);
      for (std::size_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (std::size_t y = p.row0; y < p.row0 + p.height; ++y)
          for (std::size_t x = p.col0; x < p.col0 + p.width; ++x) acc += f(b, c, y, x);
        v(b, 0, i, c) = acc * inv;
      }
    }
  return v;
}

/// Field whose every pixel averages the vectors of the patches covering it.
inline Tensor extend_from_cover(const Tensor& v, const PatchCover& cover) {
  const Shape vs = v.shape();
  if (vs.c != 1 || vs.h != cover.size()) throw DimensionError("extend_from_cover: cochain " + vs.str());
  const auto cnt = detail::coverage(cover);
  Tensor f({vs.b, vs.w, cover.h, cover.w});
  for (std::size_t b = 0; b < vs.b; ++b)
    for (std::size_t i = 0; i < cover.size(); ++i) {
      const Patch& p = cover.patches[i];
      for (std::size_t c = 0; c < vs.w; ++c)
        for (std::size_t y = p.row0; y < p.row0 + p.height; ++y)
          for (std::size_t x = p.col0; x < p.col0 + p.width; ++x)
            f(b, c, y, x) += v(b, 0, i, c) / cnt[y * cover.w + x];
    }
  return f;
}

/// h1 = relu(A^ V w1), h2 = relu(A^ h1 w2); w1: C x C', w2: C' x C'' (1 x 1 x rows x cols).
inline Tensor gcn_forward(const Tensor& v, const PatchGraph& g, const Tensor& w1, const Tensor& w2) {
  diff::Tape t;
  const diff::Var h1 = diff::relu(diff::right_matmul(diff::left_matmul(g.renormalized, t.constant(v)), t.constant(w1)));
  return diff::relu(diff::right_matmul(diff::left_matmul(g.renormalized, h1), t.constant(w2))).value();
}

/// 1/(2BN) sum_b sum_ij A_ij ||h_i - h_j||^2.
inline double sheaf_energy_pairwise(const Tensor& h, const PatchGraph& g) {
  const Shape s = h.shape();
  double acc = 0.0;
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t j = 0; j < g.n; ++j) {
        const double a = g.a(i, j);
        if (a == 0.0) continue;
        double d2 = 0.0;
        for (std::size_t c = 0; c < s.w; ++c) {
          const double d = h(b, 0, i, c) - h(b, 0, j, c);
          d2 += d * d;
        }
        acc += a * d2;
      }
  return acc / (2.0 * static_cast<double>(s.b * g.n));
}

/// 1/(BN) sum_b Tr(H_b^T L H_b).
inline double sheaf_energy_trace(const Tensor& h, const PatchGraph& g) {
  const Shape s = h.shape();
  double acc = 0.0;
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t j = 0; j < g.n; ++j) {
        const double l = g.laplacian(0, 0, i, j);
        if (l == 0.0) continue;
        for (std::size_t c = 0; c < s.w; ++c) acc += h(b, 0, i, c) * l * h(b, 0, j, c);
      }
  return acc / static_cast<double>(s.b * g.n);
}

inline constexpr double kEnergyFormTol = 1e-9;

/// Laplacian quadratic form of a cochain; evaluates both the pairwise and the
/// trace form and rejects a disagreement beyond 1e-9 (relative above 1).
inline double sheaf_energy(const Tensor& h, const PatchGraph& g) {
  if (h.shape().c != 1 || h.shape().h != g.n)
    throw DimensionError("sheaf_energy: cochain " + h.shape().str() + " vs " + std::to_string(g.n) + " nodes");
  const double pair = sheaf_energy_pairwise(h, g), trace = sheaf_energy_trace(h, g);
  if (std::abs(pair - trace) > kEnergyFormTol * std::max(1.0, std::abs(pair)))
    throw InvariantError("sheaf_energy: pairwise " + io::fmt(pair, 17) + " != trace " + io::fmt(trace, 17));
  return pair;
}

// ---------------------------------------------------------------------------
// Differentiable path

namespace diff {

inline Var restrict_to_cover(const Var& f, const PatchCover& cover) {
  return f.tape().record(lagr::restrict_to_cover(f.value(), cover), {f}, [f, cover](Tape& t, const Tensor& g) {
    Tensor* gf = t.grad_buffer(f);
    if (!gf) return;
    const Shape s = f.shape();
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t i = 0; i < cover.size(); ++i) {
        const Patch& p = cover.patches[i];
        const double inv = 1.0 / static_cast<double>(p.height * p.width);
        for (std::size_t c = 0; c < s.c; ++c) {
          const double gi = g(b, 0, i, c) * inv;
          for (std::size_t y = p.row0; y < p.row0 + p.height; ++y)
            for (std::size_t x = p.col0; x < p.col0 + p.width; ++x) (*gf)(b, c, y, x) += gi;
        }
      }
  });
}

inline Var extend_from_cover(const Var& v, const PatchCover& cover) {
  return v.tape().record(lagr::extend_from_cover(v.value(), cover), {v}, [v, cover](Tape& t, const Tensor& g) {
    Tensor* gv = t.grad_buffer(v);
    if (!gv) return;
    const auto cnt = lagr::detail::coverage(cover);
    const Shape vs = v.shape();
    for (std::size_t b = 0; b < vs.b; ++b)
      for (std::size_t i = 0; i < cover.size(); ++i) {
        const Patch& p = cover.patches[i];
        for (std::size_t c = 0; c < vs.w; ++c) {
          double acc = 0.0;
          for (std::size_t y = p.row0; y < p.row0 + p.height; ++y)
            for (std::size_t x = p.col0; x < p.col0 + p.width; ++x) acc += g(b, c, y, x) / cnt[y * cover.w + x];
          (*gv)(b, 0, i, c) += acc;
        }
      }
  });
}

inline Var gcn_forward(const Var& v, const PatchGraph& g, const Var& w1, const Var& w2) {
  const Var h1 = relu(right_matmul(left_matmul(g.renormalized, v), w1));
  return relu(right_matmul(left_matmul(g.renormalized, h1), w2));
}

/// Trace form 1/(BN) sum_b Tr(H^T L H), differentiable in H.
inline Var sheaf_energy(const Var& h, const PatchGraph& g) {
  const Shape s = h.shape();
  if (s.c != 1 || s.h != g.n) throw DimensionError("sheaf_energy: cochain shape " + s.str());
  return scale(sum(mul(h, left_matmul(g.laplacian, h))), 1.0 / static_cast<double>(s.b * g.n));
}

} // namespace diff

// ---------------------------------------------------------------------------
// Correlation statistics

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 3) throw DataError("pearson: need at least 3 samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

struct ConsistencySample {
  double energy = 0.0;
  double depth_error = 0.0;
};

struct QuartileSummary {
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
};

struct ConsistencyReport {
  double r = 0.0;
  std::vector<int> quartile;               // energy quartile (0..3) per sample
  std::array<QuartileSummary, 4> by_quartile{};  // depth-error distribution per energy quartile
};

namespace detail {
inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}
} // namespace detail

/// Pearson r between energy and depth error, with samples split into energy
/// quartiles by rank and the depth-error distribution of each quartile.
inline ConsistencyReport consistency_stats(const std::vector<ConsistencySample>& samples) {
  std::vector<double> e, d;
  for (const auto& s : samples) {
    e.push_back(s.energy);
    d.push_back(s.depth_error);
  }
  ConsistencyReport rep;
  rep.r = pearson(e, d);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&e](std::size_t a, std::size_t b) { return e[a] < e[b]; });
  rep.quartile.assign(samples.size(), 0);
  std::array<std::vector<double>, 4> groups;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const int q = static_cast<int>(4 * rank / order.size());
    rep.quartile[order[rank]] = q;
    groups[q].push_back(d[order[rank]]);
  }
  for (int q = 0; q < 4; ++q) {
    auto& g = groups[q];
    QuartileSummary& s = rep.by_quartile[q];
    s.count = g.size();
    if (g.empty()) continue;
    s.min = *std::min_element(g.begin(), g.end());
    s.max = *std::max_element(g.begin(), g.end());
    s.q1 = detail::quantile(g, 0.25);
    s.median = detail::quantile(g, 0.5);
    s.q3 = detail::quantile(g, 0.75);
    s.mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Injected-inconsistency harness

struct InconsistencyConfig {
  std::size_t samples = 300;
  std::size_t size = 32;
  std::size_t channels = 1;
  std::size_t tile = 8;   // block size of the injected offsets
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct InconsistencyRow {
  double magnitude = 0.0;    // injected m in [0, 1]
  double energy = 0.0;       // sheaf energy of the restricted prediction
  double depth_error = 0.0;  // AbsRel of the prediction against the clean depth
};

struct InconsistencyResult {
  std::vector<InconsistencyRow> rows;
  double r_magnitude_energy = 0.0;
  ConsistencyReport energy_vs_error;
};

/// Clean depth D = 2 + 0.15 * smooth texture; prediction = D +/- m per tile (block-wise
/// random signs). Returns (m, energy on the default cover, AbsRel).
inline InconsistencyRow inconsistency_sample(const InconsistencyConfig& cfg, std::size_t i) {
  const std::size_t n = cfg.size;
  std::mt19937_64 rng(derive_seed(cfg.seed, i, 21));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  const double m = unit(rng);
  const Shape s{1, cfg.channels, n, n};
  Tensor clean = random_smooth_field(s, derive_seed(cfg.seed, i, 22), 4, 0.03) * 0.15;
  for (double& v : clean.data()) v += 2.0;
  Tensor pred = clean;
  const std::size_t tiles = (n + cfg.tile - 1) / cfg.tile;
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t ty = 0; ty < tiles; ++ty)
      for (std::size_t tx = 0; tx < tiles; ++tx) {
        const double off = sign(rng) ? m : -m;
        for (std::size_t y = ty * cfg.tile; y < std::min(n, (ty + 1) * cfg.tile); ++y)
          for (std::size_t x = tx * cfg.tile; x < std::min(n, (tx + 1) * cfg.tile); ++x) pred(0, c, y, x) += off;
      }
  const PatchCover cover = default_cover(n, n);
  const PatchGraph graph = build_nerve(cover);
  double err = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) err += std::abs(pred[k] - clean[k]) / clean[k];
  return {m, sheaf_energy(restrict_to_cover(pred, cover), graph), err / static_cast<double>(pred.size())};
}

inline InconsistencyResult run_inconsistency_harness(const InconsistencyConfig& cfg) {
  if (cfg.samples < 3) throw DataError("sheaf harness: need at least 3 samples");
  InconsistencyResult res;
  res.rows.resize(cfg.samples);
  parallel_for(cfg.samples, cfg.jobs, [&](std::size_t i) { res.rows[i] = inconsistency_sample(cfg, i); });
  std::vector<double> m, e;
  std::vector<ConsistencySample> samples;
  for (const auto& r : res.rows) {
    m.push_back(r.magnitude);
    e.push_back(r.energy);
    samples.push_back({r.energy, r.depth_error});
  }
  res.r_magnitude_energy = pearson(m, e);
  res.energy_vs_error = consistency_stats(samples);
  return res;
}

inline std::string consistency_csv(const InconsistencyResult& res) {
  io::CsvWriter w({"sample_id", "energy", "depth_error", "quartile"});
  for (std::size_t i = 0; i < res.rows.size(); ++i)
    w.row({std::to_string(i), io::fmt(res.rows[i].energy), io::fmt(res.rows[i].depth_error),
           std::to_string(res.energy_vs_error.quartile[i])});
  return w.str();
}

} // namespace lagr
