#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "lagr/diff/tape.hpp"
#include "lagr/field_ops.hpp"

namespace lagr::diff {

// Differentiable counterparts of the tensor primitives. Each op computes its
// value eagerly and records a closure that maps the output gradient onto its
// inputs' gradients.

namespace detail {

// Smallest |input| seen by a kinked op (relu, abs) while a KinkMonitor is
// active on this thread.
inline thread_local double* kink_probe = nullptr;

inline void note_kinks(const Tensor& x) {
  if (!kink_probe) return;
  for (double v : x.data()) *kink_probe = std::min(*kink_probe, std::abs(v));
}

inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

/// Elementwise map; df(x, y) is the derivative at x given y = f(x). The
/// local derivative is evaluated eagerly and captured for the reverse sweep.
template <class F, class DF>
Var unary(const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape()), deriv(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = f(xv[i]);
    deriv[i] = df(xv[i], out[i]);
  }
  return x.tape().record(std::move(out), {x}, [x, deriv = std::move(deriv)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * deriv[i];
  });
}

} // namespace detail

/// Records the distance to the nearest nondifferentiable point reached by any
/// relu/abs evaluated on this thread during its lifetime.
class KinkMonitor {
 public:
  KinkMonitor() : prev_(detail::kink_probe) { detail::kink_probe = &min_; }
  ~KinkMonitor() { detail::kink_probe = prev_; }
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  double distance() const { return min_; }

 private:
  double min_ = std::numeric_limits<double>::infinity();
  double* prev_;
};

inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  a.value().require_same(b.value(), "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (Tensor* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  a.value().require_same(b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (Tensor* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

inline Var scale(const Var& a, double c) {
  return a.tape().record(a.value() * c, {a}, [a, c](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

/// s * a with s a scalar variable.
inline Var mul_scalar(const Var& a, const Var& s) {
  detail::same_tape(a, s);
  const double sv = s.value().item();
  return a.tape().record(a.value() * sv, {a, s}, [a, s](Tape& t, const Tensor& g) {
    const double sv = s.value().item();
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += sv * g[i];
    if (Tensor* gs = t.grad_buffer(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.value()[i];
      (*gs)[0] += acc;
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (double& v : ga->data()) v += g[0];
  });
}

/// Entry i of the flattened value as a scalar.
inline Var entry(const Var& a, std::size_t i) {
  if (i >= a.value().size()) throw RangeError("entry: index out of range");
  return a.tape().record(Tensor::scalar(a.value()[i]), {a}, [a, i](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) (*ga)[i] += g[0];
  });
}

inline Var mean(const Var& a) {
  if (a.value().empty()) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var relu(const Var& x) {
  detail::note_kinks(x.value());
  return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; },
                       [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Var abs(const Var& x) {
  detail::note_kinks(x.value());
  return detail::unary(x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var softplus(const Var& x) {
  return detail::unary(
      x, [](double v) { return v > 30 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Var reciprocal(const Var& x) {
  return detail::unary(x, [](double v) { return 1.0 / v; }, [](double v, double) { return -1.0 / (v * v); });
}

inline Var square(const Var& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Spatial ops

inline Var conv2d(const Var& x, const Var& k) {
  detail::same_tape(x, k);
  return x.tape().record(lagr::conv2d(x.value(), k.value()), {x, k}, [x, k](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) *gx += conv2d_grad_input(g, k.value(), x.shape());
    if (Tensor* gk = t.grad_buffer(k)) *gk += conv2d_grad_kernel(x.value(), g, k.shape());
  });
}

/// Adds a per-channel bias of shape 1 x C x 1 x 1.
inline Var add_channel_bias(const Var& x, const Var& bias) {
  detail::same_tape(x, bias);
  const Shape s = x.shape();
  if (bias.value().size() != s.c) throw DimensionError("add_channel_bias: bias length mismatch");
  Tensor out = x.value();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (double& v : out.plane(b, c)) v += bias.value()[c];
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (Tensor* gb = t.grad_buffer(bias)) {
      const Shape s = g.shape();
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
          for (double v : g.plane(b, c)) (*gb)[c] += v;
    }
  });
}

inline Var resize_bilinear(const Var& x, std::size_t h, std::size_t w) {
  return x.tape().record(lagr::resize_bilinear(x.value(), h, w), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) *gx += resize_bilinear_adjoint(g, x.shape().h, x.shape().w);
  });
}

/// Batch normalization with differentiable affine parameters (1 x C x 1 x 1).
/// Running statistics live in `running` and are updated in train mode; its
/// gamma/beta entries are ignored here.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormStats& running, BnMode mode) {
  detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  const Shape s = x.shape();
  if (gamma.value().size() != s.c || beta.value().size() != s.c)
    throw DimensionError("batch_norm: affine parameter length mismatch");
  BnNormalized n = bn_normalize(x.value(), running, mode);
  Tensor out(s);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto xp = n.xhat.plane(b, c);
      auto op = out.plane(b, c);
      for (std::size_t i = 0; i < xp.size(); ++i) op[i] = gamma.value()[c] * xp[i] + beta.value()[c];
    }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mode, xhat = std::move(n.xhat), inv = std::move(n.inv_std)](Tape& t, const Tensor& g) {
        const Shape s = g.shape();
        const double cnt = static_cast<double>(s.b * s.h * s.w);
        Tensor* gx = t.grad_buffer(x);
        Tensor* gg = t.grad_buffer(gamma);
        Tensor* gbeta = t.grad_buffer(beta);
        for (std::size_t c = 0; c < s.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < s.b; ++b) {
            const auto gp = g.plane(b, c);
            const auto xp = xhat.plane(b, c);
            for (std::size_t i = 0; i < gp.size(); ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * xp[i];
            }
          }
          if (gg) (*gg)[c] += sum_gx;
          if (gbeta) (*gbeta)[c] += sum_g;
          if (!gx) continue;
          const double ga = gamma.value()[c];
          for (std::size_t b = 0; b < s.b; ++b) {
            const auto gp = g.plane(b, c);
            const auto xp = xhat.plane(b, c);
            auto dst = gx->plane(b, c);
            for (std::size_t i = 0; i < gp.size(); ++i) {
              if (mode == BnMode::train)
                dst[i] += ga * inv[c] * (gp[i] - sum_g / cnt - xp[i] * sum_gx / cnt);
              else
                dst[i] += ga * inv[c] * gp[i];
            }
          }
        }
      });
}

/// Spatial mean per (b, c): B x C x 1 x 1.
inline Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  Tensor out({s.b, s.c, 1, 1});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (double v : x.value().plane(b, c)) acc += v;
      out(b, c, 0, 0) = acc / static_cast<double>(s.plane());
    }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      const Shape s = x.shape();
      const double inv = 1.0 / static_cast<double>(s.plane());
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
          for (double& v : gx->plane(b, c)) v += g(b, c, 0, 0) * inv;
    }
  });
}

/// y = W x + b on channel vectors: x is B x Cin x 1 x 1, W is 1 x 1 x Cout x Cin,
/// b is 1 x Cout x 1 x 1.
inline Var linear(const Var& x, const Var& w, const Var& bias) {
  const Shape xs = x.shape(), ws = w.shape();
  if (xs.h != 1 || xs.w != 1 || ws.w != xs.c || bias.value().size() != ws.h)
    throw DimensionError("linear: shapes " + xs.str() + " " + ws.str() + " " + bias.shape().str());
  Tensor out({xs.b, ws.h, 1, 1});
  for (std::size_t b = 0; b < xs.b; ++b)
    for (std::size_t o = 0; o < ws.h; ++o) {
      double acc = bias.value()[o];
      for (std::size_t i = 0; i < ws.w; ++i) acc += w.value()(0, 0, o, i) * x.value()(b, i, 0, 0);
      out(b, o, 0, 0) = acc;
    }
  return x.tape().record(std::move(out), {x, w, bias}, [x, w, bias](Tape& t, const Tensor& g) {
    const Shape xs = x.shape(), ws = w.shape();
    Tensor* gx = t.grad_buffer(x);
    Tensor* gw = t.grad_buffer(w);
    Tensor* gb = t.grad_buffer(bias);
    for (std::size_t b = 0; b < xs.b; ++b)
      for (std::size_t o = 0; o < ws.h; ++o) {
        const double go = g(b, o, 0, 0);
        if (gb) (*gb)[o] += go;
        for (std::size_t i = 0; i < ws.w; ++i) {
          if (gx) (*gx)(b, i, 0, 0) += go * w.value()(0, 0, o, i);
          if (gw) (*gw)(0, 0, o, i) += go * x.value()(b, i, 0, 0);
        }
      }
  });
}

/// Softmax over the channel axis of a B x K x 1 x 1 tensor.
inline Var softmax_channels(const Var& x) {
  const Shape s = x.shape();
  if (s.h != 1 || s.w != 1) throw DimensionError("softmax_channels: expects B x K x 1 x 1");
  Tensor out(s);
  for (std::size_t b = 0; b < s.b; ++b) {
    double mx = x.value()(b, 0, 0, 0);
    for (std::size_t k = 1; k < s.c; ++k) mx = std::max(mx, x.value()(b, k, 0, 0));
    double z = 0.0;
    for (std::size_t k = 0; k < s.c; ++k) z += (out(b, k, 0, 0) = std::exp(x.value()(b, k, 0, 0) - mx));
    for (std::size_t k = 0; k < s.c; ++k) out(b, k, 0, 0) /= z;
  }
  Tensor y = out;
  return x.tape().record(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      const Shape s = x.shape();
      for (std::size_t b = 0; b < s.b; ++b) {
        double dot = 0.0;
        for (std::size_t k = 0; k < s.c; ++k) dot += g(b, k, 0, 0) * y(b, k, 0, 0);
        for (std::size_t k = 0; k < s.c; ++k) (*gx)(b, k, 0, 0) += y(b, k, 0, 0) * (g(b, k, 0, 0) - dot);
      }
    }
  });
}

/// out[b] = w[b, j] * x[b] for a B x K x 1 x 1 weight tensor.
inline Var scale_by_entry(const Var& x, const Var& w, std::size_t j) {
  detail::same_tape(x, w);
  const Shape s = x.shape();
  if (w.shape().b != s.b || j >= w.shape().c) throw DimensionError("scale_by_entry: weight shape mismatch");
  Tensor out = x.value();
  for (std::size_t b = 0; b < s.b; ++b) {
    const double a = w.value()(b, j, 0, 0);
    for (std::size_t c = 0; c < s.c; ++c)
      for (double& v : out.plane(b, c)) v *= a;
  }
  return x.tape().record(std::move(out), {x, w}, [x, w, j](Tape& t, const Tensor& g) {
    const Shape s = x.shape();
    Tensor* gx = t.grad_buffer(x);
    Tensor* gw = t.grad_buffer(w);
    for (std::size_t b = 0; b < s.b; ++b) {
      const double a = w.value()(b, j, 0, 0);
      double acc = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const auto gp = g.plane(b, c);
        const auto xp = x.value().plane(b, c);
        for (std::size_t i = 0; i < gp.size(); ++i) {
          if (gx) gx->plane(b, c)[i] += a * gp[i];
          acc += gp[i] * xp[i];
        }
      }
      if (gw) (*gw)(b, j, 0, 0) += acc;
    }
  });
}

/// Tiles a B x 1 x H x W field into n channels.
inline Var repeat_channels(const Var& x, std::size_t n) {
  const Shape s = x.shape();
  if (s.c != 1) throw DimensionError("repeat_channels: expects a single channel");
  Tensor out({s.b, n, s.h, s.w});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < n; ++c) {
      const auto src = x.value().plane(b, 0);
      std::copy(src.begin(), src.end(), out.plane(b, c).begin());
    }
  return x.tape().record(std::move(out), {x}, [x, n](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      const Shape s = x.shape();
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < n; ++c) {
          const auto gp = g.plane(b, c);
          auto dst = gx->plane(b, 0);
          for (std::size_t i = 0; i < gp.size(); ++i) dst[i] += gp[i];
        }
    }
  });
}

/// Selects one batch item as a 1 x C x H x W field.
inline Var batch_item(const Var& x, std::size_t b) {
  const Shape s = x.shape();
  if (b >= s.b) throw RangeError("batch_item: index out of range");
  Tensor out({1, s.c, s.h, s.w});
  for (std::size_t c = 0; c < s.c; ++c) {
    const auto src = x.value().plane(b, c);
    std::copy(src.begin(), src.end(), out.plane(0, c).begin());
  }
  return x.tape().record(std::move(out), {x}, [x, b](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t c = 0; c < g.shape().c; ++c) {
        const auto gp = g.plane(0, c);
        auto dst = gx->plane(b, c);
        for (std::size_t i = 0; i < gp.size(); ++i) dst[i] += gp[i];
      }
  });
}

/// Mean of |x| over entries whose pixel is set in `mask` (B x 1 x H x W or
/// 1 x 1 x H x W, broadcast over channels and, for B = 1, over the batch).
inline Var masked_mean_abs(const Var& x, const Tensor& mask) {
  const Shape s = x.shape(), ms = mask.shape();
  if (ms.h != s.h || ms.w != s.w || ms.c != 1 || (ms.b != 1 && ms.b != s.b))
    throw DimensionError("masked_mean_abs: mask shape " + ms.str() + " vs field " + s.str());
  double count = 0.0, acc = 0.0;
  detail::note_kinks(x.value());
  for (std::size_t b = 0; b < s.b; ++b) {
    const auto mp = mask.plane(ms.b == 1 ? 0 : b, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto xp = x.value().plane(b, c);
      for (std::size_t i = 0; i < xp.size(); ++i)
        if (mp[i] > 0.5) {
          acc += std::abs(xp[i]);
          count += 1.0;
        }
    }
  }
  if (count == 0.0) throw EmptyOverlap("masked mean over an empty valid region");
  return x.tape().record(Tensor::scalar(acc / count), {x}, [x, mask, count](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      const Shape s = x.shape();
      const bool shared = mask.shape().b == 1;
      for (std::size_t b = 0; b < s.b; ++b) {
        const auto mp = mask.plane(shared ? 0 : b, 0);
        for (std::size_t c = 0; c < s.c; ++c) {
          const auto xp = x.value().plane(b, c);
          auto dst = gx->plane(b, c);
          for (std::size_t i = 0; i < xp.size(); ++i)
            if (mp[i] > 0.5 && xp[i] != 0.0) dst[i] += g[0] * (xp[i] > 0 ? 1.0 : -1.0) / count;
        }
      }
    }
  });
}

/// Forward difference along W: out(.., x) = in(.., x+1) - in(.., x), width W-1.
inline Var diff_x(const Var& x) {
  const Shape s = x.shape();
  if (s.w < 2) throw DimensionError("diff_x: width < 2");
  Tensor out({s.b, s.c, s.h, s.w - 1});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t i = 0; i + 1 < s.w; ++i) out(b, c, y, i) = x.value()(b, c, y, i + 1) - x.value()(b, c, y, i);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      const Shape s = g.shape();
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
          for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t i = 0; i < s.w; ++i) {
              (*gx)(b, c, y, i + 1) += g(b, c, y, i);
              (*gx)(b, c, y, i) -= g(b, c, y, i);
            }
    }
  });
}

/// Forward difference along H, height H-1.
inline Var diff_y(const Var& x) {
  const Shape s = x.shape();
  if (s.h < 2) throw DimensionError("diff_y: height < 2");
  Tensor out({s.b, s.c, s.h - 1, s.w});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y + 1 < s.h; ++y)
        for (std::size_t i = 0; i < s.w; ++i) out(b, c, y, i) = x.value()(b, c, y + 1, i) - x.value()(b, c, y, i);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      const Shape s = g.shape();
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
          for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t i = 0; i < s.w; ++i) {
              (*gx)(b, c, y + 1, i) += g(b, c, y, i);
              (*gx)(b, c, y, i) -= g(b, c, y, i);
            }
    }
  });
}

/// Per-batch matrix product M V for a constant N x N matrix (stored 1 x 1 x N x N)
/// and V of shape B x 1 x N x C.
inline Var left_matmul(const Tensor& m, const Var& v) {
  const Shape s = v.shape(), ms = m.shape();
  if (ms.h != s.h || ms.w != s.h) throw DimensionError("left_matmul: matrix " + ms.str() + " vs " + s.str());
  const std::size_t n = s.h, c = s.w;
  Tensor out(s);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const double a = m(0, 0, i, k);
        if (a == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) out(b, 0, i, j) += a * v.value()(b, 0, k, j);
      }
  return v.tape().record(std::move(out), {v}, [m, v](Tape& t, const Tensor& g) {
    if (Tensor* gv = t.grad_buffer(v)) {
      const Shape s = v.shape();
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t k = 0; k < s.h; ++k) {
            const double a = m(0, 0, i, k);
            if (a == 0.0) continue;
            for (std::size_t j = 0; j < s.w; ++j) (*gv)(b, 0, k, j) += a * g(b, 0, i, j);
          }
    }
  });
}

/// Per-batch V W for V of shape B x 1 x N x C and W of shape 1 x 1 x C x D.
inline Var right_matmul(const Var& v, const Var& w) {
  detail::same_tape(v, w);
  const Shape s = v.shape(), ws = w.shape();
  if (ws.h != s.w) throw DimensionError("right_matmul: " + s.str() + " x " + ws.str());
  Tensor out({s.b, 1, s.h, ws.w});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t k = 0; k < s.w; ++k) {
        const double a = v.value()(b, 0, i, k);
        for (std::size_t j = 0; j < ws.w; ++j) out(b, 0, i, j) += a * w.value()(0, 0, k, j);
      }
  return v.tape().record(std::move(out), {v, w}, [v, w](Tape& t, const Tensor& g) {
    const Shape s = v.shape(), ws = w.shape();
    Tensor* gv = t.grad_buffer(v);
    Tensor* gw = t.grad_buffer(w);
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t k = 0; k < s.w; ++k)
          for (std::size_t j = 0; j < ws.w; ++j) {
            const double go = g(b, 0, i, j);
            if (gv) (*gv)(b, 0, i, k) += go * w.value()(0, 0, k, j);
            if (gw) (*gw)(0, 0, k, j) += go * v.value()(b, 0, i, k);
          }
  });
}

} // namespace lagr::diff
