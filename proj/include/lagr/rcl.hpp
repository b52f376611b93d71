#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lagr/diff/ops.hpp"
#include "lagr/io.hpp"

namespace lagr {

/// Contiguous output-channel blocks [l*s, (l+1)*s) with s = floor(Cout/(D+1));
/// the last block also takes the remainder. Each mask is a 0/1 vector over Cout.
inline std::vector<std::vector<double>> build_masks(std::size_t c_out, std::size_t d) {
  if (c_out < d + 1)
    throw ConfigError("build_masks: need at least D+1 = " + std::to_string(d + 1) + " output channels, got " +
                      std::to_string(c_out));
  const std::size_t s = c_out / (d + 1);
  std::vector<std::vector<double>> masks(d + 1, std::vector<double>(c_out, 0.0));
  for (std::size_t c = 0; c < c_out; ++c) masks[std::min(c / s, d)][c] = 1.0;
  return masks;
}

/// W_RCL (.) M_l: the kernel with every output row outside block l zeroed.
inline Tensor masked_kernel(const Tensor& w, const std::vector<double>& mask) {
  Tensor out = w;
  const Shape s = w.shape();
  for (std::size_t o = 0; o < s.b; ++o)
    for (std::size_t i = 0; i < s.c; ++i)
      for (double& v : out.plane(o, i)) v *= mask[o];
  return out;
}

/// Mask expanded to the kernel's shape, for use as a constant multiplier.
inline Tensor mask_tensor(const Shape& kernel_shape, const std::vector<double>& mask) {
  return masked_kernel(Tensor(kernel_shape, 1.0), mask);
}

/// Feature levels indexed by degree; level d has spatial dims (H0 >> d, W0 >> d).
struct ScalePyramid {
  std::vector<Tensor> levels;

  std::size_t size() const { return levels.size(); }
  const Tensor& at(std::size_t d) const {
    if (d >= levels.size()) throw RangeError("pyramid has no level " + std::to_string(d));
    return levels[d];
  }

  void validate() const {
    if (levels.empty()) throw DimensionError("empty pyramid");
    const Shape s0 = levels[0].shape();
    for (std::size_t d = 0; d < levels.size(); ++d) {
      const Shape s = levels[d].shape();
      if (s.b != s0.b || s.h != (s0.h >> d) || s.w != (s0.w >> d) || s.h == 0 || s.w == 0)
        throw DimensionError("pyramid level " + std::to_string(d) + " has shape " + s.str() +
                             ", expected spatial dims halving from " + s0.str());
    }
  }
};

/// Shared generator kernel, degree masks, fuse weights, per-degree batch
/// norm and the per-source-degree 1x1 adapters realizing P_(d-l).
struct GradedKernelBank {
  Tensor w;                                 // Cout x Cin x k x k
  std::size_t degree = 0;                   // D
  std::vector<std::vector<double>> masks;   // D+1 masks over Cout
  Tensor fuse;                              // 1 x (D+1) x 1 x 1
  std::vector<NormStats> bn;                // one per output degree
  std::vector<Tensor> adapters;             // per source degree: Cin x C_level x 1 x 1, empty = pass-through

  std::size_t c_out() const { return w.shape().b; }
  std::size_t c_in() const { return w.shape().c; }
  std::size_t ksize() const { return w.shape().h; }

  /// level_channels[d] is the channel count of pyramid level d; adapters are
  /// created where it differs from c_in.
  static GradedKernelBank init(std::size_t c_out, std::size_t c_in, std::size_t k, std::size_t d,
                               const std::vector<std::size_t>& level_channels, std::uint64_t seed) {
    if (k % 2 == 0) throw ConfigError("RCL kernel size must be odd");
    if (level_channels.size() < d + 1) throw ConfigError("RCL needs a channel count for every degree");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GradedKernelBank b;
    b.w = Tensor({c_out, c_in, k, k});
    const double scale = std::sqrt(3.0 / static_cast<double>(c_in * k * k));
    for (double& v : b.w.data()) v = scale * u(rng);
    b.degree = d;
    b.masks = build_masks(c_out, d);
    b.fuse = Tensor({1, d + 1, 1, 1}, 1.0 / static_cast<double>(d + 1));
    b.bn.assign(d + 1, NormStats::identity(c_out));
    for (std::size_t l = 0; l <= d; ++l) {
      const std::size_t cl = level_channels[l];
      if (cl == c_in) {
        b.adapters.emplace_back();
        continue;
      }
      Tensor a({c_in, cl, 1, 1});
      for (double& v : a.data()) v = u(rng) * std::sqrt(3.0 / static_cast<double>(cl));
      b.adapters.push_back(std::move(a));
    }
    return b;
  }

  void validate() const {
    if (masks.size() != degree + 1 || fuse.size() != degree + 1 || bn.size() != degree + 1 ||
        adapters.size() != degree + 1)
      throw DimensionError("kernel bank: per-degree tables must have D+1 entries");
    for (const auto& m : masks)
      if (m.size() != c_out()) throw DimensionError("kernel bank: mask length differs from Cout");
  }
};

/// P_(s)(F): pyramid level s through its 1x1 channel adapter.
inline Tensor project_to_degree(const ScalePyramid& pyr, const GradedKernelBank& bank, std::size_t source) {
  const Tensor& level = pyr.at(source);
  if (source >= bank.adapters.size()) throw RangeError("no adapter for degree " + std::to_string(source));
  const Tensor& a = bank.adapters[source];
  if (a.empty()) {
    if (level.shape().c != bank.c_in()) throw DimensionError("pass-through level has wrong channel count");
    return level;
  }
  return conv2d(level, a);
}

/// sum_{l=0..d} U(conv(P_(d-l)(F), W (.) M_l)), U resizing to the level-d grid.
inline Tensor rcl_pre_activation(const ScalePyramid& pyr, const GradedKernelBank& bank, std::size_t d) {
  if (d > bank.degree) throw RangeError("degree " + std::to_string(d) + " exceeds D");
  const Shape target = pyr.at(d).shape();
  Tensor acc({target.b, bank.c_out(), target.h, target.w});
  for (std::size_t l = 0; l <= d; ++l) {
    const Tensor term = conv2d(project_to_degree(pyr, bank, d - l), masked_kernel(bank.w, bank.masks[l]));
    acc += resize_bilinear(term, target.h, target.w);
  }
  return acc;
}

/// relu(BN(pre-activation)).
inline Tensor rcl_degree(const ScalePyramid& pyr, GradedKernelBank& bank, std::size_t d, BnMode mode) {
  Tensor y = batch_norm(rcl_pre_activation(pyr, bank, d), bank.bn[d], mode);
  for (double& v : y.data()) v = v > 0 ? v : 0.0;
  return y;
}

/// sum_d fuse[d] * U(output_d) at the target resolution.
inline Tensor rcl_fuse(const std::vector<Tensor>& outputs, const GradedKernelBank& bank, std::size_t th,
                       std::size_t tw) {
  if (outputs.size() != bank.degree + 1)
    throw RangeError("rcl_fuse: expected " + std::to_string(bank.degree + 1) + " degree outputs, got " +
                     std::to_string(outputs.size()));
  const Shape s0 = outputs[0].shape();
  Tensor acc({s0.b, s0.c, th, tw});
  for (std::size_t d = 0; d < outputs.size(); ++d) acc += resize_bilinear(outputs[d], th, tw) * bank.fuse[d];
  return acc;
}

// ---------------------------------------------------------------------------
// Differentiable path

struct RclVars {
  diff::Var w, fuse;
  std::vector<diff::Var> gamma, beta, adapters;  // adapters: invalid Var = pass-through
  std::vector<Tensor> mask_tensors;

  static RclVars bind(diff::Tape& t, const GradedKernelBank& bank, bool requires_grad = true) {
    bank.validate();
    RclVars v;
    v.w = t.leaf(bank.w, requires_grad);
    v.fuse = t.leaf(bank.fuse, requires_grad);
    for (std::size_t d = 0; d <= bank.degree; ++d) {
      v.gamma.push_back(t.leaf(Tensor({1, bank.c_out(), 1, 1}, bank.bn[d].gamma), requires_grad));
      v.beta.push_back(t.leaf(Tensor({1, bank.c_out(), 1, 1}, bank.bn[d].beta), requires_grad));
      v.adapters.push_back(bank.adapters[d].empty() ? diff::Var{} : t.leaf(bank.adapters[d], requires_grad));
      v.mask_tensors.push_back(mask_tensor(bank.w.shape(), bank.masks[d]));
    }
    return v;
  }
};

inline diff::Var project_to_degree(const std::vector<diff::Var>& pyr, const RclVars& v, std::size_t source) {
  if (source >= pyr.size()) throw RangeError("pyramid has no level " + std::to_string(source));
  return v.adapters[source].valid() ? diff::conv2d(pyr[source], v.adapters[source]) : pyr[source];
}

inline diff::Var rcl_pre_activation(const std::vector<diff::Var>& pyr, const RclVars& v, std::size_t d) {
  using namespace diff;
  if (d >= v.mask_tensors.size()) throw RangeError("degree " + std::to_string(d) + " exceeds D");
  const Shape target = pyr.at(d).shape();
  Var acc;
  for (std::size_t l = 0; l <= d; ++l) {
    const Var wl = mul(v.w, v.w.tape().constant(v.mask_tensors[l]));
    const Var term = resize_bilinear(conv2d(project_to_degree(pyr, v, d - l), wl), target.h, target.w);
    acc = l == 0 ? term : add(acc, term);
  }
  return acc;
}

inline diff::Var rcl_degree(const std::vector<diff::Var>& pyr, const RclVars& v, GradedKernelBank& bank,
                            std::size_t d, BnMode mode) {
  return diff::relu(diff::batch_norm(rcl_pre_activation(pyr, v, d), v.gamma[d], v.beta[d], bank.bn[d], mode));
}

inline diff::Var rcl_fuse(const std::vector<diff::Var>& outputs, const RclVars& v, std::size_t th, std::size_t tw) {
  using namespace diff;
  if (outputs.size() != v.mask_tensors.size()) throw RangeError("rcl_fuse: one output per degree required");
  Var acc;
  for (std::size_t d = 0; d < outputs.size(); ++d) {
    const Var term = mul_scalar(resize_bilinear(outputs[d], th, tw), entry(v.fuse, d));
    acc = d == 0 ? term : add(acc, term);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Serialization: <stem>.lagt holds W_RCL, <stem>.txt the header.

inline void save_bank(const std::filesystem::path& stem, const GradedKernelBank& bank) {
  io::save_lagt1(stem.string() + ".lagt", bank.w);
  std::ostringstream h;
  h << "c_out " << bank.c_out() << "\nc_in " << bank.c_in() << "\nk " << bank.ksize() << "\nD " << bank.degree
    << "\nfuse";
  for (double f : bank.fuse.data()) h << ' ' << io::fmt(f, 17);
  h << '\n';
  io::write_text(stem.string() + ".txt", h.str());
}

inline GradedKernelBank load_bank(const std::filesystem::path& stem) {
  std::ifstream is(stem.string() + ".txt");
  if (!is) throw FormatError("cannot open bank header " + stem.string() + ".txt");
  std::size_t c_out = 0, c_in = 0, k = 0, d = 0;
  std::vector<double> fuse;
  std::string key;
  while (is >> key) {
    if (key == "c_out") is >> c_out;
    else if (key == "c_in") is >> c_in;
    else if (key == "k") is >> k;
    else if (key == "D") is >> d;
    else if (key == "fuse") {
      std::string line;
      std::getline(is, line);
      std::istringstream ls(line);
      for (double f; ls >> f;) fuse.push_back(f);
    } else {
      throw FormatError("bank header: unknown key '" + key + "'");
    }
    if (!is && !is.eof()) throw FormatError("bank header: malformed value for '" + key + "'");
  }
  GradedKernelBank b;
  b.w = io::load_lagt1(stem.string() + ".lagt");
  if (b.w.shape() != Shape{c_out, c_in, k, k}) throw FormatError("bank header does not match kernel dims");
  if (fuse.size() != d + 1) throw FormatError("bank header: expected D+1 fuse weights");
  b.degree = d;
  b.masks = build_masks(c_out, d);
  b.fuse = Tensor({1, d + 1, 1, 1}, fuse);
  b.bn.assign(d + 1, NormStats::identity(c_out));
  b.adapters.assign(d + 1, Tensor{});
  return b;
}

} // namespace lagr
