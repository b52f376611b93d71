#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lagr/diff/gradcheck.hpp"
#include "lagr/diff/ops.hpp"
#include "lagr/diff/warp.hpp"
#include "lagr/gfm.hpp"
#include "lagr/io.hpp"
#include "lagr/losses.hpp"
#include "lagr/parallel.hpp"
#include "lagr/rcl.hpp"
#include "lagr/sheaf.hpp"
#include "lagr/synth.hpp"

namespace lagr {

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kKinkMargin = 10.0 * diff::kFdStep;

/// One registered differentiable computation: inputs drawn from a seed and a
/// graph reducing them to a scalar.
struct GradCase {
  std::string name;
  std::string group;  // "op" or "loss"
  std::function<std::vector<Tensor>(std::uint64_t)> inputs;
  diff::GraphFn graph;
};

namespace detail {

inline Tensor uniform(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// Scalar probe <y, R> with a fixed random R, so every output entry carries
/// a distinct weight.
inline diff::Var probe(const diff::Var& y) {
  return diff::sum(diff::mul(y, y.tape().constant(uniform(y.shape(), 0xBEEF, 0.5, 1.5))));
}

inline GradCase op_case(std::string name, std::vector<std::pair<Shape, std::pair<double, double>>> specs,
                        std::function<diff::Var(diff::Tape&, const std::vector<diff::Var>&)> f) {
  GradCase c;
  c.name = std::move(name);
  c.group = "op";
  c.inputs = [specs](std::uint64_t seed) {
    std::vector<Tensor> in;
    for (std::size_t i = 0; i < specs.size(); ++i)
      in.push_back(uniform(specs[i].first, derive_seed(seed, i), specs[i].second.first, specs[i].second.second));
    return in;
  };
  c.graph = [f = std::move(f)](diff::Tape& t, const std::vector<diff::Var>& v) {
    const diff::Var y = f(t, v);
    return y.value().size() == 1 ? y : probe(y);
  };
  return c;
}

inline const std::pair<double, double> kSym{-1.0, 1.0};
inline const std::pair<double, double> kPos{0.5, 2.0};

inline Tensor smooth_image(Shape s, std::uint64_t seed) {
  Tensor t = random_smooth_field(s, seed, 4, 0.1);
  for (double& v : t.data()) v *= 0.3;
  return t;
}

} // namespace detail

/// Every differentiable op exported by the library plus the four losses.
inline std::vector<GradCase> gradient_cases() {
  using namespace diff;
  using lagr::detail::kPos;
  using lagr::detail::kSym;
  using lagr::detail::op_case;
  const Shape f{1, 3, 6, 6};
  std::vector<GradCase> cases;

  cases.push_back(op_case("add", {{f, kSym}, {f, kSym}}, [](Tape&, const auto& v) { return add(v[0], v[1]); }));
  cases.push_back(op_case("sub", {{f, kSym}, {f, kSym}}, [](Tape&, const auto& v) { return sub(v[0], v[1]); }));
  cases.push_back(op_case("mul", {{f, kSym}, {f, kSym}}, [](Tape&, const auto& v) { return mul(v[0], v[1]); }));
  cases.push_back(op_case("scale", {{f, kSym}}, [](Tape&, const auto& v) { return scale(v[0], -1.7); }));
  cases.push_back(op_case("add_scalar", {{f, kSym}}, [](Tape&, const auto& v) { return add_scalar(v[0], 0.3); }));
  cases.push_back(op_case("mul_scalar", {{f, kSym}, {{1, 1, 1, 1}, kSym}},
                          [](Tape&, const auto& v) { return mul_scalar(v[0], v[1]); }));
  cases.push_back(op_case("sum", {{f, kSym}}, [](Tape&, const auto& v) { return sum(square(v[0])); }));
  cases.push_back(op_case("entry", {{f, kSym}}, [](Tape&, const auto& v) { return mul(entry(v[0], 7), entry(v[0], 20)); }));
  cases.push_back(op_case("mean", {{f, kSym}}, [](Tape&, const auto& v) { return mean(square(v[0])); }));
  cases.push_back(op_case("relu", {{f, kSym}}, [](Tape&, const auto& v) { return relu(v[0]); }));
  cases.push_back(op_case("abs", {{f, kSym}}, [](Tape&, const auto& v) { return abs(v[0]); }));
  cases.push_back(op_case("exp", {{f, kSym}}, [](Tape&, const auto& v) { return exp(v[0]); }));
  cases.push_back(op_case("softplus", {{f, {-3.0, 3.0}}}, [](Tape&, const auto& v) { return softplus(v[0]); }));
  cases.push_back(op_case("reciprocal", {{f, kPos}}, [](Tape&, const auto& v) { return reciprocal(v[0]); }));
  cases.push_back(op_case("square", {{f, kSym}}, [](Tape&, const auto& v) { return square(v[0]); }));
  cases.push_back(op_case("conv2d", {{{1, 3, 7, 6}, kSym}, {{2, 3, 3, 3}, kSym}},
                          [](Tape&, const auto& v) { return conv2d(v[0], v[1]); }));
  cases.push_back(op_case("add_channel_bias", {{f, kSym}, {{1, 3, 1, 1}, kSym}},
                          [](Tape&, const auto& v) { return add_channel_bias(v[0], v[1]); }));
  cases.push_back(op_case("resize_bilinear_up", {{{1, 2, 4, 5}, kSym}},
                          [](Tape&, const auto& v) { return resize_bilinear(v[0], 7, 9); }));
  cases.push_back(op_case("resize_bilinear_down", {{{1, 2, 8, 8}, kSym}},
                          [](Tape&, const auto& v) { return resize_bilinear(v[0], 3, 5); }));
  for (BnMode mode : {BnMode::train, BnMode::eval}) {
    cases.push_back(op_case(mode == BnMode::train ? "batch_norm_train" : "batch_norm_eval",
                            {{{2, 3, 4, 4}, kSym}, {{1, 3, 1, 1}, kPos}, {{1, 3, 1, 1}, kSym}},
                            [mode](Tape&, const auto& v) {
                              NormStats running{{1, 1, 1}, {0, 0, 0}, {0.1, -0.2, 0.3}, {0.5, 1.5, 2.0}};
                              return batch_norm(v[0], v[1], v[2], running, mode);
                            }));
  }
  cases.push_back(op_case("global_avg_pool", {{f, kSym}}, [](Tape&, const auto& v) { return global_avg_pool(v[0]); }));
  cases.push_back(op_case("linear", {{{2, 4, 1, 1}, kSym}, {{1, 1, 3, 4}, kSym}, {{1, 3, 1, 1}, kSym}},
                          [](Tape&, const auto& v) { return linear(v[0], v[1], v[2]); }));
  cases.push_back(op_case("softmax_channels", {{{2, 4, 1, 1}, {-2.0, 2.0}}},
                          [](Tape&, const auto& v) { return softmax_channels(v[0]); }));
  cases.push_back(op_case("scale_by_entry", {{{2, 3, 4, 4}, kSym}, {{2, 4, 1, 1}, kSym}},
                          [](Tape&, const auto& v) { return scale_by_entry(v[0], v[1], 2); }));
  cases.push_back(op_case("repeat_channels", {{{1, 1, 5, 5}, kSym}},
                          [](Tape&, const auto& v) { return repeat_channels(v[0], 3); }));
  cases.push_back(op_case("batch_item", {{{3, 2, 4, 4}, kSym}}, [](Tape&, const auto& v) { return batch_item(v[0], 1); }));
  cases.push_back(op_case("masked_mean_abs", {{f, kSym}}, [](Tape&, const auto& v) {
    Tensor m({1, 1, 6, 6}, 1.0);
    m[3] = m[17] = 0.0;
    return masked_mean_abs(v[0], m);
  }));
  cases.push_back(op_case("diff_x", {{f, kSym}}, [](Tape&, const auto& v) { return diff_x(v[0]); }));
  cases.push_back(op_case("diff_y", {{f, kSym}}, [](Tape&, const auto& v) { return diff_y(v[0]); }));
  cases.push_back(op_case("left_matmul", {{{2, 1, 4, 3}, kSym}}, [](Tape&, const auto& v) {
    return left_matmul(lagr::detail::uniform({1, 1, 4, 4}, 5), v[0]);
  }));
  cases.push_back(op_case("right_matmul", {{{2, 1, 4, 3}, kSym}, {{1, 1, 3, 5}, kSym}},
                          [](Tape&, const auto& v) { return right_matmul(v[0], v[1]); }));
  cases.push_back(op_case("canonicalize_mats", {{{1, 18, 1, 1}, {0.1, 1.0}}},
                          [](Tape&, const auto& v) { return canonicalize_mats(v[0]); }));
  {
    GradCase c = op_case("homography_grid", {}, [](Tape&, const auto& v) {
      return homography_grid(canonicalize_mats(v[0]), 1, 5, 6);
    });
    c.inputs = [](std::uint64_t seed) {
      Tensor m({1, 18, 1, 1});
      const Tensor noise = lagr::detail::uniform({1, 18, 1, 1}, seed, -0.05, 0.05);
      for (std::size_t j = 0; j < 2; ++j)
        for (int i = 0; i < 9; ++i) m[9 * j + i] = kIdentity3[i] + noise[9 * j + i];
      return std::vector<Tensor>{m};
    };
    cases.push_back(std::move(c));
  }
  cases.push_back(op_case("grid_sample", {{{1, 2, 6, 6}, kSym}, {{1, 2, 4, 5}, {-0.8, 5.8}}},
                          [](Tape&, const auto& v) { return grid_sample(v[0], v[1]); }));
  cases.push_back(op_case("warp_field", {{f, kSym}}, [](Tape&, const auto& v) {
    return warp_field(random_perturbation(0.1, 3), v[0]);
  }));
  {
    GradCase c = op_case("gfm_forward", {}, [](Tape&, const std::vector<Var>& v) {
      GfmVars g;
      g.k = 2;
      g.w1 = v[1];
      g.b1 = v[2];
      g.w2 = v[3];
      g.b2 = v[4];
      g.attn_w = v[5];
      g.attn_b = v[6];
      g.w_proj = v[7];
      return gfm_forward(v[0], g).features;
    });
    c.inputs = [](std::uint64_t seed) {
      GfmParams p = GfmParams::init(3, 2, 4, derive_seed(seed, 1));
      for (double& w : p.w2.data()) w *= 20.0;
      for (double& w : p.attn_w.data()) w *= 5.0;
      const Tensor jitter = lagr::detail::uniform(p.b2.shape(), derive_seed(seed, 2), -0.03, 0.03);
      p.b2 += jitter;
      return std::vector<Tensor>{lagr::detail::smooth_image({1, 3, 8, 8}, derive_seed(seed, 0)), p.w1, p.b1, p.w2, p.b2,
                                 p.attn_w, p.attn_b, p.w_proj};
    };
    cases.push_back(std::move(c));
  }
  {
    auto bank = std::make_shared<GradedKernelBank>(GradedKernelBank::init(4, 4, 3, 1, {4, 2}, 11));
    GradCase c = op_case("rcl_degree", {{{1, 4, 8, 8}, kSym}, {{1, 2, 4, 4}, kSym}, {{4, 4, 3, 3}, kSym},
                                        {{1, 4, 1, 1}, kPos}, {{1, 4, 1, 1}, kSym}, {{4, 2, 1, 1}, kSym}},
                         [bank](Tape& t, const std::vector<Var>& v) {
                           RclVars r = RclVars::bind(t, *bank, false);
                           r.w = v[2];
                           r.gamma[1] = v[3];
                           r.beta[1] = v[4];
                           r.adapters[1] = v[5];
                           GradedKernelBank local = *bank;
                           return rcl_degree({v[0], v[1]}, r, local, 1, BnMode::train);
                         });
    cases.push_back(std::move(c));
  }
  {
    auto bank = std::make_shared<GradedKernelBank>(GradedKernelBank::init(3, 3, 3, 1, {3, 3}, 12));
    cases.push_back(op_case("rcl_fuse", {{{1, 3, 6, 6}, kSym}, {{1, 3, 3, 3}, kSym}, {{1, 2, 1, 1}, kSym}},
                            [bank](Tape& t, const std::vector<Var>& v) {
                              RclVars r = RclVars::bind(t, *bank, false);
                              r.fuse = v[2];
                              return rcl_fuse({v[0], v[1]}, r, 6, 6);
                            }));
  }
  {
    const auto cover = std::make_shared<PatchCover>(build_cover(8, 8, 4, 2));
    const auto graph = std::make_shared<PatchGraph>(build_nerve(*cover));
    cases.push_back(op_case("restrict_to_cover", {{{1, 3, 8, 8}, kSym}},
                            [cover](Tape&, const auto& v) { return restrict_to_cover(v[0], *cover); }));
    cases.push_back(op_case("extend_from_cover", {{{1, 1, 9, 3}, kSym}},
                            [cover](Tape&, const auto& v) { return extend_from_cover(v[0], *cover); }));
    cases.push_back(op_case("gcn_forward", {{{2, 1, 9, 3}, kSym}, {{1, 1, 3, 3}, kSym}, {{1, 1, 3, 3}, kSym}},
                            [graph](Tape&, const auto& v) { return gcn_forward(v[0], *graph, v[1], v[2]); }));
    cases.push_back(op_case("sheaf_energy", {{{2, 1, 9, 3}, kSym}},
                            [graph](Tape&, const auto& v) { return diff::sheaf_energy(v[0], *graph); }));
  }

  // Losses
  {
    GradCase c;
    c.name = "loss_photometric";
    c.group = "loss";
    c.inputs = [](std::uint64_t seed) { return std::vector<Tensor>{lagr::detail::uniform({1, 1, 10, 10}, seed, 1.5, 3.0)}; };
    const auto scene = std::make_shared<SceneSample>();
    scene->reference = lagr::detail::smooth_image({1, 3, 10, 10}, 21);
    scene->mask = Tensor({1, 1, 10, 10}, 1.0);
    scene->sources.push_back({lagr::detail::smooth_image({1, 3, 10, 10}, 22), ProjectiveTransform::translation(0.3, -0.2),
                              0.8, 0.5});
    scene->sources.push_back({lagr::detail::smooth_image({1, 3, 10, 10}, 23), random_perturbation(0.03, 4), -0.6, 0.4});
    c.graph = [scene](Tape&, const std::vector<Var>& v) { return photometric_loss(*scene, v[0]); };
    cases.push_back(std::move(c));
  }
  {
    const auto g = std::make_shared<ProjectiveTransform>(random_perturbation(0.05, 3));
    GradCase c;
    c.name = "loss_group_consistency";
    c.group = "loss";
    c.inputs = [](std::uint64_t seed) {
      return std::vector<Tensor>{lagr::detail::uniform({1, 1, 10, 10}, derive_seed(seed, 0), 1.0, 3.0),
                                 lagr::detail::uniform({1, 1, 10, 10}, derive_seed(seed, 1), 1.0, 3.0)};
    };
    c.graph = [g](Tape&, const std::vector<Var>& v) { return group_consistency_loss(v[0], v[1], *g); };
    cases.push_back(std::move(c));
  }
  {
    const auto image = std::make_shared<Tensor>(lagr::detail::smooth_image({1, 3, 8, 8}, 31));
    GradCase c;
    c.name = "loss_smoothness";
    c.group = "loss";
    c.inputs = [](std::uint64_t seed) { return std::vector<Tensor>{lagr::detail::uniform({1, 1, 8, 8}, seed)}; };
    c.graph = [image](Tape&, const std::vector<Var>& v) { return smoothness_loss(v[0], *image); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "loss_total";
    c.group = "loss";
    c.inputs = [](std::uint64_t seed) { return std::vector<Tensor>{lagr::detail::uniform({1, 4, 1, 1}, seed, 0.0, 2.0)}; };
    c.graph = [](Tape&, const std::vector<Var>& v) {
      return total_loss({entry(v[0], 0), entry(v[0], 1), entry(v[0], 2), entry(v[0], 3)}, LossWeights{});
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

struct GradCaseResult {
  std::string name, group;
  std::size_t params = 0;
  double max_rel_err = 0.0;
  double kink_distance = 0.0;
  std::size_t attempts = 0;
  bool kink_free = false;

  bool passed() const { return kink_free && max_rel_err < kGradTolerance; }
};

/// Checks one case, redrawing inputs while any kinked node sits within
/// kKinkMargin of its nondifferentiable point.
inline GradCaseResult run_gradient_case(const GradCase& c, std::uint64_t seed, std::size_t max_attempts = 50) {
  GradCaseResult r{c.name, c.group};
  for (std::size_t a = 0; a < max_attempts; ++a) {
    const std::vector<Tensor> inputs = c.inputs(derive_seed(seed, a));
    const diff::GradReport rep = diff::check_gradient(c.graph, inputs);
    r.attempts = a + 1;
    r.kink_distance = rep.kink_distance;
    if (rep.kink_distance < kKinkMargin) continue;
    r.kink_free = true;
    r.params = rep.analytic.size();
    r.max_rel_err = rep.max_rel_err;
    break;
  }
  return r;
}

struct GradSuiteResult {
  std::vector<GradCaseResult> cases;

  bool passed() const {
    for (const auto& c : cases)
      if (!c.passed()) return false;
    return !cases.empty();
  }
  double worst() const {
    double w = 0.0;
    for (const auto& c : cases) w = std::max(w, c.max_rel_err);
    return w;
  }
  std::string csv() const {
    io::CsvWriter w({"name", "group", "params", "max_rel_err", "kink_distance", "attempts", "pass"});
    for (const auto& c : cases)
      w.row({c.name, c.group, std::to_string(c.params), io::fmt(c.max_rel_err, 6), io::fmt(c.kink_distance, 6),
             std::to_string(c.attempts), c.passed() ? "1" : "0"});
    return w.str();
  }
};

inline GradSuiteResult run_gradient_suite(std::uint64_t seed, std::size_t jobs = 1) {
  const std::vector<GradCase> cases = gradient_cases();
  GradSuiteResult res;
  res.cases.resize(cases.size());
  parallel_for(cases.size(), jobs,
               [&](std::size_t i) { res.cases[i] = run_gradient_case(cases[i], derive_seed(seed, 500, i)); });
  return res;
}

} // namespace lagr
